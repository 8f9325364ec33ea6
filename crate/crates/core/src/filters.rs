use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Constant 3×3 edge stencils used by edge-oriented blocks and the gradient-map loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixedKernel {
    SobelX,
    SobelY,
    Laplacian,
}

impl FixedKernel {
    pub const fn taps(self) -> [[f32; 3]; 3] {
        match self {
            FixedKernel::SobelX => [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]],
            FixedKernel::SobelY => [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]],
            FixedKernel::Laplacian => [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]],
        }
    }

    /// Depthwise weight `(c, 1, 3, 3)` with channel `i` scaled by `scale[i]`.
    pub fn depthwise_weight(self, scale: &Tensor) -> Tensor {
        let c = scale.numel();
        let taps = self.taps();
        let mut w = Tensor::zeros(Shape::new(c, 1, 3, 3));
        for (ch, &k) in scale.data().iter().enumerate() {
            for (y, row) in taps.iter().enumerate() {
                for (x, &t) in row.iter().enumerate() {
                    w.set(ch, 0, y, x, t * k);
                }
            }
        }
        w
    }
}

/// Valid (unpadded) depthwise correlation with a scaled fixed stencil.
pub fn fixed_filter_valid(x: &Tensor, kind: FixedKernel, scale: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if scale.numel() != s.c {
        return Err(Error::ShapeMismatch {
            op: "fixed_filter",
            left: s,
            right: scale.shape(),
        });
    }
    let w = kind.depthwise_weight(scale);
    crate::conv::conv2d_raw(
        x,
        &w,
        None,
        crate::conv::ConvGeometry {
            stride: 1,
            padding: 0,
            groups: s.c,
        },
    )
}
