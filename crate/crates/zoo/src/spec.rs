//! Serializable model descriptions and their shape checker.

use rtsr_core::ActivationKind;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZooError};
use crate::template::BlockTemplate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        bias: bool,
    },
    RepBlock {
        block: BlockTemplate,
        bias: bool,
    },
    Activation {
        kind: ActivationKind,
    },
    PixelShuffle {
        r: usize,
    },
    PixelUnshuffle {
        r: usize,
    },
    /// Parameter-free attention block; `block` optionally widens its three convs for training.
    Spab {
        channels: usize,
        bias: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        block: Option<BlockTemplate>,
    },
    /// Adds the LR input repeated `r²` times per channel.
    AnchorResidual {
        r: usize,
    },
    /// Concatenates the outputs of earlier layers, then the current value.
    ConcatTaps {
        taps: Vec<usize>,
    },
    /// Adds the nearest-neighbour upsampled input at the model scale.
    GlobalResidual,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub scale: usize,
    pub channels: usize,
    pub layers: Vec<Layer>,
}

/// Channel count and spatial factor (`num/den` of the input size) after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub channels: usize,
    pub num: usize,
    pub den: usize,
}

impl LayerShape {
    fn scaled(self, mul: usize, div: usize) -> Self {
        let (n, d) = (self.num * mul, self.den * div);
        let g = gcd(n, d);
        LayerShape {
            channels: self.channels,
            num: n / g,
            den: d / g,
        }
    }

    fn same_grid(&self, other: &LayerShape) -> bool {
        self.num == other.num && self.den == other.den
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

pub const IMAGE_CHANNELS: usize = 3;

impl ModelSpec {
    /// Shape after every layer, or the first violated invariant.
    pub fn infer_shapes(&self) -> Result<Vec<LayerShape>> {
        if self.scale == 0 {
            return Err(ZooError::Spec("scale must be positive".into()));
        }
        if self.layers.is_empty() {
            return Err(ZooError::Spec("no layers".into()));
        }
        let input = LayerShape {
            channels: IMAGE_CHANNELS,
            num: 1,
            den: 1,
        };
        let mut cur = input;
        let mut shapes: Vec<LayerShape> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let expect_in = |want: usize, cur: LayerShape| {
                if cur.channels == want {
                    Ok(())
                } else {
                    Err(ZooError::layer(i, format!("expects {want} input channels, got {}", cur.channels)))
                }
            };
            cur = match layer {
                Layer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    ..
                } => {
                    expect_in(*in_ch, cur)?;
                    if *kernel == 0 || kernel % 2 == 0 || *stride == 0 || *out_ch == 0 {
                        return Err(ZooError::layer(i, "conv needs an odd kernel, positive stride and outputs"));
                    }
                    LayerShape {
                        channels: *out_ch,
                        ..cur.scaled(1, *stride)
                    }
                }
                Layer::RepBlock { block, .. } => {
                    block.check().map_err(|e| ZooError::layer(i, e))?;
                    expect_in(block.in_channels(), cur)?;
                    LayerShape {
                        channels: block.out_channels(),
                        ..cur
                    }
                }
                Layer::Activation { .. } => cur,
                Layer::PixelShuffle { r } => {
                    if *r == 0 || !cur.channels.is_multiple_of(r * r) {
                        return Err(ZooError::layer(
                            i,
                            format!("pixel_shuffle({r}) needs channels divisible by {}, got {}", r * r, cur.channels),
                        ));
                    }
                    LayerShape {
                        channels: cur.channels / (r * r),
                        ..cur.scaled(*r, 1)
                    }
                }
                Layer::PixelUnshuffle { r } => {
                    if *r == 0 {
                        return Err(ZooError::layer(i, "pixel_unshuffle factor must be positive"));
                    }
                    LayerShape {
                        channels: cur.channels * r * r,
                        ..cur.scaled(1, *r)
                    }
                }
                Layer::Spab { channels, block, .. } => {
                    expect_in(*channels, cur)?;
                    if let Some(b) = block {
                        b.check().map_err(|e| ZooError::layer(i, e))?;
                        if b.in_channels() != *channels || b.out_channels() != *channels {
                            return Err(ZooError::layer(i, "spab block template must preserve channels"));
                        }
                    }
                    cur
                }
                Layer::AnchorResidual { r } => {
                    expect_in(IMAGE_CHANNELS * r * r, cur)?;
                    if !cur.same_grid(&input) {
                        return Err(ZooError::layer(i, "anchor residual must be added at input resolution"));
                    }
                    cur
                }
                Layer::ConcatTaps { taps } => {
                    let mut channels = cur.channels;
                    for &t in taps {
                        let s = shapes
                            .get(t)
                            .ok_or_else(|| ZooError::layer(i, format!("tap {t} does not precede this layer")))?;
                        if !s.same_grid(&cur) {
                            return Err(ZooError::layer(i, format!("tap {t} has a different resolution")));
                        }
                        channels += s.channels;
                    }
                    LayerShape { channels, ..cur }
                }
                Layer::GlobalResidual => {
                    expect_in(IMAGE_CHANNELS, cur)?;
                    if cur.num != self.scale || cur.den != 1 {
                        return Err(ZooError::layer(i, "global residual must be added at output resolution"));
                    }
                    cur
                }
            };
            shapes.push(cur);
        }
        let last = shapes.len() - 1;
        if cur.channels != IMAGE_CHANNELS {
            return Err(ZooError::layer(
                last,
                format!("model must emit {IMAGE_CHANNELS} channels, emits {}", cur.channels),
            ));
        }
        if cur.num != self.scale || cur.den != 1 {
            return Err(ZooError::layer(
                last,
                format!("net spatial gain is {}/{}, expected {}", cur.num, cur.den, self.scale),
            ));
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.infer_shapes().map(|_| ())
    }

    /// Input height and width must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        let mut den = 1;
        let mut multiple = 1;
        for layer in &self.layers {
            match layer {
                Layer::PixelUnshuffle { r } => den *= r,
                Layer::Conv { stride, .. } => den *= stride,
                Layer::PixelShuffle { r } => {
                    let g = gcd(den, *r);
                    den /= g;
                }
                _ => {}
            }
            multiple = lcm(multiple, den.max(1));
        }
        multiple
    }

    /// Clears every bias flag.
    pub fn strip_bias_flags(&mut self) {
        for layer in &mut self.layers {
            match layer {
                Layer::Conv { bias, .. } | Layer::RepBlock { bias, .. } | Layer::Spab { bias, .. } => *bias = false,
                _ => {}
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(i: usize, o: usize) -> Layer {
        Layer::Conv {
            in_ch: i,
            out_ch: o,
            kernel: 3,
            stride: 1,
            bias: true,
        }
    }

    #[test]
    fn infers_net_gain() {
        let spec = ModelSpec {
            name: "t".into(),
            scale: 4,
            channels: 8,
            layers: vec![
                Layer::PixelUnshuffle { r: 2 },
                conv(12, 8),
                conv(8, 192),
                Layer::PixelShuffle { r: 8 },
            ],
        };
        let shapes = spec.infer_shapes().unwrap();
        assert_eq!(shapes[0], LayerShape { channels: 12, num: 1, den: 2 });
        assert_eq!(*shapes.last().unwrap(), LayerShape { channels: 3, num: 4, den: 1 });
        assert_eq!(spec.input_multiple(), 2);
    }

    #[test]
    fn names_failing_layer() {
        let spec = ModelSpec {
            name: "t".into(),
            scale: 4,
            channels: 8,
            layers: vec![conv(3, 8), conv(8, 40), Layer::PixelShuffle { r: 4 }],
        };
        match spec.validate() {
            Err(ZooError::Layer { index, .. }) => assert_eq!(index, 2),
            other => panic!("{other:?}"),
        }
        let spec = ModelSpec {
            layers: vec![conv(3, 8), conv(9, 48)],
            ..spec
        };
        assert!(matches!(spec.validate(), Err(ZooError::Layer { index: 1, .. })));
    }

    #[test]
    fn rejects_bad_taps_and_residuals() {
        let base = ModelSpec {
            name: "t".into(),
            scale: 1,
            channels: 3,
            layers: vec![conv(3, 3), Layer::ConcatTaps { taps: vec![5] }],
        };
        assert!(matches!(base.validate(), Err(ZooError::Layer { index: 1, .. })));
        let ok = ModelSpec {
            layers: vec![conv(3, 3), Layer::GlobalResidual],
            ..base.clone()
        };
        ok.validate().unwrap();
        let bad = ModelSpec {
            layers: vec![conv(3, 48), Layer::AnchorResidual { r: 2 }],
            ..base
        };
        assert!(bad.validate().is_err());
    }
}
