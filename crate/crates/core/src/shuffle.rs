//! Depth-to-space and space-to-depth permutations.
//!
//! Channel convention: `out[n, c', y*r + dy, x*r + dx] = in[n, c'*r² + dy*r + dx, y, x]`.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub fn pixel_shuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let s = input.shape();
    if r == 0 {
        return Err(Error::InvalidArgument("shuffle factor must be positive".into()));
    }
    if !s.c.is_multiple_of(r * r) {
        return Err(Error::invalid(
            "pixel_shuffle",
            s,
            format!("channels not divisible by {}", r * r),
        ));
    }
    if r == 1 {
        return Ok(input.clone());
    }
    let oc = s.c / (r * r);
    let os = Shape::new(s.n, oc, s.h * r, s.w * r);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..oc {
            let dst = out.plane_mut(n, c);
            for dy in 0..r {
                for dx in 0..r {
                    let src = input.plane(n, c * r * r + dy * r + dx);
                    for y in 0..s.h {
                        let drow = (y * r + dy) * os.w;
                        for x in 0..s.w {
                            dst[drow + x * r + dx] = src[y * s.w + x];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn pixel_unshuffle(input: &Tensor, r: usize) -> Result<Tensor> {
    let s = input.shape();
    if r == 0 {
        return Err(Error::InvalidArgument("unshuffle factor must be positive".into()));
    }
    if !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::invalid(
            "pixel_unshuffle",
            s,
            format!("spatial dims not divisible by {r}"),
        ));
    }
    if r == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (s.h / r, s.w / r);
    let os = Shape::new(s.n, s.c * r * r, oh, ow);
    let mut out = Tensor::zeros(os);
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            for dy in 0..r {
                for dx in 0..r {
                    let dst = out.plane_mut(n, c * r * r + dy * r + dx);
                    for y in 0..oh {
                        let srow = (y * r + dy) * s.w;
                        for x in 0..ow {
                            dst[y * ow + x] = src[srow + x * r + dx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
