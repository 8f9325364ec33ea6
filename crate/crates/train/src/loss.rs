//! Loss terms with analytic gradients, looked up by name.

use rtsr_core::conv::conv2d_backward_input;
use rtsr_core::{ConvGeometry, FixedKernel, Shape, Tensor};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrainError};

pub const GM_EPS: f64 = 1e-8;

/// Which network output a term supervises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTarget {
    Sr,
    Aux,
}

#[derive(Clone, Copy, Debug)]
pub struct LossInputs<'a> {
    pub sr: &'a Tensor,
    pub hr: &'a Tensor,
    pub teacher_sr: Option<&'a Tensor>,
    pub aux_sr2: Option<&'a Tensor>,
    pub hr2: Option<&'a Tensor>,
}

impl<'a> LossInputs<'a> {
    pub fn new(sr: &'a Tensor, hr: &'a Tensor) -> Self {
        LossInputs {
            sr,
            hr,
            teacher_sr: None,
            aux_sr2: None,
            hr2: None,
        }
    }
}

pub trait LossTerm: Send + Sync {
    fn name(&self) -> &str;
    fn target(&self) -> LossTarget {
        LossTarget::Sr
    }
    /// Value and gradient with respect to the target output.
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)>;
}

fn pair<'a>(a: &'a Tensor, b: Option<&'a Tensor>, what: &str) -> Result<(&'a Tensor, &'a Tensor)> {
    let b = b.ok_or_else(|| TrainError::Loss(format!("{what} is required by this term")))?;
    a.expect_same(b, "loss")?;
    Ok((a, b))
}

fn l1_grad(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    a.expect_same(b, "l1")?;
    let n = a.numel() as f64;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).abs()).sum();
    let g = a.zip_map(b, "l1", |x, y| {
        let d = x - y;
        if d > 0.0 {
            1.0 / n as f32
        } else if d < 0.0 {
            -1.0 / n as f32
        } else {
            0.0
        }
    })?;
    Ok((sum / n, g))
}

fn mse_grad(a: &Tensor, b: &Tensor) -> Result<(f64, Tensor)> {
    a.expect_same(b, "mse")?;
    let n = a.numel() as f64;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    let g = a.zip_map(b, "mse", |x, y| (2.0 * (x as f64 - y as f64) / n) as f32)?;
    Ok((sum / n, g))
}

pub struct L1;
pub struct Mse;
pub struct FftL1;
pub struct GradientMap;
pub struct DistillMse;
pub struct AuxX2;

impl LossTerm for L1 {
    fn name(&self) -> &str {
        "l1"
    }
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        l1_grad(inp.sr, inp.hr)
    }
}

impl LossTerm for Mse {
    fn name(&self) -> &str {
        "mse"
    }
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        mse_grad(inp.sr, inp.hr)
    }
}

impl LossTerm for DistillMse {
    fn name(&self) -> &str {
        "distill_mse"
    }
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        let (a, b) = pair(inp.sr, inp.teacher_sr, "teacher output")?;
        mse_grad(a, b)
    }
}

impl LossTerm for AuxX2 {
    fn name(&self) -> &str {
        "aux_x2"
    }
    fn target(&self) -> LossTarget {
        LossTarget::Aux
    }
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        let aux = inp
            .aux_sr2
            .ok_or_else(|| TrainError::Loss("aux x2 output is required by this term".into()))?;
        let (a, b) = pair(aux, inp.hr2, "x2 reference")?;
        l1_grad(a, b)
    }
}

/// Unnormalized 2-D DFT of every `h×w` plane in `buf` (row transforms, then column transforms).
pub fn dft2(buf: &mut [Complex64], h: usize, w: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for plane in buf.chunks_mut(h * w) {
        for r in plane.chunks_mut(w) {
            row.process(r);
        }
        for cx in 0..w {
            for y in 0..h {
                column[y] = plane[y * w + cx];
            }
            col.process(&mut column);
            for y in 0..h {
                plane[y * w + cx] = column[y];
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl LossTerm for FftL1 {
    fn name(&self) -> &str {
        "fft_l1"
    }
    /// Mean of `|Re ΔF| + |Im ΔF|` over the stacked real and imaginary parts.
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        inp.sr.expect_same(inp.hr, "fft_l1")?;
        let shape = inp.sr.shape();
        let mut buf: Vec<Complex64> = inp
            .sr
            .data()
            .iter()
            .zip(inp.hr.data())
            .map(|(&a, &b)| Complex64::new(a as f64 - b as f64, 0.0))
            .collect();
        let mut planner = FftPlanner::new();
        dft2(&mut buf, shape.h, shape.w, false, &mut planner);
        let count = 2.0 * buf.len() as f64;
        let value = buf.iter().map(|c| c.re.abs() + c.im.abs()).sum::<f64>() / count;
        for c in buf.iter_mut() {
            *c = Complex64::new(sign(c.re) / count, sign(c.im) / count);
        }
        dft2(&mut buf, shape.h, shape.w, true, &mut planner);
        let grad = Tensor::from_vec(shape, buf.iter().map(|c| c.re as f32).collect())?;
        Ok((value, grad))
    }
}

fn sobel_geometry(c: usize) -> ConvGeometry {
    ConvGeometry {
        stride: 1,
        padding: 1,
        groups: c,
    }
}

fn sobel_weights(c: usize) -> (Tensor, Tensor) {
    let ones = Tensor::ones(Shape::new(1, c, 1, 1));
    (
        FixedKernel::SobelX.depthwise_weight(&ones),
        FixedKernel::SobelY.depthwise_weight(&ones),
    )
}

/// Zero-padded per-channel Sobel responses and gradient magnitude `√(Sx² + Sy² + ε)`, in f64.
pub fn gradient_magnitude(img: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = img.shape();
    let (kx, ky) = (FixedKernel::SobelX.taps(), FixedKernel::SobelY.taps());
    let (mut sx, mut sy) = (vec![0.0; s.numel()], vec![0.0; s.numel()]);
    let mut i = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let p = img.plane(n, c);
            for y in 0..s.h {
                for x in 0..s.w {
                    let (mut ax, mut ay) = (0.0f64, 0.0f64);
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let (iy, ix) = ((y + dy) as isize - 1, (x + dx) as isize - 1);
                            if iy >= 0 && ix >= 0 && (iy as usize) < s.h && (ix as usize) < s.w {
                                let v = p[iy as usize * s.w + ix as usize] as f64;
                                ax += kx[dy][dx] as f64 * v;
                                ay += ky[dy][dx] as f64 * v;
                            }
                        }
                    }
                    sx[i] = ax;
                    sy[i] = ay;
                    i += 1;
                }
            }
        }
    }
    let gm = sx.iter().zip(&sy).map(|(a, b)| (a * a + b * b + GM_EPS).sqrt()).collect();
    (gm, sx, sy)
}

impl LossTerm for GradientMap {
    fn name(&self) -> &str {
        "gradient_map"
    }
    fn eval(&self, inp: &LossInputs) -> Result<(f64, Tensor)> {
        inp.sr.expect_same(inp.hr, "gradient_map")?;
        let shape = inp.sr.shape();
        let (gm_sr, sx, sy) = gradient_magnitude(inp.sr);
        let (gm_hr, _, _) = gradient_magnitude(inp.hr);
        let n = gm_sr.len() as f64;
        let value = gm_sr.iter().zip(&gm_hr).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
        let (mut ax, mut ay) = (Vec::with_capacity(gm_sr.len()), Vec::with_capacity(gm_sr.len()));
        for i in 0..gm_sr.len() {
            let u = sign(gm_sr[i] - gm_hr[i]) / n / gm_sr[i];
            ax.push((u * sx[i]) as f32);
            ay.push((u * sy[i]) as f32);
        }
        let c = shape.c;
        let (wx, wy) = sobel_weights(c);
        let mut grad = conv2d_backward_input(&Tensor::from_vec(shape, ax)?, &wx, shape, sobel_geometry(c))?;
        grad.add_assign(&conv2d_backward_input(&Tensor::from_vec(shape, ay)?, &wy, shape, sobel_geometry(c))?)?;
        Ok((value, grad))
    }
}

pub struct LossRegistry {
    terms: Vec<Box<dyn LossTerm>>,
}

impl Default for LossRegistry {
    fn default() -> Self {
        LossRegistry::builtin()
    }
}

impl LossRegistry {
    pub fn builtin() -> Self {
        LossRegistry {
            terms: vec![
                Box::new(L1),
                Box::new(Mse),
                Box::new(FftL1),
                Box::new(GradientMap),
                Box::new(DistillMse),
                Box::new(AuxX2),
            ],
        }
    }

    pub fn register(&mut self, term: Box<dyn LossTerm>) -> Result<()> {
        if self.get(term.name()).is_some() {
            return Err(TrainError::Loss(format!("term {:?} already registered", term.name())));
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn LossTerm> {
        self.terms.iter().find(|t| t.name() == name).map(|t| t.as_ref())
    }

    pub fn names(&self) -> Vec<&str> {
        self.terms.iter().map(|t| t.name()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub name: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub terms: Vec<WeightedTerm>,
}

impl Default for LossConfig {
    /// `α·L1 + γ·L_GM + δ·L_FFT` with α=1, γ=0.1, δ=0.1.
    fn default() -> Self {
        LossConfig::from_pairs(&[("l1", 1.0), ("gradient_map", 0.1), ("fft_l1", 0.1)])
    }
}

impl LossConfig {
    pub fn from_pairs(pairs: &[(&str, f64)]) -> Self {
        LossConfig {
            terms: pairs
                .iter()
                .map(|&(name, weight)| WeightedTerm {
                    name: name.to_string(),
                    weight,
                })
                .collect(),
        }
    }

    pub fn l1() -> Self {
        LossConfig::from_pairs(&[("l1", 1.0)])
    }

    pub fn weight(&self, name: &str) -> f64 {
        self.terms.iter().filter(|t| t.name == name).map(|t| t.weight).sum()
    }

    pub fn uses(&self, name: &str) -> bool {
        self.weight(name) > 0.0
    }

    pub fn validate(&self, registry: &LossRegistry) -> Result<()> {
        for t in &self.terms {
            if t.weight < 0.0 || !t.weight.is_finite() {
                return Err(TrainError::Loss(format!("weight of {} must be >= 0, got {}", t.name, t.weight)));
            }
            if registry.get(&t.name).is_none() {
                return Err(TrainError::Loss(format!("unknown loss term {:?}", t.name)));
            }
        }
        if !self.terms.iter().any(|t| t.weight > 0.0) {
            return Err(TrainError::Loss("at least one term needs a positive weight".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub total: f64,
    pub terms: Vec<(String, f64)>,
    pub grad_sr: Tensor,
    pub grad_aux: Option<Tensor>,
}

/// Weighted sum of the configured terms and its gradients.
pub fn loss_eval(inp: &LossInputs, cfg: &LossConfig, registry: &LossRegistry) -> Result<LossOutput> {
    cfg.validate(registry)?;
    inp.sr.expect_same(inp.hr, "loss")?;
    let mut total = 0.0;
    let mut terms = Vec::new();
    let mut grad_sr = Tensor::zeros(inp.sr.shape());
    let mut grad_aux: Option<Tensor> = None;
    for t in cfg.terms.iter().filter(|t| t.weight > 0.0) {
        let term = registry.get(&t.name).expect("validated");
        let (v, g) = term.eval(inp)?;
        total += t.weight * v;
        terms.push((t.name.clone(), v));
        let g = g.scale(t.weight as f32);
        match term.target() {
            LossTarget::Sr => grad_sr.add_assign(&g)?,
            LossTarget::Aux => match &mut grad_aux {
                Some(acc) => acc.add_assign(&g)?,
                None => grad_aux = Some(g),
            },
        }
    }
    Ok(LossOutput {
        total,
        terms,
        grad_sr,
        grad_aux,
    })
}
