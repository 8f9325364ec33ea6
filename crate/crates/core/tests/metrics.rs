use rtsr_core::metrics::*;
use rtsr_core::*;
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;

fn random(shape: [usize; 4], seed: u64) -> Tensor {
    Tensor::rand_uniform(shape, 0.0, 1.0, &mut StdRng::seed_from_u64(seed))
}

fn brute_mse(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let mut acc = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    let d = a.at(n, c, y, x) as f64 - b.at(n, c, y, x) as f64;
                    acc += d * d;
                }
            }
        }
    }
    acc / s.numel() as f64
}

/// Direct per-window SSIM with a 2-D Gaussian weight.
fn brute_ssim(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let k = SSIM_WINDOW;
    let half = (k / 2) as f64;
    let mut w2 = vec![0.0; k * k];
    for y in 0..k {
        for x in 0..k {
            let d2 = (y as f64 - half).powi(2) + (x as f64 - half).powi(2);
            w2[y * k + x] = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    let total: f64 = w2.iter().sum();
    w2.iter_mut().for_each(|v| *v /= total);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut acc = 0.0;
    let mut count = 0;
    for c in 0..s.c {
        for oy in 0..=s.h - k {
            for ox in 0..=s.w - k {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for y in 0..k {
                    for x in 0..k {
                        let wt = w2[y * k + x];
                        let p = a.at(0, c, oy + y, ox + x) as f64;
                        let q = b.at(0, c, oy + y, ox + x) as f64;
                        ma += wt * p;
                        mb += wt * q;
                        saa += wt * p * p;
                        sbb += wt * q * q;
                        sab += wt * p * q;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    acc / count as f64
}

#[test]
fn luma_examples() {
    let px = |r: f32, g: f32, b: f32| Tensor::from_vec([1, 3, 1, 1], vec![r, g, b]).unwrap();
    assert!((to_luma(&px(0.0, 0.0, 0.0)).unwrap().data()[0] - 16.0 / 255.0).abs() < 1e-7);
    assert!((to_luma(&px(1.0, 1.0, 1.0)).unwrap().data()[0] - 235.0 / 255.0).abs() < 1e-6);
    assert!((to_luma(&px(0.0, 1.0, 0.0)).unwrap().data()[0] - (16.0 + 128.553) / 255.0).abs() < 1e-6);
    assert!(to_luma(&Tensor::zeros([1, 1, 2, 2])).is_err());
}

#[test]
fn psnr_examples() {
    let a = random([1, 3, 8, 8], 1);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    let zero = Tensor::zeros([1, 1, 4, 4]);
    let off = Tensor::full([1, 1, 4, 4], 1.0 / 255.0);
    assert!((psnr(&zero, &off, 1.0).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-4);
    let b = random([1, 3, 8, 8], 2);
    let oracle = 10.0 * (1.0 / brute_mse(&a, &b)).log10();
    assert!((psnr(&a, &b, 1.0).unwrap() - oracle).abs() < 1e-6);
    assert!(psnr(&a, &Tensor::zeros([1, 3, 8, 7]), 1.0).is_err());
}

#[test]
fn ssim_examples() {
    let a = random([1, 3, 16, 16], 3);
    assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
    let (c1v, c2v) = (0.3f64, 0.6f64);
    let p = Tensor::full([1, 1, 12, 12], c1v as f32);
    let q = Tensor::full([1, 1, 12, 12], c2v as f32);
    let k1 = 0.01f64.powi(2);
    let (c1v, c2v) = (c1v as f32 as f64, c2v as f32 as f64);
    let expect = (2.0 * c1v * c2v + k1) / (c1v * c1v + c2v * c2v + k1);
    assert!((ssim(&p, &q, 1.0).unwrap() - expect).abs() < 1e-9);
    for seed in 0..5 {
        let b = random([1, 3, 16, 16], 100 + seed);
        assert!((ssim(&a, &b, 1.0).unwrap() - brute_ssim(&a, &b)).abs() < 1e-6);
    }
    assert!(ssim(&Tensor::zeros([1, 1, 10, 12]), &Tensor::zeros([1, 1, 10, 12]), 1.0).is_err());
}

#[test]
fn delta_and_score_examples() {
    let casr = QpPair { qp31: 33.11, qp63: 29.17 };
    assert!((delta_psnr(casr, BASELINE_PSNR_Y) - 0.205).abs() < 1e-9);
    assert_eq!(delta_psnr(BASELINE_PSNR_Y, BASELINE_PSNR_Y), 0.0);
    let vpeg_s = QpPair { qp31: 33.93, qp63: 29.41 };
    assert!((delta_psnr(vpeg_s, BASELINE_PSNR_Y) - 0.735).abs() < 1e-9);

    assert!((challenge_score(ScoreInputs::new(0.205, 0.468)).unwrap() - 33.70).abs() <= 0.05);
    assert_eq!(challenge_score(ScoreInputs::new(0.0, 1.0)).unwrap(), 20.0);
    assert!((challenge_score(ScoreInputs::new(0.355, 0.685)).unwrap() - 30.91).abs() <= 0.05);
    assert!(challenge_score(ScoreInputs::new(0.1, 0.0)).is_err());
    assert!(challenge_score(ScoreInputs { c: 0.0, ..ScoreInputs::new(0.1, 1.0) }).is_err());
}

#[test]
fn report_pair() {
    let m = QualityMetrics { psnr_rgb: 1.0, psnr_y: 2.0, ssim_rgb: 0.5, ssim_y: 0.5 };
    let mut r = MetricsReport::default();
    r.per_qp.insert(31, m);
    assert!(r.psnr_y_pair().is_none());
    r.per_qp.insert(63, QualityMetrics { psnr_y: 4.0, ..m });
    assert_eq!(r.psnr_y_pair(), Some(QpPair { qp31: 2.0, qp63: 4.0 }));
    assert_eq!(mean_metrics(&[m, QualityMetrics { psnr_y: 4.0, ..m }]).unwrap().psnr_y, 3.0);
}

proptest! {
    #[test]
    fn symmetric_and_bounded(seed in 0u64..1000) {
        let a = random([1, 2, 12, 12], seed);
        let b = random([1, 2, 12, 12], seed + 7);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b, 1.0).unwrap();
        prop_assert!((s - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn score_monotone(d in -1.0f64..1.0, t in 0.1f64..10.0, e in 0.001f64..0.5) {
        let base = challenge_score(ScoreInputs::new(d, t)).unwrap();
        prop_assert!(challenge_score(ScoreInputs::new(d + e, t)).unwrap() > base);
        prop_assert!(challenge_score(ScoreInputs::new(d, t + e)).unwrap() < base);
    }
}
