use rtsr_core::resample::*;
use rtsr_core::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn lanczos_point_values() {
    assert_eq!(lanczos_weight(0.0, 3), 1.0);
    assert_eq!(lanczos_weight(1.0, 3), 0.0);
    assert_eq!(lanczos_weight(2.0, 3), 0.0);
    assert_eq!(lanczos_weight(3.0, 3), 0.0);
    assert_eq!(lanczos_weight(-4.5, 3), 0.0);
    assert!(lanczos_weight(0.5, 3) > 0.5);
}

#[test]
fn constant_images_stay_constant() {
    let img = Tensor::full([1, 3, 7, 9], 0.37);
    for k in [
        ResampleKernel::lanczos(3),
        ResampleKernel::lanczos(5),
        ResampleKernel::bicubic(),
        ResampleKernel::nearest(),
    ] {
        for (h, w) in [(2, 3), (7, 9), (28, 13), (1, 1)] {
            let out = resample_image(&img, h, w, k).unwrap();
            assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-6), "{k:?} {h}x{w}");
        }
    }
}

#[test]
fn identity_resize() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Tensor::rand_uniform([1, 2, 6, 5], 0.0, 1.0, &mut rng);
    let out = resample_image(&img, 6, 5, ResampleKernel::lanczos(3)).unwrap();
    assert!(out.max_abs_diff(&img).unwrap() < 1e-6);
}

/// Direct 2-D summation with independently computed weights.
fn brute_force(img: &Tensor, oh: usize, ow: usize, a: usize) -> Tensor {
    let s = img.shape();
    let mut out = Tensor::zeros([s.n, s.c, oh, ow]);
    let sy = s.h as f64 / oh as f64;
    let sx = s.w as f64 / ow as f64;
    for c in 0..s.c {
        for y in 0..oh {
            for x in 0..ow {
                let cy = (y as f64 + 0.5) * sy - 0.5;
                let cx = (x as f64 + 0.5) * sx - 0.5;
                let (fy, fx) = (sy.max(1.0), sx.max(1.0));
                let (mut acc, mut norm) = (0.0, 0.0);
                for i in -40isize..40 {
                    for j in -40isize..40 {
                        let w = lanczos_weight((i as f64 - cy) / fy, a) * lanczos_weight((j as f64 - cx) / fx, a);
                        let ii = i.clamp(0, s.h as isize - 1) as usize;
                        let jj = j.clamp(0, s.w as isize - 1) as usize;
                        acc += w * img.at(0, c, ii, jj) as f64;
                        norm += w;
                    }
                }
                out.set(0, c, y, x, (acc / norm) as f32);
            }
        }
    }
    out
}

#[test]
fn ramp_downsample_matches_direct_summation() {
    let img = Tensor::from_vec([1, 1, 4, 4], (0..16).map(|v| v as f32 / 15.0).collect()).unwrap();
    for a in [3, 5] {
        let got = resample_image(&img, 2, 2, ResampleKernel::lanczos(a)).unwrap();
        let want = brute_force(&img, 2, 2, a);
        assert!(got.max_abs_diff(&want).unwrap() < 1e-6);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let img = Tensor::rand_uniform([1, 2, 12, 9], 0.0, 1.0, &mut rng);
    let got = resample_image(&img, 3, 4, ResampleKernel::lanczos(5)).unwrap();
    assert!(got.max_abs_diff(&brute_force(&img, 3, 4, 5)).unwrap() < 1e-6);
}

#[test]
fn downsample_preserves_mean_of_ramps() {
    let (h, w) = (32, 24);
    let data = (0..h * w)
        .map(|i| 0.2 + 0.5 * (i / w) as f32 / h as f32 + 0.2 * (i % w) as f32 / w as f32)
        .collect();
    let img = Tensor::from_vec([1, 1, h, w], data).unwrap();
    for k in [ResampleKernel::lanczos(5), ResampleKernel::lanczos(3), ResampleKernel::bicubic()] {
        let out = resample_image(&img, h / 4, w / 4, k).unwrap();
        assert!((out.mean() - img.mean()).abs() < 1e-3);
    }
}

#[test]
fn degrade_examples() {
    let spec = DegradationSpec::challenge(None).unwrap();
    let img = Tensor::full([1, 3, 8, 8], 0.5);
    let lr = degrade(&img, &spec, None).unwrap();
    assert_eq!(lr.shape(), Shape::new(1, 3, 2, 2));
    assert!(lr.data().iter().all(|v| (v - 0.5).abs() < 1e-6));

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = Tensor::rand_uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng);
    let unit = DegradationSpec::new(1, ResampleKernel::lanczos(5), None).unwrap();
    assert!(degrade(&img, &unit, None).unwrap().max_abs_diff(&img).unwrap() < 1e-6);

    let a = degrade(&img, &spec, None).unwrap();
    let b = resample_image(&img, 4, 4, ResampleKernel::lanczos(5)).unwrap().clamp(0.0, 1.0);
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert_eq!(degrade(&img, &spec, None).unwrap(), a);

    let odd = Tensor::full([1, 3, 9, 10], 0.25);
    assert_eq!(degrade(&odd, &spec, None).unwrap().shape(), Shape::new(1, 3, 3, 3));
}

#[test]
fn qp_without_codec_is_explicit_error() {
    let spec = DegradationSpec::challenge(Some(31)).unwrap();
    let err = degrade(&Tensor::full([1, 3, 8, 8], 0.5), &spec, None).unwrap_err();
    assert!(matches!(err, Error::CodecUnavailable(_)));
    assert!(DegradationSpec::challenge(Some(30)).is_err());
}

#[test]
fn nearest_upsample_blocks() {
    let x = Tensor::from_vec([1, 1, 1, 1], vec![0.3]).unwrap();
    let y = nearest_upsample(&x, 4).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 4, 4));
    assert!(y.data().iter().all(|&v| v == 0.3));
    assert_eq!(nearest_upsample(&y, 1).unwrap(), y);
}

#[test]
fn quantize_is_idempotent() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = Tensor::rand_uniform([1, 3, 4, 4], -0.2, 1.2, &mut rng);
    let q = quantize_8bit(&img);
    assert_eq!(quantize_8bit(&q), q);
}
