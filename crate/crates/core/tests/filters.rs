use rtsr_core::filters::*;
use rtsr_core::*;

#[test]
fn stencils_sum_to_zero() {
    for k in [FixedKernel::SobelX, FixedKernel::SobelY, FixedKernel::Laplacian] {
        let s: f32 = k.taps().iter().flatten().sum();
        assert_eq!(s, 0.0);
    }
    let x = FixedKernel::SobelX.taps();
    let y = FixedKernel::SobelY.taps();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(x[i][j], y[j][i]);
        }
    }
}

#[test]
fn constant_image_has_no_edges() {
    let x = Tensor::full([1, 2, 5, 5], 0.7);
    let scale = Tensor::channel_vector(vec![1.0, 3.0]);
    let y = fixed_filter_valid(&x, FixedKernel::Laplacian, &scale).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 2, 3, 3));
    assert!(y.data().iter().all(|v| v.abs() < 1e-6));
}
