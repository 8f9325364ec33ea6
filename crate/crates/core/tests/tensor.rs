use rtsr_core::tensor::*;
use rtsr_core::*;

#[test]
fn shape_allows_only_all_zero_dims() {
    assert!(Tensor::from_vec([0, 0, 0, 0], vec![]).is_ok());
    assert!(Tensor::from_vec([1, 0, 2, 2], vec![]).is_err());
    assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
}

#[test]
fn add_zeros_and_mul_ones_are_identity() {
    let x = Tensor::from_vec([1, 2, 2, 2], (0..8).map(|v| v as f32 * 0.3).collect()).unwrap();
    let z = Tensor::zeros(x.shape());
    let o = Tensor::ones(x.shape());
    assert_eq!(elementwise(&x, &z, BinaryOp::Add).unwrap(), x);
    assert_eq!(elementwise(&x, &o, BinaryOp::Mul).unwrap(), x);
    let bad = Tensor::zeros([1, 2, 2, 3]);
    assert!(matches!(
        elementwise(&x, &bad, BinaryOp::Add),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn concat_matches_index_oracle() {
    let a = Tensor::from_vec([1, 2, 2, 2], (0..8).map(|v| v as f32).collect()).unwrap();
    let b = Tensor::from_vec([1, 3, 2, 2], (100..112).map(|v| v as f32).collect()).unwrap();
    let c = concat_channels(&[&a, &b]).unwrap();
    assert_eq!(c.shape(), Shape::new(1, 5, 2, 2));
    for ch in 0..5 {
        for y in 0..2 {
            for x in 0..2 {
                let expect = if ch < 2 { a.at(0, ch, y, x) } else { b.at(0, ch - 2, y, x) };
                assert_eq!(c.at(0, ch, y, x), expect);
            }
        }
    }
    let wrong = Tensor::zeros([1, 1, 3, 2]);
    assert!(concat_channels(&[&a, &wrong]).is_err());
}

#[test]
fn pad_then_crop_round_trips() {
    let x = Tensor::from_vec([2, 1, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
    let p = pad_zero(&x, 2);
    assert_eq!(p.shape(), Shape::new(2, 1, 7, 8));
    assert_eq!(p.at(0, 0, 0, 0), 0.0);
    assert_eq!(crop(&p, 2).unwrap(), x);
    assert!(crop(&x, 2).is_err());
}

#[test]
fn repeat_is_channel_major() {
    let x = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let r = repeat_channels(&x, 2).unwrap();
    assert_eq!(r.data(), &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
}

#[test]
fn slice_and_stack() {
    let x = Tensor::from_vec([2, 3, 1, 1], (0..6).map(|v| v as f32).collect()).unwrap();
    let s = slice_channels(&x, 1, 2).unwrap();
    assert_eq!(s.data(), &[1.0, 2.0, 4.0, 5.0]);
    let b = Tensor::stack_batch(&[x.batch_item(1), x.batch_item(0)]).unwrap();
    assert_eq!(b.data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
}
