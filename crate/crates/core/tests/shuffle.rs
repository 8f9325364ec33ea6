use rtsr_core::shuffle::*;
use rtsr_core::*;
use proptest::prelude::*;

#[test]
fn factor_one_is_identity() {
    let x = Tensor::from_vec([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    assert_eq!(pixel_unshuffle(&x, 1).unwrap(), x);
}

#[test]
fn four_channels_to_two_by_two() {
    let x = Tensor::from_vec([1, 4, 1, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), Shape::new(1, 1, 2, 2));
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
}

#[test]
fn divisibility_errors() {
    assert!(pixel_shuffle(&Tensor::zeros([1, 3, 2, 2]), 2).is_err());
    assert!(pixel_unshuffle(&Tensor::zeros([1, 3, 3, 2]), 2).is_err());
}

proptest! {
    #[test]
    fn round_trips_are_bit_exact(
        n in 1usize..3, c in 1usize..4, h in 1usize..5, w in 1usize..5, r in 1usize..4,
        seed in any::<u64>()
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::randn([n, c, h * r, w * r], &mut rng);
        let down = pixel_unshuffle(&x, r).unwrap();
        prop_assert_eq!(&pixel_shuffle(&down, r).unwrap(), &x);
        let y = Tensor::randn([n, c * r * r, h, w], &mut rng);
        let up = pixel_shuffle(&y, r).unwrap();
        prop_assert_eq!(&pixel_unshuffle(&up, r).unwrap(), &y);

        let mut a: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = up.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}
