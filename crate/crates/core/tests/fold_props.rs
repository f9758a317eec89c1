use binfer::fold::{fold_binary_layer, fold_first_layer, BatchNormParams, Direction};
use binfer::oracle::{batchnorm_real, binarize_accum, binarize_real, ThresholdMode};
use proptest::prelude::*;

fn params(span: f64) -> impl Strategy<Value = BatchNormParams> {
    (
        -span..span,
        0.0..span.max(1.0),
        prop_oneof![Just(0.0), -4.0..-0.01, 0.01..4.0],
        -3.0..3.0f64,
        1e-6..1e-2f64,
    )
        .prop_map(|(mu, sigma2, gamma, beta, epsilon)| {
            BatchNormParams::new(mu, sigma2, gamma, beta, epsilon).unwrap()
        })
}

fn with_cnum() -> impl Strategy<Value = (u32, BatchNormParams)> {
    (1u32..300).prop_flat_map(|cnum| (Just(cnum), params(cnum as f64)))
}

proptest! {
    #[test]
    fn binary_fold_matches_rounded_oracle((cnum, p) in with_cnum()) {
        let t = fold_binary_layer(&p, cnum).unwrap();
        for y in 0..=cnum {
            let v = 2.0 * y as f64 - cnum as f64;
            prop_assert_eq!(t.apply(y as i32), binarize_accum(v, &p, cnum as usize, false, ThresholdMode::Rounded).unwrap(), "y={}", y);
        }
    }

    #[test]
    fn first_layer_fold_matches_rounded_oracle(p in params(500.0)) {
        let t = fold_first_layer(&p).unwrap();
        for v in -600i32..=600 {
            prop_assert_eq!(t.apply(v), binarize_accum(v as f64, &p, 27, true, ThresholdMode::Rounded).unwrap());
        }
    }

    /// Rounding only matters inside half a grid step of the exact crossing.
    #[test]
    fn rounded_agrees_with_exact_away_from_crossing((cnum, p) in with_cnum()) {
        prop_assume!(p.gamma != 0.0);
        let cross = p.mu - p.beta * p.std() / p.gamma;
        let t = fold_binary_layer(&p, cnum).unwrap();
        for y in 0..=cnum {
            let v = 2.0 * y as f64 - cnum as f64;
            if (v - cross).abs() > 1.0 + 1e-9 {
                prop_assert_eq!(t.apply(y as i32), binarize_real(batchnorm_real(v, &p).unwrap()));
            }
        }
    }

    #[test]
    fn negating_scale_and_shift_flips_direction((cnum, p) in with_cnum()) {
        prop_assume!(p.gamma != 0.0);
        let q = BatchNormParams { gamma: -p.gamma, beta: -p.beta, ..p };
        let a = fold_binary_layer(&p, cnum).unwrap();
        let b = fold_binary_layer(&q, cnum).unwrap();
        prop_assert_eq!(a.c, b.c);
        let expected = if p.gamma > 0.0 { (Direction::Ge, Direction::Le) } else { (Direction::Le, Direction::Ge) };
        prop_assert_eq!((a.direction, b.direction), expected);
    }

    #[test]
    fn ge_threshold_is_monotone((cnum, p) in with_cnum()) {
        let t = fold_binary_layer(&p, cnum).unwrap();
        let bits: Vec<bool> = (0..=cnum as i32).map(|y| t.apply(y)).collect();
        let flips = bits.windows(2).filter(|w| w[0] != w[1]).count();
        prop_assert!(flips <= 1);
    }
}

#[test]
fn zero_gamma_is_constant() {
    let one =
        fold_binary_layer(&BatchNormParams::new(3.0, 1.0, 0.0, 0.5, 1e-5).unwrap(), 27).unwrap();
    let zero = fold_binary_layer(
        &BatchNormParams::new(3.0, 1.0, 0.0, -0.5, 1e-5).unwrap(),
        27,
    )
    .unwrap();
    assert_eq!(one.direction, Direction::ConstOne);
    assert_eq!(zero.direction, Direction::ConstZero);
    assert!((0..=27).all(|y| one.apply(y) && !zero.apply(y)));
}

#[test]
fn invalid_params_are_rejected() {
    assert!(BatchNormParams::new(0.0, -1.0, 1.0, 0.0, 1e-5).is_err());
    assert!(BatchNormParams::new(0.0, 1.0, 1.0, 0.0, 0.0).is_err());
    assert!(BatchNormParams::new(f64::NAN, 1.0, 1.0, 0.0, 1e-5).is_err());
}
