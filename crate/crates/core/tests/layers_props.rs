use binfer::bitcore::{BitTensor, FixedTensor};
use binfer::fold::{Direction, FoldedThreshold};
use binfer::layers::{
    conv_binary, conv_first, max_pool, norm_binarize, FixedFilters, IntFeatureMap,
};
use binfer::network::{LayerKind, LayerSpec};
use binfer::oracle::{conv_real, RealTensor};
use proptest::prelude::*;

fn spec(kind: LayerKind, k: usize, fd: usize, n: usize) -> LayerSpec {
    LayerSpec {
        filter_w: k,
        filter_h: k,
        pad: k / 2,
        ..LayerSpec::conv("t", kind, fd, n, false)
    }
}

fn real(w: usize, h: usize, d: usize, vals: &[i8]) -> RealTensor {
    let v: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
    RealTensor::from_hwd(w, h, d, &v).unwrap()
}

/// (k, w, h, d, n, input bits, filter bits) with k in {1, 3, 5}.
fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, Vec<i8>, Vec<i8>)> {
    (
        prop_oneof![Just(1usize), Just(3), Just(5)],
        1usize..7,
        1usize..7,
        1usize..70,
        1usize..6,
    )
        .prop_flat_map(|(k, w, h, d, n)| {
            let pm1 = |len| prop::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], len);
            (
                Just(k),
                Just(w),
                Just(h),
                Just(d),
                Just(n),
                pm1(w * h * d),
                pm1(n * k * k * d),
            )
        })
}

proptest! {
    /// Packed binary conv equals the real-valued conv with -1 padding, mapped by 2y - cnum.
    #[test]
    fn binary_conv_matches_oracle((k, w, h, d, n, x, f) in conv_case()) {
        let input = BitTensor::pack(&x, w, h, d).unwrap();
        let cnum = k * k * d;
        let filters: Vec<BitTensor> = f.chunks(cnum).map(|c| BitTensor::pack(c, k, k, d).unwrap()).collect();
        let y = conv_binary(&input, &filters, &spec(LayerKind::ConvBinary, k, d, n)).unwrap();
        let rf: Vec<RealTensor> = f.chunks(cnum).map(|c| real(k, k, d, c)).collect();
        let expect = conv_real(&real(w, h, d, &x), &rf, -1.0).unwrap().to_hwd();
        let got: Vec<f64> = y.values.iter().map(|&v| (2 * v - cnum as i32) as f64).collect();
        prop_assert_eq!(got, expect);
    }

    #[test]
    fn first_conv_matches_oracle(
        (k, w, h, d, n) in (prop_oneof![Just(1usize), Just(3)], 1usize..7, 1usize..7, 1usize..4, 1usize..6),
        seed in any::<u64>(),
    ) {
        let x: Vec<i8> = (0..w * h * d).map(|i| ((seed.rotate_left(i as u32) % 63) as i8) - 31).collect();
        let f: Vec<i8> = (0..n * k * k * d).map(|i| if (seed >> (i % 64)) & 1 == 1 { 1 } else { -1 }).collect();
        let y = conv_first(
            &FixedTensor::new(w, h, d, x.clone()).unwrap(),
            &FixedFilters::new(k, k, d, n, f.clone()).unwrap(),
            &spec(LayerKind::ConvFirst, k, d, n),
        ).unwrap();
        let rf: Vec<RealTensor> = f.chunks(k * k * d).map(|c| real(k, k, d, c)).collect();
        let expect = conv_real(&real(w, h, d, &x), &rf, 0.0).unwrap().to_hwd();
        prop_assert_eq!(y.values.iter().map(|&v| v as f64).collect::<Vec<_>>(), expect);
    }

    /// Permuting input channels and filter channels together leaves every accumulator unchanged.
    #[test]
    fn channel_permutation_invariance((k, w, h, d, n, x, f) in conv_case(), rot in 0usize..70) {
        let cnum = k * k * d;
        let perm = |vals: &[i8], taps: usize| -> Vec<i8> {
            let mut out = vals.to_vec();
            for t in 0..taps {
                for c in 0..d {
                    out[t * d + (c + rot) % d] = vals[t * d + c];
                }
            }
            out
        };
        let run = |x: &[i8], f: &[i8]| {
            let filters: Vec<BitTensor> = f.chunks(cnum).map(|c| BitTensor::pack(c, k, k, d).unwrap()).collect();
            conv_binary(&BitTensor::pack(x, w, h, d).unwrap(), &filters, &spec(LayerKind::ConvBinary, k, d, n)).unwrap()
        };
        let px = perm(&x, w * h);
        let pf: Vec<i8> = f.chunks(cnum).flat_map(|c| perm(c, k * k)).collect();
        prop_assert_eq!(run(&x, &f), run(&px, &pf));
    }

    /// Pooling integers then thresholding equals thresholding then OR-pooling bits for GE thresholds.
    #[test]
    fn pool_and_threshold_commute_for_ge(
        (w2, h2, d) in (1usize..5, 1usize..5, 1usize..40),
        seed in any::<u64>(),
        cs in prop::collection::vec(-5i32..40, 40),
    ) {
        let (w, h) = (2 * w2, 2 * h2);
        let vals: Vec<i32> = (0..w * h * d).map(|i| (seed.rotate_left(i as u32 * 7) % 37) as i32).collect();
        let y = IntFeatureMap::new(w, h, d, vals).unwrap();
        let t: Vec<FoldedThreshold> = cs[..d].iter().map(|&c| FoldedThreshold::ge(c)).collect();
        let pooled_first = norm_binarize(&max_pool(&y).unwrap(), &t).unwrap();
        let bits = norm_binarize(&y, &t).unwrap();
        let mut or_pooled = BitTensor::zeros(w2, h2, d);
        for oy in 0..h2 {
            for ox in 0..w2 {
                for c in 0..d {
                    let any = (0..4).any(|q| bits.get(2 * ox + q % 2, 2 * oy + q / 2, c));
                    or_pooled.set(ox, oy, c, any);
                }
            }
        }
        prop_assert_eq!(pooled_first, or_pooled);
    }
}

#[test]
fn le_thresholds_pool_as_min() {
    // For LE channels the pooled integer is the max, so the bit is the AND of the window's bits.
    let y = IntFeatureMap::new(2, 2, 1, vec![1, 5, 2, 3]).unwrap();
    let t = [FoldedThreshold {
        c: 4,
        direction: Direction::Le,
    }];
    assert!(!norm_binarize(&max_pool(&y).unwrap(), &t)
        .unwrap()
        .get(0, 0, 0));
    let y = IntFeatureMap::new(2, 2, 1, vec![1, 4, 2, 3]).unwrap();
    assert!(norm_binarize(&max_pool(&y).unwrap(), &t)
        .unwrap()
        .get(0, 0, 0));
}

#[test]
fn shape_errors() {
    let x = BitTensor::zeros(4, 4, 8);
    let f = vec![BitTensor::zeros(3, 3, 9)];
    assert!(conv_binary(&x, &f, &spec(LayerKind::ConvBinary, 3, 8, 1)).is_err());
    assert!(max_pool(&IntFeatureMap::new(3, 2, 1, vec![0; 6]).unwrap()).is_err());
    assert!(norm_binarize(
        &IntFeatureMap::new(1, 1, 2, vec![0; 2]).unwrap(),
        &[FoldedThreshold::ge(0)]
    )
    .is_err());
}
