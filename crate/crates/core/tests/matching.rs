mod common;

use dkd_core::matching::{apply_pose_kernels, materialize_full_kernels, oracle_match, MatchNorm, Planes};
use dkd_core::DkdError;
use proptest::prelude::*;

use common::{planes, rng, uniform};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn factorized_matches_dense_kernels(
        seed in any::<u64>(),
        s in prop::sample::select(vec![1usize, 3, 5]),
        c in 1usize..6,
        k in 1usize..5,
        h in 4usize..11,
        w in 4usize..11,
    ) {
        let mut r = rng(seed);
        let f = planes(&mut r, c, h, w);
        let kb = planes(&mut r, c, s, s);
        let (u, v) = (uniform(&mut r, c * k), uniform(&mut r, c * c));
        let fast = apply_pose_kernels(&f, &kb, &u, &v, MatchNorm::Skip).unwrap();
        let slow = oracle_match(&f, &materialize_full_kernels(&kb, &u, &v).unwrap()).unwrap();
        prop_assert_eq!((fast.channels, fast.height, fast.width), (k, h, w));
        prop_assert!(fast.max_abs_diff(&slow) <= 1e-10);
    }

    #[test]
    fn matching_is_linear_in_the_features(seed in any::<u64>(), a in -3.0f64..3.0) {
        let mut r = rng(seed);
        let (c, k, s) = (3, 2, 3);
        let f1 = planes(&mut r, c, 6, 7);
        let f2 = planes(&mut r, c, 6, 7);
        let kb = planes(&mut r, c, s, s);
        let (u, v) = (uniform(&mut r, c * k), uniform(&mut r, c * c));
        let combo = Planes::new(c, 6, 7, f1.data.iter().zip(&f2.data).map(|(x, y)| a * x + y).collect()).unwrap();
        let run = |f: &Planes<f64>| apply_pose_kernels(f, &kb, &u, &v, MatchNorm::Skip).unwrap();
        let (o1, o2, oc) = (run(&f1), run(&f2), run(&combo));
        for i in 0..oc.data.len() {
            prop_assert!((oc.data[i] - (a * o1.data[i] + o2.data[i])).abs() < 1e-10);
        }
    }
}

#[test]
fn unit_running_norm_is_the_identity() {
    let mut r = rng(4);
    let (c, k) = (4, 3);
    let f = planes(&mut r, c, 8, 8);
    let kb = planes(&mut r, c, 3, 3);
    let (u, v) = (uniform(&mut r, c * k), uniform(&mut r, c * c));
    let raw = apply_pose_kernels(&f, &kb, &u, &v, MatchNorm::Skip).unwrap();
    let (ones, zeros) = (vec![1.0; k], vec![0.0; k]);
    let norm = MatchNorm::Running {
        gamma: &ones,
        beta: &zeros,
        mean: &zeros,
        var: &ones,
        eps: 0.0,
    };
    assert_eq!(apply_pose_kernels(&f, &kb, &u, &v, norm).unwrap(), raw);
}

#[test]
fn batch_norm_centres_and_scales_each_joint() {
    let mut r = rng(5);
    let (c, k) = (2, 4);
    let f = planes(&mut r, c, 9, 9);
    let kb = planes(&mut r, c, 3, 3);
    let (u, v) = (uniform(&mut r, c * k), uniform(&mut r, c * c));
    let (ones, zeros) = (vec![1.0; k], vec![0.0; k]);
    let out = apply_pose_kernels(&f, &kb, &u, &v, MatchNorm::Batch { gamma: &ones, beta: &zeros, eps: 1e-12 }).unwrap();
    for j in 0..k {
        let p = out.plane(j);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let var = p.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-6, "joint {j}: mean {mean}, var {var}");
    }
}

#[test]
fn mismatched_coefficients_are_shape_errors() {
    let mut r = rng(6);
    let f = planes(&mut r, 3, 5, 5);
    let kb = planes(&mut r, 3, 3, 3);
    let v = uniform(&mut r, 9);
    let err = apply_pose_kernels(&f, &kb, &uniform(&mut r, 4), &v, MatchNorm::Skip).unwrap_err();
    assert!(matches!(err, DkdError::Shape(_)));
    let wrong_bases = planes(&mut r, 2, 3, 3);
    assert!(apply_pose_kernels(&f, &wrong_bases, &uniform(&mut r, 6), &v, MatchNorm::Skip).is_err());
    assert!(Planes::new(2, 2, 2, vec![0.0; 7]).is_err());
}
