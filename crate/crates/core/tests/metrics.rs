use dkd_core::data::JointAnnotation;
use dkd_core::metrics::{benchmark_latency, flops_report, matching_macs, pck_score, LayerSpec, MetricConfig, MetricsLog, ModelSpec, Reference};
use dkd_core::DkdError;
use proptest::prelude::*;

fn ann(coords: Vec<[f64; 2]>, bbox: [f64; 4]) -> JointAnnotation {
    let k = coords.len();
    JointAnnotation {
        coords,
        visible: vec![true; k],
        person_bbox: bbox,
        torso_pair: (0, 1),
    }
}

fn torso() -> MetricConfig {
    MetricConfig {
        reference: Reference::TorsoSize,
        ..Default::default()
    }
}

/// Multiples of 1/8, so shifts and power-of-two scalings are exact.
fn dyadic(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo * 8..hi * 8).prop_map(|v| v as f64 / 8.0)
}

fn point() -> impl Strategy<Value = [f64; 2]> {
    [dyadic(0, 200), dyadic(0, 200)]
}

prop_compose! {
    fn instance()(k in 2usize..7)(
        gt in prop::collection::vec(point(), k),
        noise in prop::collection::vec([dyadic(-40, 40), dyadic(-40, 40)], k),
        size in [dyadic(10, 150), dyadic(10, 150)],
    ) -> (JointAnnotation, Vec<[f64; 2]>) {
        let pred = gt.iter().zip(&noise).map(|(g, n)| [g[0] + n[0], g[1] + n[1]]).collect();
        (ann(gt, [0.0, 0.0, size[0], size[1]]), pred)
    }
}

proptest! {
    #[test]
    fn factorized_cheaper_exactly_when_the_closed_form_says(
        m in 1usize..40, n in 1usize..40, c in 1usize..64, k in 1usize..20, s in 1usize..9,
    ) {
        let cmp = matching_macs(m, n, c, k, s);
        prop_assert_eq!(cmp.factorized, (m * n * (c * c + c * s * s + k * c)) as u64);
        prop_assert_eq!(cmp.full_kernel, (m * n * c * k * s * s) as u64);
        prop_assert_eq!(cmp.factorized < cmp.full_kernel, c + s * s + k < k * s * s);
    }

    #[test]
    fn pck_ignores_translation(
        (gt, pred) in instance(), dx in dyadic(-1000, 1000), dy in dyadic(-1000, 1000),
    ) {
        let shift = |p: &[f64; 2]| [p[0] + dx, p[1] + dy];
        let mut moved = gt.clone();
        moved.coords = gt.coords.iter().map(shift).collect();
        let b = gt.person_bbox;
        moved.person_bbox = [b[0] + dx, b[1] + dy, b[2] + dx, b[3] + dy];
        let moved_pred: Vec<_> = pred.iter().map(shift).collect();
        for cfg in [MetricConfig::default(), torso()] {
            let a = pck_score(&[pred.clone()], &[gt.clone()], cfg);
            let b = pck_score(&[moved_pred.clone()], &[moved.clone()], cfg);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn pck_ignores_power_of_two_scaling((gt, pred) in instance(), e in -3i32..4) {
        let s = 2f64.powi(e);
        let mut scaled = gt.clone();
        scaled.coords = gt.coords.iter().map(|c| [c[0] * s, c[1] * s]).collect();
        scaled.person_bbox = gt.person_bbox.map(|v| v * s);
        let scaled_pred: Vec<_> = pred.iter().map(|c| [c[0] * s, c[1] * s]).collect();
        for cfg in [MetricConfig::default(), torso()] {
            let a = pck_score(&[pred.clone()], &[gt.clone()], cfg);
            let b = pck_score(&[scaled_pred.clone()], &[scaled.clone()], cfg);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (a, b) => prop_assert_eq!(a.is_err(), b.is_err()),
            }
        }
    }

    #[test]
    fn pck_is_a_fraction((gt, pred) in instance()) {
        let r = pck_score(&[pred], &[gt.clone()], MetricConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.mean));
        prop_assert_eq!(r.counted, gt.coords.len());
    }
}

#[test]
fn hand_example_counts() {
    let ex = matching_macs(16, 16, 8, 4, 3);
    assert_eq!((ex.factorized, ex.full_kernel), (43008, 73728));
}

#[test]
fn report_sums_components_and_rejects_unknown_layers() {
    let conv = LayerSpec::new("c", "conv", 3, 8, 3, (16, 16), (8, 8));
    let deconv = LayerSpec::new("d", "deconv", 8, 4, 4, (8, 8), (16, 16));
    let dw = LayerSpec::new("w", "depthwise", 4, 4, 3, (16, 16), (16, 16));
    let free = LayerSpec::new("b", "batchnorm", 4, 4, 1, (16, 16), (16, 16));
    assert_eq!(conv.macs().unwrap(), 64 * 8 * 3 * 9);
    assert_eq!(deconv.macs().unwrap(), 64 * 8 * 4 * 16);
    assert_eq!(dw.macs().unwrap(), 256 * 4 * 9);
    assert_eq!(free.macs().unwrap(), 0);
    let specs = [
        ModelSpec {
            component: "a".into(),
            layers: vec![conv.clone(), free],
        },
        ModelSpec {
            component: "b".into(),
            layers: vec![deconv, dw],
        },
        ModelSpec {
            component: "a".into(),
            layers: vec![conv],
        },
    ];
    let report = flops_report(&specs, None).unwrap();
    assert_eq!(report.per_component["a"], 2 * 64 * 8 * 3 * 9);
    assert_eq!(report.total, report.per_component.values().sum::<u64>());

    let odd = LayerSpec::new("x", "mystery", 1, 1, 1, (1, 1), (1, 1));
    assert!(matches!(odd.macs(), Err(DkdError::UnknownLayerKind(_))));
}

#[test]
fn invisible_joints_are_not_scored() {
    let mut gt = ann(vec![[0.0, 0.0], [10.0, 0.0], [50.0, 50.0]], [0.0, 0.0, 100.0, 100.0]);
    gt.visible[2] = false;
    let pred = vec![[0.0, 0.0], [90.0, 0.0], [0.0, 0.0]];
    let r = pck_score(&[pred], &[gt], MetricConfig::default()).unwrap();
    assert_eq!(r.per_joint, vec![Some(1.0), Some(0.0), None]);
    assert_eq!((r.mean, r.counted), (0.5, 2));
}

#[test]
fn degenerate_reference_is_an_error() {
    let gt = ann(vec![[5.0, 5.0], [5.0, 5.0]], [0.0, 0.0, 10.0, 10.0]);
    let err = pck_score(&[gt.coords.clone()], &[gt], torso()).unwrap_err();
    assert!(matches!(err, DkdError::DegenerateReference { frame: 0 }));
}

#[test]
fn latency_of_a_no_op_is_tiny() {
    let s = benchmark_latency(|| {}, 3, 50).unwrap();
    assert_eq!(s.iters, 50);
    assert!(s.mean_ms < 1.0 && s.p50_ms <= s.p95_ms);
    assert!(benchmark_latency(|| {}, 0, 0).is_err());
}

#[test]
fn log_appends_records_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let log = MetricsLog::new(dir.path().join("nested/log.jsonl"));
    for i in 0..3 {
        log.append("step", "abc", &serde_json::json!({ "i": i })).unwrap();
    }
    let records = log.read_all().unwrap();
    assert_eq!(records.len(), 3);
    assert!(records.iter().enumerate().all(|(i, r)| r.payload["i"] == i && r.kind == "step" && r.config_hash == "abc"));
}
