mod common;

use dkd_core::data::{joint_color, Frame};
use dkd_core::infer::{baseline_run, initializer_run, overlay_render, run_for, run_video, video_macs, InferenceResult};
use dkd_core::nets::init_params;
use dkd_core::train::{Ablation, Trainer};
use dkd_core::DkdError;

use common::{small_model, toy_setup};

fn frames(t: usize) -> Vec<Frame> {
    (0..t).map(|i| Frame::filled(64, 64, [0.1 * i as f32, 0.4, 0.7])).collect()
}

#[test]
fn sequential_inference_call_counts() {
    let (gen, _) = init_params(&small_model(), 0).unwrap();
    let r = run_video(&gen, &frames(5)).unwrap();
    let c = r.counts;
    assert_eq!((c.initializer, c.encoder, c.distillator, c.matching, c.discriminator), (1, 5, 4, 4, 0));
    assert_eq!((r.len(), r.maps.len(), r.confidences.len()), (5, 5, 5));

    let b = baseline_run(&gen, &frames(5)).unwrap().counts;
    assert_eq!((b.initializer, b.encoder, b.frame_head, b.distillator), (0, 5, 5, 0));
    let p = initializer_run(&gen, &frames(3)).unwrap().counts;
    assert_eq!((p.initializer, p.encoder), (3, 0));
}

#[test]
fn single_frame_runs_the_initializer_only() {
    let (gen, _) = init_params(&small_model(), 0).unwrap();
    let r = run_video(&gen, &frames(1)).unwrap();
    assert_eq!((r.counts.initializer, r.counts.encoder, r.counts.distillator, r.counts.matching), (1, 0, 0, 0));
    assert_eq!(video_macs(&gen, 1, Ablation::Full).unwrap(), gen.initializer_spec().macs().unwrap());
    assert_eq!(video_macs(&gen, 0, Ablation::Full).unwrap(), 0);
}

#[test]
fn ablation_paths_report_their_own_cost() {
    let (gen, _) = init_params(&small_model(), 0).unwrap();
    let f = gen.encoder_spec().macs().unwrap();
    let head = gen.frame_head_spec().macs().unwrap();
    assert_eq!(video_macs(&gen, 4, Ablation::Baseline).unwrap(), 4 * (f + head));
    assert_eq!(video_macs(&gen, 4, Ablation::NoPkd).unwrap(), 4 * (f + head));
    assert_eq!(
        video_macs(&gen, 4, Ablation::NoTat).unwrap(),
        video_macs(&gen, 4, Ablation::Full).unwrap()
    );
    assert_eq!(run_for(&gen, &frames(2), Ablation::NoPkd).unwrap().counts.distillator, 0);
}

#[test]
fn wrong_inputs_are_rejected() {
    let (gen, _) = init_params(&small_model(), 0).unwrap();
    assert!(matches!(run_video(&gen, &[]), Err(DkdError::Config(_))));
    let big = vec![Frame::filled(128, 128, [0.0; 3])];
    assert!(matches!(run_video(&gen, &big), Err(DkdError::Shape(_))));
}

#[test]
fn json_export_lists_every_frame() {
    let (gen, _) = init_params(&small_model(), 0).unwrap();
    let r = run_video(&gen, &frames(3)).unwrap();
    let doc = r.to_json();
    let list = doc["frames"].as_array().unwrap();
    assert_eq!(list.len(), 3);
    assert_eq!(list[2]["frame"], 2);
    assert_eq!(list[0]["joints"].as_array().unwrap().len(), 3);
    assert_eq!(list[0]["confidence"].as_array().unwrap().len(), 3);
    assert_eq!(doc["counts"]["distillator"], 2);
    assert!(doc["timing"]["encoder_ms"].as_f64().unwrap() >= 0.0);
}

#[test]
fn overlays_mark_each_joint_in_its_colour() {
    let (cfg, clips) = toy_setup(1, 3, 6);
    let t = Trainer::new(cfg).unwrap();
    let clip = &clips[0];
    let result = run_video(&t.gen, &clip.frames).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = overlay_render(&result, clip, &dir.path().join("overlay")).unwrap();
    assert_eq!(written.len(), 3);
    assert_eq!(written[1].file_name().unwrap(), "000001.png");
    for (t, path) in written.iter().enumerate() {
        let img = image::open(path).unwrap().to_rgb8();
        let joints = &result.joints[t];
        let k = joints.len();
        // The last disk is drawn on top of everything else.
        let [x, y] = joints[k - 1];
        let px = img.get_pixel(x.floor() as u32, y.floor() as u32).0;
        let want = joint_color(k - 1, k).map(|v| (v * 255.0).round() as u8);
        assert_eq!(px, want, "frame {t}");
    }
}

#[test]
fn empty_result_writes_nothing_and_long_results_fail() {
    let (_, clips) = toy_setup(1, 2, 7);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("overlay");
    let empty = InferenceResult {
        joints: vec![],
        confidences: vec![],
        maps: vec![],
        timing: Default::default(),
        counts: Default::default(),
    };
    assert!(overlay_render(&empty, &clips[0], &out).unwrap().is_empty());
    assert!(!out.exists());

    let mut long = empty.clone();
    long.joints = vec![vec![[1.0, 1.0]]; 3];
    long.confidences = vec![vec![0.0]; 3];
    assert!(matches!(overlay_render(&long, &clips[0], &out), Err(DkdError::CountMismatch { .. })));
}
