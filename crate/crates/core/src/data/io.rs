//! On-disk clip format: `frames/%06d.png` plus `annotations.json`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageReader, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Frame, JointAnnotation, VideoClip};
use crate::error::{DkdError, Result};

const MANIFEST: &str = "annotations.json";
const FRAMES: &str = "frames";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    clip_id: String,
    #[serde(rename = "T")]
    t: usize,
    #[serde(rename = "H")]
    h: usize,
    #[serde(rename = "W")]
    w: usize,
    #[serde(rename = "K")]
    k: usize,
    joints: Vec<Vec<[f64; 2]>>,
    visible: Vec<Vec<bool>>,
    person_bbox: Vec<[f64; 4]>,
    torso_pair: (usize, usize),
}

fn frame_path(dir: &Path, t: usize) -> PathBuf {
    dir.join(FRAMES).join(format!("{t:06}.png"))
}

/// Writes one frame as an 8-bit RGB PNG.
pub fn save_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let bytes = frame.pixels().iter().map(|v| (v * 255.0).round() as u8).collect();
    let img = RgbImage::from_raw(frame.width() as u32, frame.height() as u32, bytes).expect("frame buffer matches its size");
    img.save(path)?;
    Ok(())
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    clip.validate()?;
    let (h, w) = clip.frame_size();
    fs::create_dir_all(dir.join(FRAMES))?;
    for (t, frame) in clip.frames.iter().enumerate() {
        save_frame_png(frame, &frame_path(dir, t))?;
    }
    let manifest = Manifest {
        clip_id: clip.clip_id.clone(),
        t: clip.len(),
        h,
        w,
        k: clip.num_joints(),
        joints: clip.annotations.iter().map(|a| a.coords.clone()).collect(),
        visible: clip.annotations.iter().map(|a| a.visible.clone()).collect(),
        person_bbox: clip.annotations.iter().map(|a| a.person_bbox).collect(),
        torso_pair: clip.annotations[0].torso_pair,
    };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn count(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(DkdError::CountMismatch {
            what: what.into(),
            expected,
            found,
        })
    }
}

pub fn load_clip(dir: &Path) -> Result<VideoClip> {
    let path = dir.join(MANIFEST);
    if !path.is_file() {
        return Err(DkdError::MissingManifest(path));
    }
    let text = fs::read_to_string(&path)?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| DkdError::MalformedManifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    count("joint rows", m.t, m.joints.len())?;
    count("visibility rows", m.t, m.visible.len())?;
    count("person boxes", m.t, m.person_bbox.len())?;
    let images = match fs::read_dir(dir.join(FRAMES)) {
        Ok(rd) => rd
            .filter_map(|e| e.ok())
            .filter(|e| e.path().extension().is_some_and(|x| x == "png"))
            .count(),
        Err(_) => 0,
    };
    count("frame images", m.t, images)?;

    let mut frames = Vec::with_capacity(m.t);
    let mut annotations = Vec::with_capacity(m.t);
    for t in 0..m.t {
        let fp = frame_path(dir, t);
        if !fp.is_file() {
            return Err(DkdError::CountMismatch {
                what: format!("frame image {}", fp.display()),
                expected: 1,
                found: 0,
            });
        }
        let img = ImageReader::open(&fp)?.decode()?.to_rgb8();
        if (img.height() as usize, img.width() as usize) != (m.h, m.w) {
            return Err(DkdError::Shape(format!(
                "{} is {}x{}, manifest says {}x{}",
                fp.display(),
                img.height(),
                img.width(),
                m.h,
                m.w
            )));
        }
        let pixels = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
        frames.push(Frame::new(m.h, m.w, pixels)?);
        count(&format!("joints in frame {t}"), m.k, m.joints[t].len())?;
        count(&format!("visibility flags in frame {t}"), m.k, m.visible[t].len())?;
        annotations.push(JointAnnotation {
            coords: m.joints[t].clone(),
            visible: m.visible[t].clone(),
            person_bbox: m.person_bbox[t],
            torso_pair: m.torso_pair,
        });
    }
    VideoClip::new(m.clip_id, frames, annotations)
}

/// One subdirectory per clip, named by clip id.
pub fn save_dataset(clips: &[VideoClip], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for clip in clips {
        save_clip(clip, &dir.join(&clip.clip_id))?;
    }
    Ok(())
}

/// Every subdirectory holding a manifest, in name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<VideoClip>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    if dirs.is_empty() {
        return Err(DkdError::MissingManifest(dir.join("*").join(MANIFEST)));
    }
    dirs.sort();
    dirs.iter().map(|d| load_clip(d)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_clip, SyntheticSceneConfig};

    fn clip(t: usize) -> VideoClip {
        let mut cfg = SyntheticSceneConfig::default();
        cfg.frames = t;
        generate_synthetic_clip(&cfg, 3).unwrap()
    }

    #[test]
    fn round_trip_is_exact_on_coordinates() {
        let dir = tempfile::tempdir().unwrap();
        let c = clip(3);
        save_clip(&c, dir.path()).unwrap();
        let back = load_clip(dir.path()).unwrap();
        assert_eq!(back.annotations, c.annotations);
        assert_eq!(back.clip_id, c.clip_id);
        for (a, b) in back.frames.iter().zip(&c.frames) {
            let worst = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max);
            assert!(worst <= 1.0 / 255.0);
        }
    }

    #[test]
    fn errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_clip(dir.path()), Err(DkdError::MissingManifest(_))));

        save_clip(&clip(3), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST);
        let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m["joints"].as_array_mut().unwrap().pop();
        fs::write(&path, m.to_string()).unwrap();
        assert!(matches!(load_clip(dir.path()), Err(DkdError::CountMismatch { .. })));

        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(load_clip(dir.path()), Err(DkdError::MalformedManifest { .. })));
    }

    #[test]
    fn extra_frame_is_a_count_mismatch_and_wrong_size_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        save_clip(&clip(2), dir.path()).unwrap();
        fs::copy(frame_path(dir.path(), 0), frame_path(dir.path(), 2)).unwrap();
        assert!(matches!(load_clip(dir.path()), Err(DkdError::CountMismatch { .. })));
        fs::remove_file(frame_path(dir.path(), 2)).unwrap();
        RgbImage::new(8, 8).save(frame_path(dir.path(), 1)).unwrap();
        assert!(matches!(load_clip(dir.path()), Err(DkdError::Shape(_))));
    }

    #[test]
    fn dataset_round_trip_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = clip(1);
        a.clip_id = "b".into();
        let mut b = clip(1);
        b.clip_id = "a".into();
        save_dataset(&[a, b], dir.path()).unwrap();
        let ids: Vec<String> = load_dataset(dir.path()).unwrap().into_iter().map(|c| c.clip_id).collect();
        assert_eq!(ids, vec!["a", "b"]);
    }
}
