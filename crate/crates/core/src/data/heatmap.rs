use super::{ConfidenceMaps, JointAnnotation, VideoClip};
use crate::error::{DkdError, Result};

/// Gaussian width in heatmap cells.
pub const DEFAULT_SIGMA: f64 = 2.0;

/// Cell `(row, col)` containing the frame point `(x, y)`, clamped to the grid.
fn quantize(coord: [f64; 2], stride: usize, rows: usize, cols: usize) -> (usize, usize) {
    let q = |v: f64, len: usize| ((v / stride as f64).floor().max(0.0) as usize).min(len - 1);
    (q(coord[1], rows), q(coord[0], cols))
}

/// Groundtruth maps: a unit-peak Gaussian centred on the cell that contains
/// each visible joint, all zeros for invisible joints.
pub fn encode_confidence_maps(
    ann: &JointAnnotation,
    height: usize,
    width: usize,
    stride: usize,
    sigma: f64,
) -> Result<ConfidenceMaps> {
    if stride == 0 || height % stride != 0 || width % stride != 0 || height == 0 || width == 0 {
        return Err(DkdError::Shape(format!("stride {stride} does not divide {height}x{width}")));
    }
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(DkdError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let (rows, cols) = (height / stride, width / stride);
    let mut maps = ConfidenceMaps::zeros(ann.num_joints(), rows, cols, stride);
    let denom = 2.0 * sigma * sigma;
    for (j, (&c, &vis)) in ann.coords.iter().zip(&ann.visible).enumerate() {
        if !vis {
            continue;
        }
        let (pr, pc) = quantize(c, stride, rows, cols);
        let plane = &mut maps.data[j * rows * cols..(j + 1) * rows * cols];
        for r in 0..rows {
            let dy = r as f64 - pr as f64;
            for col in 0..cols {
                let dx = col as f64 - pc as f64;
                plane[r * cols + col] = (-(dx * dx + dy * dy) / denom).exp();
            }
        }
    }
    Ok(maps)
}

/// Groundtruth maps for every frame of a clip.
pub fn encode_clip(clip: &VideoClip, stride: usize, sigma: f64) -> Result<Vec<ConfidenceMaps>> {
    let (h, w) = clip.frame_size();
    clip.annotations
        .iter()
        .map(|a| encode_confidence_maps(a, h, w, stride, sigma))
        .collect()
}

/// Argmax of each channel mapped to the centre of its cell, with its value.
/// Ties go to the smallest row-major index.
pub fn decode_with_confidence(maps: &ConfidenceMaps) -> Vec<([f64; 2], f64)> {
    let s = maps.stride as f64;
    (0..maps.joints)
        .map(|j| {
            let plane = maps.channel(j);
            let mut best = 0;
            for (i, v) in plane.iter().enumerate() {
                if *v > plane[best] {
                    best = i;
                }
            }
            let (row, col) = (best / maps.cols, best % maps.cols);
            ([(col as f64 + 0.5) * s, (row as f64 + 0.5) * s], plane.get(best).copied().unwrap_or(0.0))
        })
        .collect()
}

/// Joint coordinates only; see [`decode_with_confidence`].
pub fn decode_joints(maps: &ConfidenceMaps) -> Vec<[f64; 2]> {
    decode_with_confidence(maps).into_iter().map(|(c, _)| c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(coords: Vec<[f64; 2]>, visible: Vec<bool>) -> JointAnnotation {
        JointAnnotation {
            coords,
            visible,
            person_bbox: [0.0, 0.0, 127.0, 127.0],
            torso_pair: (0, 1),
        }
    }

    #[test]
    fn peak_sits_on_the_containing_cell() {
        let a = ann(vec![[64.0, 64.0], [10.0, 20.0]], vec![true, true]);
        let maps = encode_confidence_maps(&a, 128, 128, 8, 2.0).unwrap();
        assert_eq!(maps.at(0, 8, 8), 1.0);
        let max = maps.channel(0).iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, 1.0);
        assert!((maps.at(0, 8, 10) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((maps.at(0, 6, 8) - 0.6065306597126334).abs() < 1e-12);
    }

    #[test]
    fn invisible_joint_is_all_zero() {
        let a = ann(vec![[64.0, 64.0], [10.0, 20.0]], vec![true, false]);
        let maps = encode_confidence_maps(&a, 128, 128, 8, 2.0).unwrap();
        assert_eq!(maps.channel(1).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn zero_channel_decodes_to_first_cell() {
        let maps = ConfidenceMaps::zeros(1, 16, 16, 8);
        assert_eq!(decode_joints(&maps), vec![[4.0, 4.0]]);
    }

    #[test]
    fn decode_is_within_half_diagonal_and_idempotent() {
        let a = ann(vec![[0.0, 0.0], [127.9, 3.2], [68.1, 67.99], [8.0, 119.5]], vec![true; 4]);
        let maps = encode_confidence_maps(&a, 128, 128, 8, 2.0).unwrap();
        let decoded = decode_joints(&maps);
        for (d, c) in decoded.iter().zip(&a.coords) {
            let dist = ((d[0] - c[0]).powi(2) + (d[1] - c[1]).powi(2)).sqrt();
            assert!(dist <= 8.0 * std::f64::consts::SQRT_2 / 2.0 + 1e-12, "{d:?} vs {c:?}");
        }
        let again = encode_confidence_maps(&ann(decoded.clone(), vec![true; 4]), 128, 128, 8, 2.0).unwrap();
        assert_eq!(again, maps);
        assert_eq!(decode_joints(&again), decoded);
    }

    #[test]
    fn rejects_bad_stride_and_sigma() {
        let a = ann(vec![[1.0, 1.0], [2.0, 2.0]], vec![true; 2]);
        assert!(encode_confidence_maps(&a, 100, 128, 8, 2.0).is_err());
        assert!(encode_confidence_maps(&a, 128, 128, 8, 0.0).is_err());
    }
}
