//! Pixel-space shadow metrics between a rendered matte and its
//! pseudo-ground-truth: attenuation error over the true shadow region,
//! mask IoU, and a boundary F-measure with pixel tolerance.

use crate::error::{Error, Result};

use super::matte::ShadowImage;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ShadowReport {
    /// Mean |S−S†| over the true shadow region; None when that region is
    /// empty.
    pub sae: Option<f64>,
    pub sm_iou: f64,
    pub bf: f64,
    pub tau: f64,
    pub boundary_px: usize,
}

pub fn shadow_metrics(
    s: &ShadowImage,
    s_ref: &ShadowImage,
    tau: f64,
    boundary_px: usize,
) -> Result<ShadowReport> {
    if s.width != s_ref.width || s.height != s_ref.height {
        return Err(Error::Degenerate(format!(
            "matte dimensions differ: {}×{} vs {}×{}",
            s.width, s.height, s_ref.width, s_ref.height
        )));
    }
    let n = s.data.len();
    let mask: Vec<bool> = s.data.iter().map(|&v| v > tau).collect();
    let mask_ref: Vec<bool> = s_ref.data.iter().map(|&v| v > tau).collect();

    let mut abs_sum = 0.0;
    let mut omega = 0usize;
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..n {
        if mask_ref[i] {
            abs_sum += (s.data[i] - s_ref.data[i]).abs();
            omega += 1;
        }
        if mask[i] && mask_ref[i] {
            inter += 1;
        }
        if mask[i] || mask_ref[i] {
            union += 1;
        }
    }
    let sae = (omega > 0).then(|| abs_sum / omega as f64);
    let sm_iou = if union > 0 {
        inter as f64 / union as f64
    } else {
        1.0
    };

    let ba = boundary(&mask, s.width, s.height);
    let bb = boundary(&mask_ref, s.width, s.height);
    let bf = boundary_f_measure(&ba, &bb, s.width, s.height, boundary_px);

    Ok(ShadowReport {
        sae,
        sm_iou,
        bf,
        tau,
        boundary_px,
    })
}

/// Morphological gradient of a mask: pixels whose 3×3 neighborhood (clamped
/// at the border) is not uniform.
fn boundary(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for row in 0..h {
        for col in 0..w {
            let v = mask[row * w + col];
            let mut differs = false;
            'probe: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let r = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let c = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    if mask[r * w + c] != v {
                        differs = true;
                        break 'probe;
                    }
                }
            }
            out[row * w + col] = differs;
        }
    }
    out
}

fn boundary_f_measure(ba: &[bool], bb: &[bool], w: usize, h: usize, tol: usize) -> f64 {
    let pa: Vec<(i64, i64)> = pixels_of(ba, w);
    let pb: Vec<(i64, i64)> = pixels_of(bb, w);
    if pa.is_empty() && pb.is_empty() {
        return 1.0;
    }
    if pa.is_empty() || pb.is_empty() {
        return 0.0;
    }
    let db = distance_ok_map(bb, w, h, tol);
    let da = distance_ok_map(ba, w, h, tol);
    let precision =
        pa.iter().filter(|&&(r, c)| db[r as usize * w + c as usize]).count() as f64 / pa.len() as f64;
    let recall =
        pb.iter().filter(|&&(r, c)| da[r as usize * w + c as usize]).count() as f64 / pb.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn pixels_of(mask: &[bool], w: usize) -> Vec<(i64, i64)> {
    mask.iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(i, _)| ((i / w) as i64, (i % w) as i64))
        .collect()
}

/// Pixels within Euclidean distance `tol` of any set pixel, by dilating
/// `tol` times with the offsets inside the radius.
fn distance_ok_map(mask: &[bool], w: usize, h: usize, tol: usize) -> Vec<bool> {
    let t = tol as i64;
    let mut out = vec![false; mask.len()];
    for row in 0..h as i64 {
        for col in 0..w as i64 {
            if !mask[row as usize * w + col as usize] {
                continue;
            }
            for dr in -t..=t {
                for dc in -t..=t {
                    if dr * dr + dc * dc > t * t {
                        continue;
                    }
                    let r = row + dr;
                    let c = col + dc;
                    if r >= 0 && r < h as i64 && c >= 0 && c < w as i64 {
                        out[r as usize * w + c as usize] = true;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn image_from(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> ShadowImage {
        let mut img = ShadowImage::new(w, h);
        for row in 0..h {
            for col in 0..w {
                img.data[row * w + col] = f(row, col);
            }
        }
        img
    }

    fn disk(w: usize, h: usize, cr: usize, cc: usize, rad: f64) -> ShadowImage {
        image_from(w, h, |r, c| {
            let d = ((r as f64 - cr as f64).powi(2) + (c as f64 - cc as f64).powi(2)).sqrt();
            if d <= rad {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn identity_is_perfect() {
        let img = disk(64, 64, 32, 32, 10.0);
        let r = shadow_metrics(&img, &img, 0.1, 2).unwrap();
        assert_eq!(r.sae, Some(0.0));
        assert_eq!(r.sm_iou, 1.0);
        assert_eq!(r.bf, 1.0);
    }

    #[test]
    fn disjoint_mattes() {
        let a = disk(64, 64, 16, 16, 6.0);
        let b = disk(64, 64, 48, 48, 6.0);
        let r = shadow_metrics(&a, &b, 0.1, 2).unwrap();
        assert_eq!(r.sm_iou, 0.0);
        assert_eq!(r.bf, 0.0);
        // SAE over b's region where a is 0 and b is 1
        assert_relative_eq!(r.sae.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_offset_inside_region() {
        let gt = disk(32, 32, 16, 16, 8.0);
        let shifted = image_from(32, 32, |r, c| {
            let v = gt.at(r, c);
            if v > 0.0 {
                (v - 0.05).max(0.0)
            } else {
                0.0
            }
        });
        let r = shadow_metrics(&shifted, &gt, 0.1, 2).unwrap();
        assert_relative_eq!(r.sae.unwrap(), 0.05, epsilon = 1e-12);
        assert_eq!(r.sm_iou, 1.0);
    }

    #[test]
    fn empty_reference_reports_missing_sae() {
        let a = disk(32, 32, 16, 16, 5.0);
        let empty = ShadowImage::new(32, 32);
        let r = shadow_metrics(&a, &empty, 0.1, 2).unwrap();
        assert!(r.sae.is_none());
        assert_eq!(r.sm_iou, 0.0);
        assert_eq!(r.bf, 0.0);
        // both empty → identity-respecting
        let r = shadow_metrics(&empty, &empty, 0.1, 2).unwrap();
        assert!(r.sae.is_none());
        assert_eq!(r.sm_iou, 1.0);
        assert_eq!(r.bf, 1.0);
    }

    #[test]
    fn one_pixel_shift_within_tolerance_keeps_bf_high() {
        let a = disk(64, 64, 32, 32, 10.0);
        let b = disk(64, 64, 32, 33, 10.0);
        let r = shadow_metrics(&a, &b, 0.1, 2).unwrap();
        assert_eq!(r.bf, 1.0, "1px shift inside 2px tolerance");
        let far = disk(64, 64, 32, 40, 10.0);
        let r2 = shadow_metrics(&a, &far, 0.1, 2).unwrap();
        assert!(r2.bf < 1.0);
    }

    #[test]
    fn sae_triangle_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut mk = || {
                let mut img = ShadowImage::new(16, 16);
                for v in &mut img.data {
                    *v = rng.gen_range(0.0..1.0);
                }
                img
            };
            let (x, y, z) = (mk(), mk(), mk());
            let gt = disk(16, 16, 8, 8, 20.0); // everything in-region
            let d = |p: &ShadowImage, q: &ShadowImage| {
                let n = p.data.len() as f64;
                p.data
                    .iter()
                    .zip(&q.data)
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>()
                    / n
            };
            // direct L1 means obey the triangle inequality, and SAE over a
            // full-support reference equals that mean against the reference
            assert!(d(&x, &z) <= d(&x, &y) + d(&y, &z) + 1e-12);
            let r = shadow_metrics(&x, &gt, 0.1, 2).unwrap();
            assert_relative_eq!(r.sae.unwrap(), d(&x, &gt), epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_errors() {
        let a = ShadowImage::new(8, 8);
        let b = ShadowImage::new(8, 9);
        assert!(shadow_metrics(&a, &b, 0.1, 2).is_err());
    }
}
