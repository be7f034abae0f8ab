//! Lighting-consistency metrics without ground truth: a factorized SH fit of
//! per-splat luminance against pseudo-normals, coefficient agreement (PAA-Y),
//! affine-calibrated luminance residuals (APF-Y), and a chromaticity
//! transport distance (NCM-ab).

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::sh::{basis_into, coeff_count, MAX_COEFFS};
use crate::splat::{eval_sh_color, luminance, GaussianSplat};

/// Y_i ≈ α_i·E(n̂_i; c): alternates a Huber-robust fit of the environment
/// coefficients c (top 5% residuals trimmed) with the closed-form scale
/// update α_i = max(0, Y_i/E_i), then fixes the gauge so mean(α) = 1.
pub fn fit_factorized_sh(
    splats: &[GaussianSplat],
    normals: &[Vector3<f64>],
    degree: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(splats.len(), normals.len());
    let k = coeff_count(degree);
    if splats.len() < k {
        return Err(Error::Degenerate(format!(
            "{} splats cannot constrain {k} coefficients",
            splats.len()
        )));
    }
    let lums: Vec<f64> = splats
        .iter()
        .zip(normals)
        .map(|(s, n)| luminance(eval_sh_color(s, n)))
        .collect();
    if lums.iter().all(|&y| y == 0.0) {
        return Err(Error::Degenerate(
            "all-zero luminance admits no lighting fit".into(),
        ));
    }
    let n = lums.len();
    let mut bases = vec![[0.0; MAX_COEFFS]; n];
    for (i, nrm) in normals.iter().enumerate() {
        basis_into(nrm, degree, &mut bases[i]);
    }

    let mut scales = vec![1.0f64; n];
    let mut coeffs = vec![0.0f64; k];
    let mut prev_obj = f64::INFINITY;
    for _round in 0..10 {
        coeffs = robust_coeff_fit(&bases, &lums, &scales, k)?;
        let evals: Vec<f64> = bases
            .iter()
            .map(|b| (0..k).map(|j| coeffs[j] * b[j]).sum())
            .collect();
        for i in 0..n {
            scales[i] = if evals[i].abs() > 1e-12 {
                (lums[i] / evals[i]).max(0.0)
            } else {
                0.0
            };
        }
        let obj: f64 = (0..n)
            .map(|i| {
                let r = lums[i] - scales[i] * evals[i];
                r * r
            })
            .sum();
        if (prev_obj - obj).abs() <= 1e-6 * prev_obj.max(1e-30) {
            break;
        }
        prev_obj = obj;
    }
    // gauge: mean scale = 1
    let mean = scales.iter().sum::<f64>() / n as f64;
    if mean > 1e-12 {
        for c in &mut coeffs {
            *c *= mean;
        }
        for a in &mut scales {
            *a /= mean;
        }
    }
    Ok((coeffs, scales))
}

/// Weighted IRLS solve of Y_i ≈ α_i·(B_i·c) with Huber weights and the top
/// 5% absolute residuals trimmed.
fn robust_coeff_fit(
    bases: &[[f64; MAX_COEFFS]],
    lums: &[f64],
    scales: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let n = lums.len();
    let mut weights = vec![1.0f64; n];
    let mut coeffs = DVector::<f64>::zeros(k);
    for _iter in 0..4 {
        let mut gram = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for i in 0..n {
            let wa = weights[i] * scales[i];
            if wa == 0.0 {
                continue;
            }
            for p in 0..k {
                let bp = wa * scales[i] * bases[i][p];
                for q in 0..k {
                    gram[(p, q)] += bp * bases[i][q];
                }
                rhs[p] += wa * bases[i][p] * lums[i];
            }
        }
        // small ridge keeps degenerate normal sets solvable
        let ridge = 1e-9 * (gram.trace() / k as f64).max(1e-12);
        for p in 0..k {
            gram[(p, p)] += ridge;
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Numerical("factorized fit normal equations failed".into()))?;
        coeffs = chol.solve(&rhs);

        let resid: Vec<f64> = (0..n)
            .map(|i| {
                let e: f64 = (0..k).map(|j| coeffs[j] * bases[i][j]).sum();
                (lums[i] - scales[i] * e).abs()
            })
            .collect();
        let mut sorted = resid.clone();
        sorted.sort_by(f64::total_cmp);
        let trim_at = sorted[((n as f64 * 0.95).floor() as usize).min(n - 1)];
        let delta = (1.345 * sorted[n / 2]).max(1e-9);
        for i in 0..n {
            weights[i] = if resid[i] > trim_at && resid[i] > 0.0 {
                0.0
            } else if resid[i] <= delta {
                1.0
            } else {
                delta / resid[i]
            };
        }
    }
    Ok(coeffs.iter().copied().collect())
}

/// PAA-Y: L1 distance between two coefficient vectors.
pub fn paa_y(c_avatar: &[f64], c_scene: &[f64]) -> f64 {
    assert_eq!(c_avatar.len(), c_scene.len());
    c_avatar
        .iter()
        .zip(c_scene)
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// APF-Y: mean absolute residual of avatar luminances after the best affine
/// calibration Y ≈ s·E + b against the scene's fitted environment.
pub fn apf_y(c_scene: &[f64], normals: &[Vector3<f64>], lums: &[f64]) -> Result<f64> {
    assert_eq!(normals.len(), lums.len());
    let n = normals.len();
    if n < 2 {
        return Err(Error::Degenerate(
            "affine calibration needs at least two splats".into(),
        ));
    }
    let degree = match c_scene.len() {
        1 => 0,
        4 => 1,
        9 => 2,
        16 => 3,
        other => {
            return Err(Error::Config(format!(
                "coefficient vector of length {other} is not a complete SH expansion"
            )))
        }
    };
    let mut basis = [0.0; MAX_COEFFS];
    let evals: Vec<f64> = normals
        .iter()
        .map(|nrm| {
            basis_into(nrm, degree, &mut basis);
            (0..c_scene.len()).map(|j| c_scene[j] * basis[j]).sum()
        })
        .collect();
    // closed-form least squares for (s, b)
    let me = evals.iter().sum::<f64>() / n as f64;
    let my = lums.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var = 0.0;
    for i in 0..n {
        cov += (evals[i] - me) * (lums[i] - my);
        var += (evals[i] - me) * (evals[i] - me);
    }
    let s = if var > 1e-15 { cov / var } else { 0.0 };
    let b = my - s * me;
    Ok((0..n)
        .map(|i| (lums[i] - s * evals[i] - b).abs())
        .sum::<f64>()
        / n as f64)
}

/// Linear rgb → sRGB-encoded (gamut-clamped) → CIE Lab under D65.
pub fn linear_rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let encode = |l: f64| {
        let l = l.clamp(0.0, 1.0);
        if l <= 0.003_130_8 {
            12.92 * l
        } else {
            1.055 * l.powf(1.0 / 2.4) - 0.055
        }
    };
    let decode = |s: f64| {
        if s <= 0.040_45 {
            s / 12.92
        } else {
            ((s + 0.055) / 1.055).powf(2.4)
        }
    };
    let lin: Vec<f64> = rgb.iter().map(|&c| decode(encode(c))).collect();
    let x = 0.412_456_4 * lin[0] + 0.357_576_1 * lin[1] + 0.180_437_5 * lin[2];
    let y = 0.212_672_9 * lin[0] + 0.715_152_2 * lin[1] + 0.072_175_0 * lin[2];
    let z = 0.019_333_9 * lin[0] + 0.119_192_0 * lin[1] + 0.950_304_1 * lin[2];
    // D65 reference white
    let (xn, yn, zn) = (0.950_47, 1.0, 1.088_83);
    let f = |t: f64| {
        let d = 6.0f64 / 29.0;
        if t > d * d * d {
            t.cbrt()
        } else {
            t / (3.0 * d * d) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / xn), f(y / yn), f(z / zn));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// NCM-ab: 1-Wasserstein distance between the (a*,b*) chromaticity clouds of
/// two linear-rgb point sets, via exact assignment on equal-size sets.
/// Sets larger than `cap` (or the smaller set's size) are deterministically
/// stratified-subsampled with the given seed.
pub fn ncm_ab(avatar: &[[f64; 3]], scene: &[[f64; 3]], cap: usize, seed: u64) -> Result<f64> {
    if avatar.is_empty() || scene.is_empty() {
        return Err(Error::Degenerate("empty color set for NCM".into()));
    }
    let to_ab = |set: &[[f64; 3]]| -> Vec<[f64; 2]> {
        set.iter()
            .map(|&rgb| {
                let lab = linear_rgb_to_lab(rgb);
                [lab[1], lab[2]]
            })
            .collect()
    };
    let mut a = to_ab(avatar);
    let mut b = to_ab(scene);
    let n = a.len().min(b.len()).min(cap.max(1));
    a = stratified_subsample(a, n, seed);
    b = stratified_subsample(b, n, seed.wrapping_add(1));
    let cost = |p: &[f64; 2], q: &[f64; 2]| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt();
    let total = min_cost_assignment(&a, &b, cost)?;
    Ok(total / n as f64)
}

/// Keeps n points, one from each run of len/n consecutive points in sorted
/// order, with a seeded jitter inside each stratum.
fn stratified_subsample(mut pts: Vec<[f64; 2]>, n: usize, seed: u64) -> Vec<[f64; 2]> {
    if pts.len() <= n {
        return pts;
    }
    pts.sort_by(|p, q| p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1])));
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let stride = pts.len() as f64 / n as f64;
    (0..n)
        .map(|i| {
            let jitter: f64 = rng.gen_range(0.0..1.0);
            let idx = ((i as f64 + jitter) * stride) as usize;
            pts[idx.min(pts.len() - 1)]
        })
        .collect()
}

/// Exact minimum-cost perfect assignment (Jonker–Volgenant auction-free
/// shortest augmenting path), returning the total cost.
fn min_cost_assignment<F>(a: &[[f64; 2]], b: &[[f64; 2]], cost: F) -> Result<f64>
where
    F: Fn(&[f64; 2], &[f64; 2]) -> f64,
{
    let n = a.len();
    if n != b.len() {
        return Err(Error::Degenerate("assignment needs equal-size sets".into()));
    }
    const INF: f64 = f64::INFINITY;
    // potentials and matching; columns indexed 1..=n with 0 as a sentinel
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut matched = vec![0usize; n + 1]; // column -> row (1-based)
    for i in 1..=n {
        matched[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = INF;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(&a[i0 - 1], &b[j - 1]) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == 0 {
                break;
            }
        }
        // augment along the alternating path
        while j0 != 0 {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
        }
    }
    let mut total = 0.0;
    for j in 1..=n {
        total += cost(&a[matched[j] - 1], &b[j - 1]);
    }
    Ok(total)
}

/// One side of a lighting-consistency comparison.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LightingMetrics {
    pub paa_y: f64,
    pub apf_y: f64,
    pub ncm_ab: f64,
}

/// Paired metrics before/after relighting with their deltas.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct LightingReport {
    pub orig: LightingMetrics,
    pub relit: LightingMetrics,
    pub delta: LightingMetrics,
}

impl LightingReport {
    pub fn new(orig: LightingMetrics, relit: LightingMetrics) -> LightingReport {
        let delta = LightingMetrics {
            paa_y: orig.paa_y - relit.paa_y,
            apf_y: orig.apf_y - relit.apf_y,
            ncm_ab: orig.ncm_ab - relit.ncm_ab,
        };
        LightingReport { orig, relit, delta }
    }
}

fn dc_normalized(c: &[f64]) -> Vec<f64> {
    let d = c[0].abs().max(1e-12);
    c.iter().map(|x| x / d).collect()
}

/// Scene-vs-avatar lighting agreement. The factorized fits are compared
/// after normalizing each coefficient vector by its own DC term, and avatar
/// luminances are mean-normalized before the affine calibration, so a global
/// avatar brightness change cancels instead of inflating the metrics.
pub fn lighting_metrics(
    scene: &[GaussianSplat],
    scene_normals: &[Vector3<f64>],
    avatar: &[GaussianSplat],
    avatar_normals: &[Vector3<f64>],
    degree: usize,
    seed: u64,
) -> Result<LightingMetrics> {
    let (c_scene, _) = fit_factorized_sh(scene, scene_normals, degree)?;
    let (c_avatar, _) = fit_factorized_sh(avatar, avatar_normals, degree)?;
    let paa = paa_y(&dc_normalized(&c_avatar), &dc_normalized(&c_scene));

    let lums: Vec<f64> = avatar
        .iter()
        .zip(avatar_normals)
        .map(|(s, n)| luminance(eval_sh_color(s, n)))
        .collect();
    let mean = (lums.iter().sum::<f64>() / lums.len() as f64).max(1e-12);
    let normalized: Vec<f64> = lums.iter().map(|y| y / mean).collect();
    let apf = apf_y(&dc_normalized(&c_scene), avatar_normals, &normalized)?;

    let avatar_rgb: Vec<[f64; 3]> = avatar
        .iter()
        .zip(avatar_normals)
        .map(|(s, n)| eval_sh_color(s, n))
        .collect();
    let scene_rgb: Vec<[f64; 3]> = scene
        .iter()
        .zip(scene_normals)
        .map(|(s, n)| eval_sh_color(s, n))
        .collect();
    let ncm = ncm_ab(&avatar_rgb, &scene_rgb, 2000, seed)?;
    Ok(LightingMetrics {
        paa_y: paa,
        apf_y: apf,
        ncm_ab: ncm,
    })
}
