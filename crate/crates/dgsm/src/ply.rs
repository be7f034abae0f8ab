//! Splat-PLY ingestion and export: binary little-endian PLY with the
//! standard 3DGS property layout (x/y/z, f_dc_*, f_rest_* channel-major,
//! opacity logit, log scales, rot_0..3 with w first).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::splat::{GaussianSplat, SplatGroup, SplatScene, ALPHA_MAX, ALPHA_MIN};

const REQUIRED: &[&str] = &[
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];

pub fn load_splat_ply(path: impl AsRef<Path>, group: SplatGroup) -> Result<SplatScene> {
    let path = path.as_ref();
    let mut reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let mut raw = Vec::new();
    reader
        .read_to_end(&mut raw)
        .map_err(|e| Error::io(path, e))?;
    parse_splat_ply(&raw, group)
}

pub fn parse_splat_ply(raw: &[u8], group: SplatGroup) -> Result<SplatScene> {
    let (header_end, vertex_count, props) = parse_header(raw)?;
    for name in REQUIRED {
        if !props.iter().any(|p| p == name) {
            return Err(Error::Format(format!("missing property '{name}'")));
        }
    }
    let rest_count = props.iter().filter(|p| p.starts_with("f_rest_")).count();
    if rest_count % 3 != 0 {
        return Err(Error::Format(format!(
            "f_rest count {rest_count} not divisible by 3"
        )));
    }
    let rest_per_channel = rest_count / 3;
    let degree = match rest_per_channel {
        0 => 0,
        3 => 1,
        8 => 2,
        15 => 3,
        n => {
            return Err(Error::Format(format!(
                "unsupported f_rest count {n} per channel (degrees 0-3 supported)"
            )))
        }
    };
    let n_coeffs = (degree + 1) * (degree + 1);

    let idx = |name: &str| props.iter().position(|p| p == name).unwrap();
    let stride = props.len() * 4;
    let payload = &raw[header_end..];
    if payload.len() < vertex_count * stride {
        return Err(Error::Format(format!(
            "truncated payload: need {} bytes, have {}",
            vertex_count * stride,
            payload.len()
        )));
    }

    let get = |rec: &[u8], j: usize| -> f64 {
        f32::from_le_bytes(rec[j * 4..j * 4 + 4].try_into().unwrap()) as f64
    };

    let mut rest_idx = vec![0usize; rest_count];
    for (j, p) in props.iter().enumerate() {
        if let Some(k) = p.strip_prefix("f_rest_") {
            let k: usize = k
                .parse()
                .map_err(|_| Error::Format(format!("bad property name '{p}'")))?;
            if k >= rest_count {
                return Err(Error::Format(format!("f_rest index {k} out of range")));
            }
            rest_idx[k] = j;
        }
    }

    let (ix, iy, iz) = (idx("x"), idx("y"), idx("z"));
    let idc = [idx("f_dc_0"), idx("f_dc_1"), idx("f_dc_2")];
    let iop = idx("opacity");
    let isc = [idx("scale_0"), idx("scale_1"), idx("scale_2")];
    let irot = [idx("rot_0"), idx("rot_1"), idx("rot_2"), idx("rot_3")];

    let mut splats = Vec::with_capacity(vertex_count);
    for v in 0..vertex_count {
        let rec = &payload[v * stride..(v + 1) * stride];
        let all_finite = (0..props.len()).all(|j| get(rec, j).is_finite());
        if !all_finite {
            return Err(Error::Format(format!("non-finite value at record {v}")));
        }
        let mean = Vector3::new(get(rec, ix), get(rec, iy), get(rec, iz));
        let opacity = logistic(get(rec, iop)).clamp(ALPHA_MIN, ALPHA_MAX);
        let scales = Vector3::new(
            get(rec, isc[0]).exp(),
            get(rec, isc[1]).exp(),
            get(rec, isc[2]).exp(),
        );
        let q = Quaternion::new(
            get(rec, irot[0]),
            get(rec, irot[1]),
            get(rec, irot[2]),
            get(rec, irot[3]),
        );
        if q.norm() < 1e-12 {
            return Err(Error::Format(format!("zero quaternion at record {v}")));
        }
        let rotation = UnitQuaternion::from_quaternion(q);
        let mut sh_coeffs: [Vec<f64>; 3] = [
            Vec::with_capacity(n_coeffs),
            Vec::with_capacity(n_coeffs),
            Vec::with_capacity(n_coeffs),
        ];
        for c in 0..3 {
            sh_coeffs[c].push(get(rec, idc[c]));
            for k in 0..rest_per_channel {
                sh_coeffs[c].push(get(rec, rest_idx[c * rest_per_channel + k]));
            }
        }
        splats.push(GaussianSplat {
            mean,
            rotation,
            scales,
            opacity,
            sh_coeffs,
        });
    }
    Ok(SplatScene::from_splats(splats, group))
}

fn parse_header(raw: &[u8]) -> Result<(usize, usize, Vec<String>)> {
    let head_limit = raw.len().min(1 << 16);
    let text = std::str::from_utf8(&raw[..head_limit])
        .unwrap_or_else(|e| std::str::from_utf8(&raw[..e.valid_up_to()]).unwrap());
    let end_marker = "end_header\n";
    let end = text
        .find(end_marker)
        .ok_or_else(|| Error::Format("missing end_header".into()))?;
    let header = &text[..end];
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing 'ply' magic".into()));
    }
    let mut vertex_count = None;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                if parts.next() != Some("binary_little_endian") {
                    return Err(Error::Format(
                        "only binary_little_endian PLY is supported".into(),
                    ));
                }
            }
            Some("comment") => {}
            Some("element") => match (parts.next(), parts.next()) {
                (Some("vertex"), Some(n)) => {
                    vertex_count = Some(
                        n.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad vertex count '{n}'")))?,
                    );
                    in_vertex = true;
                }
                (Some(other), _) => {
                    return Err(Error::Format(format!("unsupported element '{other}'")))
                }
                _ => return Err(Error::Format("malformed element line".into())),
            },
            Some("property") => {
                if in_vertex {
                    let ty = parts.next().unwrap_or("");
                    if ty != "float" {
                        return Err(Error::Format(format!("unsupported property type '{ty}'")));
                    }
                    let name = parts
                        .next()
                        .ok_or_else(|| Error::Format("property without name".into()))?;
                    props.push(name.to_string());
                }
            }
            _ => {}
        }
    }
    let vertex_count = vertex_count.ok_or_else(|| Error::Format("missing vertex element".into()))?;
    Ok((end + end_marker.len(), vertex_count, props))
}

pub fn save_splat_ply(scene: &SplatScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_splat_ply(scene, &mut w).map_err(|e| Error::io(path, e))
}

pub fn write_splat_ply(scene: &SplatScene, w: &mut impl Write) -> std::io::Result<()> {
    let degree = scene.sh_degree;
    let rest_per_channel = (degree + 1) * (degree + 1) - 1;
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", scene.splats.len()));
    for name in ["x", "y", "z"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for c in 0..3 {
        header.push_str(&format!("property float f_dc_{c}\n"));
    }
    for k in 0..rest_per_channel * 3 {
        header.push_str(&format!("property float f_rest_{k}\n"));
    }
    header.push_str("property float opacity\n");
    for k in 0..3 {
        header.push_str(&format!("property float scale_{k}\n"));
    }
    for k in 0..4 {
        header.push_str(&format!("property float rot_{k}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;

    let put = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&(v as f32).to_le_bytes());
    let mut buf = Vec::new();
    for s in &scene.splats {
        buf.clear();
        put(&mut buf, s.mean.x);
        put(&mut buf, s.mean.y);
        put(&mut buf, s.mean.z);
        for c in 0..3 {
            put(&mut buf, s.sh_coeffs[c][0]);
        }
        for c in 0..3 {
            for k in 1..=rest_per_channel {
                let v = s.sh_coeffs[c].get(k).copied().unwrap_or(0.0);
                put(&mut buf, v);
            }
        }
        let a = s.opacity.clamp(ALPHA_MIN, ALPHA_MAX);
        put(&mut buf, (a / (1.0 - a)).ln());
        for k in 0..3 {
            put(&mut buf, s.scales[k].ln());
        }
        let q = s.rotation.quaternion();
        put(&mut buf, q.w);
        put(&mut buf, q.i);
        put(&mut buf, q.j);
        put(&mut buf, q.k);
        w.write_all(&buf)?;
    }
    Ok(())
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use rand::{Rng, SeedableRng};

    fn tiny_ply(props: &[&str], records: &[Vec<f32>]) -> Vec<u8> {
        let mut out = format!(
            "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
            records.len()
        )
        .into_bytes();
        for p in props {
            out.extend_from_slice(format!("property float {p}\n").as_bytes());
        }
        out.extend_from_slice(b"end_header\n");
        for rec in records {
            for v in rec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    const BASE_PROPS: [&str; 14] = [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
        "rot_0", "rot_1", "rot_2", "rot_3",
    ];

    #[test]
    fn activations_applied() {
        // raw opacity 0 → α=0.5; raw scale 0 → scale 1
        let raw = tiny_ply(
            &BASE_PROPS,
            &[vec![
                1.0, 2.0, 3.0, 0.1, 0.2, 0.3, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
            ]],
        );
        let scene = parse_splat_ply(&raw, SplatGroup::Scene).unwrap();
        let s = &scene.splats[0];
        assert_relative_eq!(s.opacity, 0.5, epsilon = 1e-9);
        assert_relative_eq!(s.scales, Vector3::new(1.0, 1.0, 1.0), epsilon = 1e-9);
        assert_eq!(scene.sh_degree, 0);
    }

    #[test]
    fn missing_field_is_named() {
        let props: Vec<&str> = BASE_PROPS
            .iter()
            .copied()
            .filter(|p| *p != "rot_3")
            .collect();
        let raw = tiny_ply(&props, &[vec![0.0; 13]]);
        let err = parse_splat_ply(&raw, SplatGroup::Scene).unwrap_err();
        assert!(err.to_string().contains("rot_3"), "{err}");
    }

    #[test]
    fn non_finite_reports_record() {
        let mut rec = vec![0.0f32; 14];
        rec[10] = 1.0;
        let mut bad = rec.clone();
        bad[4] = f32::NAN;
        let raw = tiny_ply(&BASE_PROPS, &[rec, bad]);
        let err = parse_splat_ply(&raw, SplatGroup::Scene).unwrap_err();
        assert!(err.to_string().contains("record 1"), "{err}");
    }

    fn random_scene(n: usize, degree: usize, seed: u64) -> SplatScene {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n_coeffs = (degree + 1) * (degree + 1);
        let splats = (0..n)
            .map(|_| GaussianSplat {
                mean: Vector3::new(rng.gen(), rng.gen(), rng.gen()),
                rotation: UnitQuaternion::from_euler_angles(rng.gen(), rng.gen(), rng.gen()),
                scales: Vector3::new(
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                    rng.gen_range(0.01..1.0),
                ),
                opacity: rng.gen_range(0.01..0.99),
                sh_coeffs: std::array::from_fn(|_| {
                    (0..n_coeffs).map(|_| rng.gen_range(-1.0..1.0)).collect()
                }),
            })
            .collect();
        SplatScene::from_splats(splats, SplatGroup::Avatar)
    }

    #[test]
    fn round_trip_within_1e6() {
        for degree in [0, 1, 2, 3] {
            let scene = random_scene(17, degree, degree as u64);
            let mut buf = Vec::new();
            write_splat_ply(&scene, &mut buf).unwrap();
            let back = parse_splat_ply(&buf, SplatGroup::Avatar).unwrap();
            assert_eq!(back.sh_degree, degree);
            for (a, b) in scene.splats.iter().zip(&back.splats) {
                assert_relative_eq!(a.mean, b.mean, epsilon = 1e-6);
                assert_relative_eq!(a.opacity, b.opacity, epsilon = 1e-6);
                assert_relative_eq!(a.scales, b.scales, epsilon = 1e-6);
                let d = a.rotation.angle_to(&b.rotation);
                assert!(d < 1e-6, "quaternion mismatch {d}");
                for c in 0..3 {
                    for k in 0..a.sh_coeffs[c].len() {
                        assert!((a.sh_coeffs[c][k] - b.sh_coeffs[c][k]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let scene = random_scene(9, 2, 99);
        let mut first = Vec::new();
        write_splat_ply(&scene, &mut first).unwrap();
        let back = parse_splat_ply(&first, SplatGroup::Avatar).unwrap();
        let mut second = Vec::new();
        write_splat_ply(&back, &mut second).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = SplatScene::from_splats(vec![], SplatGroup::Scene);
        let mut buf = Vec::new();
        write_splat_ply(&scene, &mut buf).unwrap();
        let back = parse_splat_ply(&buf, SplatGroup::Scene).unwrap();
        assert!(back.splats.is_empty());
    }

    #[test]
    fn clamped_opacity_has_finite_logit() {
        let mut scene = random_scene(1, 0, 5);
        scene.splats[0].opacity = ALPHA_MAX;
        let mut buf = Vec::new();
        write_splat_ply(&scene, &mut buf).unwrap();
        let back = parse_splat_ply(&buf, SplatGroup::Scene).unwrap();
        assert!(back.splats[0].opacity.is_finite());
        assert!(back.splats[0].opacity <= ALPHA_MAX);
    }
}
