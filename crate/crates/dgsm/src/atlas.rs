//! Direction-indexed transmittance tables: octahedral encoding/decoding,
//! radial binning, trilinear sampling with seam-aware wrapping, binary
//! serialization, and the cubemap alternative used by the atlas ablation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::lights::PointLight;

const MAGIC: &[u8; 4] = b"DGSM";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AtlasLayout {
    Octahedral,
    Cubemap,
}

/// K×H×W transmittance table around one light (cubemap: K×6×F×F with
/// `h = w = F`). Untouched entries stay exactly 1.
#[derive(Clone, Debug)]
pub struct DgsmAtlas {
    pub layout: AtlasLayout,
    pub h: usize,
    pub w: usize,
    pub bins: usize,
    pub t_max: f64,
    pub light: PointLight,
    pub data: Vec<f32>,
}

fn sgn(x: f64) -> f64 {
    // sgn(0) := +1 so the fold seam has a single owner
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Octahedral fold of a unit direction into [−1,1]².
pub fn oct_encode(dir: &Vector3<f64>) -> Result<(f64, f64)> {
    let l1 = dir.x.abs() + dir.y.abs() + dir.z.abs();
    if l1 < 1e-12 {
        return Err(Error::Domain("oct_encode of zero vector".into()));
    }
    let q = dir / l1;
    if q.z >= 0.0 {
        Ok((q.x, q.y))
    } else {
        Ok((sgn(q.x) * (1.0 - q.y.abs()), sgn(q.y) * (1.0 - q.x.abs())))
    }
}

/// Inverse fold: z = 1−|u|−|v| before undo and normalization.
pub fn oct_decode(u: f64, v: f64) -> Vector3<f64> {
    let z = 1.0 - u.abs() - v.abs();
    let (x, y) = if z >= 0.0 {
        (u, v)
    } else {
        (sgn(u) * (1.0 - v.abs()), sgn(v) * (1.0 - u.abs()))
    };
    Vector3::new(x, y, z).normalize()
}

/// Mirror-wraps (u,v) that fell outside [−1,1]² back through the fold.
pub(crate) fn oct_wrap(mut u: f64, mut v: f64) -> (f64, f64) {
    if u.abs() > 1.0 {
        u = sgn(u) * (2.0 - u.abs());
        v = -v;
    }
    if v.abs() > 1.0 {
        v = sgn(v) * (2.0 - v.abs());
        u = -u;
    }
    (u, v)
}

/// Pixel-center convention: u = (col+0.5)·2/W − 1.
pub fn pixel_of(u: f64, v: f64, h: usize, w: usize) -> (usize, usize) {
    let col = (((u + 1.0) * 0.5 * w as f64).floor() as isize).clamp(0, w as isize - 1) as usize;
    let row = (((v + 1.0) * 0.5 * h as f64).floor() as isize).clamp(0, h as isize - 1) as usize;
    (row, col)
}

pub fn uv_of_pixel(row: usize, col: usize, h: usize, w: usize) -> (f64, f64) {
    (
        (col as f64 + 0.5) * 2.0 / w as f64 - 1.0,
        (row as f64 + 0.5) * 2.0 / h as f64 - 1.0,
    )
}

pub fn dir_of_pixel(row: usize, col: usize, h: usize, w: usize) -> Vector3<f64> {
    let (u, v) = uv_of_pixel(row, col, h, w);
    oct_decode(u, v)
}

/// Radial bin center t_k = (k+½)·t_max/K.
pub fn bin_center(k: usize, bins: usize, t_max: f64) -> f64 {
    assert!(k < bins, "bin {k} out of range {bins}");
    (k as f64 + 0.5) * t_max / bins as f64
}

impl DgsmAtlas {
    pub fn new(
        layout: AtlasLayout,
        h: usize,
        w: usize,
        bins: usize,
        t_max: f64,
        light: PointLight,
    ) -> DgsmAtlas {
        let len = match layout {
            AtlasLayout::Octahedral => bins * h * w,
            AtlasLayout::Cubemap => bins * 6 * h * w,
        };
        DgsmAtlas {
            layout,
            h,
            w,
            bins,
            t_max,
            light,
            data: vec![1.0; len],
        }
    }

    #[inline]
    pub fn idx(&self, k: usize, row: usize, col: usize) -> usize {
        (k * self.h + row) * self.w + col
    }

    #[inline]
    pub fn cube_idx(&self, k: usize, face: usize, row: usize, col: usize) -> usize {
        ((k * 6 + face) * self.h + row) * self.w + col
    }

    pub fn bin_of_distance(&self, t: f64) -> f64 {
        let step = self.t_max / self.bins as f64;
        (t / step - 0.5).clamp(0.0, self.bins as f64 - 1.0)
    }

    /// Trilinear lookup over (u,v,k); octahedral neighbor taps outside the
    /// square are re-encoded through the fold.
    pub fn sample(&self, dir: &Vector3<f64>, t: f64) -> f64 {
        let kf = self.bin_of_distance(t);
        let k0 = kf.floor() as usize;
        let k1 = (k0 + 1).min(self.bins - 1);
        let fk = kf - k0 as f64;
        let s0 = self.sample_direction(dir, k0);
        let s1 = self.sample_direction(dir, k1);
        s0 * (1.0 - fk) + s1 * fk
    }

    fn sample_direction(&self, dir: &Vector3<f64>, k: usize) -> f64 {
        match self.layout {
            AtlasLayout::Octahedral => self.sample_oct(dir, k),
            AtlasLayout::Cubemap => self.sample_cube(dir, k),
        }
    }

    fn sample_oct(&self, dir: &Vector3<f64>, k: usize) -> f64 {
        let (u, v) = oct_encode(dir).expect("unit direction");
        let cf = (u + 1.0) * 0.5 * self.w as f64 - 0.5;
        let rf = (v + 1.0) * 0.5 * self.h as f64 - 0.5;
        let c0 = cf.floor();
        let r0 = rf.floor();
        let fc = cf - c0;
        let fr = rf - r0;
        let mut acc = 0.0;
        for (dr, dc, wgt) in [
            (0.0, 0.0, (1.0 - fr) * (1.0 - fc)),
            (0.0, 1.0, (1.0 - fr) * fc),
            (1.0, 0.0, fr * (1.0 - fc)),
            (1.0, 1.0, fr * fc),
        ] {
            let (row, col) = self.wrap_tap(r0 + dr, c0 + dc);
            acc += wgt * self.data[self.idx(k, row, col)] as f64;
        }
        acc
    }

    fn wrap_tap(&self, r: f64, c: f64) -> (usize, usize) {
        let in_r = r >= 0.0 && r < self.h as f64;
        let in_c = c >= 0.0 && c < self.w as f64;
        if in_r && in_c {
            return (r as usize, c as usize);
        }
        let u = (c + 0.5) * 2.0 / self.w as f64 - 1.0;
        let v = (r + 0.5) * 2.0 / self.h as f64 - 1.0;
        let (u, v) = oct_wrap(u, v);
        let col = (((u + 1.0) * 0.5 * self.w as f64 - 0.5).round() as isize)
            .clamp(0, self.w as isize - 1) as usize;
        let row = (((v + 1.0) * 0.5 * self.h as f64 - 0.5).round() as isize)
            .clamp(0, self.h as isize - 1) as usize;
        (row, col)
    }

    fn sample_cube(&self, dir: &Vector3<f64>, k: usize) -> f64 {
        let (face, s, t) = cube_face_coords(dir);
        // per-face bilinear with clamp: no cross-face filtering
        let cf = (s + 1.0) * 0.5 * self.w as f64 - 0.5;
        let rf = (t + 1.0) * 0.5 * self.h as f64 - 0.5;
        let c0 = cf.floor();
        let r0 = rf.floor();
        let fc = cf - c0;
        let fr = rf - r0;
        let mut acc = 0.0;
        for (dr, dc, wgt) in [
            (0.0, 0.0, (1.0 - fr) * (1.0 - fc)),
            (0.0, 1.0, (1.0 - fr) * fc),
            (1.0, 0.0, fr * (1.0 - fc)),
            (1.0, 1.0, fr * fc),
        ] {
            let row = ((r0 + dr) as isize).clamp(0, self.h as isize - 1) as usize;
            let col = ((c0 + dc) as isize).clamp(0, self.w as isize - 1) as usize;
            acc += wgt * self.data[self.cube_idx(k, face, row, col)] as f64;
        }
        acc
    }

    pub fn serialize(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.layout {
            AtlasLayout::Octahedral => 0u8,
            AtlasLayout::Cubemap => 1u8,
        }])?;
        for v in [self.h as u32, self.w as u32, self.bins as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.t_max as f32).to_le_bytes())?;
        for i in 0..3 {
            w.write_all(&(self.light.position[i] as f32).to_le_bytes())?;
        }
        for i in 0..3 {
            w.write_all(&(self.light.color[i] as f32).to_le_bytes())?;
        }
        w.write_all(&(self.light.intensity as f32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn deserialize(path: impl AsRef<Path>) -> Result<DgsmAtlas> {
        let path = path.as_ref();
        let mut raw = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut raw)
            .map_err(|e| Error::io(path, e))?;
        Self::read_from(&raw)
    }

    pub fn read_from(raw: &[u8]) -> Result<DgsmAtlas> {
        let need = |n: usize| -> Result<()> {
            if raw.len() < n {
                Err(Error::Format("truncated DGSM payload".into()))
            } else {
                Ok(())
            }
        };
        need(34)?;
        if &raw[0..4] != MAGIC {
            return Err(Error::Format("bad DGSM magic".into()));
        }
        let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported DGSM version {version}")));
        }
        let layout = match raw[8] {
            0 => AtlasLayout::Octahedral,
            1 => AtlasLayout::Cubemap,
            b => return Err(Error::Format(format!("unknown layout byte {b}"))),
        };
        let u32_at = |o: usize| u32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as usize;
        let f32_at = |o: usize| f32::from_le_bytes(raw[o..o + 4].try_into().unwrap()) as f64;
        let h = u32_at(9);
        let w = u32_at(13);
        let bins = u32_at(17);
        let t_max = f32_at(21);
        let position = Vector3::new(f32_at(25), f32_at(29), f32_at(33));
        let color = [f32_at(37), f32_at(41), f32_at(45)];
        let intensity = f32_at(49);
        let header = 53;
        let len = match layout {
            AtlasLayout::Octahedral => bins * h * w,
            AtlasLayout::Cubemap => bins * 6 * h * w,
        };
        if raw.len() != header + len * 4 {
            return Err(Error::Format(format!(
                "payload size mismatch: header says {len} entries, file has {} bytes after header",
                raw.len().saturating_sub(header)
            )));
        }
        let data = raw[header..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(DgsmAtlas {
            layout,
            h,
            w,
            bins,
            t_max,
            light: PointLight {
                position,
                intensity,
                color,
            },
            data,
        })
    }

    /// Debug export of one radial slice as an 8-bit grayscale PNG.
    pub fn slice_png(&self, k: usize, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (w, h) = match self.layout {
            AtlasLayout::Octahedral => (self.w, self.h),
            AtlasLayout::Cubemap => (self.w * 6, self.h),
        };
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for row in 0..h {
            for col in 0..w {
                let v = match self.layout {
                    AtlasLayout::Octahedral => self.data[self.idx(k, row, col)],
                    AtlasLayout::Cubemap => {
                        self.data[self.cube_idx(k, col / self.w, row, col % self.w)]
                    }
                };
                img.put_pixel(
                    col as u32,
                    row as u32,
                    image::Luma([(v.clamp(0.0, 1.0) * 255.0) as u8]),
                );
            }
        }
        img.save(path)
            .map_err(|e| Error::Format(format!("png export to {}: {e}", path.display())))
    }
}

/// Face id (+x,−x,+y,−y,+z,−z) and face-local coords in [−1,1]².
pub fn cube_face_coords(dir: &Vector3<f64>) -> (usize, f64, f64) {
    let a = dir.map(f64::abs);
    if a.x >= a.y && a.x >= a.z {
        let f = if dir.x >= 0.0 { 0 } else { 1 };
        (f, dir.y / a.x, dir.z / a.x)
    } else if a.y >= a.z {
        let f = if dir.y >= 0.0 { 2 } else { 3 };
        (f, dir.x / a.y, dir.z / a.y)
    } else {
        let f = if dir.z >= 0.0 { 4 } else { 5 };
        (f, dir.x / a.z, dir.y / a.z)
    }
}
