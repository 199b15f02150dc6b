//! Ironbow pseudo-color table and its nearest-neighbor inverse.
//!
//! The table is generated by piecewise-linear interpolation of the usual
//! FLIR-style control points (black, violet, red, orange, yellow, white)
//! sampled at `t = i / 255`. A different table can be loaded from CSV.

use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::img::Image;
use crate::par::{self, PIXEL_CHUNK};

pub const IRONBOW_CONTROL_POINTS: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.0]),
    (0.2, [0.3, 0.0, 0.55]),
    (0.4, [0.7, 0.05, 0.5]),
    (0.6, [0.93, 0.35, 0.1]),
    (0.8, [1.0, 0.7, 0.0]),
    (1.0, [1.0, 1.0, 1.0]),
];

pub const LUT_LEVELS: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct IronbowLut {
    pub entries: Vec<[f64; 3]>,
}

impl IronbowLut {
    pub fn from_control_points(points: &[(f64, [f64; 3])]) -> Self {
        let entries = (0..LUT_LEVELS)
            .map(|i| {
                let t = i as f64 / (LUT_LEVELS - 1) as f64;
                let seg = points
                    .windows(2)
                    .find(|w| t <= w[1].0)
                    .unwrap_or(&points[points.len() - 2..]);
                let (t0, c0) = seg[0];
                let (t1, c1) = seg[1];
                let u = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
                [0, 1, 2].map(|k| c0[k] + u * (c1[k] - c0[k]))
            })
            .collect();
        Self { entries }
    }

    /// Shared default table.
    pub fn standard() -> &'static IronbowLut {
        static LUT: OnceLock<IronbowLut> = OnceLock::new();
        LUT.get_or_init(|| Self::from_control_points(&IRONBOW_CONTROL_POINTS))
    }

    /// Reads 256 lines of `r,g,b` in `[0,1]`; blank lines and `#` comments are skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(format!("{}:{}: {e}", path.display(), ln + 1)))?;
            if vals.len() != 3 {
                return Err(Error::format(format!("{}:{}: expected r,g,b", path.display(), ln + 1)));
            }
            entries.push([vals[0], vals[1], vals[2]]);
        }
        if entries.len() != LUT_LEVELS {
            return Err(Error::format(format!("LUT has {} entries, expected {LUT_LEVELS}", entries.len())));
        }
        Ok(Self { entries })
    }

    /// Index of the entry closest (squared RGB distance) to `rgb`; ties take
    /// the lower index.
    pub fn nearest(&self, rgb: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, e) in self.entries.iter().enumerate() {
            let d = (e[0] - rgb[0]).powi(2) + (e[1] - rgb[1]).powi(2) + (e[2] - rgb[2]).powi(2);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Smallest distance between any two entries.
    pub fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.entries.len() {
            for j in i + 1..self.entries.len() {
                let (a, b) = (self.entries[i], self.entries[j]);
                let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                m = m.min(d);
            }
        }
        m
    }

    /// Colors a single-channel `[0,1]` image through the table.
    pub fn forward(&self, t: &Image) -> Result<Image> {
        if t.channels != 1 {
            return Err(Error::shape(format!("ironbow forward expects 1 channel, got {}", t.channels)));
        }
        let n = self.entries.len() - 1;
        let mut out = Image::zeros(t.width, t.height, 3);
        for p in 0..t.pixel_count() {
            let i = (t.data[p].clamp(0.0, 1.0) * n as f64).round() as usize;
            out.pixel_mut(p).copy_from_slice(&self.entries[i]);
        }
        Ok(out)
    }

    /// Maps pseudo-colored thermal back to `[0,1]` intensity. Single-channel
    /// input passes through unchanged.
    pub fn inverse(&self, img: &Image) -> Result<Image> {
        match img.channels {
            1 => Ok(img.clone()),
            3 => {
                let n = (self.entries.len() - 1) as f64;
                let mut out = Image::zeros(img.width, img.height, 1);
                par::for_each_chunk_mut(&mut out.data, PIXEL_CHUNK, |c, chunk| {
                    for (i, v) in chunk.iter_mut().enumerate() {
                        *v = self.nearest(img.pixel(c * PIXEL_CHUNK + i)) as f64 / n;
                    }
                });
                Ok(out)
            }
            c => Err(Error::shape(format!("thermal image must have 1 or 3 channels, got {c}"))),
        }
    }
}

/// [`IronbowLut::inverse`] with the standard table.
pub fn ironbow_inverse(img: &Image) -> Result<Image> {
    IronbowLut::standard().inverse(img)
}

/// [`IronbowLut::forward`] with the standard table.
pub fn ironbow_forward(t: &Image) -> Result<Image> {
    IronbowLut::standard().forward(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_count() {
        let lut = IronbowLut::standard();
        assert_eq!(lut.entries.len(), 256);
        assert_eq!(lut.entries[0], [0.0, 0.0, 0.0]);
        assert_eq!(lut.entries[255], [1.0, 1.0, 1.0]);
        assert!(lut.entries.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        assert!(lut.min_separation() > 0.0);
    }

    #[test]
    fn exact_hit() {
        let lut = IronbowLut::standard();
        let img = Image::from_vec(1, 1, 3, lut.entries[128].to_vec()).unwrap();
        assert_eq!(ironbow_inverse(&img).unwrap().data, vec![128.0 / 255.0]);
    }

    #[test]
    fn grayscale_passthrough() {
        let img = Image::from_vec(3, 1, 1, vec![0.1, 0.7, 0.33]).unwrap();
        assert_eq!(ironbow_inverse(&img).unwrap().data, img.data);
    }

    #[test]
    fn roundtrip_all_levels() {
        let t = Image::from_vec(256, 1, 1, (0..256).map(|i| i as f64 / 255.0).collect()).unwrap();
        let back = ironbow_inverse(&ironbow_forward(&t).unwrap()).unwrap();
        assert_eq!(back.data, t.data);
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lut.csv");
        let body: String = IronbowLut::standard()
            .entries
            .iter()
            .map(|e| format!("{:?},{:?},{:?}\n", e[0], e[1], e[2]))
            .collect();
        std::fs::write(&path, format!("# r,g,b\n{body}")).unwrap();
        assert!(&IronbowLut::from_csv(&path).unwrap() == IronbowLut::standard());
        std::fs::write(&path, "0,0,0\n").unwrap();
        assert!(matches!(IronbowLut::from_csv(&path), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn small_perturbation_keeps_level(level in 0usize..256, dir in prop::array::uniform3(-1.0f64..1.0), frac in 0.0f64..0.99) {
            let lut = IronbowLut::standard();
            let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt().max(1e-12);
            let r = frac * 0.5 * lut.min_separation();
            let px: Vec<f64> = (0..3).map(|k| lut.entries[level][k] + dir[k] / norm * r).collect();
            prop_assert_eq!(lut.nearest(&px), level);
        }
    }
}
