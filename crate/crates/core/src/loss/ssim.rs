//! Structural similarity over valid window positions, with its gradient
//! with respect to the prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::par;

pub const SSIM_C1: f64 = 1e-4;
pub const SSIM_C2: f64 = 9e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Gaussian,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub kind: WindowKind,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            kind: WindowKind::Gaussian,
        }
    }
}

impl SsimConfig {
    /// Normalized 1-D kernel; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let n = self.window;
        let raw: Vec<f64> = match self.kind {
            WindowKind::Uniform => vec![1.0; n],
            WindowKind::Gaussian => {
                let c = (n as f64 - 1.0) / 2.0;
                (0..n)
                    .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * self.sigma * self.sigma)).exp())
                    .collect()
            }
        };
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }

    /// Default settings with the window shrunk to the largest odd size that
    /// fits a `w×h` image.
    pub fn fitting(w: usize, h: usize) -> Self {
        let m = w.min(h);
        let window = match m {
            11.. => 11,
            _ if m.is_multiple_of(2) => m.saturating_sub(1).max(1),
            _ => m,
        };
        SsimConfig {
            window,
            ..SsimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.sigma > 0.0) {
            return Err(Error::Config("SSIM window must be positive with sigma > 0".into()));
        }
        Ok(())
    }
}

/// Separable "valid" correlation of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let src = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, s) in out[y * ow..(y + 1) * ow].iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters a valid-sized map back to `w × h`.
fn filter_adjoint(map: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for (i, &kv) in k.iter().enumerate() {
            let dst = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
            for (d, s) in dst.iter_mut().zip(&map[y * ow..(y + 1) * ow]) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let row = &mut out[y * w..(y + 1) * w];
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (i, &kv) in k.iter().enumerate() {
                row[x + i] += kv * v;
            }
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    (0..img.pixel_count()).map(|p| img.pixel(p)[c]).collect()
}

/// Returns `(mean SSIM over positions and channels, ∂SSIM/∂pred)`.
pub fn ssim(pred: &Image, gt: &Image, cfg: &SsimConfig) -> Result<(f64, Image)> {
    pred.check_same_shape(gt, "ssim")?;
    cfg.validate()?;
    let (w, h) = (pred.width, pred.height);
    if w.min(h) < cfg.window {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: cfg.window,
        });
    }
    let k = cfg.kernel();
    let nvalid = (w + 1 - cfg.window) * (h + 1 - cfg.window);
    let norm = 1.0 / (nvalid * pred.channels) as f64;
    let per_channel = par::map_range(pred.channels, |c| {
        let x = plane(pred, c);
        let y = plane(gt, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, w, h, &k);
        let my = filter_valid(&y, w, h, &k);
        let mxx = filter_valid(&xx, w, h, &k);
        let myy = filter_valid(&yy, w, h, &k);
        let mxy = filter_valid(&xy, w, h, &k);
        let mut total = 0.0;
        // Per-position partials with respect to μx, σx², σxy.
        let mut d_mx = vec![0.0; nvalid];
        let mut d_sxx = vec![0.0; nvalid];
        let mut d_sxy = vec![0.0; nvalid];
        for p in 0..nvalid {
            let (ux, uy) = (mx[p], my[p]);
            let sxx = mxx[p] - ux * ux;
            let syy = myy[p] - uy * uy;
            let sxy = mxy[p] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            d_mx[p] = norm * (2.0 * uy * a2 / (b1 * b2) - s * 2.0 * ux / b1);
            d_sxx[p] = norm * (-s / b2);
            d_sxy[p] = norm * (2.0 * a1 / (b1 * b2));
        }
        // σx² = E[x²] − μx², σxy = E[xy] − μx μy: push the partials onto the
        // filtered moments, then through the window adjoint.
        let g_mx: Vec<f64> = (0..nvalid)
            .map(|p| d_mx[p] - 2.0 * d_sxx[p] * mx[p] - d_sxy[p] * my[p])
            .collect();
        let a = filter_adjoint(&g_mx, w, h, &k);
        let b = filter_adjoint(&d_sxx, w, h, &k);
        let cxy = filter_adjoint(&d_sxy, w, h, &k);
        let grad: Vec<f64> = (0..w * h).map(|i| a[i] + 2.0 * x[i] * b[i] + y[i] * cxy[i]).collect();
        (total, grad)
    });
    let mut grad = Image::zeros(w, h, pred.channels);
    let mut value = 0.0;
    for (c, (t, g)) in per_channel.into_iter().enumerate() {
        value += t;
        for (p, v) in g.into_iter().enumerate() {
            grad.pixel_mut(p)[c] = v;
        }
    }
    Ok((value * norm, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct 2-D window evaluation of the SSIM formula.
    fn oracle(a: &Image, b: &Image, cfg: &SsimConfig) -> f64 {
        let k = cfg.kernel();
        let n = cfg.window;
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..a.channels {
            for y0 in 0..=a.height - n {
                for x0 in 0..=a.width - n {
                    let (mut ux, mut uy, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for j in 0..n {
                        for i in 0..n {
                            let wgt = k[i] * k[j];
                            let p = (y0 + j) * a.width + x0 + i;
                            let (va, vb) = (a.pixel(p)[c], b.pixel(p)[c]);
                            ux += wgt * va;
                            uy += wgt * vb;
                            xx += wgt * va * va;
                            yy += wgt * vb * vb;
                            xy += wgt * va * vb;
                        }
                    }
                    let (vx, vy, cxy) = (xx - ux * ux, yy - uy * uy, xy - ux * uy);
                    total += (2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2)
                        / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    fn rand_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_image(&mut rng, 16, 13, 3);
        let (s, g) = ssim(&a, &a, &SsimConfig::default()).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.data.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn kernel_is_normalized_gaussian() {
        let k = SsimConfig::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((k[4] / k[5] - (-1.0 / 4.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn matches_direct_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in [WindowKind::Gaussian, WindowKind::Uniform] {
            let cfg = SsimConfig { kind, ..SsimConfig::default() };
            let a = rand_image(&mut rng, 19, 14, 3);
            let b = rand_image(&mut rng, 19, 14, 3);
            let (s, _) = ssim(&a, &b, &cfg).unwrap();
            assert!((s - oracle(&a, &b, &cfg)).abs() < 1e-12);
        }
    }

    #[test]
    fn inverted_structure_is_negative() {
        // Mid-contrast smooth pattern around 0.5.
        let mut gt = Image::zeros(24, 24, 1);
        for y in 0..24 {
            for x in 0..24 {
                gt.set(x, y, 0, 0.5 + 0.3 * ((x as f64) * 0.7).sin() * ((y as f64) * 0.5).cos());
            }
        }
        let inv = gt.map(|v| 1.0 - v);
        let (s, _) = ssim(&inv, &gt, &SsimConfig::default()).unwrap();
        assert!(s < 0.0);
        assert!((s - oracle(&inv, &gt, &SsimConfig::default())).abs() < 1e-12);
    }

    #[test]
    fn symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rand_image(&mut rng, 12, 12, 1);
        let b = rand_image(&mut rng, 12, 12, 1);
        let cfg = SsimConfig::default();
        let (ab, _) = ssim(&a, &b, &cfg).unwrap();
        let (ba, _) = ssim(&b, &a, &cfg).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn too_small_is_rejected() {
        let a = Image::zeros(10, 30, 1);
        assert!(matches!(
            ssim(&a, &a, &SsimConfig::default()),
            Err(Error::ImageTooSmall { window: 11, .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (kind, c) in [(WindowKind::Gaussian, 3), (WindowKind::Uniform, 1)] {
            let cfg = SsimConfig { kind, ..SsimConfig::default() };
            let a = rand_image(&mut rng, 16, 16, c);
            let b = rand_image(&mut rng, 16, 16, c);
            let (_, g) = ssim(&a, &b, &cfg).unwrap();
            let h = 1e-6;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..a.data.len() {
                let mut p = a.clone();
                let mut m = a.clone();
                p.data[i] += h;
                m.data[i] -= h;
                let fd = (ssim(&p, &b, &cfg).unwrap().0 - ssim(&m, &b, &cfg).unwrap().0) / (2.0 * h);
                num += (fd - g.data[i]).powi(2);
                den += fd * fd;
            }
            assert!((num / den).sqrt() < 1e-4, "rel err {}", (num / den).sqrt());
        }
    }
}
