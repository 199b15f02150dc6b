//! Brute-force reference renderer: no tiling, no binning, every splat
//! evaluated at every pixel from its covariance. Used to check the tiled
//! kernel.

use nalgebra::{Matrix2, Vector2};

use crate::img::Image;
use crate::model::Projected2DGaussian;

use super::{ALPHA_CAP, ALPHA_SKIP, T_MIN};

/// Renders `attrs` (`N×channels`). With `early_stop` the transmittance cutoff
/// is applied exactly as in the tiled kernel; without it every splat is
/// composited.
#[allow(clippy::too_many_arguments)]
pub fn render_reference(
    projected: &[Option<Projected2DGaussian>],
    opacities: &[f64],
    attrs: &[f64],
    channels: usize,
    width: usize,
    height: usize,
    background: &[f64],
    early_stop: bool,
) -> Image {
    let mut order: Vec<usize> = (0..projected.len()).filter(|&i| projected[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let da = projected[a].unwrap().depth;
        let db = projected[b].unwrap().depth;
        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
    });
    let inverses: Vec<Option<Matrix2<f64>>> = projected
        .iter()
        .map(|p| {
            p.and_then(|p| Matrix2::new(p.cov2d[0], p.cov2d[1], p.cov2d[1], p.cov2d[2]).try_inverse())
        })
        .collect();

    let mut img = Image::zeros(width, height, channels);
    for y in 0..height {
        for x in 0..width {
            let px = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut acc = vec![0.0; channels];
            for &i in &order {
                let p = projected[i].unwrap();
                let d = px - Vector2::new(p.mean2d[0], p.mean2d[1]);
                let inv = inverses[i].unwrap();
                let g = (-0.5 * (d.transpose() * inv * d)[(0, 0)]).exp();
                let alpha = (opacities[i] * g).min(ALPHA_CAP);
                if alpha < ALPHA_SKIP {
                    continue;
                }
                if early_stop && t * (1.0 - alpha) < T_MIN {
                    break;
                }
                for c in 0..channels {
                    acc[c] += attrs[i * channels + c] * alpha * t;
                }
                t *= 1.0 - alpha;
            }
            for c in 0..channels {
                let bg = background.get(c).copied().unwrap_or(0.0);
                img.set(x, y, c, acc[c] + t * bg);
            }
        }
    }
    img
}
