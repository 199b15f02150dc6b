//! Initial Gaussian clouds.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::checkpoint::ply::read_ply;
use crate::error::{Error, Result};
use crate::model::{logit, sh::SH_C0, CloudParam, GaussianCloud};
use crate::net::ModulationNet;

#[derive(Clone, Debug)]
pub enum InitMode<'a> {
    /// Uniform positions inside `[min, max]`.
    RandomBox { min: [f64; 3], max: [f64; 3] },
    /// Positions (and colors, when present) from a PLY point list.
    FromPoints(&'a Path),
    /// Ground truth plus i.i.d. Gaussian noise of standard deviation `sigma`
    /// on every parameter.
    PerturbGt { gt: &'a GaussianCloud, sigma: f64 },
}

pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_FEATURE_STD: f64 = 0.01;

/// Builds `n` Gaussians (`FromPoints` keeps at most `n` of the listed points,
/// `PerturbGt` keeps the ground-truth count).
pub fn init_cloud(mode: &InitMode<'_>, n: usize, sh_degree: usize, feature_dim: usize, seed: u64) -> Result<GaussianCloud> {
    if n == 0 {
        return Err(Error::Config("initial cloud needs at least one Gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        InitMode::RandomBox { min, max } => {
            if (0..3).any(|k| !(max[k] > min[k])) {
                return Err(Error::Config(format!("empty init box {min:?}..{max:?}")));
            }
            let side = (0..3).map(|k| max[k] - min[k]).fold(0.0, f64::max);
            let mut c = base_cloud(n, sh_degree, feature_dim, &mut rng);
            for i in 0..n {
                for k in 0..3 {
                    c.positions[3 * i + k] = rng.random_range(min[k]..max[k]);
                    c.log_scales[3 * i + k] = (0.05 * side).ln();
                }
            }
            Ok(c)
        }
        InitMode::FromPoints(path) => {
            let bytes = std::fs::read(path)?;
            let (table, _) = read_ply(&bytes)?;
            let col = |name: &str| table.column_index(name);
            let (x, y, z) = match (col("x"), col("y"), col("z")) {
                (Some(x), Some(y), Some(z)) => (x, y, z),
                _ => return Err(Error::format("point PLY lacks x/y/z properties")),
            };
            if table.rows == 0 {
                return Err(Error::format("point PLY has no vertices"));
            }
            let rows: Vec<usize> = if table.rows <= n {
                (0..table.rows).collect()
            } else {
                (0..n).map(|k| k * table.rows / n).collect()
            };
            let pts: Vec<[f64; 3]> = rows
                .iter()
                .map(|&r| [table.get(r, x), table.get(r, y), table.get(r, z)])
                .collect();
            if pts.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::format("point PLY has non-finite coordinates"));
            }
            let mut c = base_cloud(pts.len(), sh_degree, feature_dim, &mut rng);
            let colors = match (col("red"), col("green"), col("blue")) {
                (Some(r), Some(g), Some(b)) => {
                    let scale = match table.properties[r].1 {
                        crate::checkpoint::ply::ScalarType::F32 | crate::checkpoint::ply::ScalarType::F64 => 1.0,
                        crate::checkpoint::ply::ScalarType::U16 => 65535.0,
                        _ => 255.0,
                    };
                    Some([r, g, b].map(|k| (k, scale)))
                }
                _ => None,
            };
            let w = 3 * c.sh_coeff_count();
            for (i, p) in pts.iter().enumerate() {
                c.positions[3 * i..3 * i + 3].copy_from_slice(p);
                let s = nearest_spacing(&pts, i).max(1e-4);
                c.log_scales[3 * i..3 * i + 3].fill(s.ln());
                if let Some(cols) = colors {
                    for (ch, (k, scale)) in cols.iter().enumerate() {
                        let v = (table.get(rows[i], *k) / scale).clamp(0.0, 1.0);
                        c.sh_coeffs[w * i + ch] = (v - 0.5) / SH_C0;
                    }
                }
            }
            Ok(c)
        }
        InitMode::PerturbGt { gt, sigma } => {
            gt.validate()?;
            if !(*sigma >= 0.0) {
                return Err(Error::Config(format!("perturbation scale {sigma} must be non-negative")));
            }
            let mut c = (*gt).clone();
            if *sigma == 0.0 {
                return Ok(c);
            }
            let noise = Normal::new(0.0, *sigma).map_err(|e| Error::Config(e.to_string()))?;
            for p in CloudParam::ALL {
                for v in c.tensor_mut(p).iter_mut() {
                    *v += noise.sample(&mut rng);
                }
            }
            c.normalize_rotations();
            Ok(c)
        }
    }
}

fn base_cloud(n: usize, sh_degree: usize, feature_dim: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let mut c = GaussianCloud::new(n, sh_degree, feature_dim);
    c.opacity_logits.fill(logit(INIT_OPACITY));
    for v in &mut c.features {
        let z: f64 = rng.sample(StandardNormal);
        *v = INIT_FEATURE_STD * z;
    }
    c
}

/// Mean distance to the (up to) three nearest other points; 0.05 when alone.
fn nearest_spacing(pts: &[[f64; 3]], i: usize) -> f64 {
    let mut best = [f64::INFINITY; 3];
    for (j, q) in pts.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = ((pts[i][0] - q[0]).powi(2) + (pts[i][1] - q[1]).powi(2) + (pts[i][2] - q[2]).powi(2)).sqrt();
        if d < best[2] {
            best[2] = d;
            best.sort_by(|a, b| a.total_cmp(b));
        }
    }
    let found: Vec<f64> = best.into_iter().filter(|d| d.is_finite()).collect();
    if found.is_empty() {
        0.05
    } else {
        found.iter().sum::<f64>() / found.len() as f64
    }
}

/// Adds i.i.d. noise of standard deviation `sigma` to every network weight.
pub fn perturb_net(net: &ModulationNet, sigma: f64, seed: u64) -> Result<ModulationNet> {
    let mut out = net.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in out.tensors_mut() {
        for v in t.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    Ok(out)
}
