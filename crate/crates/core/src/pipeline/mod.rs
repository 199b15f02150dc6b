//! One differentiable frame: fused base pass, opacity-offset thermal pass,
//! modulation network and hybrid RGB, plus the mirrored reverse pass.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::model::{
    covariance_backward, covariance_from_params, project_backward, project_gaussian, sh, sigmoid,
    thermal_opacity, Camera, GaussianCloud,
};
use crate::net::{FilmSource, ModulationNet, ModulationTrace, NetOptions};
use crate::par;
use crate::raster::{rasterize, rasterize_backward, RasterAux, RasterConfig, RasterGeometry, RasterGrads};

/// Switches for the ablation variants.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// `h_mod := h`.
    pub disable_film: bool,
    /// `α_t := α`, one rasterization pass shared by both branches.
    pub disable_decoupling: bool,
    /// `C_rgb := C_implicit`.
    pub disable_hybrid: bool,
    pub film_source: FilmSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub raster: RasterConfig,
    /// SH degree actually evaluated; clamped to the cloud's degree.
    pub active_sh_degree: Option<usize>,
    /// Background behind the explicit SH color. Features always see zero.
    pub background: [f64; 3],
    pub ablation: Ablation,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            raster: RasterConfig::default(),
            active_sh_degree: None,
            background: [0.0; 3],
            ablation: Ablation::default(),
        }
    }
}

/// Images of one frame plus what the reverse pass needs.
#[derive(Clone, Debug)]
pub struct RenderOutputs {
    pub c_rgb: Image,
    pub c_thermal: Image,
    pub c_implicit: Image,
    pub r_sh: Image,
    pub a_f: Image,
    /// `None` when decoupling is disabled and the thermal branch reads `a_f`.
    pub a_ft: Option<Image>,
    /// Accumulated base-pass opacity per pixel.
    pub alpha: Vec<f64>,
    pub trace: RenderTrace,
}

impl RenderOutputs {
    /// Feature map seen by the thermal branch.
    pub fn thermal_features(&self) -> &Image {
        self.a_ft.as_ref().unwrap_or(&self.a_f)
    }
}

#[derive(Clone, Debug)]
pub struct RenderTrace {
    camera: Camera,
    degree: usize,
    n: usize,
    feature_dim: usize,
    ablation: Ablation,
    dirs: Vec<Vector3<f64>>,
    covs: Vec<Matrix3<f64>>,
    alpha: Vec<f64>,
    alpha_t: Vec<f64>,
    base: RasterAux,
    thermal: Option<RasterAux>,
    net: ModulationTrace,
    /// Pixels of `R_sh + C_implicit` inside `[0,1]` (gradient passes).
    hybrid_pass: Vec<bool>,
}

impl RenderTrace {
    pub fn net_trace(&self) -> &ModulationTrace {
        &self.net
    }

    pub fn geometry(&self) -> &Arc<RasterGeometry> {
        &self.base.geometry
    }

    /// Hash of all non-smooth branch decisions in this frame (blend events
    /// and hybrid clamps). Equal signatures mean the same smooth branch.
    pub fn signature(&self) -> u64 {
        let mut h = self.base.blend_signature();
        if let Some(t) = &self.thermal {
            h = h.rotate_left(17) ^ t.blend_signature();
        }
        for (i, &p) in self.hybrid_pass.iter().enumerate() {
            if !p {
                h = h.wrapping_mul(0x0100_0000_01b3) ^ i as u64;
            }
        }
        h
    }
}

/// Upstream gradients entering [`render_backward`]. Missing images count as zero.
pub struct Upstream<'a> {
    pub d_c_rgb: Option<&'a Image>,
    pub d_c_thermal: Option<&'a Image>,
    pub d_a_f: Option<&'a Image>,
    pub d_a_ft: Option<&'a Image>,
}

/// Parameter gradients of one frame.
#[derive(Clone, Debug)]
pub struct RenderGrads {
    pub cloud: GaussianCloud,
    pub net: ModulationNet,
    /// Opacity-logit gradient through the base pass only.
    pub d_logit_base: Vec<f64>,
    /// Opacity-logit gradient through the thermal pass only.
    pub d_logit_thermal: Vec<f64>,
}

fn active_degree(cloud: &GaussianCloud, cfg: &RenderConfig) -> usize {
    cfg.active_sh_degree.unwrap_or(cloud.sh_degree).min(cloud.sh_degree)
}

pub fn render_frame(
    cloud: &GaussianCloud,
    net: &ModulationNet,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutputs> {
    let d = cloud.feature_dim;
    if net.feature_dim() != d {
        return Err(Error::shape(format!(
            "cloud has {d} feature channels, network expects {}",
            net.feature_dim()
        )));
    }
    cloud.validate()?;
    let n = cloud.len();
    let (w, h) = (camera.width, camera.height);
    let degree = active_degree(cloud, cfg);
    let center = camera.center();

    let per: Vec<(Matrix3<f64>, Option<_>, Vector3<f64>)> = par::map_range(n, |i| {
        let mu = cloud.position(i);
        let cov = covariance_from_params(&cloud.log_scale(i), cloud.rotation(i));
        let proj = project_gaussian(&mu, &cov, camera, cfg.raster.tile_size as f64);
        let dir = if proj.is_some() {
            sh::view_direction(&mu, &center)
        } else {
            Vector3::zeros()
        };
        (cov, proj, dir)
    });
    let mut covs = Vec::with_capacity(n);
    let mut projected = Vec::with_capacity(n);
    let mut dirs = Vec::with_capacity(n);
    for (c, p, dv) in per {
        covs.push(c);
        projected.push(p);
        dirs.push(dv);
    }
    let geom = Arc::new(RasterGeometry::new(projected, w, h, cfg.raster.tile_size));

    let alpha: Vec<f64> = cloud.opacity_logits.iter().map(|&l| sigmoid(l)).collect();
    let k = 3 + d;
    let mut attrs = vec![0.0; n * k];
    for i in 0..n {
        let row = &mut attrs[i * k..(i + 1) * k];
        if geom.projected[i].is_some() {
            row[..3].copy_from_slice(&sh::sh_evaluate(cloud.sh(i), degree, &dirs[i]));
        }
        row[3..].copy_from_slice(cloud.feature(i));
    }
    let mut bg = vec![0.0; k];
    bg[..3].copy_from_slice(&cfg.background);
    let bg = if bg.iter().all(|&v| v == 0.0) { Vec::new() } else { bg };
    let (base_map, base_aux) = rasterize(&geom, &alpha, &attrs, k, &bg, &cfg.raster)?;
    let r_sh = base_map.data.channels(0..3);
    let a_f = base_map.data.channels(3..k);

    let ab = cfg.ablation;
    let (alpha_t, a_ft, thermal_aux) = if ab.disable_decoupling {
        (alpha.clone(), None, None)
    } else {
        let alpha_t: Vec<f64> = cloud
            .opacity_logits
            .iter()
            .zip(&cloud.thermal_opacity_offsets)
            .map(|(&l, &o)| thermal_opacity(l, o))
            .collect();
        let (m, aux) = rasterize(&geom, &alpha_t, &cloud.features, d, &[], &cfg.raster)?;
        (alpha_t, Some(m.data), Some(aux))
    };

    let opts = NetOptions {
        film: !ab.disable_film,
        film_source: ab.film_source,
    };
    let net_trace = net.forward(&a_f, a_ft.as_ref(), opts)?;
    let c_implicit = net_trace.c_impl.clone();
    let c_thermal = net_trace.c_thermal.clone();

    let (c_rgb, hybrid_pass) = if ab.disable_hybrid {
        (c_implicit.clone(), vec![true; c_implicit.data.len()])
    } else {
        let mut c = r_sh.clone();
        c.add_assign(&c_implicit);
        let pass = c.data.iter().map(|v| (0.0..=1.0).contains(v)).collect();
        (c.map(|v| v.clamp(0.0, 1.0)), pass)
    };

    Ok(RenderOutputs {
        c_rgb,
        c_thermal,
        c_implicit,
        r_sh,
        a_f,
        a_ft,
        alpha: base_map.alpha,
        trace: RenderTrace {
            camera: camera.clone(),
            degree,
            n,
            feature_dim: d,
            ablation: ab,
            dirs,
            covs,
            alpha,
            alpha_t,
            base: base_aux,
            thermal: thermal_aux,
            net: net_trace,
            hybrid_pass,
        },
    })
}

fn zeros_or(img: Option<&Image>, w: usize, h: usize, c: usize) -> Result<Image> {
    match img {
        Some(i) if i.width == w && i.height == h && i.channels == c => Ok(i.clone()),
        Some(i) => Err(Error::StaleTrace(format!(
            "upstream {}x{}x{} where {h}x{w}x{c} was rendered",
            i.height, i.width, i.channels
        ))),
        None => Ok(Image::zeros(w, h, c)),
    }
}

/// Reverse of [`render_frame`]. `cloud` and `net` must be the ones rendered.
pub fn render_backward(
    cloud: &GaussianCloud,
    net: &ModulationNet,
    trace: &RenderTrace,
    up: &Upstream<'_>,
) -> Result<RenderGrads> {
    let d = trace.feature_dim;
    if cloud.len() != trace.n || cloud.feature_dim != d || net.feature_dim() != d {
        return Err(Error::StaleAux(format!(
            "trace rendered {} Gaussians with {d} features, got {} with {}",
            trace.n,
            cloud.len(),
            cloud.feature_dim
        )));
    }
    let (w, h) = (trace.camera.width, trace.camera.height);
    let d_c_rgb = zeros_or(up.d_c_rgb, w, h, 3)?;
    let d_c_thermal = zeros_or(up.d_c_thermal, w, h, 1)?;
    let mut d_a_f = zeros_or(up.d_a_f, w, h, d)?;
    let mut d_a_ft = zeros_or(up.d_a_ft, w, h, d)?;

    let (d_r_sh, d_c_impl) = if trace.ablation.disable_hybrid {
        (Image::zeros(w, h, 3), d_c_rgb)
    } else {
        let mut g = d_c_rgb;
        for (v, &pass) in g.data.iter_mut().zip(&trace.hybrid_pass) {
            if !pass {
                *v = 0.0;
            }
        }
        (g.clone(), g)
    };

    let nb = net.backward(&trace.net, &d_c_impl, &d_c_thermal)?;
    d_a_f.add_assign(&nb.d_a_f);
    if let Some(g) = &nb.d_a_ft {
        d_a_ft.add_assign(g);
    }
    if trace.thermal.is_none() {
        d_a_f.add_assign(&d_a_ft);
    }

    let base_up = Image::concat_channels(&[&d_r_sh, &d_a_f])?;
    let base = rasterize_backward(&trace.base, &base_up)?;
    let thermal: Option<RasterGrads> = match &trace.thermal {
        Some(aux) => Some(rasterize_backward(aux, &d_a_ft)?),
        None => None,
    };

    let n = trace.n;
    let k = 3 + d;
    let nc = cloud.sh_coeff_count();
    let center = trace.camera.center();
    let geom = &trace.base.geometry;

    struct Row {
        d_pos: Vector3<f64>,
        d_ls: Vector3<f64>,
        d_q: [f64; 4],
        d_logit_base: f64,
        d_logit_th: f64,
        d_delta: f64,
        d_sh: Vec<f64>,
    }
    let rows = par::map_range(n, |i| {
        let a = trace.alpha[i];
        let d_logit_base = base.d_opacities[i] * a * (1.0 - a);
        let (mut d_mean, mut d_cov) = (base.d_mean2d[i], base.d_cov2d[i]);
        let (mut d_logit_th, mut d_delta) = (0.0, 0.0);
        if let Some(t) = &thermal {
            let at = trace.alpha_t[i];
            let g = t.d_opacities[i] * at * (1.0 - at);
            d_logit_th = g;
            d_delta = g;
            for c in 0..2 {
                d_mean[c] += t.d_mean2d[i][c];
            }
            for c in 0..3 {
                d_cov[c] += t.d_cov2d[i][c];
            }
        }
        let mut row = Row {
            d_pos: Vector3::zeros(),
            d_ls: Vector3::zeros(),
            d_q: [0.0; 4],
            d_logit_base,
            d_logit_th,
            d_delta,
            d_sh: vec![0.0; nc * 3],
        };
        if geom.projected[i].is_none() {
            return row;
        }
        let mu = cloud.position(i);
        let d_rgb = [0, 1, 2].map(|c| base.d_attrs[i * k + c]);
        let d_dir = sh::sh_backward(cloud.sh(i), trace.degree, &trace.dirs[i], d_rgb, &mut row.d_sh);
        row.d_pos += sh::view_direction_backward(&mu, &center, &d_dir);
        let (d_mu, d_sigma) = project_backward(&mu, &trace.covs[i], &trace.camera, d_mean, d_cov);
        row.d_pos += d_mu;
        let (d_ls, d_q) = covariance_backward(&cloud.log_scale(i), cloud.rotation(i), &d_sigma);
        row.d_ls = d_ls;
        row.d_q = d_q;
        row
    });

    let mut g = cloud.zeros_like();
    let mut d_logit_base = vec![0.0; n];
    let mut d_logit_thermal = vec![0.0; n];
    for (i, r) in rows.into_iter().enumerate() {
        for c in 0..3 {
            g.positions[3 * i + c] = r.d_pos[c];
            g.log_scales[3 * i + c] = r.d_ls[c];
        }
        g.rotations[4 * i..4 * i + 4].copy_from_slice(&r.d_q);
        g.opacity_logits[i] = r.d_logit_base + r.d_logit_th;
        g.thermal_opacity_offsets[i] = r.d_delta;
        g.sh_coeffs[i * nc * 3..(i + 1) * nc * 3].copy_from_slice(&r.d_sh);
        d_logit_base[i] = r.d_logit_base;
        d_logit_thermal[i] = r.d_logit_th;
        for c in 0..d {
            let mut v = base.d_attrs[i * k + 3 + c];
            if let Some(t) = &thermal {
                v += t.d_attrs[i * d + c];
            }
            g.features[i * d + c] = v;
        }
    }
    Ok(RenderGrads {
        cloud: g,
        net: nb.grads,
        d_logit_base,
        d_logit_thermal,
    })
}
