//! Finite-difference verification of every hand-written reverse pass.
//!
//! Components whose ± perturbation changes a discrete branch (blend skip or
//! cap, early termination, clamp saturation, an ℓ1 or TV sign) are excluded,
//! since the function is not differentiable across those boundaries.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::img::Image;
use crate::loss::{total_loss, LossInputs, LossWeights, SsimConfig, THERMAL_FEATURE_CHANNEL};
use crate::model::{Camera, CloudParam, GaussianCloud, Projected2DGaussian};
use crate::net::{ModulationNet, NetConfig, NetOptions};
use crate::pipeline::{render_backward, render_frame, Ablation, RenderConfig, Upstream};
use crate::raster::{rasterize, rasterize_backward, RasterConfig, RasterGeometry};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradModule {
    Raster,
    Net,
    Loss,
    Pipeline,
}

impl GradModule {
    pub const ALL: [GradModule; 4] = [Self::Raster, Self::Net, Self::Loss, Self::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            Self::Raster => "raster",
            Self::Net => "net",
            Self::Loss => "loss",
            Self::Pipeline => "pipeline",
        }
    }

    /// Parses `all` or one module name.
    pub fn parse_list(s: &str) -> Result<Vec<GradModule>> {
        match s {
            "all" => Ok(Self::ALL.to_vec()),
            _ => Self::ALL
                .iter()
                .find(|m| m.name() == s)
                .map(|m| vec![*m])
                .ok_or_else(|| Error::Config(format!("unknown gradcheck module `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub modules: Vec<GradModule>,
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub seeds: Vec<u64>,
    pub feature_dim: usize,
    pub sh_degree: usize,
    pub step: f64,
    pub tolerance: f64,
    pub ablation: Ablation,
    /// Negates the analytic gradient of the named class (harness self-test).
    pub flip_sign: Option<String>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            modules: GradModule::ALL.to_vec(),
            gaussians: 6,
            width: 8,
            height: 8,
            seeds: vec![0, 1, 2],
            feature_dim: 8,
            sh_degree: 1,
            step: 1e-6,
            tolerance: 1e-3,
            ablation: Ablation::default(),
            flip_sign: None,
        }
    }
}

impl GradcheckConfig {
    /// SSIM window that fits the check images.
    pub fn ssim(&self) -> SsimConfig {
        SsimConfig::fitting(self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub module: GradModule,
    pub class: String,
    pub seed: u64,
    pub rel_err: f64,
    pub compared: usize,
    pub excluded: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub classes: Vec<ClassReport>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        !self.classes.is_empty() && self.classes.iter().all(|c| c.passed)
    }

    pub fn worst(&self) -> Option<&ClassReport> {
        self.classes.iter().max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Small random scene with ground truth images, for gradient checks and tests.
pub struct CheckScene {
    pub cloud: GaussianCloud,
    pub net: ModulationNet,
    pub camera: Camera,
    pub gt_rgb: Image,
    pub gt_thermal: Image,
}

pub fn random_scene(seed: u64, n: usize, w: usize, h: usize, d: usize, sh_degree: usize) -> Result<CheckScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let focal = 1.2 * w.max(h) as f64;
    let camera = Camera::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), focal, w, h)?;
    let mut cloud = GaussianCloud::new(n, sh_degree, d);
    for i in 0..n {
        let z = rng.random_range(2.0..4.0);
        let half = 0.4 * z * w as f64 / focal;
        let p = [rng.random_range(-half..half), rng.random_range(-half..half), z];
        cloud.positions[3 * i..3 * i + 3].copy_from_slice(&p);
        for c in 0..3 {
            cloud.log_scales[3 * i + c] = rng.random_range(-2.2f64..-1.2) + (z / 3.0).ln();
        }
        for c in 0..4 {
            cloud.rotations[4 * i + c] = rng.random_range(-1.0..1.0);
        }
        cloud.opacity_logits[i] = rng.random_range(-1.0..2.0);
        cloud.thermal_opacity_offsets[i] = rng.random_range(-1.5..1.5);
    }
    cloud.normalize_rotations();
    cloud.sh_coeffs.iter_mut().for_each(|v| *v = rng.random_range(-0.4..0.4));
    cloud.features.iter_mut().for_each(|v| *v = rng.random_range(-0.3..1.3));
    let mut net = ModulationNet::new(&NetConfig::with_feature_dim(d), &mut rng)?;
    // Away from the identity init so every FiLM path carries gradient.
    net.film_linear.weight.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
    net.film_linear.bias.iter_mut().for_each(|v| *v += rng.random_range(-0.2..0.2));
    let gt_rgb = Image::from_vec(w, h, 3, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let gt_thermal = Image::from_vec(w, h, 1, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect())?;
    Ok(CheckScene {
        cloud,
        net,
        camera,
        gt_rgb,
        gt_thermal,
    })
}

fn sign_hash(h: &mut DefaultHasher, a: &[f64], b: &[f64]) {
    for (x, y) in a.iter().zip(b) {
        (x - y).partial_cmp(&0.0).map(|o| o as i8).hash(h);
    }
}

/// Hash of the sign and clamp patterns the loss branches on.
pub fn loss_signature(inp: &LossInputs<'_>) -> u64 {
    let mut h = DefaultHasher::new();
    sign_hash(&mut h, &inp.c_rgb.data, &inp.gt_rgb.data);
    sign_hash(&mut h, &inp.c_thermal.data, &inp.gt_thermal.data);
    let a_ft = inp.a_ft.unwrap_or(inp.a_f);
    for p in 0..inp.a_f.pixel_count() {
        for c in 0..3.min(inp.a_f.channels) {
            let v = inp.a_f.pixel(p)[c];
            let clamped = v.clamp(0.0, 1.0);
            (v < 0.0, v > 1.0).hash(&mut h);
            (clamped - inp.gt_rgb.pixel(p)[c]).partial_cmp(&0.0).map(|o| o as i8).hash(&mut h);
        }
        if a_ft.channels > THERMAL_FEATURE_CHANNEL {
            (a_ft.pixel(p)[THERMAL_FEATURE_CHANNEL] - inp.gt_thermal.data[p])
                .partial_cmp(&0.0)
                .map(|o| o as i8)
                .hash(&mut h);
        }
    }
    let c = inp.c_thermal;
    for y in 0..c.height {
        for x in 0..c.width {
            let v = c.get(x, y, 0);
            if x + 1 < c.width {
                (c.get(x + 1, y, 0) - v).partial_cmp(&0.0).map(|o| o as i8).hash(&mut h);
            }
            if y + 1 < c.height {
                (c.get(x, y + 1, 0) - v).partial_cmp(&0.0).map(|o| o as i8).hash(&mut h);
            }
        }
    }
    h.finish()
}

/// One named group of scalar parameters: analytic gradient plus a closure
/// evaluating `(loss, signature)` with component `i` shifted by `delta`.
struct Class<'a> {
    name: String,
    analytic: Vec<f64>,
    eval: Box<dyn Fn(usize, f64) -> Result<(f64, u64)> + 'a>,
}

fn compare(
    module: GradModule,
    seed: u64,
    base_sig: u64,
    class: Class<'_>,
    cfg: &GradcheckConfig,
) -> Result<ClassReport> {
    let mut analytic = class.analytic;
    if cfg.flip_sign.as_deref() == Some(class.name.as_str()) {
        analytic.iter_mut().for_each(|v| *v = -*v);
    }
    let h = cfg.step;
    let (mut num, mut nfd, mut nan) = (0.0, 0.0, 0.0);
    let (mut compared, mut excluded) = (0, 0);
    for (i, &an) in analytic.iter().enumerate() {
        let (lp, sp) = (class.eval)(i, h)?;
        let (lm, sm) = (class.eval)(i, -h)?;
        if sp != base_sig || sm != base_sig {
            excluded += 1;
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        num += (fd - an).powi(2);
        nfd += fd * fd;
        nan += an * an;
        compared += 1;
    }
    let scale = nfd.max(nan).sqrt();
    // Gradients that vanish identically (e.g. a class with no path) agree
    // when both sides are at round-off level.
    let rel_err = if scale < 1e-10 { num.sqrt() } else { num.sqrt() / scale };
    Ok(ClassReport {
        module,
        class: class.name,
        seed,
        rel_err,
        compared,
        excluded,
        passed: rel_err < cfg.tolerance && compared > 0,
    })
}

fn check_loss(seed: u64, cfg: &GradcheckConfig) -> Result<Vec<ClassReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1055);
    let (w, h, d) = (cfg.width, cfg.height, cfg.feature_dim);
    let mut rand_img = |c: usize, lo: f64, hi: f64| {
        Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(lo..hi)).collect())
    };
    let imgs = [rand_img(3, 0.0, 1.0)?, rand_img(1, 0.0, 1.0)?, rand_img(d, -0.3, 1.3)?, rand_img(d, -0.3, 1.3)?];
    let gt_rgb = rand_img(3, 0.0, 1.0)?;
    let gt_th = rand_img(1, 0.0, 1.0)?;
    let weights = LossWeights::default();
    let ssim = cfg.ssim();
    let eval_with = |imgs: &[Image; 4]| -> Result<(f64, u64, crate::loss::TotalLoss)> {
        let inp = LossInputs {
            c_rgb: &imgs[0],
            c_thermal: &imgs[1],
            a_f: &imgs[2],
            a_ft: Some(&imgs[3]),
            gt_rgb: &gt_rgb,
            gt_thermal: &gt_th,
        };
        let t = total_loss(&inp, &weights, &ssim)?;
        Ok((t.total, loss_signature(&inp), t))
    };
    let (_, sig, base) = eval_with(&imgs)?;
    let grads = [
        ("c_rgb", base.d_c_rgb.data.clone()),
        ("c_thermal", base.d_c_thermal.data.clone()),
        ("a_f", base.d_a_f.data.clone()),
        ("a_ft", base.d_a_ft.clone().unwrap().data),
    ];
    let mut out = Vec::new();
    for (which, (name, analytic)) in grads.into_iter().enumerate() {
        let imgs = &imgs;
        let class = Class {
            name: name.to_string(),
            analytic,
            eval: Box::new(move |i, delta| {
                let mut m = imgs.clone();
                m[which].data[i] += delta;
                let (l, s, _) = eval_with(&m)?;
                Ok((l, s))
            }),
        };
        out.push(compare(GradModule::Loss, seed, sig, class, cfg)?);
    }
    Ok(out)
}

fn check_net(seed: u64, cfg: &GradcheckConfig) -> Result<Vec<ClassReport>> {
    let scene = random_scene(seed, 1, 1, 1, cfg.feature_dim, 0)?;
    let net = scene.net;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0e7);
    let (w, h, d) = (2, 2, cfg.feature_dim);
    let mut rand_img = |c: usize| Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(-1.0..1.0)).collect());
    let a = rand_img(d)?;
    let at = rand_img(d)?;
    let u_rgb = rand_img(3)?;
    let u_th = rand_img(1)?;
    let opts = NetOptions {
        film: !cfg.ablation.disable_film,
        film_source: cfg.ablation.film_source,
    };
    let eval = |net: &ModulationNet, a: &Image, at: &Image| -> Result<f64> {
        let t = net.forward(a, Some(at), opts)?;
        let s1: f64 = t.c_impl.data.iter().zip(&u_rgb.data).map(|(x, u)| x * u).sum();
        let s2: f64 = t.c_thermal.data.iter().zip(&u_th.data).map(|(x, u)| x * u).sum();
        Ok(s1 + s2)
    };
    let tr = net.forward(&a, Some(&at), opts)?;
    let bw = net.backward(&tr, &u_rgb, &u_th)?;
    let mut out = Vec::new();
    let names: Vec<String> = net.tensors().iter().map(|t| t.name.clone()).collect();
    let grads: Vec<Vec<f64>> = bw.grads.tensors().iter().map(|t| t.data.to_vec()).collect();
    for (ti, (name, analytic)) in names.into_iter().zip(grads).enumerate() {
        let net = &net;
        let (a, at) = (&a, &at);
        let class = Class {
            name,
            analytic,
            eval: Box::new(move |i, delta| {
                let mut m = net.clone();
                m.tensors_mut()[ti][i] += delta;
                Ok((eval(&m, a, at)?, 0))
            }),
        };
        out.push(compare(GradModule::Net, seed, 0, class, cfg)?);
    }
    for (name, which, analytic) in [("a_f", 0, bw.d_a_f.data), ("a_ft", 1, bw.d_a_ft.unwrap().data)] {
        let (net, a, at) = (&net, &a, &at);
        let class = Class {
            name: name.into(),
            analytic,
            eval: Box::new(move |i, delta| {
                let (mut a2, mut at2) = (a.clone(), at.clone());
                if which == 0 {
                    a2.data[i] += delta;
                } else {
                    at2.data[i] += delta;
                }
                Ok((eval(net, &a2, &at2)?, 0))
            }),
        };
        out.push(compare(GradModule::Net, seed, 0, class, cfg)?);
    }
    Ok(out)
}

fn check_raster(seed: u64, cfg: &GradcheckConfig) -> Result<Vec<ClassReport>> {
    let scene = random_scene(seed, cfg.gaussians, cfg.width, cfg.height, cfg.feature_dim, 0)?;
    let cloud = &scene.cloud;
    let cam = &scene.camera;
    let n = cloud.len();
    let k = 3;
    let projected: Vec<Option<Projected2DGaussian>> = (0..n)
        .map(|i| {
            let cov = crate::model::covariance_from_params(&cloud.log_scale(i), cloud.rotation(i));
            crate::model::project_gaussian(&cloud.position(i), &cov, cam, 0.0)
        })
        .collect();
    let opac: Vec<f64> = cloud.opacity_logits.iter().map(|&l| crate::model::sigmoid(l)).collect();
    let attrs: Vec<f64> = cloud.features.chunks(cloud.feature_dim).flat_map(|f| f[..k].to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a5);
    let up = Image::from_vec(
        cfg.width,
        cfg.height,
        k,
        (0..cfg.width * cfg.height * k).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    let rcfg = RasterConfig::default();
    let run = |proj: Vec<Option<Projected2DGaussian>>, opac: &[f64], attrs: &[f64]| -> Result<(f64, u64)> {
        let geom = Arc::new(RasterGeometry::new(proj, cfg.width, cfg.height, rcfg.tile_size));
        let (m, aux) = rasterize(&geom, opac, attrs, k, &[], &rcfg)?;
        let l = m.data.data.iter().zip(&up.data).map(|(a, b)| a * b).sum();
        let mut h = DefaultHasher::new();
        aux.blend_signature().hash(&mut h);
        aux.geometry.bins.lists.hash(&mut h);
        Ok((l, h.finish()))
    };
    let (_, sig) = run(projected.clone(), &opac, &attrs)?;
    let geom = Arc::new(RasterGeometry::new(projected.clone(), cfg.width, cfg.height, rcfg.tile_size));
    let (_, aux) = rasterize(&geom, &opac, &attrs, k, &[], &rcfg)?;
    let g = rasterize_backward(&aux, &up)?;

    let live: Vec<usize> = (0..n).filter(|&i| projected[i].is_some()).collect();
    let mean_an: Vec<f64> = live.iter().flat_map(|&i| g.d_mean2d[i].to_vec()).collect();
    let cov_an: Vec<f64> = live.iter().flat_map(|&i| g.d_cov2d[i].to_vec()).collect();
    let mut out = Vec::new();
    let (p, o, a) = (&projected, &opac, &attrs);
    let classes = vec![
        Class {
            name: "attrs".into(),
            analytic: g.d_attrs.clone(),
            eval: Box::new(move |i, delta| {
                let mut a2 = a.clone();
                a2[i] += delta;
                run(p.clone(), o, &a2)
            }),
        },
        Class {
            name: "opacities".into(),
            analytic: g.d_opacities.clone(),
            eval: Box::new(move |i, delta| {
                let mut o2 = o.clone();
                o2[i] += delta;
                run(p.clone(), &o2, a)
            }),
        },
        Class {
            name: "mean2d".into(),
            analytic: mean_an,
            eval: Box::new({
                let live = live.clone();
                move |i, delta| {
                    let mut p2 = p.clone();
                    let s = p2[live[i / 2]].as_mut().unwrap();
                    s.mean2d[i % 2] += delta;
                    run(p2, o, a)
                }
            }),
        },
        Class {
            name: "cov2d".into(),
            analytic: cov_an,
            eval: Box::new({
                let live = live.clone();
                move |i, delta| {
                    let mut p2 = p.clone();
                    let s = p2[live[i / 3]].unwrap();
                    let mut cov = s.cov2d;
                    cov[i % 3] += delta;
                    p2[live[i / 3]] = Some(Projected2DGaussian::from_mean_cov(s.mean2d, cov, s.depth));
                    run(p2, o, a)
                }
            }),
        },
    ];
    for c in classes {
        out.push(compare(GradModule::Raster, seed, sig, c, cfg)?);
    }
    Ok(out)
}

/// End-to-end check of the total objective through [`render_frame`].
fn check_pipeline(seed: u64, cfg: &GradcheckConfig) -> Result<Vec<ClassReport>> {
    let scene = random_scene(seed, cfg.gaussians, cfg.width, cfg.height, cfg.feature_dim, cfg.sh_degree)?;
    let weights = LossWeights::default();
    let ssim = cfg.ssim();
    let rcfg = RenderConfig {
        ablation: cfg.ablation,
        ..RenderConfig::default()
    };
    let (gt_rgb, gt_th, cam) = (&scene.gt_rgb, &scene.gt_thermal, &scene.camera);
    let eval = |cloud: &GaussianCloud, net: &ModulationNet| -> Result<(f64, u64)> {
        let r = render_frame(cloud, net, cam, &rcfg)?;
        let inp = LossInputs {
            c_rgb: &r.c_rgb,
            c_thermal: &r.c_thermal,
            a_f: &r.a_f,
            a_ft: r.a_ft.as_ref(),
            gt_rgb,
            gt_thermal: gt_th,
        };
        let l = total_loss(&inp, &weights, &ssim)?;
        Ok((l.total, r.trace.signature() ^ loss_signature(&inp).rotate_left(7)))
    };
    let r = render_frame(&scene.cloud, &scene.net, cam, &rcfg)?;
    let inp = LossInputs {
        c_rgb: &r.c_rgb,
        c_thermal: &r.c_thermal,
        a_f: &r.a_f,
        a_ft: r.a_ft.as_ref(),
        gt_rgb,
        gt_thermal: gt_th,
    };
    let l = total_loss(&inp, &weights, &ssim)?;
    let sig = r.trace.signature() ^ loss_signature(&inp).rotate_left(7);
    let grads = render_backward(
        &scene.cloud,
        &scene.net,
        &r.trace,
        &Upstream {
            d_c_rgb: Some(&l.d_c_rgb),
            d_c_thermal: Some(&l.d_c_thermal),
            d_a_f: Some(&l.d_a_f),
            d_a_ft: l.d_a_ft.as_ref(),
        },
    )?;
    let mut out = Vec::new();
    let (cloud, net) = (&scene.cloud, &scene.net);
    for p in CloudParam::ALL {
        let class = Class {
            name: p.name().into(),
            analytic: grads.cloud.tensor(p).to_vec(),
            eval: Box::new(move |i, delta| {
                let mut c = cloud.clone();
                c.tensor_mut(p)[i] += delta;
                eval(&c, net)
            }),
        };
        out.push(compare(GradModule::Pipeline, seed, sig, class, cfg)?);
    }
    // Network weights grouped per sub-network.
    let names: Vec<String> = net.tensors().iter().map(|t| t.name.clone()).collect();
    let an: Vec<Vec<f64>> = grads.net.tensors().iter().map(|t| t.data.to_vec()).collect();
    let mut groups: Vec<(String, Vec<(usize, usize)>, Vec<f64>)> = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let group = format!("net.{}", name.split('.').next().unwrap());
        if groups.last().map(|g| &g.0) != Some(&group) {
            groups.push((group, Vec::new(), Vec::new()));
        }
        let g = groups.last_mut().unwrap();
        for (i, &v) in an[ti].iter().enumerate() {
            g.1.push((ti, i));
            g.2.push(v);
        }
    }
    for (name, index, analytic) in groups {
        let class = Class {
            name,
            analytic,
            eval: Box::new(move |j, delta| {
                let (ti, i) = index[j];
                let mut m = net.clone();
                m.tensors_mut()[ti][i] += delta;
                eval(cloud, &m)
            }),
        };
        out.push(compare(GradModule::Pipeline, seed, sig, class, cfg)?);
    }
    Ok(out)
}

pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    if cfg.width == 0 || cfg.height == 0 || cfg.gaussians == 0 || cfg.seeds.is_empty() {
        return Err(Error::Config("gradcheck needs a non-empty scene and at least one seed".into()));
    }
    if cfg.feature_dim <= THERMAL_FEATURE_CHANNEL {
        return Err(Error::FeatureDimTooSmall(cfg.feature_dim));
    }
    let mut report = GradcheckReport::default();
    for &seed in &cfg.seeds {
        for m in &cfg.modules {
            let classes = match m {
                GradModule::Raster => check_raster(seed, cfg)?,
                GradModule::Net => check_net(seed, cfg)?,
                GradModule::Loss => check_loss(seed, cfg)?,
                GradModule::Pipeline => check_pipeline(seed, cfg)?,
            };
            report.classes.extend(classes);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_modules_pass() {
        let cfg = GradcheckConfig {
            seeds: vec![0],
            ..GradcheckConfig::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        for c in &r.classes {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn sign_flip_is_caught() {
        let cfg = GradcheckConfig {
            modules: vec![GradModule::Pipeline],
            seeds: vec![1],
            flip_sign: Some("log_scales".into()),
            ..GradcheckConfig::default()
        };
        let r = run_gradcheck(&cfg).unwrap();
        assert!(!r.passed());
        let bad: Vec<_> = r.classes.iter().filter(|c| !c.passed).map(|c| c.class.as_str()).collect();
        assert_eq!(bad, vec!["log_scales"]);
    }

    #[test]
    fn module_names_parse() {
        assert_eq!(GradModule::parse_list("all").unwrap().len(), 4);
        assert_eq!(GradModule::parse_list("net").unwrap(), vec![GradModule::Net]);
        assert!(GradModule::parse_list("bogus").is_err());
    }

    #[test]
    fn ssim_window_fits() {
        assert_eq!(GradcheckConfig::default().ssim().window, 7);
        let big = GradcheckConfig { width: 32, height: 20, ..GradcheckConfig::default() };
        assert_eq!(big.ssim().window, 11);
    }
}
