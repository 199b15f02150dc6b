//! Optimization loop: one sampled frame per iteration, per-group Adam,
//! SH degree schedule, optional pruning and periodic held-out evaluation.

pub mod adam;
mod config;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_update, AdamHyper, AdamState, GroupRates, Moments};
pub use config::{LearningRates, Precision, ScheduledRates, TrainAblation, TrainConfig};

use crate::error::{Error, Result};
use crate::loss::{l1_loss, psnr, ssim, total_loss, LossInputs, SsimConfig};
use crate::model::{sigmoid, GaussianCloud};
use crate::net::ModulationNet;
use crate::pipeline::{render_backward, render_frame, RenderConfig, Upstream};
use crate::raster::RasterConfig;
use crate::scene::RgbtDataset;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iter: usize,
    pub total: f64,
    pub l_rec_rgb: f64,
    pub l_rec_th: f64,
    pub l_feat: f64,
    pub l_smooth: f64,
    pub psnr_rgb: f64,
    pub psnr_th: f64,
    pub ssim_rgb: f64,
    pub ssim_th: f64,
    pub n_gaussians: usize,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub index: usize,
    pub name: String,
    pub psnr_rgb: f64,
    pub ssim_rgb: f64,
    pub psnr_th: f64,
    pub ssim_th: f64,
    pub l1_th: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub mean: ViewMetrics,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub cloud: GaussianCloud,
    pub net: ModulationNet,
    pub metrics: Vec<MetricsRecord>,
    /// Total loss of every iteration, in order.
    pub loss_history: Vec<f64>,
}

/// Render settings used at iteration `iter` (1-based) of a run.
pub fn render_config(cfg: &TrainConfig, active_sh_degree: usize) -> RenderConfig {
    RenderConfig {
        raster: RasterConfig {
            tile_size: cfg.tile_size,
            ..RasterConfig::default()
        },
        active_sh_degree: Some(active_sh_degree),
        background: cfg.background,
        ablation: cfg.ablation.render(),
    }
}

/// SSIM settings for `w×h` images: the configured window, shrunk if needed.
pub fn ssim_for(cfg: &SsimConfig, w: usize, h: usize) -> SsimConfig {
    if w.min(h) >= cfg.window {
        *cfg
    } else {
        SsimConfig {
            window: SsimConfig::fitting(w, h).window,
            ..*cfg
        }
    }
}

/// PSNR, SSIM and thermal ℓ1 on the given frames.
pub fn evaluate(
    cloud: &GaussianCloud,
    net: &ModulationNet,
    dataset: &RgbtDataset,
    indices: &[usize],
    render: &RenderConfig,
    ssim_cfg: &SsimConfig,
) -> Result<EvalReport> {
    if indices.is_empty() {
        return Err(Error::Data("no frames to evaluate".into()));
    }
    let mut views = Vec::with_capacity(indices.len());
    // Views are evaluated in order; parallelism lives inside each render.
    for &i in indices {
        let f = dataset.frames.get(i).ok_or(Error::Range {
            index: i,
            len: dataset.frames.len(),
        })?;
        let out = render_frame(cloud, net, &f.camera, render)?;
        let sc = ssim_for(ssim_cfg, f.rgb.width, f.rgb.height);
        views.push(ViewMetrics {
            index: i,
            name: f.name.clone(),
            psnr_rgb: psnr(&out.c_rgb, &f.rgb)?,
            ssim_rgb: ssim(&out.c_rgb, &f.rgb, &sc)?.0,
            psnr_th: psnr(&out.c_thermal, &f.thermal)?,
            ssim_th: ssim(&out.c_thermal, &f.thermal, &sc)?.0,
            l1_th: l1_loss(&out.c_thermal, &f.thermal)?.value,
        });
    }
    let n = views.len() as f64;
    let avg = |g: fn(&ViewMetrics) -> f64| views.iter().map(g).sum::<f64>() / n;
    let mean = ViewMetrics {
        index: usize::MAX,
        name: "mean".into(),
        psnr_rgb: avg(|v| v.psnr_rgb),
        ssim_rgb: avg(|v| v.ssim_rgb),
        psnr_th: avg(|v| v.psnr_th),
        ssim_th: avg(|v| v.ssim_th),
        l1_th: avg(|v| v.l1_th),
    };
    Ok(EvalReport { views, mean })
}

/// Removes Gaussians visible in neither pass:
/// `max(sigmoid(l), sigmoid(l + Δ)) < threshold`. Returns the number removed.
pub fn prune(cloud: &mut GaussianCloud, threshold: f64, state: Option<&mut AdamState>) -> usize {
    let keep: Vec<bool> = (0..cloud.len())
        .map(|i| {
            let l = cloud.opacity_logits[i];
            sigmoid(l).max(sigmoid(l + cloud.thermal_opacity_offsets[i])) >= threshold
        })
        .collect();
    let removed = keep.iter().filter(|k| !**k).count();
    if removed > 0 {
        if let Some(s) = state {
            s.retain_rows(cloud, &keep);
        }
        cloud.retain(&keep);
    }
    removed
}

fn check_dataset(dataset: &RgbtDataset) -> Result<()> {
    dataset.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Data("dataset has no training frames".into()));
    }
    if dataset.test.is_empty() {
        return Err(Error::Data("dataset has no held-out frames".into()));
    }
    Ok(())
}

pub fn train(dataset: &RgbtDataset, cloud: GaussianCloud, net: ModulationNet, cfg: &TrainConfig) -> Result<TrainResult> {
    train_with(dataset, cloud, net, cfg, |_, _, _| Ok(()))
}

/// [`train`] with a callback after every evaluation, receiving the new
/// record and the current parameters.
pub fn train_with(
    dataset: &RgbtDataset,
    mut cloud: GaussianCloud,
    mut net: ModulationNet,
    cfg: &TrainConfig,
    mut on_eval: impl FnMut(&MetricsRecord, &GaussianCloud, &ModulationNet) -> Result<()>,
) -> Result<TrainResult> {
    cfg.validate()?;
    cloud.validate()?;
    net.validate()?;
    let mut result = TrainResult {
        cloud: GaussianCloud::new(0, 0, 1),
        net: net.clone(),
        metrics: Vec::new(),
        loss_history: Vec::with_capacity(cfg.iterations),
    };
    if cfg.iterations == 0 {
        result.cloud = cloud;
        return Ok(result);
    }
    check_dataset(dataset)?;
    if cloud.feature_dim != cfg.feature_dim || net.feature_dim() != cfg.feature_dim {
        return Err(Error::shape(format!(
            "configured d={} but the cloud has d={} and the network d={}",
            cfg.feature_dim,
            cloud.feature_dim,
            net.feature_dim()
        )));
    }
    let weights = cfg.ablation.loss_weights(&cfg.loss);
    let eval_ids: Vec<usize> = match cfg.eval_views {
        Some(k) => dataset.test.iter().copied().take(k.max(1)).collect(),
        None => dataset.test.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut state = AdamState::new(&cloud, &net);
    let start = Instant::now();
    let denom = (cfg.iterations.saturating_sub(1)).max(1) as f64;

    for iter in 1..=cfg.iterations {
        if order.is_empty() {
            order = dataset.train.clone();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let frame = &dataset.frames[order.pop().unwrap()];
        let degree = cfg.sh_degree.min((iter - 1) / cfg.sh_unlock_every).min(cloud.sh_degree);
        let render = render_config(cfg, degree);
        let sc = ssim_for(&cfg.ssim, frame.rgb.width, frame.rgb.height);

        let out = render_frame(&cloud, &net, &frame.camera, &render)?;
        let loss = total_loss(
            &LossInputs {
                c_rgb: &out.c_rgb,
                c_thermal: &out.c_thermal,
                a_f: &out.a_f,
                a_ft: out.a_ft.as_ref(),
                gt_rgb: &frame.rgb,
                gt_thermal: &frame.thermal,
            },
            &weights,
            &sc,
        )?;
        let grads = render_backward(
            &cloud,
            &net,
            &out.trace,
            &Upstream {
                d_c_rgb: Some(&loss.d_c_rgb),
                d_c_thermal: Some(&loss.d_c_thermal),
                d_a_f: Some(&loss.d_a_f),
                d_a_ft: loss.d_a_ft.as_ref(),
            },
        )?;
        drop(out);
        let rates = cfg.lr.at((iter - 1) as f64 / denom);
        adam_step(&mut cloud, &mut net, &grads.cloud, &grads.net, &mut state, &rates)?;
        if cfg.precision == Precision::F32 {
            cloud.quantize_f32();
            net.quantize_f32();
        }
        if cfg.prune_every > 0 && iter % cfg.prune_every == 0 {
            prune(&mut cloud, cfg.prune_threshold, Some(&mut state));
        }
        result.loss_history.push(loss.total);

        if iter % cfg.eval_every == 0 || iter == cfg.iterations {
            let report = evaluate(&cloud, &net, dataset, &eval_ids, &render, &cfg.ssim)?;
            let rec = MetricsRecord {
                iter,
                total: loss.total,
                l_rec_rgb: loss.rec_rgb,
                l_rec_th: loss.rec_thermal,
                l_feat: loss.feature,
                l_smooth: loss.smooth,
                psnr_rgb: report.mean.psnr_rgb,
                psnr_th: report.mean.psnr_th,
                ssim_rgb: report.mean.ssim_rgb,
                ssim_th: report.mean.ssim_th,
                n_gaussians: cloud.len(),
                wall_ms: start.elapsed().as_millis() as u64,
            };
            on_eval(&rec, &cloud, &net)?;
            result.metrics.push(rec);
        }
    }
    result.cloud = cloud;
    result.net = net;
    Ok(result)
}

/// Writes records as newline-delimited JSON.
pub fn metrics_ndjson(records: &[MetricsRecord]) -> Result<String> {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}
