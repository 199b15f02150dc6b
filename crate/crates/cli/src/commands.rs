use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thermosplat::checkpoint::{checkpoint_load, checkpoint_load_for, checkpoint_save, Checkpoint};
use thermosplat::gradcheck::{run_gradcheck, GradModule, GradcheckConfig};
use thermosplat::loss::ironbow_forward;
use thermosplat::model::Camera;
use thermosplat::net::{ModulationNet, NetConfig};
use thermosplat::pipeline::{render_frame, RenderConfig};
use thermosplat::scene::dataset::opengl_c2w_to_w2c;
use thermosplat::scene::imageio::{write_png, BitDepth};
use thermosplat::scene::{init_cloud, load_dataset, perturb_net, synth_scene, write_synth, InitMode, SynthKind, SynthSpec};
use thermosplat::train::{evaluate, metrics_ndjson, render_config, train_with, EvalReport, TrainConfig};
use thermosplat::Error;

use crate::config::{resolve, InitKind, RunConfig};
use crate::{Ablate, Command, SceneKind, Split, EXIT_CHECK, EXIT_DATA, EXIT_USAGE};

/// Raised when a numeric self-check does not pass.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct CheckFailed(pub String);

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<CheckFailed>().is_some() {
        return EXIT_CHECK;
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Config(_) | Error::Range { .. } | Error::FeatureDimTooSmall(_) => EXIT_USAGE,
                Error::MissingField { .. }
                | Error::MissingImage { .. }
                | Error::BadMatrix { .. }
                | Error::Data(_)
                | Error::Format(_)
                | Error::Image(_)
                | Error::Json(_)
                | Error::Io(_)
                | Error::ImageTooSmall { .. }
                | Error::ImageTooLarge { .. } => EXIT_DATA,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return EXIT_DATA;
        }
    }
    1
}

fn echo(command: &str, config: &Value) {
    println!("{}", json!({ "command": command, "config": config }));
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth {
            out,
            gaussians,
            cameras,
            size,
            seed,
            feature_dim,
            kind,
        } => {
            let spec = SynthSpec {
                n_gaussians: gaussians,
                n_cameras: cameras,
                image_size: size,
                seed,
                feature_dim,
                kind: match kind {
                    SceneKind::Standard => SynthKind::Standard,
                    SceneKind::Decoupling => SynthKind::Decoupling,
                },
            };
            echo("synth", &json!({ "out": out, "spec": spec }));
            if feature_dim < 4 {
                return Err(Error::FeatureDimTooSmall(feature_dim).into());
            }
            let scene = synth_scene(&spec)?;
            let ckpt = write_synth(&scene, &out)?;
            eprintln!("wrote {} frames and {}", scene.dataset.frames.len(), ckpt.display());
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            ablate,
            iterations,
            seed,
            eval_every,
            init_gt,
        } => {
            let mut over = json!({});
            if let Some(v) = iterations {
                over["iterations"] = json!(v);
            }
            if let Some(v) = seed {
                over["seed"] = json!(v);
            }
            if let Some(v) = eval_every {
                over["eval_every"] = json!(v);
            }
            let mut abl = serde_json::Map::new();
            for a in &ablate {
                let key = match a {
                    Ablate::Film => "disable_film",
                    Ablate::Decouple => "disable_decoupling",
                    Ablate::Hybrid => "disable_hybrid",
                    Ablate::FeaRgb => "disable_fea_rgb",
                    Ablate::FeaTh => "disable_fea_th",
                };
                abl.insert(key.into(), json!(true));
            }
            if !abl.is_empty() {
                over["ablation"] = Value::Object(abl);
            }
            if let Some(gt) = &init_gt {
                over["init"] = json!({ "mode": "perturb_gt", "gt": gt });
            }
            let cfg = resolve(config.as_deref(), &over)?;
            let effective = serde_json::to_value(&cfg)?;
            echo("train", &json!({ "data": data, "out": out, "run": effective }));
            cmd_train(&data, &out, &cfg)
        }
        Command::Render {
            ckpt,
            camera_index,
            data,
            pose,
            out,
        } => {
            echo(
                "render",
                &json!({ "ckpt": ckpt, "camera_index": camera_index, "data": data, "pose": pose, "out": out }),
            );
            let ck = checkpoint_load(&ckpt)?;
            let camera = match (camera_index, pose) {
                (Some(i), _) => {
                    let data = data.ok_or_else(|| Error::Config("--camera-index needs --data".into()))?;
                    let ds = load_dataset(&data)?;
                    ds.frames
                        .get(i)
                        .ok_or(Error::Range {
                            index: i,
                            len: ds.frames.len(),
                        })?
                        .camera
                        .clone()
                }
                (None, Some(p)) => camera_from_pose(&p)?,
                (None, None) => return Err(Error::Config("give --camera-index or --pose".into()).into()),
            };
            cmd_render(&ck, &camera, &out)
        }
        Command::Eval { ckpt, data, out, split } => {
            echo(
                "eval",
                &json!({ "ckpt": ckpt, "data": data, "out": out, "split": format!("{split:?}").to_lowercase() }),
            );
            cmd_eval(&ckpt, &data, &out, split)
        }
        Command::Gradcheck {
            seed,
            module,
            inject_sign_flip,
            out,
        } => {
            let mut cfg = GradcheckConfig {
                modules: GradModule::parse_list(&module)?,
                flip_sign: inject_sign_flip,
                ..GradcheckConfig::default()
            };
            if let Some(s) = seed {
                cfg.seeds = vec![s];
            }
            echo("gradcheck", &serde_json::to_value(&cfg)?);
            cmd_gradcheck(&cfg, out.as_deref())
        }
    }
}

/// Render settings recorded in a checkpoint's configuration echo.
pub fn render_settings(ck: &Checkpoint) -> RenderConfig {
    let cfg: TrainConfig = serde_json::from_value(ck.config.clone()).unwrap_or_default();
    render_config(&cfg, ck.cloud.sh_degree)
}

fn cmd_train(data: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let ds = load_dataset(data)?;
    let t = &cfg.train;
    let (cloud, net) = match cfg.init.mode {
        InitKind::PerturbGt => {
            let path = cfg
                .init
                .gt
                .as_ref()
                .ok_or_else(|| Error::Config("init.gt is required for perturb_gt".into()))?;
            let gt = checkpoint_load_for(path, t.feature_dim)?;
            let cloud = init_cloud(
                &InitMode::PerturbGt {
                    gt: &gt.cloud,
                    sigma: cfg.init.sigma,
                },
                gt.cloud.len().max(1),
                gt.cloud.sh_degree,
                t.feature_dim,
                t.seed,
            )?;
            (cloud, perturb_net(&gt.net, cfg.init.sigma, t.seed.wrapping_add(1))?)
        }
        kind => {
            let mode = match kind {
                InitKind::FromPoints => InitMode::FromPoints(
                    cfg.init
                        .points
                        .as_deref()
                        .ok_or_else(|| Error::Config("init.points is required for from_points".into()))?,
                ),
                _ => {
                    let [min, max] = ds.bounds.unwrap_or([cfg.init.box_min, cfg.init.box_max]);
                    InitMode::RandomBox { min, max }
                }
            };
            let cloud = init_cloud(&mode, cfg.init.gaussians, t.sh_degree, t.feature_dim, t.seed)?;
            let net = ModulationNet::new(
                &NetConfig::with_feature_dim(t.feature_dim),
                &mut ChaCha8Rng::seed_from_u64(t.seed.wrapping_add(1)),
            )?;
            (cloud, net)
        }
    };
    fs::create_dir_all(out)?;
    let echo = serde_json::to_value(cfg)?;
    fs::write(out.join("effective_config.json"), serde_json::to_string_pretty(&echo)?)?;
    let metrics_path = out.join("metrics.ndjson");
    fs::write(&metrics_path, "")?;
    let ckpt_path = out.join("checkpoint.ply");
    let result = train_with(&ds, cloud, net, t, |rec, cloud, net| {
        let mut f = OpenOptions::new().append(true).open(&metrics_path)?;
        f.write_all(metrics_ndjson(std::slice::from_ref(rec))?.as_bytes())?;
        checkpoint_save(&ckpt_path, cloud, net, &echo)?;
        eprintln!(
            "iter {:>6}  loss {:.5}  psnr rgb {:.2} th {:.2}",
            rec.iter, rec.total, rec.psnr_rgb, rec.psnr_th
        );
        Ok(())
    })?;
    checkpoint_save(&out.join("final.ply"), &result.cloud, &result.net, &echo)?;
    let render = render_config(t, t.sh_degree.min(result.cloud.sh_degree));
    let report = evaluate(&result.cloud, &result.net, &ds, &ds.test, &render, &t.ssim)?;
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&eval_json(&ds.name, &report))?)?;
    Ok(())
}

pub fn camera_from_pose(arg: &str) -> Result<Camera> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).with_context(|| format!("reading pose file {arg}"))?
    };
    let v: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let field = |k: &str| {
        v.get(k).ok_or_else(|| Error::MissingField {
            field: k.into(),
            context: "pose".into(),
        })
    };
    let rows: Vec<Vec<f64>> = serde_json::from_value(field("transform_matrix")?.clone()).map_err(Error::from)?;
    if rows.len() != 4 || rows.iter().any(|r| r.len() != 4) {
        return Err(Error::BadMatrix {
            frame: 0,
            reason: "transform_matrix must be 4x4".into(),
        }
        .into());
    }
    let m = nalgebra::Matrix4::from_fn(|r, c| rows[r][c]);
    let (rotation, translation) = opengl_c2w_to_w2c(&m, 0)?;
    let dim = |k: &str| -> Result<usize> {
        field(k)?
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| Error::Config(format!("pose `{k}` must be a positive integer")).into())
    };
    let (w, h) = (dim("w")?, dim("h")?);
    let fx = match (v.get("fl_x").and_then(Value::as_f64), v.get("camera_angle_x").and_then(Value::as_f64)) {
        (Some(f), _) => f,
        (None, Some(a)) => 0.5 * w as f64 / (0.5 * a).tan(),
        _ => {
            return Err(Error::MissingField {
                field: "fl_x or camera_angle_x".into(),
                context: "pose".into(),
            }
            .into())
        }
    };
    let get = |k: &str, d: f64| v.get(k).and_then(Value::as_f64).unwrap_or(d);
    Ok(Camera::new(
        fx,
        get("fl_y", fx),
        get("cx", w as f64 / 2.0),
        get("cy", h as f64 / 2.0),
        rotation,
        translation,
        w,
        h,
    )?)
}

fn cmd_render(ck: &Checkpoint, camera: &Camera, out: &Path) -> Result<()> {
    let out_cfg = render_settings(ck);
    let r = render_frame(&ck.cloud, &ck.net, camera, &out_cfg)?;
    fs::create_dir_all(out)?;
    write_png(&out.join("C_rgb.png"), &r.c_rgb, BitDepth::Sixteen)?;
    write_png(&out.join("C_thermal.png"), &r.c_thermal, BitDepth::Sixteen)?;
    write_png(&out.join("C_thermal_ironbow.png"), &ironbow_forward(&r.c_thermal)?, BitDepth::Eight)?;
    Ok(())
}

fn eval_json(scene: &str, report: &EvalReport) -> Value {
    let block = |psnr: fn(&thermosplat::train::ViewMetrics) -> f64, ssim: fn(&thermosplat::train::ViewMetrics) -> f64| {
        json!({
            "psnr": psnr(&report.mean),
            "ssim": ssim(&report.mean),
            "views": report.views.iter().map(|v| json!({"view": v.name, "psnr": psnr(v), "ssim": ssim(v)})).collect::<Vec<_>>(),
        })
    };
    json!({
        "scene": scene,
        "rgb": block(|v| v.psnr_rgb, |v| v.ssim_rgb),
        "thermal": block(|v| v.psnr_th, |v| v.ssim_th),
    })
}

pub const EVAL_CSV_HEADER: &str = "scene,view,rgb_psnr,rgb_ssim,thermal_psnr,thermal_ssim";

fn eval_csv(scene: &str, report: &EvalReport) -> String {
    let mut s = format!("{EVAL_CSV_HEADER}\n");
    for v in report.views.iter().chain(std::iter::once(&report.mean)) {
        s.push_str(&format!(
            "{scene},{},{},{},{},{}\n",
            v.name, v.psnr_rgb, v.ssim_rgb, v.psnr_th, v.ssim_th
        ));
    }
    s
}

fn cmd_eval(ckpt: &Path, data: &Path, out: &Path, split: Split) -> Result<()> {
    let ck = checkpoint_load(ckpt)?;
    let ds = load_dataset(data)?;
    let ids: Vec<usize> = match split {
        Split::Test => ds.test.clone(),
        Split::Train => ds.train.clone(),
        Split::All => (0..ds.frames.len()).collect(),
    };
    let cfg: TrainConfig = serde_json::from_value(ck.config.clone()).unwrap_or_default();
    let report = evaluate(&ck.cloud, &ck.net, &ds, &ids, &render_settings(&ck), &cfg.ssim)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let csv_path: PathBuf = out.with_extension("csv");
    let json_path: PathBuf = out.with_extension("json");
    fs::write(&csv_path, eval_csv(&ds.name, &report))?;
    fs::write(&json_path, serde_json::to_string_pretty(&eval_json(&ds.name, &report))?)?;
    eprintln!(
        "{}: rgb {:.2} dB / {:.4}, thermal {:.2} dB / {:.4}",
        ds.name, report.mean.psnr_rgb, report.mean.ssim_rgb, report.mean.psnr_th, report.mean.ssim_th
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &GradcheckConfig, out: Option<&Path>) -> Result<()> {
    let report = run_gradcheck(cfg)?;
    if let Some(name) = &cfg.flip_sign {
        if !report.classes.iter().any(|c| &c.class == name) {
            return Err(Error::Config(format!("no parameter class `{name}` in the selected modules")).into());
        }
    }
    for c in &report.classes {
        println!(
            "{:<9} {:<26} seed {:<3} rel_err {:.3e}  ({} compared, {} excluded)  {}",
            c.module.name(),
            c.class,
            c.seed,
            c.rel_err,
            c.compared,
            c.excluded,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if report.passed() {
        Ok(())
    } else {
        let bad: Vec<String> = report
            .classes
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}/{} (seed {}, rel_err {:.3e})", c.module.name(), c.class, c.seed, c.rel_err))
            .collect();
        Err(CheckFailed(format!("gradient check failed for {}", bad.join(", "))).into())
    }
}
