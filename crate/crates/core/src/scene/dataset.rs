//! `transforms.json` datasets: NeRF-style camera-to-world matrices in the
//! OpenGL convention, one RGB and one thermal image per frame.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde_json::{json, Map, Value};

use super::imageio::read_image;
use crate::error::{Error, Result};
use crate::img::Image;
use crate::loss::ironbow_inverse;
use crate::model::Camera;
use crate::par;

/// One calibrated RGB/thermal pair with decoded images.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalFrame {
    pub name: String,
    pub camera: Camera,
    pub rgb_path: PathBuf,
    pub thermal_path: PathBuf,
    /// `H×W×3` in `[0, 1]`.
    pub rgb: Image,
    /// `H×W×1` normalized intensity.
    pub thermal: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RgbtDataset {
    pub name: String,
    pub frames: Vec<MultiModalFrame>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Axis-aligned `[min, max]` scene box, if known.
    pub bounds: Option<[[f64; 3]; 2]>,
}

/// Every 8th frame, starting at 0, is held out.
pub fn split_indices(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 8 != 0)
}

impl RgbtDataset {
    pub fn new(name: impl Into<String>, frames: Vec<MultiModalFrame>, bounds: Option<[[f64; 3]; 2]>) -> Self {
        let (train, test) = split_indices(frames.len());
        Self {
            name: name.into(),
            frames,
            train,
            test,
            bounds,
        }
    }

    /// Checks that every frame carries both modalities at the camera's size.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("dataset has no frames".into()));
        }
        for (i, f) in self.frames.iter().enumerate() {
            let (w, h) = (f.camera.width, f.camera.height);
            if f.rgb.channels != 3 || f.rgb.width != w || f.rgb.height != h {
                return Err(Error::Data(format!(
                    "frame {i}: RGB image is {}x{}x{}, camera expects {h}x{w}x3",
                    f.rgb.height, f.rgb.width, f.rgb.channels
                )));
            }
            if f.thermal.channels != 1 || f.thermal.width != w || f.thermal.height != h {
                return Err(Error::Data(format!(
                    "frame {i}: thermal image is {}x{}x{}, camera expects {h}x{w}x1",
                    f.thermal.height, f.thermal.width, f.thermal.channels
                )));
            }
        }
        let mut seen = vec![false; self.frames.len()];
        for &i in self.train.iter().chain(&self.test) {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data("train/test split is not a partition of the frames".into()));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Data("train/test split does not cover every frame".into()));
        }
        Ok(())
    }
}

/// Converts an OpenGL camera-to-world matrix to a world-to-camera rotation
/// and translation in the OpenCV convention.
pub fn opengl_c2w_to_w2c(m: &Matrix4<f64>, frame: usize) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    let bad = |reason: String| Error::BadMatrix { frame, reason };
    if m.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite entries".into()));
    }
    let last = m.row(3);
    if (last[0].abs() + last[1].abs() + last[2].abs() + (last[3] - 1.0).abs()) > 1e-6 {
        return Err(bad("last row is not [0, 0, 0, 1]".into()));
    }
    let r_gl: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
    let ortho = (r_gl.transpose() * r_gl - Matrix3::identity()).amax();
    if ortho > 1e-4 {
        return Err(bad(format!("rotation block is not orthonormal (error {ortho:.2e})")));
    }
    let det = r_gl.determinant();
    if det < 0.0 {
        return Err(bad(format!("rotation block has determinant {det:.3}")));
    }
    // Snap to the nearest rotation so downstream checks hold at f64 precision.
    let svd = r_gl.svd(true, true);
    let r_gl = svd.u.unwrap() * svd.v_t.unwrap();
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r_c2w = r_gl * flip;
    let center = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
    let rotation = r_c2w.transpose();
    Ok((rotation, -(rotation * center)))
}

/// Inverse of [`opengl_c2w_to_w2c`].
pub fn w2c_to_opengl_c2w(camera: &Camera) -> Matrix4<f64> {
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let r_gl = camera.rotation.transpose() * flip;
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_gl);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&camera.center());
    m
}

fn missing(field: &str, context: impl Into<String>) -> Error {
    Error::MissingField {
        field: field.into(),
        context: context.into(),
    }
}

fn get_f64(obj: &Map<String, Value>, key: &str) -> Option<f64> {
    obj.get(key).and_then(Value::as_f64)
}

#[derive(Clone, Copy, Debug)]
struct Intrinsics {
    fx: Option<f64>,
    fy: Option<f64>,
    cx: Option<f64>,
    cy: Option<f64>,
    angle_x: Option<f64>,
    w: Option<usize>,
    h: Option<usize>,
}

impl Intrinsics {
    fn read(obj: &Map<String, Value>, base: Option<&Intrinsics>) -> Self {
        let pick = |k: &str, b: Option<f64>| get_f64(obj, k).or(b);
        Intrinsics {
            fx: pick("fl_x", base.and_then(|b| b.fx)),
            fy: pick("fl_y", base.and_then(|b| b.fy)),
            cx: pick("cx", base.and_then(|b| b.cx)),
            cy: pick("cy", base.and_then(|b| b.cy)),
            angle_x: pick("camera_angle_x", base.and_then(|b| b.angle_x)),
            w: obj.get("w").and_then(Value::as_u64).map(|v| v as usize).or(base.and_then(|b| b.w)),
            h: obj.get("h").and_then(Value::as_u64).map(|v| v as usize).or(base.and_then(|b| b.h)),
        }
    }
}

struct FrameSpec {
    name: String,
    c2w: Matrix4<f64>,
    rgb_path: PathBuf,
    thermal_path: PathBuf,
    intr: Intrinsics,
}

fn resolve_image(root: &Path, rel: &str, frame: usize) -> Result<PathBuf> {
    let p = root.join(rel);
    if p.is_file() {
        return Ok(p);
    }
    let with_ext = root.join(format!("{rel}.png"));
    if with_ext.is_file() {
        return Ok(with_ext);
    }
    Err(Error::MissingImage { frame, path: p })
}

fn parse_frame(root: &Path, i: usize, v: &Value, base: &Intrinsics) -> Result<FrameSpec> {
    let ctx = format!("frame {i}");
    let obj = v.as_object().ok_or_else(|| Error::format(format!("{ctx} is not an object")))?;
    let rows = obj
        .get("transform_matrix")
        .ok_or_else(|| missing("transform_matrix", ctx.clone()))?
        .as_array()
        .filter(|r| r.len() == 4)
        .ok_or_else(|| Error::BadMatrix {
            frame: i,
            reason: "transform_matrix must be 4x4".into(),
        })?;
    let mut c2w = Matrix4::zeros();
    for (r, row) in rows.iter().enumerate() {
        let row = row.as_array().filter(|c| c.len() == 4).ok_or_else(|| Error::BadMatrix {
            frame: i,
            reason: "transform_matrix must be 4x4".into(),
        })?;
        for (c, x) in row.iter().enumerate() {
            c2w[(r, c)] = x.as_f64().ok_or_else(|| Error::BadMatrix {
                frame: i,
                reason: "non-numeric entry".into(),
            })?;
        }
    }
    let path_of = |key: &str| -> Result<PathBuf> {
        let rel = obj.get(key).and_then(Value::as_str).ok_or_else(|| Error::MissingImage {
            frame: i,
            path: PathBuf::from(format!("<no {key}>")),
        })?;
        resolve_image(root, rel, i)
    };
    let rgb_path = path_of("file_path")?;
    let thermal_path = path_of("thermal_path")?;
    let name = rgb_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| format!("{i:04}"));
    Ok(FrameSpec {
        name,
        c2w,
        rgb_path,
        thermal_path,
        intr: Intrinsics::read(obj, Some(base)),
    })
}

fn build_frame(i: usize, spec: &FrameSpec) -> Result<MultiModalFrame> {
    let mut rgb = read_image(&spec.rgb_path)?;
    if rgb.channels == 1 {
        rgb = Image::concat_channels(&[&rgb, &rgb, &rgb])?;
    }
    let thermal = ironbow_inverse(&read_image(&spec.thermal_path)?)?;
    if (rgb.width, rgb.height) != (thermal.width, thermal.height) {
        return Err(Error::Data(format!(
            "frame {i}: RGB is {}x{} but thermal is {}x{}",
            rgb.height, rgb.width, thermal.height, thermal.width
        )));
    }
    let w = spec.intr.w.unwrap_or(rgb.width);
    let h = spec.intr.h.unwrap_or(rgb.height);
    if (w, h) != (rgb.width, rgb.height) {
        return Err(Error::Data(format!(
            "frame {i}: declared size {h}x{w} but image is {}x{}",
            rgb.height, rgb.width
        )));
    }
    let fx = match (spec.intr.fx, spec.intr.angle_x) {
        (Some(f), _) => f,
        (None, Some(a)) => 0.5 * w as f64 / (0.5 * a).tan(),
        (None, None) => return Err(missing("camera_angle_x or fl_x", format!("frame {i}"))),
    };
    let fy = spec.intr.fy.unwrap_or(fx);
    let (rotation, translation) = opengl_c2w_to_w2c(&spec.c2w, i)?;
    let camera = Camera::new(
        fx,
        fy,
        spec.intr.cx.unwrap_or(w as f64 / 2.0),
        spec.intr.cy.unwrap_or(h as f64 / 2.0),
        rotation,
        translation,
        w,
        h,
    )?;
    Ok(MultiModalFrame {
        name: spec.name.clone(),
        camera,
        rgb_path: spec.rgb_path.clone(),
        thermal_path: spec.thermal_path.clone(),
        rgb,
        thermal,
    })
}

/// Reads `root/transforms.json` and decodes every referenced image.
pub fn load_dataset(root: &Path) -> Result<RgbtDataset> {
    let path = root.join("transforms.json");
    let text = std::fs::read_to_string(&path)?;
    let doc: Value = serde_json::from_str(&text)?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::format("transforms.json must hold an object"))?;
    let base = Intrinsics::read(obj, None);
    let frames = obj
        .get("frames")
        .ok_or_else(|| missing("frames", "transforms.json"))?
        .as_array()
        .ok_or_else(|| Error::format("`frames` must be an array"))?;
    let specs = frames
        .iter()
        .enumerate()
        .map(|(i, v)| parse_frame(root, i, v, &base))
        .collect::<Result<Vec<_>>>()?;
    let indexed: Vec<(usize, &FrameSpec)> = specs.iter().enumerate().collect();
    let frames = par::map(&indexed, |(i, s)| build_frame(*i, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let name = obj
        .get("name")
        .and_then(Value::as_str)
        .map(str::to_string)
        .or_else(|| {
            std::fs::canonicalize(root)
                .ok()
                .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        })
        .unwrap_or_else(|| "scene".into());
    let bounds = obj.get("bounds").and_then(|b| {
        let v: Vec<Vec<f64>> = serde_json::from_value(b.clone()).ok()?;
        (v.len() == 2 && v.iter().all(|r| r.len() == 3))
            .then(|| [[v[0][0], v[0][1], v[0][2]], [v[1][0], v[1][1], v[1][2]]])
    });
    let ds = RgbtDataset::new(name, frames, bounds);
    ds.validate()?;
    Ok(ds)
}

/// `transforms.json` document for `frames`, using paths relative to `root`.
pub fn transforms_json(ds: &RgbtDataset, root: &Path) -> Value {
    let rel = |p: &Path| {
        p.strip_prefix(root)
            .unwrap_or(p)
            .to_string_lossy()
            .replace('\\', "/")
    };
    let frames: Vec<Value> = ds
        .frames
        .iter()
        .map(|f| {
            let m = w2c_to_opengl_c2w(&f.camera);
            let rows: Vec<Vec<f64>> = (0..4).map(|r| (0..4).map(|c| m[(r, c)]).collect()).collect();
            json!({
                "file_path": rel(&f.rgb_path),
                "thermal_path": rel(&f.thermal_path),
                "transform_matrix": rows,
                "fl_x": f.camera.fx,
                "fl_y": f.camera.fy,
                "cx": f.camera.cx,
                "cy": f.camera.cy,
                "w": f.camera.width,
                "h": f.camera.height,
            })
        })
        .collect();
    let mut doc = json!({ "name": ds.name, "frames": frames });
    if let Some(b) = ds.bounds {
        doc["bounds"] = json!(b);
    }
    doc
}
