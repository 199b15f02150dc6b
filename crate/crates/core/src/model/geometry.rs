//! Covariance construction, EWA projection, and their reverse-mode maps.
//!
//! Matrix gradients are "full" gradients: entry `(i, j)` holds `∂L/∂M_ij`
//! with every entry treated as independent. The 2D covariance is exposed as
//! the symmetric triple `(xx, xy, yy)`, where `xy` drives both off-diagonal
//! entries.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::Camera;

/// Screen-space low-pass floor added to the projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;

/// Half-extent of a splat's support in standard deviations. Beyond
/// `sqrt(2 ln 255) ≈ 3.329` the Gaussian falls below the 1/255 blending
/// threshold for any opacity ≤ 1, so nothing outside the box is ever blended.
pub const EXTENT_SIGMAS: f64 = 3.33;

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    rotation_unit(w, x, y, z)
}

fn rotation_unit(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `∂L/∂q` for the raw (unnormalized) quaternion given `∂L/∂R`.
fn rotation_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|v| v / n);
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    // Normalization: q̂ = q / |q|.
    let gh = [gw, gx, gy, gz];
    let qh = [w, x, y, z];
    let dot: f64 = gh.iter().zip(&qh).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|k| (gh[k] - qh[k] * dot) / n)
}

/// `Σ = R S Sᵀ Rᵀ` with `S = diag(exp(log_scale))`.
pub fn covariance_from_params(log_scale: &Vector3<f64>, rotation: [f64; 4]) -> Matrix3<f64> {
    let r = quat_to_rotation(rotation);
    let m = r * Matrix3::from_diagonal(&log_scale.map(f64::exp));
    m * m.transpose()
}

/// Pulls `∂L/∂Σ` back to `(∂L/∂log_scale, ∂L/∂q)`.
pub fn covariance_backward(
    log_scale: &Vector3<f64>,
    rotation: [f64; 4],
    d_sigma: &Matrix3<f64>,
) -> (Vector3<f64>, [f64; 4]) {
    let r = quat_to_rotation(rotation);
    let s = log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&s);
    let d_m = (d_sigma + d_sigma.transpose()) * m;
    let d_r = d_m * Matrix3::from_diagonal(&s);
    let d_log_scale = Vector3::from_fn(|k, _| {
        let ds: f64 = (0..3).map(|i| d_m[(i, k)] * r[(i, k)]).sum();
        ds * s[k]
    });
    (d_log_scale, rotation_backward(rotation, &d_r))
}

/// A Gaussian after projection to the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected2DGaussian {
    pub mean2d: [f64; 2],
    /// Symmetric covariance `(xx, xy, yy)` in px², including the low-pass floor.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same layout.
    pub conic: [f64; 3],
    pub depth: f64,
}

impl Projected2DGaussian {
    pub fn from_mean_cov(mean2d: [f64; 2], cov2d: [f64; 3], depth: f64) -> Self {
        Self {
            mean2d,
            cov2d,
            conic: conic_of(cov2d),
            depth,
        }
    }

    /// Half-widths of the axis-aligned support box.
    pub fn extent(&self) -> [f64; 2] {
        [
            EXTENT_SIGMAS * self.cov2d[0].sqrt(),
            EXTENT_SIGMAS * self.cov2d[2].sqrt(),
        ]
    }
}

pub(crate) fn conic_of(cov: [f64; 3]) -> [f64; 3] {
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    [cov[2] / det, -cov[1] / det, cov[0] / det]
}

fn jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(
        cam.fx * iz,
        0.0,
        -cam.fx * t.x * iz * iz,
        0.0,
        cam.fy * iz,
        -cam.fy * t.y * iz * iz,
    )
}

/// Projects a world-space Gaussian. Returns `None` when the camera-space
/// depth is outside `[near, far]` or the support box misses the image
/// rectangle grown by `margin` pixels on every side.
pub fn project_gaussian(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    cam: &Camera,
    margin: f64,
) -> Option<Projected2DGaussian> {
    let t = cam.to_camera(mu);
    if !(t.z >= cam.near && t.z <= cam.far) {
        return None;
    }
    let mean2d = [
        cam.fx * t.x / t.z + cam.cx,
        cam.fy * t.y / t.z + cam.cy,
    ];
    let j = jacobian(cam, &t);
    let w = &cam.rotation;
    let c = j * (w * sigma * w.transpose()) * j.transpose();
    let cov2d = [c[(0, 0)] + LOW_PASS, 0.5 * (c[(0, 1)] + c[(1, 0)]), c[(1, 1)] + LOW_PASS];
    let p = Projected2DGaussian::from_mean_cov(mean2d, cov2d, t.z);
    let [rx, ry] = p.extent();
    let (wd, ht) = (cam.width as f64, cam.height as f64);
    if mean2d[0] + rx < -margin
        || mean2d[0] - rx > wd + margin
        || mean2d[1] + ry < -margin
        || mean2d[1] - ry > ht + margin
    {
        return None;
    }
    Some(p)
}

/// Reverse of [`project_gaussian`] for a non-culled Gaussian: maps
/// `∂L/∂mean2d` and `∂L/∂cov2d` (symmetric triple) to `(∂L/∂μ, ∂L/∂Σ)`.
pub fn project_backward(
    mu: &Vector3<f64>,
    sigma: &Matrix3<f64>,
    cam: &Camera,
    d_mean2d: [f64; 2],
    d_cov2d: [f64; 3],
) -> (Vector3<f64>, Matrix3<f64>) {
    let t = cam.to_camera(mu);
    let w = &cam.rotation;
    let j = jacobian(cam, &t);
    let v = w * sigma * w.transpose();
    let g = Matrix2::new(d_cov2d[0], 0.5 * d_cov2d[1], 0.5 * d_cov2d[1], d_cov2d[2]);
    let d_v = j.transpose() * g * j;
    let d_sigma = w.transpose() * d_v * w;
    let d_j = 2.0 * g * j * v;

    let (fx, fy) = (cam.fx, cam.fy);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let dtx = d_j[(0, 2)] * (-fx * iz2) + d_mean2d[0] * fx * iz;
    let dty = d_j[(1, 2)] * (-fy * iz2) + d_mean2d[1] * fy * iz;
    let dtz = d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * t.x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * t.y * iz3)
        - d_mean2d[0] * fx * t.x * iz2
        - d_mean2d[1] * fy * t.y * iz2;
    let d_mu = w.transpose() * Vector3::new(dtx, dty, dtz);
    (d_mu, d_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn z_rot(deg: f64) -> [f64; 4] {
        let h = deg.to_radians() / 2.0;
        [h.cos(), 0.0, 0.0, h.sin()]
    }

    #[test]
    fn covariance_examples() {
        let id = [1.0, 0.0, 0.0, 0.0];
        let s = covariance_from_params(&Vector3::zeros(), id);
        assert!((s - Matrix3::identity()).amax() < 1e-15);
        let ln2 = 2f64.ln();
        let s = covariance_from_params(&Vector3::new(ln2, 0.0, 0.0), id);
        assert!((s - Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0))).amax() < 1e-12);
        // Rz(90°) maps x to y, so the long axis moves to y.
        let s = covariance_from_params(&Vector3::new(ln2, 0.0, 0.0), z_rot(90.0));
        assert!((s - Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0))).amax() < 1e-12);
    }

    #[test]
    fn rotation_matches_nalgebra() {
        let q = [0.3, -0.5, 0.2, 0.7];
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        assert!((quat_to_rotation(q) - uq.to_rotation_matrix().into_inner()).amax() < 1e-14);
    }

    fn test_camera() -> Camera {
        Camera::new(100.0, 100.0, 32.0, 32.0, Matrix3::identity(), Vector3::zeros(), 64, 64).unwrap()
    }

    #[test]
    fn on_axis_projection() {
        let cam = test_camera();
        let p = project_gaussian(&Vector3::new(0.0, 0.0, 2.0), &(0.01 * Matrix3::identity()), &cam, 16.0)
            .unwrap();
        assert_eq!(p.mean2d, [32.0, 32.0]);
        assert_eq!(p.depth, 2.0);

        // At z = 1 the Jacobian is diag(f, f), so cov2d = f²σ² I + λ I.
        let f = 100.0;
        let sigma2 = 1e-4;
        let p = project_gaussian(&Vector3::new(0.0, 0.0, 1.0), &(sigma2 * Matrix3::identity()), &cam, 16.0)
            .unwrap();
        let want = f * f * sigma2 + LOW_PASS;
        assert!((p.cov2d[0] - want).abs() < 1e-12);
        assert!((p.cov2d[2] - want).abs() < 1e-12);
        assert!(p.cov2d[1].abs() < 1e-15);
    }

    #[test]
    fn culling() {
        let cam = test_camera().with_clip(0.5, 10.0).unwrap();
        let s = 0.01 * Matrix3::identity();
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 0.2), &s, &cam, 16.0).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, -1.0), &s, &cam, 16.0).is_none());
        assert!(project_gaussian(&Vector3::new(0.0, 0.0, 11.0), &s, &cam, 16.0).is_none());
        // Far to the right of the image.
        assert!(project_gaussian(&Vector3::new(5.0, 0.0, 2.0), &s, &cam, 16.0).is_none());
        assert!(project_gaussian(&Vector3::new(0.2, 0.0, 2.0), &s, &cam, 16.0).is_some());
    }

    #[test]
    fn conic_inverts_covariance() {
        let p = Projected2DGaussian::from_mean_cov([0.0, 0.0], [3.0, 0.7, 1.5], 1.0);
        let cov = Matrix2::new(3.0, 0.7, 0.7, 1.5);
        let con = Matrix2::new(p.conic[0], p.conic[1], p.conic[1], p.conic[2]);
        assert!((cov * con - Matrix2::identity()).amax() < 1e-12);
    }

    fn random_quat(rng: &mut impl Rng) -> [f64; 4] {
        [0; 4].map(|_| rng.random_range(-1.0..1.0))
    }

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn covariance_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let ls = Vector3::from_fn(|_, _| rng.random_range(-1.0..0.5));
            let q = random_quat(&mut rng);
            let up = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let loss = |ls: &Vector3<f64>, q: [f64; 4]| {
                covariance_from_params(ls, q).component_mul(&up).sum()
            };
            let (dls, dq) = covariance_backward(&ls, q, &up);
            for k in 0..3 {
                let n = central(
                    |v| {
                        let mut l = ls;
                        l[k] = v;
                        loss(&l, q)
                    },
                    ls[k],
                    1e-4,
                );
                assert!(rel_err(dls[k], n) < 1e-5, "log_scale {k}: {} vs {n}", dls[k]);
            }
            for k in 0..4 {
                let n = central(
                    |v| {
                        let mut qq = q;
                        qq[k] = v;
                        loss(&ls, qq)
                    },
                    q[k],
                    1e-4,
                );
                assert!(rel_err(dq[k], n) < 1e-5, "quat {k}: {} vs {n}", dq[k]);
            }
        }
    }

    #[test]
    fn projection_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cam = Camera::look_at(
            Vector3::new(2.5, -1.0, 1.0),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            60.0,
            48,
            40,
        )
        .unwrap();
        for _ in 0..20 {
            let mu = Vector3::from_fn(|_, _| rng.random_range(-0.4..0.4));
            let ls = Vector3::from_fn(|_, _| rng.random_range(-3.0..-1.5));
            let sigma = covariance_from_params(&ls, random_quat(&mut rng));
            let gm = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let gc = [0; 3].map(|_| rng.random_range(-1.0..1.0));
            let loss = |mu: &Vector3<f64>, s: &Matrix3<f64>| {
                let p = project_gaussian(mu, s, &cam, 1e9).unwrap();
                gm[0] * p.mean2d[0] + gm[1] * p.mean2d[1]
                    + gc[0] * p.cov2d[0]
                    + gc[1] * p.cov2d[1]
                    + gc[2] * p.cov2d[2]
            };
            let (dmu, dsig) = project_backward(&mu, &sigma, &cam, gm, gc);
            for k in 0..3 {
                let n = central(
                    |v| {
                        let mut m = mu;
                        m[k] = v;
                        loss(&m, &sigma)
                    },
                    mu[k],
                    1e-5,
                );
                assert!(rel_err(dmu[k], n) < 1e-5, "mu {k}: {} vs {n}", dmu[k]);
            }
            // Σ is symmetric, so perturb (i,j) and (j,i) together and compare
            // against the summed full gradient.
            for i in 0..3 {
                for j in i..3 {
                    let n = central(
                        |v| {
                            let mut s = sigma;
                            let d = v - sigma[(i, j)];
                            s[(i, j)] += d;
                            if i != j {
                                s[(j, i)] += d;
                            }
                            loss(&mu, &s)
                        },
                        sigma[(i, j)],
                        1e-6,
                    );
                    let a = if i == j { dsig[(i, i)] } else { dsig[(i, j)] + dsig[(j, i)] };
                    assert!(rel_err(a, n) < 1e-5, "sigma ({i},{j}): {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn projection_is_rotation_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = Camera::look_at(
            Vector3::new(0.3, -2.0, 0.8),
            Vector3::zeros(),
            Vector3::new(0.0, 0.0, 1.0),
            80.0,
            64,
            64,
        )
        .unwrap();
        for _ in 0..20 {
            let mu = Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let sigma = covariance_from_params(
                &Vector3::from_fn(|_, _| rng.random_range(-3.0..-1.0)),
                random_quat(&mut rng),
            );
            let q = UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            );
            let qm = q.to_rotation_matrix().into_inner();
            let mut cam2 = cam.clone();
            cam2.rotation = cam.rotation * qm.transpose();
            let a = project_gaussian(&mu, &sigma, &cam, 16.0).unwrap();
            let b = project_gaussian(&(qm * mu), &(qm * sigma * qm.transpose()), &cam2, 16.0).unwrap();
            for k in 0..2 {
                assert!((a.mean2d[k] - b.mean2d[k]).abs() < 1e-9);
            }
            for k in 0..3 {
                assert!((a.cov2d[k] - b.cov2d[k]).abs() < 1e-9);
                assert!((a.conic[k] - b.conic[k]).abs() < 1e-9);
            }
            assert!((a.depth - b.depth).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd(
            ls in proptest::array::uniform3(-4.0f64..2.0),
            q in proptest::array::uniform4(-1.0f64..1.0),
        ) {
            prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-6);
            let s = covariance_from_params(&Vector3::from(ls), q);
            prop_assert!((s - s.transpose()).amax() <= 1e-12 * s.amax().max(1.0));
            let eig = s.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
        }
    }
}
