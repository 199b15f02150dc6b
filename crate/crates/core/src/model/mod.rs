//! Learnable scene representation and per-Gaussian geometry and appearance.

mod camera;
mod cloud;
mod geometry;
pub mod sh;

pub use camera::Camera;
pub use cloud::{CloudParam, GaussianCloud};
pub(crate) use cloud::retain_rows;
pub use geometry::{
    covariance_backward, covariance_from_params, project_backward, project_gaussian,
    quat_to_rotation, Projected2DGaussian, EXTENT_SIGMAS, LOW_PASS,
};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Opacity used by the thermal pass: the offset is added in logit space, and
/// since opacities are stored as logits the base logit is used directly.
#[inline]
pub fn thermal_opacity(opacity_logit: f64, thermal_offset: f64) -> f64 {
    sigmoid(opacity_logit + thermal_offset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn thermal_opacity_examples() {
        assert_eq!(thermal_opacity(0.7, 0.0), sigmoid(0.7));
        assert_eq!(thermal_opacity(0.0, 0.0), 0.5);
        // 1 / (1 + e^-4)
        let expected = 1.0 / (1.0 + (-4.0f64).exp());
        assert!((thermal_opacity(0.0, 4.0) - expected).abs() < 1e-15);
        assert!((thermal_opacity(0.0, 4.0) - 0.9820).abs() < 5e-5);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((logit(sigmoid(1.25)) - 1.25).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn zero_offset_is_identity(l in -30.0f64..30.0) {
            prop_assert_eq!(thermal_opacity(l, 0.0), sigmoid(l));
        }

        #[test]
        fn monotone_in_offset(l in -10.0f64..10.0, d in -10.0f64..10.0, step in 1e-3f64..1.0) {
            prop_assert!(thermal_opacity(l, d + step) > thermal_opacity(l, d));
        }
    }
}
