use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, lo: f64, hi: f64) -> Image {
    Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let num: f64 = fd.iter().zip(an).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = fd.iter().map(|a| a * a).sum::<f64>().max(an.iter().map(|a| a * a).sum());
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

fn fd_grad(x: &Image, f: impl Fn(&Image) -> f64) -> Vec<f64> {
    let h = 1e-6;
    (0..x.data.len())
        .map(|i| {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data[i] += h;
            m.data[i] -= h;
            (f(&p) - f(&m)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn l1_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_image(&mut rng, 5, 4, 3, 0.0, 1.0);
    assert_eq!(l1_loss(&a, &a).unwrap().value, 0.0);
    assert!(l1_loss(&a, &a).unwrap().grad.data.iter().all(|&g| g == 0.0));
    let shifted = a.map(|v| v + 0.1);
    assert!((l1_loss(&shifted, &a).unwrap().value - 0.1).abs() < 1e-12);
    let b = rand_image(&mut rng, 5, 4, 3, 0.0, 1.0);
    let l = l1_loss(&a, &b).unwrap();
    let want: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 60.0;
    assert!((l.value - want).abs() < 1e-15);
    for i in 0..60 {
        assert_eq!(l.grad.data[i], (a.data[i] - b.data[i]).signum() / 60.0);
    }
    assert!(matches!(l1_loss(&a, &Image::zeros(5, 4, 1)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn rec_loss_examples() {
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_image(&mut rng, 16, 16, 3, 0.0, 1.0);
    let b = rand_image(&mut rng, 16, 16, 3, 0.0, 1.0);
    assert!(rec_loss(&a, &a, 0.2, &cfg).unwrap().value.abs() < 1e-12);
    let l1 = l1_loss(&a, &b).unwrap();
    let r0 = rec_loss(&a, &b, 0.0, &cfg).unwrap();
    assert_eq!(r0.value, l1.value);
    assert_eq!(r0.grad.data, l1.grad.data);
    let r = rec_loss(&a, &b, 0.2, &cfg).unwrap();
    let s = ssim(&a, &b, &cfg).unwrap().0;
    assert!((r.value - (0.8 * l1.value + 0.2 * (1.0 - s))).abs() < 1e-14);
    assert!(r.value >= 0.0);
    let fd = fd_grad(&a, |x| rec_loss(x, &b, 0.2, &cfg).unwrap().value);
    assert!(rel_err(&fd, &r.grad.data) < 1e-4);
}

#[test]
fn smooth_examples() {
    assert_eq!(smooth_loss(&Image::filled(6, 5, 1, 0.3)).value, 0.0);
    let (w, h) = (7, 5);
    let mut step = Image::zeros(w, h, 1);
    for y in 0..h {
        for x in 3..w {
            step.set(x, y, 0, 1.0);
        }
    }
    // No vertical variation, so the whole loss is the x-term.
    let v = smooth_loss(&step).value;
    assert!((v - (h as f64) / ((h * (w - 1)) as f64)).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = rand_image(&mut rng, 16, 16, 1, 0.0, 1.0);
    let fd = fd_grad(&c, |x| smooth_loss(x).value);
    assert!(rel_err(&fd, &smooth_loss(&c).grad.data) < 1e-6);
    assert_eq!(smooth_loss(&Image::filled(1, 1, 1, 0.5)).value, 0.0);
}

#[test]
fn psnr_examples() {
    let a = Image::filled(4, 4, 3, 0.5);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    let b = a.map(|v| v + 0.1);
    assert!((psnr(&b, &a).unwrap() - 20.0).abs() < 1e-9);
    let mut c = Image::zeros(10, 10, 1);
    // MSE = 0.01 via one pixel of error 1.0 in 100.
    c.data[17] = 1.0;
    assert!((psnr(&c, &Image::zeros(10, 10, 1)).unwrap() - 20.0).abs() < 1e-9);
}

struct Scene {
    c_rgb: Image,
    c_th: Image,
    a_f: Image,
    a_ft: Image,
    gt_rgb: Image,
    gt_th: Image,
}

fn scene(seed: u64, n: usize, d: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Scene {
        c_rgb: rand_image(&mut rng, n, n, 3, 0.0, 1.0),
        c_th: rand_image(&mut rng, n, n, 1, 0.0, 1.0),
        // Some feature values outside [0,1] to hit the clamp.
        a_f: rand_image(&mut rng, n, n, d, -0.2, 1.2),
        a_ft: rand_image(&mut rng, n, n, d, -0.2, 1.2),
        gt_rgb: rand_image(&mut rng, n, n, 3, 0.0, 1.0),
        gt_th: rand_image(&mut rng, n, n, 1, 0.0, 1.0),
    }
}

impl Scene {
    fn inputs(&self, shared: bool) -> LossInputs<'_> {
        LossInputs {
            c_rgb: &self.c_rgb,
            c_thermal: &self.c_th,
            a_f: &self.a_f,
            a_ft: (!shared).then_some(&self.a_ft),
            gt_rgb: &self.gt_rgb,
            gt_thermal: &self.gt_th,
        }
    }
}

#[test]
fn feature_loss_examples() {
    let cfg = SsimConfig::default();
    let w = LossWeights::default();
    let s = scene(4, 16, 8);
    // Perfect features.
    let mut a_f = s.a_f.clone();
    let mut a_ft = s.a_ft.clone();
    for p in 0..a_f.pixel_count() {
        a_f.pixel_mut(p)[..3].copy_from_slice(s.gt_rgb.pixel(p));
        a_ft.pixel_mut(p)[3] = s.gt_th.data[p];
    }
    let f = feature_rec_loss(&a_f, &a_ft, &s.gt_rgb, &s.gt_th, &w, &cfg).unwrap();
    assert!(f.value.abs() < 1e-12);

    let no_th = LossWeights { eta: 0.0, ..w };
    let f = feature_rec_loss(&s.a_f, &s.a_ft, &s.gt_rgb, &s.gt_th, &no_th, &cfg).unwrap();
    assert_eq!(f.thermal_term, 0.0);
    assert!(f.d_a_ft.data.iter().all(|&v| v == 0.0));

    // Compositional oracle.
    let f = feature_rec_loss(&s.a_f, &s.a_ft, &s.gt_rgb, &s.gt_th, &w, &cfg).unwrap();
    let clamped = s.a_f.channels(0..3).map(|v| v.clamp(0.0, 1.0));
    let want = rec_loss(&clamped, &s.gt_rgb, 0.2, &cfg).unwrap().value
        + 0.5 * rec_loss(&s.a_ft.channels(3..4), &s.gt_th, 0.2, &cfg).unwrap().value;
    assert!((f.value - want).abs() < 1e-14);
    for p in 0..s.a_f.pixel_count() {
        assert!(f.d_a_f.pixel(p)[3..].iter().all(|&v| v == 0.0));
        assert!(f.d_a_ft.pixel(p)[..3].iter().all(|&v| v == 0.0));
        assert!(f.d_a_ft.pixel(p)[4..].iter().all(|&v| v == 0.0));
        for k in 0..3 {
            if !(0.0..=1.0).contains(&s.a_f.pixel(p)[k]) {
                assert_eq!(f.d_a_f.pixel(p)[k], 0.0);
            }
        }
    }
    let small = Image::zeros(16, 16, 3);
    assert!(matches!(
        feature_rec_loss(&small, &small, &s.gt_rgb, &s.gt_th, &w, &cfg),
        Err(Error::FeatureDimTooSmall(3))
    ));
}

#[test]
fn total_loss_examples() {
    let cfg = SsimConfig::default();
    let w = LossWeights::default();
    let s = scene(5, 16, 8);
    let t = total_loss(&s.inputs(false), &w, &cfg).unwrap();
    let want = rec_loss(&s.c_rgb, &s.gt_rgb, 0.2, &cfg).unwrap().value
        + rec_loss(&s.c_th, &s.gt_th, 0.2, &cfg).unwrap().value
        + feature_rec_loss(&s.a_f, &s.a_ft, &s.gt_rgb, &s.gt_th, &w, &cfg).unwrap().value
        + 0.3 * smooth_loss(&s.c_th).value;
    assert!((t.total - want).abs() < 1e-13);

    let bare = LossWeights { lambda_rf: 0.0, lambda_sm: 0.0, ..w };
    let t = total_loss(&s.inputs(false), &bare, &cfg).unwrap();
    assert_eq!(t.total, t.rec_rgb + t.rec_thermal);
    assert!(t.d_a_f.data.iter().all(|&v| v == 0.0));

    // Perfect reconstruction with constant thermal.
    let gt_th = Image::filled(16, 16, 1, 0.4);
    let mut a_f = s.a_f.clone();
    for p in 0..a_f.pixel_count() {
        a_f.pixel_mut(p)[..3].copy_from_slice(s.gt_rgb.pixel(p));
        a_f.pixel_mut(p)[3] = 0.4;
    }
    let inp = LossInputs {
        c_rgb: &s.gt_rgb,
        c_thermal: &gt_th,
        a_f: &a_f,
        a_ft: None,
        gt_rgb: &s.gt_rgb,
        gt_thermal: &gt_th,
    };
    assert!(total_loss(&inp, &w, &cfg).unwrap().total.abs() < 1e-12);
}

#[test]
fn total_loss_gradients_match_fd() {
    let cfg = SsimConfig::default();
    let w = LossWeights::default();
    for shared in [false, true] {
        let s = scene(6, 16, 5);
        let t = total_loss(&s.inputs(shared), &w, &cfg).unwrap();
        let eval = |s: &Scene| total_loss(&s.inputs(shared), &w, &cfg).unwrap().total;
        macro_rules! check {
            ($field:ident, $grad:expr) => {{
                let fd = fd_grad(&s.$field, |x| {
                    let mut c = Scene { $field: x.clone(), ..scene(6, 16, 5) };
                    if stringify!($field) != "a_f" {
                        c.a_f = s.a_f.clone();
                    }
                    eval(&c)
                });
                let err = rel_err(&fd, &$grad.data);
                assert!(err < 1e-4, "{} rel err {err}", stringify!($field));
            }};
        }
        check!(c_rgb, t.d_c_rgb);
        check!(c_th, t.d_c_thermal);
        check!(a_f, t.d_a_f);
        if !shared {
            check!(a_ft, t.d_a_ft.as_ref().unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn zeroing_a_weight_removes_its_term(seed in 0u64..500, which in 0usize..2) {
        let cfg = SsimConfig { window: 7, ..SsimConfig::default() };
        let s = scene(seed, 12, 6);
        let full = LossWeights::default();
        let cut = if which == 0 {
            LossWeights { lambda_rf: 0.0, ..full }
        } else {
            LossWeights { lambda_sm: 0.0, ..full }
        };
        let a = total_loss(&s.inputs(false), &full, &cfg).unwrap();
        let b = total_loss(&s.inputs(false), &cut, &cfg).unwrap();
        let removed = if which == 0 { full.lambda_rf * a.feature } else { full.lambda_sm * a.smooth };
        prop_assert!((a.total - removed - b.total).abs() < 1e-12);
        if which == 0 {
            prop_assert!(b.d_a_f.data.iter().all(|&v| v == 0.0));
            prop_assert_eq!(&a.d_c_thermal.data, &b.d_c_thermal.data);
        } else {
            prop_assert_eq!(&a.d_a_f.data, &b.d_a_f.data);
            let sm = smooth_loss(&s.c_th);
            for i in 0..sm.grad.data.len() {
                prop_assert!((a.d_c_thermal.data[i] - 0.3 * sm.grad.data[i] - b.d_c_thermal.data[i]).abs() < 1e-15);
            }
        }
        prop_assert!(a.rec_rgb >= 0.0 && a.rec_thermal >= 0.0);
    }
}
