use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_image(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize, r: f64) -> Image {
    Image::from_vec(w, h, c, (0..w * h * c).map(|_| rng.random_range(-r..r)).collect()).unwrap()
}

fn small_cfg() -> NetConfig {
    NetConfig {
        feature_dim: 4,
        shared_hidden: vec![5],
        h_dim: 6,
        thermal_hidden: vec![],
        h_th_dim: 3,
        rgb_hidden: vec![4],
        thermal_out_hidden: vec![4],
    }
}

/// Net with a non-trivial FiLM layer so both FiLM gradient paths carry signal.
fn random_net(seed: u64, cfg: &NetConfig) -> ModulationNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = ModulationNet::new(cfg, &mut rng).unwrap();
    for w in &mut net.film_linear.weight {
        *w = rng.random_range(-0.5..0.5);
    }
    for b in &mut net.film_linear.bias {
        *b += rng.random_range(-0.3..0.3);
    }
    net
}

#[test]
fn default_dimensions_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ModulationNet::new(&NetConfig::default(), &mut rng).unwrap();
    net.validate().unwrap();
    assert_eq!(net.shared.dims(), vec![8, 32, 32]);
    assert_eq!(net.thermal_head.dims(), vec![32, 16]);
    assert_eq!((net.film_linear.in_dim, net.film_linear.out_dim), (16, 64));
    assert_eq!(net.rgb_decoder.dims(), vec![32, 32, 3]);
    assert_eq!(net.thermal_decoder.dims(), vec![16, 16, 1]);
    assert_eq!(net.config(), NetConfig::default());
    let names: Vec<String> = net.tensors().into_iter().map(|t| t.name).collect();
    assert_eq!(names[0], "shared.0.weight");
    assert_eq!(names.last().unwrap(), "film_linear.bias");
    assert_eq!(net.tensors().len(), net.zeros_like().tensors_mut().len());
}

#[test]
fn wrong_feature_channels_is_shape_mismatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = ModulationNet::new(&small_cfg(), &mut rng).unwrap();
    assert!(matches!(net.shared_encode(&Image::zeros(2, 2, 5)), Err(Error::ShapeMismatch(_))));
    assert!(matches!(net.thermal_prior(&Image::zeros(2, 2, 5)), Err(Error::ShapeMismatch(_))));
}

#[test]
fn thermal_prior_matches_vector_eval() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = ModulationNet::new(&small_cfg(), &mut rng).unwrap();
    let h = rand_image(&mut rng, 3, 2, 6, 1.0);
    let (t, _) = net.thermal_prior(&h).unwrap();
    for p in 0..6 {
        assert_eq!(t.pixel(p), net.thermal_head.eval(h.pixel(p)).as_slice());
    }
}

#[test]
fn film_identity_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = ModulationNet::new(&small_cfg(), &mut rng).unwrap();
    let h_th = rand_image(&mut rng, 4, 3, 3, 2.0);
    let (g, b) = net.film_params(&h_th).unwrap();
    assert!(g.data.iter().all(|&v| v == 1.0));
    assert!(b.data.iter().all(|&v| v == 0.0));

    let h = rand_image(&mut rng, 4, 3, 6, 2.0);
    let h_mod = film_modulate(&h, &g, &b).unwrap();
    assert_eq!(h_mod.data, h.data);
    assert_eq!(net.decode_rgb(&h_mod).unwrap().0.data, net.decode_rgb(&h).unwrap().0.data);
}

#[test]
fn film_params_zero_input_and_oracle() {
    let net = random_net(2, &small_cfg());
    let (g, b) = net.film_params(&Image::zeros(2, 1, 3)).unwrap();
    for p in 0..2 {
        assert_eq!(g.pixel(p), &net.film_linear.bias[..6]);
        assert_eq!(b.pixel(p), &net.film_linear.bias[6..]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_image(&mut rng, 3, 3, 3, 1.0);
    let (g, b) = net.film_params(&x).unwrap();
    let l = &net.film_linear;
    for p in 0..9 {
        for o in 0..12 {
            let mut want = l.bias[o];
            for i in 0..3 {
                want += l.weight[o * 3 + i] * x.pixel(p)[i];
            }
            let got = if o < 6 { g.pixel(p)[o] } else { b.pixel(p)[o - 6] };
            assert!((got - want).abs() < 1e-14);
        }
    }
}

#[test]
fn film_modulate_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = rand_image(&mut rng, 3, 2, 4, 1.0);
    let beta = rand_image(&mut rng, 3, 2, 4, 1.0);
    let gamma = rand_image(&mut rng, 3, 2, 4, 1.0);
    let zero = Image::zeros(3, 2, 4);
    assert_eq!(film_modulate(&h, &zero, &beta).unwrap().data, beta.data);
    let m = film_modulate(&h, &gamma, &beta).unwrap();
    for i in 0..h.data.len() {
        assert_eq!(m.data[i], gamma.data[i] * h.data[i] + beta.data[i]);
    }
    assert!(matches!(
        film_modulate(&h, &Image::zeros(3, 2, 3), &beta),
        Err(Error::ShapeMismatch(_))
    ));
}

#[test]
fn zero_decoders_give_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = ModulationNet::new(&small_cfg(), &mut rng).unwrap();
    for t in net.tensors_mut() {
        t.iter_mut().for_each(|v| *v = 0.0);
    }
    let x = rand_image(&mut rng, 2, 2, 6, 3.0);
    assert!(net.decode_rgb(&x).unwrap().0.data.iter().all(|&v| v == 0.5));
    let y = rand_image(&mut rng, 2, 2, 3, 3.0);
    let (t, _) = net.decode_thermal(&y).unwrap();
    assert_eq!(t.channels, 1);
    assert!(t.data.iter().all(|&v| v == 0.5));
}

#[test]
fn decode_rgb_matches_oracle() {
    let net = random_net(6, &small_cfg());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_image(&mut rng, 5, 4, 6, 2.0);
    let (c, _) = net.decode_rgb(&x).unwrap();
    for p in 0..20 {
        let z = net.rgb_decoder.eval(x.pixel(p));
        for k in 0..3 {
            let want = 1.0 / (1.0 + (-z[k]).exp());
            assert!((c.pixel(p)[k] - want).abs() < 1e-14);
            assert!(c.pixel(p)[k] > 0.0 && c.pixel(p)[k] < 1.0);
        }
    }
}

fn all_options() -> Vec<(NetOptions, bool)> {
    let mut v = Vec::new();
    for film in [true, false] {
        for film_source in [FilmSource::ThermalPass, FilmSource::BasePass] {
            for separate in [true, false] {
                v.push((NetOptions { film, film_source }, separate));
            }
        }
    }
    v
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let net = random_net(7, &small_cfg());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_image(&mut rng, 3, 3, 4, 1.0);
    let at = rand_image(&mut rng, 3, 3, 4, 1.0);
    let tr = net.forward(&a, Some(&at), NetOptions::default()).unwrap();
    let bw = net
        .backward(&tr, &Image::zeros(3, 3, 3), &Image::zeros(3, 3, 1))
        .unwrap();
    assert!(bw.grads.tensors().iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
    assert!(bw.d_a_f.data.iter().all(|&v| v == 0.0));
    assert!(bw.d_a_ft.unwrap().data.iter().all(|&v| v == 0.0));
}

#[test]
fn stale_trace_rejected() {
    let net = random_net(8, &small_cfg());
    let a = Image::zeros(3, 3, 4);
    let tr = net.forward(&a, None, NetOptions::default()).unwrap();
    assert!(matches!(
        net.backward(&tr, &Image::zeros(2, 3, 3), &Image::zeros(3, 3, 1)),
        Err(Error::StaleTrace(_))
    ));
    let mut other_cfg = small_cfg();
    other_cfg.rgb_hidden = vec![7];
    let other = random_net(8, &other_cfg);
    assert!(matches!(
        other.backward(&tr, &Image::zeros(3, 3, 3), &Image::zeros(3, 3, 1)),
        Err(Error::StaleTrace(_))
    ));
}

fn weighted_loss(
    net: &ModulationNet,
    a: &Image,
    at: Option<&Image>,
    opts: NetOptions,
    u_rgb: &Image,
    u_th: &Image,
) -> f64 {
    let tr = net.forward(a, at, opts).unwrap();
    let s1: f64 = tr.c_impl.data.iter().zip(&u_rgb.data).map(|(x, u)| x * u).sum();
    let s2: f64 = tr.c_thermal.data.iter().zip(&u_th.data).map(|(x, u)| x * u).sum();
    s1 + s2
}

/// ‖fd − an‖ / max(‖fd‖, ‖an‖), zero when both vanish.
fn rel_err(fd: &[f64], an: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut fd.iter().zip(an).map(|(a, b)| a - b));
    let scale = norm(&mut fd.iter().copied()).max(norm(&mut an.iter().copied()));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn close(fd: f64, an: f64, tol: f64) -> bool {
    (fd - an).abs() <= tol * fd.abs().max(an.abs()).max(1e-6)
}

#[test]
fn backward_matches_finite_differences() {
    let cfg = small_cfg();
    let h = 1e-6;
    for (opts, separate) in all_options() {
        let net = random_net(10, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_image(&mut rng, 1, 1, 4, 1.0);
        let at = rand_image(&mut rng, 1, 1, 4, 1.0);
        let u_rgb = rand_image(&mut rng, 1, 1, 3, 1.0);
        let u_th = rand_image(&mut rng, 1, 1, 1, 1.0);
        let at_opt = separate.then_some(&at);
        let tr = net.forward(&a, at_opt, opts).unwrap();
        let bw = net.backward(&tr, &u_rgb, &u_th).unwrap();

        let grads = bw.grads.tensors();
        let n_tensors = grads.len();
        for ti in 0..n_tensors {
            let mut fd = Vec::new();
            for i in 0..grads[ti].data.len() {
                let mut p = net.clone();
                let mut m = net.clone();
                p.tensors_mut()[ti][i] += h;
                m.tensors_mut()[ti][i] -= h;
                fd.push(
                    (weighted_loss(&p, &a, at_opt, opts, &u_rgb, &u_th)
                        - weighted_loss(&m, &a, at_opt, opts, &u_rgb, &u_th))
                        / (2.0 * h),
                );
            }
            let err = rel_err(&fd, grads[ti].data);
            assert!(err < 1e-5, "{opts:?} {} rel err {err}", grads[ti].name);
        }
        for i in 0..4 {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[i] += h;
            m.data[i] -= h;
            let fd = (weighted_loss(&net, &p, at_opt, opts, &u_rgb, &u_th)
                - weighted_loss(&net, &m, at_opt, opts, &u_rgb, &u_th))
                / (2.0 * h);
            assert!(close(fd, bw.d_a_f.data[i], 1e-5), "d_a_f {opts:?}");
            if separate {
                let mut p = at.clone();
                let mut m = at.clone();
                p.data[i] += h;
                m.data[i] -= h;
                let fd = (weighted_loss(&net, &a, Some(&p), opts, &u_rgb, &u_th)
                    - weighted_loss(&net, &a, Some(&m), opts, &u_rgb, &u_th))
                    / (2.0 * h);
                assert!(close(fd, bw.d_a_ft.as_ref().unwrap().data[i], 1e-5), "d_a_ft {opts:?}");
            } else {
                assert!(bw.d_a_ft.is_none());
            }
        }
    }
}

#[test]
fn thermal_latent_gradient_sums_both_paths() {
    let net = random_net(12, &small_cfg());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let a = rand_image(&mut rng, 4, 4, 4, 1.0);
    let at = rand_image(&mut rng, 4, 4, 4, 1.0);
    let u_rgb = rand_image(&mut rng, 4, 4, 3, 1.0);
    let u_th = rand_image(&mut rng, 4, 4, 1, 1.0);
    let tr = net.forward(&a, Some(&at), NetOptions::default()).unwrap();
    let both = net.backward(&tr, &u_rgb, &u_th).unwrap().d_h_th;
    let film_only = net.backward(&tr, &u_rgb, &Image::zeros(4, 4, 1)).unwrap().d_h_th;
    let dec_only = net.backward(&tr, &Image::zeros(4, 4, 3), &u_th).unwrap().d_h_th;
    let mut sum = film_only.clone();
    sum.add_assign(&dec_only);
    assert!(both.max_abs_diff(&sum) < 1e-14);
    assert!(film_only.data.iter().any(|&v| v != 0.0));
    assert!(dec_only.data.iter().any(|&v| v != 0.0));
}

#[test]
fn disabled_film_ignores_film_weights() {
    let net = random_net(13, &small_cfg());
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = rand_image(&mut rng, 2, 2, 4, 1.0);
    let opts = NetOptions {
        film: false,
        ..NetOptions::default()
    };
    let tr = net.forward(&a, None, opts).unwrap();
    assert_eq!(tr.h_mod.data, tr.h.data);
    let bw = net.backward(&tr, &rand_image(&mut rng, 2, 2, 3, 1.0), &Image::zeros(2, 2, 1)).unwrap();
    assert!(bw.grads.film_linear.weight.iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn pixel_permutation_commutes(seed in 0u64..1000, shift in 1usize..11) {
        let net = random_net(seed, &small_cfg());
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let a = rand_image(&mut rng, 4, 3, 4, 1.5);
        let at = rand_image(&mut rng, 4, 3, 4, 1.5);
        let perm = |img: &Image| {
            let mut out = img.clone();
            for p in 0..12 {
                out.pixel_mut((p + shift) % 12).copy_from_slice(img.pixel(p));
            }
            out
        };
        let t0 = net.forward(&a, Some(&at), NetOptions::default()).unwrap();
        let t1 = net.forward(&perm(&a), Some(&perm(&at)), NetOptions::default()).unwrap();
        prop_assert_eq!(perm(&t0.c_impl).data, t1.c_impl.data);
        prop_assert_eq!(perm(&t0.c_thermal).data, t1.c_thermal.data);
    }
}

#[test]
fn large_image_spans_multiple_chunks() {
    let net = random_net(14, &small_cfg());
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = rand_image(&mut rng, 37, 29, 4, 1.0);
    let tr = net.forward(&a, None, NetOptions::default()).unwrap();
    let u = rand_image(&mut rng, 37, 29, 3, 1.0);
    let bw = net.backward(&tr, &u, &Image::zeros(37, 29, 1)).unwrap();
    // Pixel-wise: the input gradient at one pixel only depends on that pixel.
    let one = Image::from_vec(1, 1, 4, a.pixel(700).to_vec()).unwrap();
    let tr1 = net.forward(&one, None, NetOptions::default()).unwrap();
    let u1 = Image::from_vec(1, 1, 3, u.pixel(700).to_vec()).unwrap();
    let bw1 = net.backward(&tr1, &u1, &Image::zeros(1, 1, 1)).unwrap();
    for k in 0..4 {
        assert!((bw.d_a_f.pixel(700)[k] - bw1.d_a_f.data[k]).abs() < 1e-14);
    }
}
