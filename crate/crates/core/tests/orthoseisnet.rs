use std::f64::consts::PI;

use orthoseis::net::*;
use orthoseis::tensor::gradcheck::{check_inputs_with, check_params, GradCheck};
use orthoseis::tensor::{Complex, ComplexGrid, Graph, PairLoss, ParamStore, RealGrid, RngState, Tensor, Var};
use orthoseis::{Error, Result};
use proptest::prelude::*;

struct HalfSq;

impl PairLoss<f64> for HalfSq {
    fn name(&self) -> &'static str {
        "half_sq"
    }
    fn value(&self, a: &RealGrid<f64>, b: &RealGrid<f64>) -> Result<f64> {
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x - y).powi(2)).sum())
    }
    fn grad(&self, a: &RealGrid<f64>, b: &RealGrid<f64>) -> (Vec<f64>, Vec<f64>) {
        let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let neg = d.iter().map(|v| -v).collect();
        (d, neg)
    }
}

fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = RngState::new(seed);
    let dims = g.value(y).dims().to_vec();
    let t = g.constant(Tensor::Real(RealGrid::from_fn(&dims, |_| rng.normal())));
    g.pair_loss(y, t, Box::new(HalfSq))
}

fn random_grid(dims: &[usize], seed: u64) -> RealGrid<f64> {
    let mut rng = RngState::new(seed);
    RealGrid::from_fn(dims, |_| rng.normal())
}

fn random_r(dims: &[usize], seed: u64) -> ComplexGrid<f64> {
    let mut rng = RngState::new(seed);
    let n = dims.iter().product();
    ComplexGrid::from_vec(dims, (0..n).map(|_| Complex::new(rng.normal(), rng.normal())).collect()).unwrap()
}

/// Signed frequencies kept when `k` modes are retained, in weight order:
/// non-negative ones first, then the negative ones ascending.
fn kept(k: usize) -> Vec<i64> {
    let pos = k.div_ceil(2) as i64;
    let neg = (k / 2) as i64;
    (0..pos).chain(-neg..0).collect()
}

/// Direct DFT, explicit mode loop, inverse DFT, magnitude.
fn spectral_oracle(x: &RealGrid<f64>, r: &ComplexGrid<f64>) -> Vec<f64> {
    let (h, w, ci) = x.hwc();
    let (kh, kw, co) = (r.dims()[0], r.dims()[1], r.dims()[3]);
    let (rows, cols) = (kept(kh), kept(kw));
    let mut z = vec![Complex::new(0.0, 0.0); h * w * co];
    for (a, &u) in rows.iter().enumerate() {
        for (b, &v) in cols.iter().enumerate() {
            let uu = u.rem_euclid(h as i64) as usize;
            let vv = v.rem_euclid(w as i64) as usize;
            for c in 0..ci {
                let mut f = Complex::new(0.0, 0.0);
                for t in 0..h {
                    for s in 0..w {
                        let ph = -2.0 * PI * (u as f64 * t as f64 / h as f64 + v as f64 * s as f64 / w as f64);
                        f += Complex::new(ph.cos(), ph.sin()) * x.at(t, s, c);
                    }
                }
                f /= (h * w) as f64;
                for o in 0..co {
                    z[(uu * w + vv) * co + o] += r.data()[((a * kw + b) * ci + c) * co + o] * f;
                }
            }
        }
    }
    let mut out = vec![0.0; h * w * co];
    for t in 0..h {
        for s in 0..w {
            for o in 0..co {
                let mut y = Complex::new(0.0, 0.0);
                for u in 0..h {
                    for v in 0..w {
                        let ph = 2.0 * PI * (u as f64 * t as f64 / h as f64 + v as f64 * s as f64 / w as f64);
                        y += z[(u * w + v) * co + o] * Complex::new(ph.cos(), ph.sin());
                    }
                }
                out[(t * w + s) * co + o] = y.norm();
            }
        }
    }
    out
}

fn identity_r(h: usize, w: usize, c: usize) -> ComplexGrid<f64> {
    let mut r = ComplexGrid::zeros(&[h, w, c, c]);
    for m in 0..h * w {
        for i in 0..c {
            r.data_mut()[(m * c + i) * c + i] = Complex::new(1.0, 0.0);
        }
    }
    r
}

#[test]
fn spectral_identity_and_zero() {
    let x = random_grid(&[8, 16, 3], 1);
    let y = apply_spectral(&x, &identity_r(8, 16, 3)).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b.abs()).abs() < 1e-12);
    }
    let z = apply_spectral(&x, &ComplexGrid::zeros(&[4, 8, 3, 2])).unwrap();
    assert_eq!(z.dims(), &[8, 16, 2]);
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn spectral_matches_direct_dft_oracle() {
    for (seed, (h, w, ci, co, kh, kw)) in [(8, 8, 2, 2, 4, 4), (8, 8, 2, 3, 3, 5), (16, 8, 1, 2, 8, 1), (16, 16, 2, 2, 16, 16)]
        .into_iter()
        .enumerate()
    {
        let x = random_grid(&[h, w, ci], seed as u64);
        let r = random_r(&[kh, kw, ci, co], 100 + seed as u64);
        let got = apply_spectral(&x, &r).unwrap();
        let want = spectral_oracle(&x, &r);
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-5, "case {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn full_mode_fraction_is_untruncated() {
    let cfg = NetworkConfig { mode_fraction: 1.0, ..NetworkConfig::default() };
    for n in [1, 2, 4, 8, 16, 32] {
        assert_eq!(cfg.modes(n), n);
    }
    // All modes kept with identity mixing: the layer is exactly |x|.
    let x = random_grid(&[16, 16, 2], 9);
    let y = apply_spectral(&x, &identity_r(cfg.modes(16), cfg.modes(16), 2)).unwrap();
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!((a - b.abs()).abs() < 1e-6);
    }
    let half = NetworkConfig::default();
    assert_eq!((half.modes(32), half.modes(2), half.modes(1)), (16, 1, 1));
}

fn small_cfg() -> NetworkConfig {
    NetworkConfig { input_size: (16, 16), base_filters: 4, depth: 2, bottleneck_filters: 16, ..NetworkConfig::default() }
}

#[test]
fn encoder_block_contract() {
    let cfg = small_cfg();
    let m = init_params::<f64>(&cfg, &mut RngState::new(3)).unwrap();
    let run = |seed: u64| {
        let mut g = Graph::new(&m.store);
        let x = g.input(random_grid(&[16, 16, 1], seed));
        let (o, s) = encoder_block_forward(&mut g, x, &m.layout.encoders[0], &cfg, &mut RngState::new(seed), false).unwrap();
        (g.real_value(o).unwrap().clone(), g.real_value(s).unwrap().clone())
    };
    let (o, s) = run(1);
    assert_eq!(o.dims(), &[1, 8, 8, 4]);
    assert_eq!(s.dims(), &[1, 16, 16, 4]);
    assert_eq!(run(1), (o.clone(), s));
    for seed in 0..20 {
        assert!(run(seed).0.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn post_spectral_skip_shapes() {
    let cfg = NetworkConfig { skip_source: SkipSource::PostSpectral, ..small_cfg() };
    let m = init_params::<f64>(&cfg, &mut RngState::new(3)).unwrap();
    let mut g = Graph::new(&m.store);
    let x = g.input(random_grid(&[16, 16, 1], 1));
    let (o, s) = encoder_block_forward(&mut g, x, &m.layout.encoders[0], &cfg, &mut RngState::new(0), false).unwrap();
    assert_eq!(g.value(s).dims(), &[1, 16, 16, 4]);
    let (ov, sv) = (g.real_value(o).unwrap().clone(), g.real_value(s).unwrap().clone());
    assert_eq!(sv.data()[0], ov.data()[0]);
    assert_eq!(m.predict(&random_grid(&[16, 16, 1], 2)).unwrap().dims(), &[16, 16, 1]);
}

#[test]
fn decoder_block_contract() {
    let cfg = small_cfg();
    let m = init_params::<f64>(&cfg, &mut RngState::new(4)).unwrap();
    let block = m.layout.decoders[0];
    let mut g = Graph::new(&m.store);
    let x = g.input(random_grid(&[8, 8, 8], 1));
    let skip = g.input(random_grid(&[16, 16, 4], 2));
    let y = decoder_block_forward(&mut g, x, skip, &block, &cfg, &mut RngState::new(0), false).unwrap();
    assert_eq!(g.value(y).dims(), &[1, 16, 16, 4]);
    let l = project(&mut g, y, 5).unwrap();
    let grads = g.backward(l).unwrap();
    for v in [x, skip] {
        let t = grads.wrt(v).expect("gradient reaches both inputs");
        assert!((0..t.real_count()).any(|i| t.get_scalar(i) != 0.0));
    }

    let mut g = Graph::new(&m.store);
    let x = g.input(RealGrid::new(8, 8, 8));
    let skip = g.input(RealGrid::new(16, 16, 4));
    let y = decoder_block_forward(&mut g, x, skip, &block, &cfg, &mut RngState::new(0), false).unwrap();
    assert!(g.real_value(y).unwrap().data().iter().all(|&v| v == 0.0));

    let mut g = Graph::new(&m.store);
    let x = g.input(RealGrid::new(8, 8, 8));
    let skip = g.input(RealGrid::new(8, 8, 4));
    assert!(decoder_block_forward(&mut g, x, skip, &block, &cfg, &mut RngState::new(0), false).is_err());
}

fn block_store(cfg: &NetworkConfig, prefix: &str, seed: u64) -> (ModelState<f64>, ParamStore<f64>) {
    let m = init_params::<f64>(cfg, &mut RngState::new(seed)).unwrap();
    let mut only = m.clone();
    // Perturb shifts away from zero so every path carries signal.
    for p in only.store.iter_mut() {
        if p.name.starts_with(prefix) && p.name.ends_with("shift") {
            let mut rng = RngState::new(seed + 1);
            for i in 0..p.value.real_count() {
                p.value.set_scalar(i, 0.3 * rng.normal());
            }
        }
    }
    let store = only.store.clone();
    (only, store)
}

#[test]
fn encoder_block_gradcheck() {
    let cfg = small_cfg();
    let (m, store) = block_store(&cfg, "enc1", 11);
    let x = random_grid(&[1, 16, 16, 1], 12);
    let f = |g: &mut Graph<f64>| {
        let xv = g.constant(Tensor::Real(x.clone()));
        // Same seed every evaluation: the dropout mask is frozen.
        let (o, s) = encoder_block_forward(g, xv, &m.layout.encoders[0], &cfg, &mut RngState::new(7), true)?;
        let a = project(g, o, 1)?;
        let b = project(g, s, 2)?;
        g.add(a, b)
    };
    let report = check_params(GradCheck { seed: 1, ..GradCheck::default() }, &store, f).unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
    let report = check_inputs_with(GradCheck::default(), &store, &[Tensor::Real(x.clone())], |g, v| {
        let (o, _) = encoder_block_forward(g, v[0], &m.layout.encoders[0], &cfg, &mut RngState::new(7), true)?;
        project(g, o, 3)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
}

#[test]
fn decoder_block_gradcheck() {
    let cfg = small_cfg();
    let (m, store) = block_store(&cfg, "dec1", 21);
    let x = random_grid(&[1, 8, 8, 8], 22);
    let skip = random_grid(&[1, 16, 16, 4], 23);
    let f = |g: &mut Graph<f64>| {
        let xv = g.constant(Tensor::Real(x.clone()));
        let sv = g.constant(Tensor::Real(skip.clone()));
        let y = decoder_block_forward(g, xv, sv, &m.layout.decoders[0], &cfg, &mut RngState::new(8), true)?;
        project(g, y, 4)
    };
    let report = check_params(GradCheck { seed: 2, ..GradCheck::default() }, &store, f).unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
    let report = check_inputs_with(GradCheck::default(), &store, &[Tensor::Real(x.clone()), Tensor::Real(skip.clone())], |g, v| {
        let y = decoder_block_forward(g, v[0], v[1], &m.layout.decoders[0], &cfg, &mut RngState::new(8), true)?;
        project(g, y, 5)
    })
    .unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
}

#[test]
fn forward_contract() {
    let cfg = NetworkConfig::default();
    let m = init_params::<f32>(&cfg, &mut RngState::new(5)).unwrap();
    let mut rng = RngState::new(6);
    let x = RealGrid::from_fn(&[32, 32, 1], |_| rng.uniform_range(-1.0, 1.0) as f32);
    let y = m.predict(&x).unwrap();
    assert_eq!(y.dims(), x.dims());
    assert_eq!(m.predict(&x).unwrap(), y);
    assert!(y.is_finite());
    assert!(y.data().iter().all(|v| v.abs() < 100.0));
    assert!(m.predict(&RealGrid::new(16, 32, 1)).is_err());
    assert!(m.predict(&RealGrid::new(32, 32, 2)).is_err());

    let many = m.predict_many(&[x.clone(), x.map(|v| -v)]).unwrap();
    assert_eq!(many[0], y);
}

#[test]
fn init_is_seeded_with_unit_gains() {
    let cfg = small_cfg();
    let a = init_params::<f32>(&cfg, &mut RngState::new(9)).unwrap();
    let b = init_params::<f32>(&cfg, &mut RngState::new(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, init_params::<f32>(&cfg, &mut RngState::new(10)).unwrap());
    for p in a.store.iter().filter(|p| p.name.ends_with(".gain")) {
        assert!((0..p.value.real_count()).all(|i| p.value.get_scalar(i) == 1.0));
    }
    for p in a.store.iter().filter(|p| p.name.ends_with(".bias") || p.name.ends_with(".shift")) {
        assert!((0..p.value.real_count()).all(|i| p.value.get_scalar(i) == 0.0));
    }
}

fn stage_stds(cfg: &NetworkConfig, seed: u64) -> Vec<f64> {
    let m = init_params::<f64>(cfg, &mut RngState::new(seed)).unwrap();
    let std = |g: &RealGrid<f64>| {
        let n = g.len() as f64;
        let mu = g.data().iter().sum::<f64>() / n;
        (g.data().iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt()
    };
    let mut g = Graph::new(&m.store);
    let mut rng = RngState::new(seed + 1);
    let mut h = g.input(random_grid(&[cfg.input_size.0, cfg.input_size.1, 1], seed + 2));
    let mut out = Vec::new();
    let mut skips = Vec::new();
    for b in &m.layout.encoders {
        let (o, s) = encoder_block_forward(&mut g, h, b, cfg, &mut rng, false).unwrap();
        out.push(std(g.real_value(o).unwrap()));
        skips.push(s);
        h = o;
    }
    h = bottleneck_forward(&mut g, h, &m.layout.bottleneck, cfg).unwrap();
    out.push(std(g.real_value(h).unwrap()));
    for (b, s) in m.layout.decoders.iter().zip(skips).rev() {
        h = decoder_block_forward(&mut g, h, s, b, cfg, &mut rng, false).unwrap();
        out.push(std(g.real_value(h).unwrap()));
    }
    out
}

#[test]
fn stage_activation_scale_at_init() {
    let cfg = NetworkConfig::default();
    for seed in [1, 2] {
        for (i, s) in stage_stds(&cfg, seed).into_iter().enumerate() {
            assert!((0.1..=10.0).contains(&s), "stage {i}: std {s}");
        }
    }
}

fn named_count(m: &ModelState<f32>, prefix: &str) -> usize {
    m.store
        .iter()
        .filter(|p| p.name.starts_with(prefix) && !p.name.ends_with("spectral"))
        .map(|p| p.value.real_count())
        .sum()
}

#[test]
fn published_layer_counts() {
    let m = init_params::<f32>(&NetworkConfig::paper(), &mut RngState::new(0)).unwrap();
    assert_eq!(named_count(&m, "enc1.conv1"), 160);
    assert_eq!(named_count(&m, "enc1.norm1"), 32);
    assert_eq!(named_count(&m, "enc1.conv2"), 2320);
    assert_eq!(named_count(&m, "enc1.norm2"), 32);
    assert_eq!(named_count(&m, "enc2"), 14016);
    assert_eq!(named_count(&m, "enc3"), 55680);
    assert_eq!(named_count(&m, "enc4"), 221952);
    assert_eq!(named_count(&m, "bottleneck.conv"), 295168);
    assert_eq!(named_count(&m, "dec4.conv2"), 147584);
    assert_eq!(named_count(&m, "dec1.conv2"), 2320);
}

#[test]
fn paper_total_versus_enumeration() {
    let paper = NetworkConfig::paper();
    let m = init_params::<f32>(&paper, &mut RngState::new(0)).unwrap();
    assert_eq!(param_count(&paper), m.param_count());
    let plain = NetworkConfig { spectral: false, ..paper.clone() };
    let conv_only = param_count(&plain);
    assert!(conv_only < param_count(&paper));
    println!(
        "published total 1940817; ours {} with spectral weights, {} convolutional only (delta {})",
        param_count(&paper),
        conv_only,
        conv_only as i64 - 1_940_817
    );
}

#[test]
fn checkpoint_roundtrip_and_rejections() {
    let cfg = small_cfg();
    let m = init_params::<f32>(&cfg, &mut RngState::new(12)).unwrap();
    let meta = serde_json::json!({"epoch": 3});
    let bytes = checkpoint_bytes(&m, &meta).unwrap();
    assert_eq!(&bytes[..4], b"OSN1");
    let (back, meta2) = checkpoint_from_bytes::<f32>(&bytes, Some(&cfg)).unwrap();
    assert_eq!(back, m);
    assert_eq!(meta2, meta);
    assert_eq!(checkpoint_bytes(&back, &meta).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.osn");
    save_checkpoint(&path, &m, &meta).unwrap();
    assert_eq!(load_checkpoint::<f32>(&path, None).unwrap().0, m);

    let other = NetworkConfig { mode_fraction: 0.25, ..cfg.clone() };
    assert!(matches!(checkpoint_from_bytes::<f32>(&bytes, Some(&other)), Err(Error::InvalidArgument(m)) if m.contains("fingerprint")));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint_from_bytes::<f32>(&bad, None), Err(Error::Format(_))));
    assert!(checkpoint_from_bytes::<f32>(&bytes[..bytes.len() - 1], None).is_err());
}

#[test]
fn ablation_has_no_spectral_weights() {
    let cfg = NetworkConfig { spectral: false, ..small_cfg() };
    let m = init_params::<f32>(&cfg, &mut RngState::new(1)).unwrap();
    assert!(m.store.iter().all(|p| !p.value.is_complex()));
    assert!(m.param_count() < param_count(&small_cfg()));
    let y = m.predict(&RealGrid::from_fn(&[16, 16, 1], |i| (i as f32 * 0.1).sin())).unwrap();
    assert!(y.is_finite());
}

#[test]
fn softmax_head_sums_to_one() {
    let cfg = NetworkConfig { output_channels: 3, final_softmax: true, ..small_cfg() };
    let m = init_params::<f64>(&cfg, &mut RngState::new(2)).unwrap();
    let y = m.predict(&random_grid(&[16, 16, 1], 3)).unwrap();
    for px in y.data().chunks(3) {
        assert!((px.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn config_validation() {
    assert!(NetworkConfig::default().validate().is_ok());
    for bad in [
        NetworkConfig { input_size: (24, 32), ..NetworkConfig::default() },
        NetworkConfig { input_size: (8, 8), ..NetworkConfig::default() },
        NetworkConfig { bottleneck_filters: 128, ..NetworkConfig::default() },
        NetworkConfig { mode_fraction: 0.0, ..NetworkConfig::default() },
        NetworkConfig { dropout_rate: 1.0, ..NetworkConfig::default() },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    let json = r#"{"base_filters": 8, "bottleneck_filters": 128}"#;
    let cfg: NetworkConfig = serde_json::from_str(json).unwrap();
    assert!(cfg.validate().is_ok());
    assert!(serde_json::from_str::<NetworkConfig>(r#"{"filters": 8}"#).is_err());
    assert_ne!(cfg.fingerprint(), NetworkConfig::default().fingerprint());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_form_count_matches_enumeration(
        depth in 1usize..4,
        base in prop::sample::select(vec![1usize, 2, 4]),
        extra in 0usize..2,
        mf in prop::sample::select(vec![0.25f64, 0.5, 1.0]),
        spectral in any::<bool>(),
    ) {
        let side = 1usize << (depth + extra);
        let cfg = NetworkConfig {
            input_size: (side, side * 2),
            base_filters: base,
            depth,
            bottleneck_filters: base << depth,
            mode_fraction: mf,
            spectral,
            ..NetworkConfig::default()
        };
        let m = init_params::<f32>(&cfg, &mut RngState::new(0)).unwrap();
        prop_assert_eq!(param_count(&cfg), m.param_count());
    }

    #[test]
    fn output_shape_matches_input(depth in 1usize..4, extra in 0usize..3, seed in any::<u64>()) {
        let h = 1usize << (depth + extra);
        let cfg = NetworkConfig {
            input_size: (h, 2 * h),
            base_filters: 2,
            depth,
            bottleneck_filters: 2 << depth,
            ..NetworkConfig::default()
        };
        let m = init_params::<f32>(&cfg, &mut RngState::new(seed)).unwrap();
        let mut rng = RngState::new(seed);
        let x = RealGrid::from_fn(&[h, 2 * h, 1], |_| rng.normal() as f32);
        let y = m.predict(&x).unwrap();
        prop_assert_eq!(y.dims(), x.dims());
        prop_assert!(y.is_finite());
    }
}

#[test]
fn full_model_gradcheck_batched() {
    let cfg = NetworkConfig { input_size: (16, 16), base_filters: 2, depth: 2, bottleneck_filters: 8, ..NetworkConfig::default() };
    for spectral in [true, false] {
        let cfg = NetworkConfig { spectral, ..cfg.clone() };
        let (m, store) = block_store(&cfg, "", 31);
        let x = random_grid(&[2, 16, 16, 1], 32);
        let f = |g: &mut Graph<f64>| {
            let xv = g.constant(Tensor::Real(x.clone()));
            let y = m.forward(g, xv, &mut RngState::new(9), true)?;
            let l = project(g, y, 6)?;
            match m.l1_penalty(g)? {
                Some(p) => g.add(l, p),
                None => Ok(l),
            }
        };
        let report = check_params(GradCheck { seed: 3, ..GradCheck::default() }, &store, f).unwrap();
        assert!(report.max_rel_error() < 1e-4, "spectral {spectral}: {:?}", report.worst());
    }
}
