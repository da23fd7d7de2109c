//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run alone with `cargo test -p orthoseis-cli --test acceptance`; pass
//! criterion numbers as arguments (`-- 1 3 8`) to run a subset.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use orthoseis::baseline::{fista_solve, ista_solve, BpiConfig, ConvOperator};
use orthoseis::io::{ibm32_to_real, read_grid, read_segy, section_from_segy, write_grid, write_segy, GridFile, SampleFormat};
use orthoseis::net::{
    checkpoint_bytes, checkpoint_from_bytes, decoder_block_forward, encoder_block_forward, init_params, param_count,
    spectral_layer, ModelState, NetworkConfig, SkipSource,
};
use orthoseis::seismic::{add_noise_snr, measured_snr_db, ricker_wavelet, synthesize_trace, Snr, TraceSection};
use orthoseis::tensor::gradcheck::{check_inputs, check_inputs_with, check_params, GradCheck};
use orthoseis::tensor::{
    fft2, ifft2, Activation, Complex, ComplexGrid, Graph, PairLoss, Padding, RealGrid, RngState, Tensor, Var,
};
use orthoseis::train::{loss_ssim, ssim, ComparisonRow, LossWeights, MixedLoss, SsimConfig};
use orthoseis_cli::{cmd_evaluate, cmd_generate, cmd_train, EvalRequest, ModelSpec, RunConfig, RunDir};

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

const GRAD_TOL: f64 = 1e-4;
const FIXTURES: u64 = 5;

// ---------------------------------------------------------------- helpers

struct HalfSq;

impl PairLoss<f64> for HalfSq {
    fn name(&self) -> &'static str {
        "half_sq"
    }
    fn value(&self, a: &RealGrid<f64>, b: &RealGrid<f64>) -> orthoseis::Result<f64> {
        Ok(a.data().iter().zip(b.data()).map(|(x, y)| 0.5 * (x - y).powi(2)).sum())
    }
    fn grad(&self, a: &RealGrid<f64>, b: &RealGrid<f64>) -> (Vec<f64>, Vec<f64>) {
        let d: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let neg = d.iter().map(|v| -v).collect();
        (d, neg)
    }
}

fn real(dims: &[usize], rng: &mut RngState) -> RealGrid<f64> {
    RealGrid::from_fn(dims, |_| rng.normal())
}

fn complex(dims: &[usize], rng: &mut RngState) -> ComplexGrid<f64> {
    let n = dims.iter().product();
    ComplexGrid::from_vec(dims, (0..n).map(|_| Complex::new(rng.normal(), rng.normal())).collect()).unwrap()
}

fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> orthoseis::Result<Var> {
    let dims = g.value(y).dims().to_vec();
    let t = g.constant(Tensor::Real(real(&dims, &mut RngState::new(seed ^ 0x5eed))));
    g.pair_loss(y, t, Box::new(HalfSq))
}

fn naive_dft(x: &RealGrid<f64>) -> Vec<Complex<f64>> {
    let (h, w, c) = x.hwc();
    let mut out = vec![Complex::new(0.0, 0.0); h * w * c];
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for i in 0..h {
                    for j in 0..w {
                        let ph = -2.0 * std::f64::consts::PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                        acc += Complex::new(ph.cos(), ph.sin()) * x.at(i, j, ch);
                    }
                }
                out[(u * w + v) * c + ch] = acc / (h * w) as f64;
            }
        }
    }
    out
}

// ---------------------------------------------------------------- 1

fn fft_contract() -> Check {
    let start = Instant::now();
    let mut rng = RngState::new(1);
    let (mut e64, mut e32) = (0.0f64, 0.0f32);
    for i in 0..100 {
        let x = real(&[64, 64, 1 + i % 3], &mut rng);
        let back = ok(ifft2(&ok(fft2(&x))?))?;
        for (b, a) in back.data().iter().zip(x.data()) {
            e64 = e64.max((b.re - a).abs()).max(b.im.abs());
        }
        let x32: RealGrid<f32> = x.cast();
        let back = ok(ifft2(&ok(fft2(&x32))?))?;
        for (b, a) in back.data().iter().zip(x32.data()) {
            e32 = e32.max((b.re - a).abs()).max(b.im.abs());
        }
    }
    let mut dft = 0.0f64;
    for seed in 0..5 {
        let x = real(&[8, 8, 2], &mut RngState::new(100 + seed));
        for (a, b) in ok(fft2(&x))?.data().iter().zip(naive_dft(&x)) {
            dft = dft.max((a - b).norm());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("roundtrip f64 {e64:.1e}, f32 {e32:.1e}; DFT oracle {dft:.1e}; {secs:.1}s");
    ensure!(e64 < 1e-10 && e32 < 1e-5 && dft < 1e-5 && secs < 10.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 2

fn grad_inputs(name: &str, inputs: &[Tensor<f64>], seed: u64, f: impl Fn(&mut Graph<f64>, &[Var]) -> orthoseis::Result<Var>) -> Result<f64, String> {
    let report = ok(check_inputs(GradCheck { seed, ..GradCheck::default() }, inputs, |g, v| {
        let y = f(g, v)?;
        project(g, y, seed)
    }))?;
    let e = report.max_rel_error();
    ensure!(e < GRAD_TOL, "{name} fixture {seed}: {:?}", report.worst());
    Ok(e)
}

fn block_cfg() -> NetworkConfig {
    NetworkConfig { input_size: (16, 16), base_filters: 4, depth: 2, bottleneck_filters: 16, ..NetworkConfig::default() }
}

/// A small model whose norm shifts are moved off zero so every path carries signal.
fn block_model(cfg: &NetworkConfig, seed: u64) -> ModelState<f64> {
    let mut m = init_params::<f64>(cfg, &mut RngState::new(seed)).unwrap();
    let mut rng = RngState::new(seed + 1);
    for p in m.store.iter_mut() {
        if p.name.ends_with("shift") {
            for i in 0..p.value.real_count() {
                p.value.set_scalar(i, 0.3 * rng.normal());
            }
        }
    }
    m
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checks = 0usize;
    let mut note = |e: f64| {
        worst = worst.max(e);
        checks += 1;
    };
    let act = |dims: &[usize], r: &mut RngState| Tensor::Real(real(dims, r));
    for seed in 0..FIXTURES {
        let mut r = RngState::new(1000 + seed);
        let conv = [act(&[2, 5, 4, 3], &mut r), act(&[3, 3, 3, 2], &mut r), act(&[2], &mut r)];
        note(grad_inputs("conv2d same", &conv, seed, |g, v| g.conv2d(v[0], v[1], v[2], Padding::Same))?);
        note(grad_inputs("conv2d valid", &conv, seed, |g, v| g.conv2d(v[0], v[1], v[2], Padding::Valid))?);
        let up = [act(&[2, 3, 2, 3], &mut r), act(&[2, 2, 3, 2], &mut r), act(&[2], &mut r)];
        note(grad_inputs("conv transpose", &up, seed, |g, v| g.conv_transpose2(v[0], v[1], v[2]))?);
        let x = [act(&[2, 4, 6, 3], &mut r)];
        note(grad_inputs("maxpool", &x, seed, |g, v| g.maxpool2(v[0]))?);
        note(grad_inputs("upsample", &x, seed, |g, v| g.upsample2(v[0]))?);
        note(grad_inputs("tanh", &x, seed, |g, v| g.activation(v[0], Activation::Tanh))?);
        note(grad_inputs("relu", &x, seed, |g, v| g.activation(v[0], Activation::Relu))?);
        note(grad_inputs("softmax", &x, seed, |g, v| g.softmax_channels(v[0]))?);
        note(grad_inputs("scale", &x, seed, |g, v| g.scale(v[0], -1.5))?);
        note(grad_inputs("dropout", &x, seed, |g, v| g.dropout(v[0], 0.3, &mut RngState::new(seed), true))?);
        note(grad_inputs("sum", &x, seed, |g, v| g.sum(v[0]))?);
        note(grad_inputs("mean", &x, seed, |g, v| g.mean(v[0]))?);
        note(grad_inputs("abs_sum", &x, seed, |g, v| g.abs_sum(v[0]))?);
        let pair = [act(&[1, 4, 4, 2], &mut r), act(&[1, 4, 4, 3], &mut r)];
        note(grad_inputs("concat", &pair, seed, |g, v| g.concat_channels(v[0], v[1]))?);
        let same = [act(&[1, 3, 3, 2], &mut r), act(&[1, 3, 3, 2], &mut r)];
        note(grad_inputs("add", &same, seed, |g, v| g.add(v[0], v[1]))?);
        let gn = [act(&[2, 3, 4, 6], &mut r), act(&[6], &mut r), act(&[6], &mut r)];
        note(grad_inputs("group norm", &gn, seed, |g, v| g.group_norm(v[0], 3, v[1], v[2], 1e-5))?);
        let f = [act(&[1, 8, 4, 2], &mut r)];
        note(grad_inputs("fft2 + magnitude", &f, seed, |g, v| {
            let y = g.fft2(v[0])?;
            g.magnitude(y)
        })?);
        let z = [Tensor::Complex(complex(&[2, 4, 8, 2], &mut r))];
        note(grad_inputs("ifft2 + magnitude", &z, seed, |g, v| {
            let y = g.ifft2(v[0])?;
            g.magnitude(y)
        })?);
        let mix = [Tensor::Complex(complex(&[1, 8, 8, 3], &mut r)), Tensor::Complex(complex(&[3, 2, 3, 2], &mut r))];
        note(grad_inputs("spectral mix", &mix, seed, |g, v| {
            let y = g.spectral_mix(v[0], v[1], vec![0, 1, 7], vec![0, 7])?;
            g.magnitude(y)
        })?);
        let sl = [act(&[2, 8, 8, 3], &mut r), Tensor::Complex(complex(&[4, 4, 3, 2], &mut r))];
        note(grad_inputs("spectral layer", &sl, seed, |g, v| spectral_layer(g, v[0], v[1]))?);

        // loss_ssim and the mixed loss, straight from the scalar loss.
        for weights in [LossWeights::SSIM, LossWeights::default()] {
            let a = real(&[10, 12, 2], &mut r);
            let b = real(&[10, 12, 2], &mut r).map(|v| 0.5 * v);
            let loss = MixedLoss { weights, ssim: SsimConfig { window: 5, dynamic_range: Some(3.0) } };
            let report = ok(check_inputs(GradCheck { seed, samples: 40, ..GradCheck::default() }, &[Tensor::Real(a), Tensor::Real(b)], |g, v| {
                g.pair_loss(v[0], v[1], Box::new(loss))
            }))?;
            ensure!(report.max_rel_error() < GRAD_TOL, "loss {weights:?} fixture {seed}: {:?}", report.worst());
            note(report.max_rel_error());
        }

        // Whole encoder and decoder blocks, dropout masks frozen by reseeding.
        let cfg = block_cfg();
        let m = block_model(&cfg, 50 + seed);
        let x = real(&[1, 16, 16, 1], &mut r);
        let enc = |g: &mut Graph<f64>, xv: Var| -> orthoseis::Result<Var> {
            let (o, s) = encoder_block_forward(g, xv, &m.layout.encoders[0], &cfg, &mut RngState::new(seed), true)?;
            let a = project(g, o, seed)?;
            let b = project(g, s, seed + 1)?;
            g.add(a, b)
        };
        let report = ok(check_params(GradCheck { seed, ..GradCheck::default() }, &m.store, |g| {
            let xv = g.constant(Tensor::Real(x.clone()));
            enc(g, xv)
        }))?;
        ensure!(report.max_rel_error() < GRAD_TOL, "encoder params fixture {seed}: {:?}", report.worst());
        note(report.max_rel_error());
        let report = ok(check_inputs_with(GradCheck { seed, ..GradCheck::default() }, &m.store, &[Tensor::Real(x.clone())], |g, v| enc(g, v[0])))?;
        ensure!(report.max_rel_error() < GRAD_TOL, "encoder input fixture {seed}: {:?}", report.worst());
        note(report.max_rel_error());

        let xd = real(&[1, 8, 8, 8], &mut r);
        let skip = real(&[1, 16, 16, 4], &mut r);
        let dec = |g: &mut Graph<f64>, xv: Var, sv: Var| -> orthoseis::Result<Var> {
            let y = decoder_block_forward(g, xv, sv, &m.layout.decoders[0], &cfg, &mut RngState::new(seed), true)?;
            project(g, y, seed + 2)
        };
        let report = ok(check_params(GradCheck { seed, ..GradCheck::default() }, &m.store, |g| {
            let xv = g.constant(Tensor::Real(xd.clone()));
            let sv = g.constant(Tensor::Real(skip.clone()));
            dec(g, xv, sv)
        }))?;
        ensure!(report.max_rel_error() < GRAD_TOL, "decoder params fixture {seed}: {:?}", report.worst());
        note(report.max_rel_error());
        let report = ok(check_inputs_with(
            GradCheck { seed, ..GradCheck::default() },
            &m.store,
            &[Tensor::Real(xd.clone()), Tensor::Real(skip.clone())],
            |g, v| dec(g, v[0], v[1]),
        ))?;
        ensure!(report.max_rel_error() < GRAD_TOL, "decoder inputs fixture {seed}: {:?}", report.worst());
        note(report.max_rel_error());
    }
    let secs = start.elapsed().as_secs_f64();
    let detail = format!("{checks} checks over {FIXTURES} fixtures, worst relative error {worst:.1e}; {secs:.1}s");
    ensure!(secs < 120.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 3

const SPIKES: [(usize, f64); 5] = [(30, 0.3), (75, -0.25), (120, 0.2), (170, -0.3), (220, 0.22)];

fn sparse_baseline() -> Check {
    let start = Instant::now();
    let op = ConvOperator::new(ok(ricker_wavelet(30.0, 0.001, 81))?, 256);
    let mut r = vec![0.0; 256];
    for (t, a) in SPIKES {
        r[t] = a;
    }
    let d = ok(op.apply(&r))?;
    let cfg = BpiConfig { chi: 5e-3, max_iters: 250_000, tol: 0.0, ..BpiConfig::default() };
    let s = ok(ista_solve(&d, &op, &cfg))?;
    let support: Vec<usize> = (0..256).filter(|&i| s.m[i] != 0.0).collect();
    let truth: Vec<usize> = SPIKES.iter().map(|p| p.0).collect();
    ensure!(support == truth, "support {support:?}, expected {truth:?}");
    let amp = SPIKES.iter().map(|&(t, a)| (s.m[t] - a).abs() / a.abs()).fold(0.0, f64::max);
    ensure!(amp < 0.01, "worst amplitude error {amp:.3e}");
    // Past convergence the objective is flat and may move by an ulp or two.
    let rises = s.history.windows(2).filter(|w| w[1] > w[0] * (1.0 + 4.0 * f64::EPSILON)).count();
    ensure!(rises == 0, "objective rose {rises} times");

    let budget = BpiConfig { max_iters: 500, ..cfg };
    let ista500 = *ok(ista_solve(&d, &op, &budget))?.history.last().unwrap();
    let f = ok(fista_solve(&d, &op, &budget))?;
    let reach = f.history.iter().position(|&v| v <= ista500).map(|i| i + 1);
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "support exact, worst amplitude error {:.2}%, {} ISTA iterations monotone, FISTA reaches ISTA@500 at {reach:?}; {secs:.1}s",
        100.0 * amp,
        s.history.len()
    );
    ensure!(matches!(reach, Some(k) if k <= 150) && secs < 30.0, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 4 and 5

/// The desk-scale training fixture.
fn desk_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.patch_size = (32, 32);
    cfg.dataset.sample_count = 256;
    cfg.dataset.val_count = 32;
    cfg.dataset.test_count = 32;
    cfg.dataset.wedge_fraction = 1.0;
    cfg.dataset.thin_layer_fraction = 0.0;
    cfg.dataset.wavelet.dt = 0.002;
    cfg.network.input_size = (32, 32);
    cfg.train.epochs = 100;
    cfg.train.early_stop_patience = 100;
    cfg.io.train_level = Snr::CLEAN;
    cfg.resolve(Some(seed)).expect("desk fixture is valid")
}

struct DeskResult {
    spectral: Vec<ComparisonRow>,
    plain: Vec<ComparisonRow>,
    loss1: f64,
    loss40: f64,
    secs: f64,
}

fn desk_training(tmp: &Path) -> Result<DeskResult, String> {
    let start = Instant::now();
    let cfg = desk_config(2024);
    let gen = ok(RunDir::create(tmp, "desk"))?;
    ok(cmd_generate(&cfg, &gen))?;
    let spectral_dir = ok(RunDir::create(tmp, "desk-spectral"))?;
    let spectral = ok(cmd_train(&cfg, &gen.root, &spectral_dir, false, true))?;
    let plain_dir = ok(RunDir::create(tmp, "desk-plain"))?;
    ok(cmd_train(&cfg, &gen.root, &plain_dir, true, true))?;
    let eval = |dir: &RunDir, name: &str| -> Result<Vec<ComparisonRow>, String> {
        let req = EvalRequest {
            models: vec![ModelSpec { name: name.into(), checkpoint: dir.path("checkpoints/best.osn") }],
            data: Some(gen.root.clone()),
            ..Default::default()
        };
        ok(cmd_evaluate(&cfg, &req, dir))
    };
    let logs = &spectral.logs;
    ensure!(logs.len() >= 40, "only {} epochs ran", logs.len());
    Ok(DeskResult {
        spectral: eval(&spectral_dir, "spectral")?,
        plain: eval(&plain_dir, "plain")?,
        loss1: logs[0].train_loss,
        loss40: logs[39].train_loss,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn row<'a>(rows: &'a [ComparisonRow], snr: &str) -> Result<&'a ComparisonRow, String> {
    rows.iter().find(|r| r.snr == snr).ok_or_else(|| format!("no {snr} row"))
}

fn desk_criterion(d: &DeskResult) -> Check {
    let s = row(&d.spectral, "clean")?;
    let p = row(&d.plain, "clean")?;
    let detail = format!(
        "epoch-40/epoch-1 loss {:.4}/{:.4} = {:.2}; held-out SSIM {:.3} (R2 {:.3}); MSE spectral {:.5} vs plain {:.5}; {:.0}s",
        d.loss40,
        d.loss1,
        d.loss40 / d.loss1,
        s.ssim,
        s.r2,
        s.mse,
        p.mse,
        d.secs
    );
    let pass = d.loss40 < 0.5 * d.loss1 && s.ssim >= 0.8 && s.mse <= p.mse && d.secs <= 1800.0;
    if pass {
        Ok(detail)
    } else {
        let mut failed = Vec::new();
        if d.loss40 >= 0.5 * d.loss1 {
            failed.push("(a) loss ratio");
        }
        if s.ssim < 0.8 {
            failed.push("(b) SSIM below 0.8");
        }
        if s.mse > p.mse {
            failed.push("(c) spectral MSE above plain");
        }
        if d.secs > 1800.0 {
            failed.push("runtime");
        }
        Err(format!("{detail}; failed: {}", failed.join(", ")))
    }
}

fn noise_ordering(d: &DeskResult) -> Check {
    let levels = ["snr_30", "snr_20", "snr_10", "snr_0"];
    let ssims = levels.iter().map(|l| row(&d.spectral, l).map(|r| r.ssim)).collect::<Result<Vec<_>, _>>()?;
    let clean = row(&d.spectral, "clean")?.ssim;
    let detail = format!(
        "SSIM clean {clean:.3}, {}",
        levels.iter().zip(&ssims).map(|(l, s)| format!("{l} {s:.3}")).collect::<Vec<_>>().join(", ")
    );
    ensure!(ssims.windows(2).all(|w| w[1] <= w[0]), "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 6

fn ssim_correctness() -> Check {
    let cfg = SsimConfig::default();
    let mut rng = RngState::new(6);
    let mut self_err: f64 = 0.0;
    let mut sym_err: f64 = 0.0;
    for _ in 0..5 {
        let x = real(&[24, 20, 2], &mut rng);
        let y = real(&[24, 20, 2], &mut rng);
        self_err = self_err.max((ok(ssim(&x, &x, &cfg))? - 1.0).abs());
        let shared = SsimConfig { dynamic_range: Some(4.0), ..cfg };
        sym_err = sym_err.max((ok(ssim(&x, &y, &shared))? - ok(ssim(&y, &x, &shared))?).abs());
    }
    ensure!(self_err <= 1e-6, "SSIM(x, x) off by {self_err:e}");
    ensure!(sym_err <= 1e-15, "asymmetry {sym_err:e}");

    // Adversarial fixtures: anti-correlated, constant against noise, huge and
    // tiny amplitudes, checkerboards, a single spike.
    let x = real(&[16, 16, 1], &mut rng);
    let neg = x.map(|v| -v);
    let flat = RealGrid::filled(&[16, 16, 1], 0.7);
    let huge = x.map(|v| 1e6 * v);
    let tiny = x.map(|v| 1e-9 * v);
    let checker = RealGrid::from_fn(&[16, 16, 1], |i| if (i / 16 + i % 16) % 2 == 0 { 1.0 } else { -1.0 });
    let anti = checker.map(|v| -v);
    let mut spike = RealGrid::zeros(&[16, 16, 1]);
    spike.set(8, 8, 0, 1.0);
    let cases = [(&x, &neg), (&flat, &x), (&x, &flat), (&huge, &tiny), (&tiny, &huge), (&checker, &anti), (&spike, &flat), (&x, &huge)];
    let mut lo: f64 = 1.0;
    let mut hi: f64 = -1.0;
    for (a, b) in cases {
        for c in [cfg, SsimConfig { window: 3, dynamic_range: Some(1e-6) }, SsimConfig { window: 7, dynamic_range: Some(1e6) }] {
            let s = ok(ssim(a, b, &c))?;
            ensure!(s.is_finite() && (-1.0..=1.0).contains(&s), "SSIM {s} out of range");
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }

    // Constant 0 against constant 1 with L = 1: luminance term only.
    let zero = RealGrid::zeros(&[12, 12, 1]);
    let one = RealGrid::filled(&[12, 12, 1], 1.0);
    let (c1, c2) = (1e-4, 9e-4);
    let want = (c1 * c2) / ((1.0 + c1) * c2);
    let got = ok(ssim(&zero, &one, &SsimConfig { dynamic_range: Some(1.0), ..cfg }))?;
    ensure!((got - want).abs() < 1e-8, "constant case {got} vs {want}");
    let l = ok(loss_ssim(&zero, &one, &SsimConfig { dynamic_range: Some(1.0), ..cfg }))?;
    ensure!((l - (1.0 - want)).abs() < 1e-8, "loss_ssim {l}");
    Ok(format!("self {self_err:.1e}, symmetry {sym_err:.1e}, adversarial range [{lo:.3}, {hi:.3}], constant case {got:.3e}"))
}

// ---------------------------------------------------------------- 7

fn snr_calibration() -> Check {
    let w = ok(ricker_wavelet(30.0, 0.001, 81))?;
    let mut rng = RngState::new(7);
    let r: Vec<f64> = (0..100_000).map(|_| if rng.uniform() < 0.05 { rng.uniform_range(-0.3, 0.3) } else { 0.0 }).collect();
    let s = ok(synthesize_trace(&r, 0.001, &w))?;
    let section = TraceSection { grid: ok(RealGrid::from_vec(&[100_000, 1, 1], s.clone()))?, dt: 0.001, snr_db: None };
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for snr in [0.0, 10.0, 20.0, 30.0] {
        let noisy = ok(add_noise_snr(&section, snr, &mut rng.fork(snr as u64)))?;
        let m = measured_snr_db(&s, noisy.grid.data());
        worst = worst.max((m - snr).abs());
        parts.push(format!("{snr} dB -> {m:.4}"));
    }
    let detail = format!("{}; worst deviation {worst:.2e} dB", parts.join(", "));
    ensure!(worst <= 0.3, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 8

fn ibm_exact(word: u32) -> BigRational {
    let frac = BigInt::from(word & 0x00ff_ffff);
    let e = ((word >> 24) & 0x7f) as i64 - 64;
    let sixteen = BigRational::from_integer(BigInt::from(16));
    let mut scale = BigRational::from_integer(BigInt::from(1));
    for _ in 0..e.unsigned_abs() {
        scale = if e >= 0 { scale * &sixteen } else { scale / &sixteen };
    }
    let v = BigRational::from_integer(frac) * scale / BigRational::from_integer(BigInt::from(1u64 << 24));
    if word >> 31 == 1 {
        -v
    } else {
        v
    }
}

fn io_exactness(tmp: &Path) -> Check {
    let mut rng = RngState::new(8);
    let grid = real(&[64, 16, 1], &mut rng);
    let file = ok(GridFile::from_grid(&grid, 0.002))?;
    let path = tmp.join("g.osgd");
    ok(write_grid(&path, &file))?;
    let bytes = ok(std::fs::read(&path))?;
    let back = ok(read_grid(&path))?;
    ensure!(back.to_bytes() == bytes, "grid file bytes differ after roundtrip");
    let again = ok(GridFile::from_grid(&back.to_grid(), back.dt()))?;
    ensure!(again.to_bytes() == bytes, "grid file re-encode differs");

    let cfg = block_cfg();
    let m = ok(init_params::<f32>(&cfg, &mut RngState::new(3)))?;
    let meta = serde_json::json!({"epoch": 1});
    let ck = ok(checkpoint_bytes(&m, &meta))?;
    let (m2, meta2) = ok(checkpoint_from_bytes::<f32>(&ck, Some(&cfg)))?;
    ensure!(m2 == m && meta2 == meta, "checkpoint state differs after roundtrip");
    ensure!(ok(checkpoint_bytes(&m2, &meta2))? == ck, "checkpoint bytes differ after roundtrip");

    ensure!(ibm32_to_real(0x4264_0000) == 100.0, "0x42640000 decodes to {}", ibm32_to_real(0x4264_0000));
    for _ in 0..100 {
        let word = rng.next_u64() as u32;
        let got = ibm32_to_real(word);
        let want = ibm_exact(word);
        let exact = BigRational::from_float(got).map(|g| g == want).unwrap_or(false);
        ensure!(exact, "IBM word {word:#010x}: {got} vs {}", want.to_f64().unwrap_or(f64::NAN));
    }

    let section = TraceSection { grid: real(&[50, 7, 1], &mut rng), dt: 0.004, snr_db: None };
    let segy = ok(write_segy(&section, SampleFormat::Ieee32))?;
    let (h, traces) = ok(read_segy(&segy))?;
    let read = ok(section_from_segy(&h, &traces))?;
    ensure!(read.grid.dims() == section.grid.dims(), "SEG-Y dims {:?}", read.grid.dims());
    let exact = read.grid.data().iter().zip(section.grid.data()).all(|(a, b)| *a == *b as f32 as f64);
    ensure!(exact, "SEG-Y IEEE samples differ");
    Ok(format!("grid file {} B and checkpoint {} B byte-identical; 0x42640000 = 100 and 100 random IBM words exact; SEG-Y IEEE sample-exact", bytes.len(), ck.len()))
}

// ---------------------------------------------------------------- 9

fn pipeline_run(tmp: &Path, name: &str) -> Result<Vec<u8>, String> {
    let mut cfg = RunConfig::default();
    cfg.dataset.patch_size = (16, 16);
    cfg.dataset.sample_count = 12;
    cfg.dataset.val_count = 4;
    cfg.dataset.test_count = 4;
    cfg.dataset.layer_count_range = (2, 4);
    cfg.network.input_size = (16, 16);
    cfg.network.base_filters = 4;
    cfg.network.depth = 2;
    cfg.network.bottleneck_filters = 16;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 4;
    cfg.baseline.max_iters = 300;
    let cfg = ok(cfg.resolve(Some(99)))?;
    let root = tmp.join(name);
    let gen = ok(RunDir::create(&root, "gen"))?;
    ok(cmd_generate(&cfg, &gen))?;
    let train = ok(RunDir::create(&root, "train"))?;
    ok(cmd_train(&cfg, &gen.root, &train, false, false))?;
    let eval = ok(RunDir::create(&root, "eval"))?;
    let req = EvalRequest {
        models: vec![ModelSpec { name: "net".into(), checkpoint: train.path("checkpoints/best.osn") }],
        data: Some(gen.root.clone()),
        baseline: true,
        ..Default::default()
    };
    ok(cmd_evaluate(&cfg, &req, &eval))?;
    ok(std::fs::read(eval.path("tables/metrics.csv")))
}

fn determinism(tmp: &Path) -> Check {
    let a = pipeline_run(tmp, "first")?;
    let b = pipeline_run(tmp, "second")?;
    ensure!(a == b, "metrics CSVs differ");
    let rows = String::from_utf8_lossy(&a).lines().count() - 1;
    Ok(format!("two generate, train, evaluate runs give identical metrics CSVs ({} bytes, {rows} rows)", a.len()))
}

// ---------------------------------------------------------------- 10

fn parameter_accounting() -> Check {
    let mut rng = RngState::new(10);
    let mut lines = Vec::new();
    for _ in 0..10 {
        let depth = rng.int_range(1, 3);
        let base = [1usize, 2, 4][rng.int_range(0, 2)];
        let extra = rng.int_range(0, 1);
        let side = 1usize << (depth + extra);
        let cfg = NetworkConfig {
            input_size: (side, side << rng.int_range(0, 1)),
            base_filters: base,
            depth,
            bottleneck_filters: base << depth,
            mode_fraction: [0.25, 0.5, 1.0][rng.int_range(0, 2)],
            output_channels: rng.int_range(1, 2),
            spectral: rng.uniform() < 0.7,
            skip_source: if rng.uniform() < 0.5 { SkipSource::PrePool } else { SkipSource::PostSpectral },
            ..NetworkConfig::default()
        };
        let closed = param_count(&cfg);
        let m = ok(init_params::<f32>(&cfg, &mut RngState::new(0)))?;
        let enumerated: usize = m.store.iter().map(|p| p.value.real_count()).sum();
        ensure!(closed == enumerated && closed == m.param_count(), "{cfg:?}: closed form {closed}, enumeration {enumerated}");
        lines.push(closed);
    }
    let paper = NetworkConfig::paper();
    let total = param_count(&paper);
    let conv_only = param_count(&NetworkConfig { spectral: false, ..paper });
    Ok(format!(
        "10 random configs agree ({lines:?}); 128x128 config: {total} with spectral weights, {conv_only} without; published 1940817, delta {} / {}",
        total as i64 - 1_940_817,
        conv_only as i64 - 1_940_817
    ))
}

// ---------------------------------------------------------------- driver

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> (usize, bool) {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("PASS [{id:>2}] {name}: {d} ({secs:.1}s)");
            (id, true)
        }
        Err(d) => {
            println!("FAIL [{id:>2}] {name}: {d} ({secs:.1}s)");
            (id, false)
        }
    }
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |id: usize| wanted.is_empty() || wanted.contains(&id);
    let tmp = tempfile::tempdir().expect("temporary directory");
    let mut results = Vec::new();

    if on(1) {
        results.push(run(1, "FFT contract", fft_contract));
    }
    if on(2) {
        results.push(run(2, "gradient suite", gradient_suite));
    }
    if on(3) {
        results.push(run(3, "sparse baseline oracle", sparse_baseline));
    }
    if on(4) || on(5) {
        match catch_unwind(AssertUnwindSafe(|| desk_training(tmp.path()))).unwrap_or_else(|_| Err("training panicked".into())) {
            Ok(d) => {
                if on(4) {
                    results.push(run(4, "desk-scale training", || desk_criterion(&d)));
                }
                if on(5) {
                    results.push(run(5, "noise robustness ordering", || noise_ordering(&d)));
                }
            }
            Err(e) => {
                for (id, name) in [(4, "desk-scale training"), (5, "noise robustness ordering")] {
                    if on(id) {
                        results.push(run(id, name, || Err(e.clone())));
                    }
                }
            }
        }
    }
    if on(6) {
        results.push(run(6, "SSIM correctness", ssim_correctness));
    }
    if on(7) {
        results.push(run(7, "SNR calibration", snr_calibration));
    }
    if on(8) {
        results.push(run(8, "I/O bit-exactness", || io_exactness(tmp.path())));
    }
    if on(9) {
        results.push(run(9, "pipeline determinism", || determinism(tmp.path())));
    }
    if on(10) {
        results.push(run(10, "parameter accounting", parameter_accounting));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("acceptance: failed {failed:?}");
        // Failures are reported, not fatal, unless strict mode is requested.
        if std::env::var_os("ORTHOSEIS_ACCEPT_STRICT").is_some_and(|v| v != "0") {
            std::process::exit(1);
        }
    }
}
