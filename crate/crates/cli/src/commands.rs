use std::path::{Path, PathBuf};
use std::time::Instant;

use orthoseis::baseline::{invert_section, ConvOperator};
use orthoseis::io::{export_section_image, extract_patches, read_grid, stitch_patches, write_csv, write_grid, GridFile};
use orthoseis::net::{init_params, load_checkpoint, save_checkpoint, ModelState, NetworkConfig};
use orthoseis::seismic::{generate_sections, measured_snr_db, DatasetSpec, Snr, TraceSection, WaveletSpec};
use orthoseis::tensor::{RealGrid, RngState};
use orthoseis::train::{
    evaluate, fit_with, format_table, prepare_input, prepare_target, stack, ComparisonRow, EpochLog, MetricsRecord, PairSet,
    SsimConfig,
};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, Seeds};
use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// `out/<name>/{config.json, checkpoints, logs, figures, tables}`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(out: &Path, name: &str) -> Result<Self> {
        let root = out.join(name);
        for sub in ["checkpoints", "logs", "figures", "tables"] {
            mkdir(&root.join(sub))?;
        }
        Ok(Self { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn echo_config(&self, cfg: &RunConfig) -> Result<()> {
        write_text(&self.path("config.json"), &cfg.to_json())
    }
}

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| CliError::io(p, e))
}

fn read_text(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "grid".into())
}

// ---------------------------------------------------------------- generate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantEntry {
    pub label: String,
    /// Requested level; `null` for noiseless.
    pub snr_db: Option<f64>,
    /// Measured on the stored samples; `null` for noiseless.
    pub measured_snr_db: Option<f64>,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionEntry {
    pub index: usize,
    pub impedance: String,
    pub reflectivity: String,
    pub variants: Vec<VariantEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub seed: u64,
    pub sections: Vec<SectionEntry>,
}

/// Paths are relative to the directory holding the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seeds: Seeds,
    pub dataset: DatasetSpec,
    pub splits: Vec<SplitEntry>,
}

impl Manifest {
    pub fn split(&self, name: &str) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| CliError::Usage(format!("manifest has no {name} split")))
    }
}

fn stored(grid: &RealGrid<f64>, dt: f64) -> Result<GridFile> {
    Ok(GridFile::from_grid(grid, dt)?)
}

/// Synthesizes train/val/test sections into `<run>/data`.
pub fn cmd_generate(cfg: &RunConfig, run: &RunDir) -> Result<Manifest> {
    run.echo_config(cfg)?;
    let spec = &cfg.dataset;
    let data = run.path("data");
    let root = RngState::new(spec.seed);
    let counts = [spec.sample_count, spec.val_count, spec.test_count];
    let mut splits = Vec::new();
    for (k, (name, count)) in SPLITS.iter().zip(counts).enumerate() {
        let rng = root.fork(k as u64);
        let seed = rng.clone().next_u64();
        let sections = generate_sections(spec, count, &rng)?;
        let mut entries = Vec::with_capacity(count);
        for sub in ["impedance", "reflectivity"] {
            mkdir(&data.join(name).join(sub))?;
        }
        for level in &spec.snr_db_list {
            mkdir(&data.join(name).join(level.label()))?;
        }
        for (i, s) in sections.iter().enumerate() {
            let file = format!("{i:04}.osgd");
            let dt = s.clean.dt;
            let imp = format!("{name}/impedance/{file}");
            let refl = format!("{name}/reflectivity/{file}");
            write_grid(data.join(&imp), &stored(&s.impedance.grid, dt)?)?;
            write_grid(data.join(&refl), &stored(&s.reflectivity.grid, dt)?)?;
            let clean = stored(&s.clean.grid, dt)?.to_grid();
            let mut variants = Vec::new();
            for (level, t) in spec.snr_db_list.iter().zip(&s.noisy) {
                let path = format!("{name}/{}/{file}", level.label());
                let g = stored(&t.grid, dt)?;
                write_grid(data.join(&path), &g)?;
                let measured = match level {
                    Snr::Clean(_) => None,
                    Snr::Db(_) => Some(measured_snr_db(clean.data(), g.to_grid().data())),
                };
                let snr_db = match level {
                    Snr::Clean(_) => None,
                    Snr::Db(v) => Some(*v),
                };
                variants.push(VariantEntry { label: level.label(), snr_db, measured_snr_db: measured, path });
            }
            entries.push(SectionEntry { index: i, impedance: imp, reflectivity: refl, variants });
        }
        splits.push(SplitEntry { name: name.to_string(), seed, sections: entries });
    }
    let manifest = Manifest { seeds: cfg.seeds(), dataset: spec.clone(), splits };
    write_text(&data.join(MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Accepts either a data directory or a run directory containing `data/`.
pub fn locate_data(dir: &Path) -> Result<PathBuf> {
    for cand in [dir.to_path_buf(), dir.join("data")] {
        if cand.join(MANIFEST).is_file() {
            return Ok(cand);
        }
    }
    Err(CliError::Usage(format!("no {MANIFEST} under {}", dir.display())))
}

pub fn load_manifest(data: &Path) -> Result<Manifest> {
    Ok(serde_json::from_str(&read_text(&data.join(MANIFEST))?)?)
}

/// `(seismic, reflectivity)` grids of one split at one noise label.
pub fn load_split(data: &Path, manifest: &Manifest, split: &str, label: &str) -> Result<(Vec<RealGrid<f64>>, Vec<RealGrid<f64>>)> {
    let entry = manifest.split(split)?;
    let mut xs = Vec::with_capacity(entry.sections.len());
    let mut ys = Vec::with_capacity(entry.sections.len());
    for s in &entry.sections {
        let v = s
            .variants
            .iter()
            .find(|v| v.label == label)
            .ok_or_else(|| CliError::Usage(format!("section {} of {split} has no {label} variant", s.index)))?;
        xs.push(read_grid(data.join(&v.path))?.to_grid());
        ys.push(read_grid(data.join(&s.reflectivity))?.to_grid());
    }
    Ok((xs, ys))
}

// ---------------------------------------------------------------- train

/// The epoch CSV row; wall-clock time goes to a separate log so reruns
/// produce identical CSVs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mae: f64,
    pub mse: f64,
    pub ssim: f64,
    pub r2: f64,
}

impl From<&EpochLog> for EpochRow {
    fn from(l: &EpochLog) -> Self {
        Self { epoch: l.epoch, train_loss: l.train_loss, val_loss: l.val_loss, mae: l.mae, mse: l.mse, ssim: l.ssim, r2: l.r2 }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
struct EpochTiming {
    epoch: usize,
    seconds: f64,
}

/// Free-form metadata stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Converts a normalized prediction to reflectivity per unit of input half-range.
    pub amplitude_ratio: f64,
    pub epoch: usize,
    pub train_level: String,
    pub seeds: Seeds,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: ModelState<f32>,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub meta: CheckpointMeta,
}

/// Trains on the `train` split and selects on `val`, both at `io.train_level`.
/// `plain` swaps every spectral layer for the identity.
pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, run: &RunDir, plain: bool, verbose: bool) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    if plain {
        cfg.network.spectral = false;
    }
    cfg.validate()?;
    let data = locate_data(data_dir)?;
    let manifest = load_manifest(&data)?;
    if manifest.dataset.patch_size != cfg.network.input_size {
        return Err(CliError::Config(format!(
            "dataset patches are {:?} but network.input_size is {:?}",
            manifest.dataset.patch_size, cfg.network.input_size
        )));
    }
    let label = cfg.io.train_level.label();
    let (tx, ty) = load_split(&data, &manifest, "train", &label)?;
    let (vx, vy) = load_split(&data, &manifest, "val", &label)?;
    let train = PairSet::<f32>::from_grids(&tx, &ty)?;
    let val = PairSet::<f32>::from_grids(&vx, &vy)?;
    run.echo_config(&cfg)?;

    let model = init_params::<f32>(&cfg.network, &mut RngState::new(cfg.init_seed))?;
    let out = fit_with(model, &train, &val, &cfg.train, |l| {
        if verbose {
            eprintln!(
                "epoch {:>3}  train {:.5}  val {:.5}  ssim {:.4}  r2 {:.4}  {:.1}s",
                l.epoch, l.train_loss, l.val_loss, l.ssim, l.r2, l.seconds
            );
        }
    })?;
    let rows: Vec<EpochRow> = out.logs.iter().map(EpochRow::from).collect();
    write_csv(run.path("logs/epochs.csv"), &rows)?;
    let timing: Vec<EpochTiming> = out.logs.iter().map(|l| EpochTiming { epoch: l.epoch, seconds: l.seconds }).collect();
    write_csv(run.path("logs/timing.csv"), &timing)?;

    let meta = CheckpointMeta { amplitude_ratio: train.amplitude_ratio(), epoch: out.best_epoch, train_level: label, seeds: cfg.seeds() };
    save_checkpoint(run.path("checkpoints/best.osn"), &out.best, &serde_json::to_value(&meta)?)?;
    let last_meta = CheckpointMeta { epoch: out.logs.len(), ..meta.clone() };
    save_checkpoint(run.path("checkpoints/final.osn"), &out.last, &serde_json::to_value(&last_meta)?)?;
    Ok(TrainOutcome { best: out.best, best_epoch: out.best_epoch, logs: out.logs, meta })
}

pub fn load_model(path: &Path, expected: Option<&NetworkConfig>) -> Result<(ModelState<f32>, CheckpointMeta)> {
    let (model, meta) = load_checkpoint::<f32>(path, expected)?;
    let meta: CheckpointMeta =
        serde_json::from_value(meta).map_err(|e| CliError::Usage(format!("{}: checkpoint metadata: {e}", path.display())))?;
    Ok((model, meta))
}

// ---------------------------------------------------------------- infer

#[derive(Debug, Clone, Serialize)]
pub struct InferReport {
    pub patches: usize,
    pub total_seconds: f64,
    pub seconds_per_patch: f64,
    /// Against `--target`, in physical units.
    pub metrics: Option<MetricsRecord>,
}

/// Runs a trained model over a whole section, patch by patch.
pub fn predict_section(
    model: &ModelState<f32>,
    meta: &CheckpointMeta,
    section: &RealGrid<f64>,
    stride: Option<(usize, usize)>,
) -> Result<(RealGrid<f64>, usize, f64)> {
    if section.rank() != 3 || section.channels() != 1 {
        return Err(CliError::Usage(format!("sections are (time, trace, 1), got {:?}", section.dims())));
    }
    let size = model.config.input_size;
    let (patches, index) = extract_patches(section, 0, size, stride.unwrap_or(size), &mut RngState::new(0), false)?;
    let mut inputs = Vec::with_capacity(patches.len());
    let mut half = Vec::with_capacity(patches.len());
    for p in &patches {
        let (x, s) = prepare_input(p)?;
        inputs.push(x.cast::<f32>());
        half.push(if s.degenerate { 0.0 } else { 0.5 * (s.b - s.a) });
    }
    let start = Instant::now();
    let preds = model.predict_many(&inputs)?;
    let seconds = start.elapsed().as_secs_f64();
    let scaled: Vec<RealGrid<f64>> =
        preds.iter().zip(&half).map(|(p, &h)| p.cast::<f64>().map(|v| v * meta.amplitude_ratio * h)).collect();
    Ok((stitch_patches(&scaled, &index, section.dims())?, patches.len(), seconds))
}

pub fn cmd_infer(
    cfg: Option<&RunConfig>,
    checkpoint: &Path,
    input: &Path,
    target: Option<&Path>,
    run: &RunDir,
) -> Result<InferReport> {
    let (model, meta) = load_model(checkpoint, cfg.map(|c| &c.network))?;
    let file = read_grid(input)?;
    let section = file.to_grid();
    let stride = cfg.and_then(|c| c.io.patch_stride);
    let (pred, patches, seconds) = predict_section(&model, &meta, &section, stride)?;
    let name = stem(input);
    mkdir(&run.path("outputs"))?;
    write_grid(run.path(&format!("outputs/{name}_pred.osgd")), &GridFile::from_grid(&pred, file.dt())?)?;
    if cfg.is_none_or(|c| c.io.export_images) {
        export_section_image(&section, run.path(&format!("figures/{name}_input.pgm")))?;
        export_section_image(&pred, run.path(&format!("figures/{name}_pred.pgm")))?;
    }
    let metrics = match target {
        Some(t) => {
            let t = read_grid(t)?.to_grid();
            if t.dims() != pred.dims() {
                return Err(CliError::Usage(format!("target {:?} does not match prediction {:?}", t.dims(), pred.dims())));
            }
            let ssim = cfg.map(|c| c.train.ssim).unwrap_or_default();
            let m = MetricsRecord::compute(&pred, &t, &SsimConfig { dynamic_range: None, ..ssim })?;
            write_csv(run.path(&format!("tables/{name}_metrics.csv")), &[m])?;
            Some(m)
        }
        None => None,
    };
    let report = InferReport { patches, total_seconds: seconds, seconds_per_patch: seconds / patches as f64, metrics };
    write_text(&run.path(&format!("logs/{name}_infer.json")), &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

// ---------------------------------------------------------------- baseline

#[derive(Debug, Clone, Copy, Serialize)]
struct ObjectiveRow {
    trace: usize,
    iteration: usize,
    objective: f64,
}

/// Trace-by-trace sparse inversion with the configured wavelet resampled at
/// the grid's own sampling interval.
pub fn baseline_section(cfg: &RunConfig, section: &RealGrid<f64>, dt: f64) -> Result<(RealGrid<f64>, Vec<Vec<f64>>)> {
    let wavelet = WaveletSpec { dt, ..cfg.dataset.wavelet }.build()?;
    let op = ConvOperator::new(wavelet, section.height());
    let traces = TraceSection { grid: section.clone(), dt, snr_db: None };
    let (r, sols) = invert_section(&traces, &op, &cfg.baseline)?;
    Ok((r.grid, sols.into_iter().map(|s| s.history).collect()))
}

pub fn cmd_baseline(cfg: &RunConfig, input: &Path, run: &RunDir) -> Result<RealGrid<f64>> {
    run.echo_config(cfg)?;
    let file = read_grid(input)?;
    let section = file.to_grid();
    let (r, histories) = baseline_section(cfg, &section, file.dt())?;
    let name = stem(input);
    mkdir(&run.path("outputs"))?;
    write_grid(run.path(&format!("outputs/{name}_bpi.osgd")), &GridFile::from_grid(&r, file.dt())?)?;
    let rows: Vec<ObjectiveRow> = histories
        .iter()
        .enumerate()
        .flat_map(|(trace, h)| h.iter().enumerate().map(move |(i, &objective)| ObjectiveRow { trace, iteration: i + 1, objective }))
        .collect();
    write_csv(run.path(&format!("tables/{name}_objective.csv")), &rows)?;
    if cfg.io.export_images {
        export_section_image(&r, run.path(&format!("figures/{name}_bpi.pgm")))?;
    }
    Ok(r)
}

// ---------------------------------------------------------------- evaluate

/// One explicit `(method, snr, prediction, target)` comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalEntry {
    pub method: String,
    pub snr: String,
    pub prediction: PathBuf,
    pub target: PathBuf,
}

impl std::str::FromStr for EvalEntry {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(',').collect();
        match parts.as_slice() {
            [m, n, p, t] if !m.is_empty() && !n.is_empty() => Ok(Self {
                method: m.to_string(),
                snr: n.to_string(),
                prediction: PathBuf::from(p),
                target: PathBuf::from(t),
            }),
            _ => Err(format!("expected METHOD,SNR,PREDICTION,TARGET, got {s:?}")),
        }
    }
}

/// A named checkpoint to score on every noise level of the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub checkpoint: PathBuf,
}

impl std::str::FromStr for ModelSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once('=') {
            Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok(Self { name: n.to_string(), checkpoint: PathBuf::from(p) }),
            _ => Err(format!("expected NAME=CHECKPOINT, got {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalRequest {
    pub entries: Vec<EvalEntry>,
    pub models: Vec<ModelSpec>,
    /// Test split source for `models` and `baseline`.
    pub data: Option<PathBuf>,
    /// Adds sparse-inversion rows on the test split.
    pub baseline: bool,
}

fn entry_row(e: &EvalEntry, ssim: &SsimConfig) -> Result<ComparisonRow> {
    let p = read_grid(&e.prediction)?.to_grid();
    let t = read_grid(&e.target)?.to_grid();
    if p.dims() != t.dims() {
        return Err(CliError::Usage(format!(
            "unpaired files: {} is {:?}, {} is {:?}",
            e.prediction.display(),
            p.dims(),
            e.target.display(),
            t.dims()
        )));
    }
    Ok(ComparisonRow::new(&e.method, &e.snr, &MetricsRecord::compute(&p, &t, ssim)?))
}

/// Sparse inversion scored in the same per-patch target scaling as the network.
fn baseline_row(cfg: &RunConfig, xs: &[RealGrid<f64>], ys: &[RealGrid<f64>], dt: f64, label: &str) -> Result<ComparisonRow> {
    let mut preds = Vec::with_capacity(xs.len());
    let mut targets = Vec::with_capacity(xs.len());
    for (x, y) in xs.iter().zip(ys) {
        let (r, _) = baseline_section(cfg, x, dt)?;
        let (t, stats) = prepare_target(y)?;
        preds.push(r.map(|v| stats.apply(v)));
        targets.push(t);
    }
    let m = MetricsRecord::compute(&stack(&preds)?, &stack(&targets)?, &SsimConfig { dynamic_range: None, ..cfg.train.ssim })?;
    Ok(ComparisonRow::new("BPI", label, &m))
}

/// Writes `tables/metrics.csv` and `tables/metrics.txt`.
pub fn cmd_evaluate(cfg: &RunConfig, req: &EvalRequest, run: &RunDir) -> Result<Vec<ComparisonRow>> {
    if req.entries.is_empty() && req.models.is_empty() && !req.baseline {
        return Err(CliError::Usage("nothing to evaluate: pass --entry, --model or --baseline".into()));
    }
    let ssim = SsimConfig { dynamic_range: None, ..cfg.train.ssim };
    let mut rows = Vec::new();
    for e in &req.entries {
        rows.push(entry_row(e, &ssim)?);
    }
    if !req.models.is_empty() || req.baseline {
        let dir = req.data.as_ref().ok_or_else(|| CliError::Usage("--model and --baseline need --data".into()))?;
        let data = locate_data(dir)?;
        let manifest = load_manifest(&data)?;
        let models = req
            .models
            .iter()
            .map(|m| load_model(&m.checkpoint, None).map(|(s, _)| (m.name.clone(), s)))
            .collect::<Result<Vec<_>>>()?;
        for level in &manifest.dataset.snr_db_list {
            let label = level.label();
            let (xs, ys) = load_split(&data, &manifest, "test", &label)?;
            let set = PairSet::<f32>::from_grids(&xs, &ys)?;
            for (name, model) in &models {
                rows.push(ComparisonRow::new(name, &label, &evaluate(model, &set, &ssim)?));
            }
            if req.baseline {
                rows.push(baseline_row(cfg, &xs, &ys, manifest.dataset.wavelet.dt, &label)?);
            }
        }
    }
    write_csv(run.path("tables/metrics.csv"), &rows)?;
    write_text(&run.path("tables/metrics.txt"), &format_table(&rows))?;
    Ok(rows)
}
