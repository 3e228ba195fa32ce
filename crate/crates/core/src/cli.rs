//! Pipeline commands and experiment sweeps.
//!
//! Each `cmd_*` function is what the `subnet-id` binary runs for the
//! matching subcommand; they are public so that experiments can be driven
//! from Rust as well. All artifacts are JSON or CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    calibrate_input_std, generate_white_gaussian, load_dataset, simulate_wh, split_counts, CalibrationSettings, Dataset,
    Normalizer, WhSystemConfig,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_bla, evaluate_model, write_errors_csv, EvalReport};
use crate::linear_id::{build_recon_maps, n4sid_estimate, LinearSS};
use crate::subnet::{apply_init_scheme, subnet_new, train, Scheme, SubnetDims, SubnetModel, TrainConfig, TrainHistory};

/// Where the data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSource {
    /// Simulated Wiener-Hammerstein system, calibrated per nonlinearity level.
    Wh(WhSystemConfig),
    /// Measured data already split into three CSV files.
    External(ExternalData),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalData {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Standard deviation of additive output noise (0 = noiseless).
    pub noise_std: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 20_000,
            n_val: 5_000,
            n_test: 5_000,
            noise_std: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_x: usize,
    pub n_a: usize,
    pub n_b: usize,
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_x: 4,
            n_a: 4,
            n_b: 4,
            hidden: vec![32, 32],
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, n_u: usize, n_y: usize) -> SubnetDims {
        SubnetDims {
            n_x: self.n_x,
            n_u,
            n_y,
            n_a: self.n_a,
            n_b: self.n_b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlaConfig {
    pub order: usize,
    /// Block rows of the subspace fit; `None` uses `4 * order`.
    pub horizon: Option<usize>,
}

impl Default for BlaConfig {
    fn default() -> Self {
        Self { order: 4, horizon: None }
    }
}

impl BlaConfig {
    pub fn horizon(&self) -> usize {
        self.horizon.unwrap_or(4 * self.order)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub system: SystemSource,
    pub data: DataConfig,
    pub nl_targets: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Seeds per (level, scheme) cell: `seed, seed + 1, ...`.
    pub runs: usize,
    /// Base seed for excitation, noise, initialization and batching.
    pub seed: u64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub bla: BlaConfig,
    pub calibration: CalibrationSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemSource::Wh(WhSystemConfig::default()),
            data: DataConfig::default(),
            nl_targets: vec![1.0, 5.0, 10.0, 20.0, 40.0],
            schemes: Scheme::ALL.to_vec(),
            runs: 4,
            seed: 0,
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            bla: BlaConfig::default(),
            calibration: CalibrationSettings::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// CPU-friendly defaults: 20k training samples, width 32, 100 epochs.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Sizes used for the published simulation study (150k samples, width
    /// 64, batch 512, 500 epochs). Hours of CPU time per cell.
    pub fn paper_scale() -> Self {
        let mut cfg = Self::default();
        cfg.data = DataConfig {
            n_train: 150_000,
            n_val: 25_000,
            n_test: 25_000,
            noise_std: 0.0,
        };
        cfg.model.hidden = vec![64, 64];
        cfg.train.batch_size = 512;
        cfg.train.epochs = 500;
        cfg.calibration.record_len = 150_000;
        cfg
    }

    /// Wiener-Hammerstein benchmark layout on external CSV files: order 6,
    /// `T = 80`, `n = 6`, batch 1024.
    pub fn wh_benchmark(train: PathBuf, val: PathBuf, test: PathBuf) -> Self {
        let mut cfg = Self::default();
        cfg.system = SystemSource::External(ExternalData { train, val, test });
        cfg.nl_targets = Vec::new();
        cfg.model = ModelConfig {
            n_x: 6,
            n_a: 6,
            n_b: 6,
            hidden: vec![64, 64],
        };
        cfg.bla.order = 6;
        cfg.calibration.window = 6;
        cfg.train.t_len = 80;
        cfg.train.batch_size = 1024;
        cfg.train.epochs = 3000;
        cfg
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme is required".into()));
        }
        self.train.validate()?;
        let m = &self.model;
        if m.n_x == 0 || m.n_a == 0 || m.n_b == 0 || m.hidden.is_empty() || m.hidden.contains(&0) {
            return Err(Error::Config("model dimensions and hidden widths must be positive".into()));
        }
        if self.bla.order == 0 || self.bla.horizon() <= self.bla.order {
            return Err(Error::Config(format!(
                "BLA horizon {} must exceed the order {}",
                self.bla.horizon(),
                self.bla.order
            )));
        }
        if let SystemSource::Wh(wh) = &self.system {
            wh.validate()?;
            if self.nl_targets.is_empty() {
                return Err(Error::Config("a simulated system needs at least one nl target".into()));
            }
            if let Some(t) = self.nl_targets.iter().find(|t| !(0.5..=60.0).contains(*t)) {
                return Err(Error::Config(format!("nl target {t} is outside [0.5, 60]")));
            }
            let d = &self.data;
            if d.n_train == 0 || d.n_val == 0 || d.n_test == 0 {
                return Err(Error::Config("split sizes must be positive".into()));
            }
            if !(self.data.noise_std >= 0.0) {
                return Err(Error::Config("noise_std must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Seeds of the runs in every cell.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.runs as u64).map(|r| self.seed + r).collect()
    }
}

/// Directory label of a nonlinearity level, e.g. `nl5` or `nl2.5`.
pub fn level_label(nl: f64) -> String {
    format!("nl{nl}")
}

/// Artifact prefix of one grid cell run.
pub fn run_name(level: &str, scheme: Scheme, seed: u64) -> String {
    format!("{level}_scheme{}_run{seed}", scheme.tag())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelManifest {
    pub nl_target: f64,
    pub nl_achieved: f64,
    pub input_std: f64,
    pub calibration_steps: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateManifest {
    pub system: WhSystemConfig,
    pub levels: Vec<LevelManifest>,
}

/// Calibrates the input level for every nl target, simulates the system
/// and writes `nl{level}/{train,val,test}.csv` under `out` together with
/// `manifest.json`.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateManifest> {
    cfg.validate()?;
    let SystemSource::Wh(wh) = &cfg.system else {
        return Err(Error::Config("generate needs a simulated system".into()));
    };
    fs::create_dir_all(out)?;
    let d = &cfg.data;
    let total = d.n_train + d.n_val + d.n_test;
    let mut calibration = cfg.calibration.clone();
    calibration.record_len = d.n_train;
    let unit = generate_white_gaussian(total, 1.0, cfg.seed);

    let mut levels = Vec::new();
    for &target in &cfg.nl_targets {
        let cal = calibrate_input_std(target, wh, cfg.bla.order, cfg.seed, &calibration)?;
        log::info!(
            "{}: input std {:.5} gives {:.3} %nl ({} steps)",
            level_label(target),
            cal.input_std,
            cal.achieved_nl,
            cal.steps
        );
        let u: Vec<f64> = unit.iter().map(|v| v * cal.input_std).collect();
        let mut system = wh.clone();
        system.input_std = cal.input_std;
        let ds = simulate_wh(&system, &u, d.noise_std, cfg.seed.wrapping_add(1))?;
        let splits = split_counts(&ds, [d.n_train, d.n_val, d.n_test])?;
        let dir = out.join(level_label(target));
        fs::create_dir_all(&dir)?;
        let paths = [dir.join("train.csv"), dir.join("val.csv"), dir.join("test.csv")];
        splits.train.save(&paths[0])?;
        splits.val.save(&paths[1])?;
        splits.test.save(&paths[2])?;
        let [train, val, test] = paths;
        let level = LevelManifest {
            nl_target: target,
            nl_achieved: cal.achieved_nl,
            input_std: cal.input_std,
            calibration_steps: cal.steps,
            seed: cfg.seed,
            noise_std: d.noise_std,
            n_train: d.n_train,
            n_val: d.n_val,
            n_test: d.n_test,
            train,
            val,
            test,
        };
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&level)?)?;
        levels.push(level);
    }
    let manifest = GenerateManifest {
        system: wh.clone(),
        levels,
    };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct BlaOutcome {
    pub model: LinearSS,
    pub normalizer: Normalizer,
    /// Simulation scores on the normalized validation and test records.
    pub val: EvalReport,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlaSummary {
    order: usize,
    horizon: usize,
    window: usize,
    val_nrms: f64,
    test_nrms: f64,
    percent_nl: f64,
}

/// Fits a BLA of `bla.order` on the normalized training record and scores
/// its simulation (initial state from a `window`-sample past) on the
/// validation and test records.
pub fn fit_bla(train_ds: &Dataset, val_ds: &Dataset, test_ds: &Dataset, bla: &BlaConfig, window: usize) -> Result<BlaOutcome> {
    let normalizer = Normalizer::fit(train_ds)?;
    let model = n4sid_estimate(&normalizer.apply(train_ds)?, bla.order, bla.horizon())?;
    let (val, _) = evaluate_bla(&model, &normalizer.apply(val_ds)?, window)?;
    let (test, _) = evaluate_bla(&model, &normalizer.apply(test_ds)?, window)?;
    Ok(BlaOutcome {
        model,
        normalizer,
        val,
        test,
    })
}

fn write_bla(outcome: &BlaOutcome, bla: &BlaConfig, out: &Path, prefix: &str) -> Result<()> {
    outcome.model.save(out.join(format!("{prefix}bla.json")))?;
    let summary = BlaSummary {
        order: bla.order,
        horizon: bla.horizon(),
        window: outcome.test.n,
        val_nrms: outcome.val.nrms,
        test_nrms: outcome.test.nrms,
        percent_nl: outcome.test.percent_nl.unwrap_or(f64::NAN),
    };
    fs::write(out.join(format!("{prefix}bla_report.json")), serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

/// `bla` command: writes `bla.json` (the linear model, in normalized units)
/// and `bla_report.json` under `out`.
pub fn cmd_bla(data: &ExternalData, bla: &BlaConfig, window: usize, out: &Path) -> Result<BlaOutcome> {
    let (train_ds, val_ds, test_ds) = load_splits(data)?;
    let outcome = fit_bla(&train_ds, &val_ds, &test_ds, bla, window)?;
    fs::create_dir_all(out)?;
    write_bla(&outcome, bla, out, "")?;
    log::info!(
        "BLA order {}: test NRMS {:.5}, {:.2} %nl",
        bla.order,
        outcome.test.nrms,
        outcome.test.percent_nl.unwrap_or(f64::NAN)
    );
    Ok(outcome)
}

fn load_splits(data: &ExternalData) -> Result<(Dataset, Dataset, Dataset)> {
    Ok((
        load_dataset(&data.train, None)?,
        load_dataset(&data.val, None)?,
        load_dataset(&data.test, None)?,
    ))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best validation snapshot, carrying its normalizer.
    pub model: SubnetModel,
    pub history: TrainHistory,
    /// Test score in engineering units.
    pub test: EvalReport,
}

/// Initializes a model for `scheme`, trains it and scores the best snapshot
/// on the test record. `bla` must be fitted on the same normalization.
#[allow(clippy::too_many_arguments)]
pub fn train_model(
    train_ds: &Dataset,
    val_ds: &Dataset,
    test_ds: &Dataset,
    normalizer: &Normalizer,
    bla: Option<&LinearSS>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let dims = model_cfg.dims(train_ds.n_u(), train_ds.n_y());
    let scheme = train_cfg.scheme;
    let base = subnet_new(dims, &model_cfg.hidden, train_cfg.seed);
    let maps = match (scheme, bla) {
        (Scheme::LinDyLinEnc, Some(ss)) => Some(build_recon_maps(ss, dims.lag())?),
        _ => None,
    };
    let init = apply_init_scheme(&base, scheme, bla, maps.as_ref())?;
    let (mut model, history) = train(&init, &normalizer.apply(train_ds)?, &normalizer.apply(val_ds)?, train_cfg)?;
    model.normalizer = Some(normalizer.clone());
    let (test, _) = evaluate_model(&model, test_ds, normalizer)?;
    Ok(TrainOutcome { model, history, test })
}

fn write_run(outcome: &TrainOutcome, out: &Path, name: &str) -> Result<()> {
    outcome.model.save(out.join(format!("{name}_model.json")))?;
    outcome.history.save_csv(out.join(format!("{name}_history.csv")))?;
    outcome.test.save(out.join(format!("{name}_test.json")))?;
    Ok(())
}

/// `train` command. Writes `{name}_model.json`, `{name}_history.csv` and
/// `{name}_test.json` under `out`.
pub fn cmd_train(
    data: &ExternalData,
    bla_path: Option<&Path>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    out: &Path,
    name: &str,
) -> Result<TrainOutcome> {
    let (train_ds, val_ds, test_ds) = load_splits(data)?;
    let bla = match bla_path {
        Some(p) => Some(LinearSS::load(p)?),
        None if train_cfg.scheme.needs_bla() => {
            return Err(Error::Config(format!("scheme {} needs a BLA file", train_cfg.scheme)));
        }
        None => None,
    };
    let normalizer = Normalizer::fit(&train_ds)?;
    let outcome = train_model(&train_ds, &val_ds, &test_ds, &normalizer, bla.as_ref(), model_cfg, train_cfg)?;
    fs::create_dir_all(out)?;
    write_run(&outcome, out, name)?;
    Ok(outcome)
}

/// `evaluate` command: simulates a saved model on a CSV record, optionally
/// writing per-sample errors.
pub fn cmd_evaluate(model_path: &Path, data_path: &Path, errors_csv: Option<&Path>) -> Result<EvalReport> {
    let model = SubnetModel::load(model_path)?;
    let ds = load_dataset(data_path, None)?;
    let normalizer = model
        .normalizer
        .clone()
        .unwrap_or_else(|| Normalizer::identity(ds.n_u(), ds.n_y()));
    let (report, y_hat) = evaluate_model(&model, &ds, &normalizer)?;
    if let Some(path) = errors_csv {
        let file = std::io::BufWriter::new(fs::File::create(path)?);
        write_errors_csv(file, report.n, &ds.y()[report.n * ds.n_y()..], &y_hat, ds.n_y())?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    /// `None` for external data.
    pub nl_target: Option<f64>,
    pub nl_achieved: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub test_nrms: f64,
    pub best_epoch: usize,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub nl_target: Option<f64>,
    pub scheme: Scheme,
    pub median_test_nrms: f64,
    pub succeeded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBla {
    pub nl_target: Option<f64>,
    pub val_nrms: f64,
    pub test_nrms: f64,
    pub percent_nl: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub cells: Vec<CellResult>,
    pub medians: Vec<MedianRow>,
    pub bla: Vec<LevelBla>,
    /// Training histories of the successful runs, keyed by run name.
    pub histories: Vec<(String, TrainHistory)>,
}

impl ExperimentSummary {
    pub fn all_succeeded(&self) -> bool {
        self.cells.iter().all(|c| c.status == "ok")
    }

    pub fn median(&self, nl_target: Option<f64>, scheme: Scheme) -> Option<f64> {
        self.medians
            .iter()
            .find(|m| m.nl_target == nl_target && m.scheme == scheme)
            .map(|m| m.median_test_nrms)
    }
}

/// Middle value of the sorted finite entries (mean of the two middle ones
/// for an even count); `NaN` if there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_summary_csv<W: std::io::Write>(w: W, cells: &[CellResult]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["nl_target", "nl_achieved", "scheme", "seed", "test_nrms", "best_epoch", "status"])?;
    for c in cells {
        wtr.write_record([
            opt_to_string(c.nl_target),
            c.nl_achieved.to_string(),
            c.scheme.to_string(),
            c.seed.to_string(),
            c.test_nrms.to_string(),
            c.best_epoch.to_string(),
            c.status.clone(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

fn write_medians_csv(path: &Path, rows: &[MedianRow], bla: &[LevelBla]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["nl_target", "scheme", "median_test_nrms", "succeeded"])?;
    for r in rows {
        wtr.write_record([
            opt_to_string(r.nl_target),
            r.scheme.to_string(),
            r.median_test_nrms.to_string(),
            r.succeeded.to_string(),
        ])?;
    }
    for b in bla {
        wtr.write_record([opt_to_string(b.nl_target), "BLA".into(), b.test_nrms.to_string(), "1".into()])?;
    }
    wtr.flush()?;
    Ok(())
}

fn status_of(e: &Error) -> String {
    match e {
        Error::TrainingDivergence { .. } => "diverged".into(),
        Error::RolloutDivergence { .. } => "diverged".into(),
        _ => "failed".into(),
    }
}

struct Level {
    label: String,
    nl_target: Option<f64>,
    splits: (Dataset, Dataset, Dataset),
}

/// Runs the (level x scheme x seed) grid.
///
/// Writes under `cfg.output_dir`: the resolved `config.json`, generated data
/// (simulated systems only), per level `{level}_bla.json` and
/// `{level}_bla_report.json`, per run `{level}_scheme{tag}_run{seed}_*`
/// artifacts, `summary.csv` and `medians.csv`. A failing run is recorded
/// with its status and the sweep continues.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<ExperimentSummary> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out)?;
    cfg.save(out.join("config.json"))?;

    let mut levels = Vec::new();
    let mut achieved = Vec::new();
    match &cfg.system {
        SystemSource::Wh(_) => {
            let manifest = cmd_generate(cfg, &out.join("data"))?;
            for lvl in manifest.levels {
                let data = ExternalData {
                    train: lvl.train,
                    val: lvl.val,
                    test: lvl.test,
                };
                levels.push(Level {
                    label: level_label(lvl.nl_target),
                    nl_target: Some(lvl.nl_target),
                    splits: load_splits(&data)?,
                });
                achieved.push(Some(lvl.nl_achieved));
            }
        }
        SystemSource::External(data) => {
            levels.push(Level {
                label: "ext".into(),
                nl_target: None,
                splits: load_splits(data)?,
            });
            achieved.push(None);
        }
    }

    let window = cfg.model.n_a.max(cfg.model.n_b);
    let mut cells = Vec::new();
    let mut medians = Vec::new();
    let mut blas = Vec::new();
    let mut histories = Vec::new();
    for (level, nl_calibrated) in levels.iter().zip(achieved) {
        let (train_ds, val_ds, test_ds) = &level.splits;
        let bla = match fit_bla(train_ds, val_ds, test_ds, &cfg.bla, window) {
            Ok(b) => {
                write_bla(&b, &cfg.bla, out, &format!("{}_", level.label))?;
                blas.push(LevelBla {
                    nl_target: level.nl_target,
                    val_nrms: b.val.nrms,
                    test_nrms: b.test.nrms,
                    percent_nl: b.test.percent_nl.unwrap_or(f64::NAN),
                });
                Some(b)
            }
            Err(e) => {
                log::error!("{}: BLA estimation failed: {e}", level.label);
                None
            }
        };
        let nl_achieved = nl_calibrated
            .or_else(|| bla.as_ref().and_then(|b| b.test.percent_nl))
            .unwrap_or(f64::NAN);
        let normalizer = Normalizer::fit(train_ds)?;

        for &scheme in &cfg.schemes {
            let mut nrms = Vec::new();
            for seed in cfg.run_seeds() {
                let name = run_name(&level.label, scheme, seed);
                let train_cfg = TrainConfig {
                    seed,
                    scheme,
                    ..cfg.train.clone()
                };
                let result = if scheme.needs_bla() && bla.is_none() {
                    Err(Error::Config("no BLA available for this level".into()))
                } else {
                    train_model(
                        train_ds,
                        val_ds,
                        test_ds,
                        &normalizer,
                        bla.as_ref().map(|b| &b.model),
                        &cfg.model,
                        &train_cfg,
                    )
                    .and_then(|o| write_run(&o, out, &name).map(|_| o))
                };
                let cell = match result {
                    Ok(o) => {
                        log::info!("{name}: test NRMS {:.5} (best epoch {})", o.test.nrms, o.history.best_epoch);
                        nrms.push(o.test.nrms);
                        let cell = CellResult {
                            nl_target: level.nl_target,
                            nl_achieved,
                            scheme,
                            seed,
                            test_nrms: o.test.nrms,
                            best_epoch: o.history.best_epoch,
                            status: "ok".into(),
                        };
                        histories.push((name, o.history));
                        cell
                    }
                    Err(e) => {
                        log::error!("{name}: {e}");
                        CellResult {
                            nl_target: level.nl_target,
                            nl_achieved,
                            scheme,
                            seed,
                            test_nrms: f64::NAN,
                            best_epoch: 0,
                            status: status_of(&e),
                        }
                    }
                };
                cells.push(cell);
            }
            medians.push(MedianRow {
                nl_target: level.nl_target,
                scheme,
                median_test_nrms: median(&nrms),
                succeeded: nrms.len(),
            });
        }
    }

    write_summary_csv(std::io::BufWriter::new(fs::File::create(out.join("summary.csv"))?), &cells)?;
    write_medians_csv(&out.join("medians.csv"), &medians, &blas)?;
    Ok(ExperimentSummary {
        cells,
        medians,
        bla: blas,
        histories,
    })
}
