//! Pipeline behind the `qpt` binary: simulate, sample, fit, region, analyze.
//!
//! Every stage is available as a pure function on in-memory values and as a
//! `cmd_*` wrapper that reads its inputs from and writes its artifacts to the
//! output directory.

pub mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use qpt_core::fom::{Direction, FigureEvaluator, FigureKind, SolveStats};
use qpt_core::qmat::ComplexMatrix;
use qpt_core::regions::{self, BinomMode, ConfidenceReport, FitModel, FitParams, QuantumErrorBars, RegionParams};
use qpt_core::tomodata::{self, Dataset, Scheme};
use qpt_core::walkers::{self, ChainResult, Histogram};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("walker failure: {0}")]
    Walker(String),
    #[error("fit failure: {0}")]
    Fit(String),
    #[error("region failure: {0}")]
    Region(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Walker(_) => 4,
            CliError::Fit(_) => 5,
            CliError::Region(_) => 6,
        }
    }

    pub(crate) fn config(e: impl std::fmt::Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// A loaded configuration with its resolved paths and command-line overrides.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub base_dir: PathBuf,
    pub out_dir: PathBuf,
    pub paper_compat: bool,
}

impl Run {
    pub fn new(config: RunConfig, base_dir: impl Into<PathBuf>, out: Option<PathBuf>, paper_compat: bool) -> Self {
        let base_dir = base_dir.into();
        let out_dir = out.unwrap_or_else(|| match &config.output {
            Some(p) => base_dir.join(p),
            None => PathBuf::from("qpt-out"),
        });
        Self { config, base_dir, out_dir, paper_compat }
    }

    pub fn from_file(path: &Path, out: Option<PathBuf>, paper_compat: bool, seed: Option<u64>) -> Result<Self> {
        let mut config = RunConfig::load(path)?;
        if let Some(seed) = seed {
            config.walker.config.seed = seed;
            if let Some(sim) = &mut config.simulation {
                sim.seed = seed;
            }
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self::new(config, base, out, paper_compat))
    }

    pub fn binom_mode(&self) -> BinomMode {
        if self.paper_compat {
            BinomMode::UpperBound
        } else {
            self.config.region.binom_mode
        }
    }

    fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn dataset_path(&self) -> PathBuf {
        match &self.config.dataset {
            Some(p) => self.base_dir.join(p),
            None => self.out_path("dataset.json"),
        }
    }

    fn with_out_dir(&self, dir: PathBuf) -> Self {
        Self { out_dir: dir, ..self.clone() }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let ds: Dataset = read_json(path)?;
    ds.validate().map_err(CliError::config)?;
    Ok(ds)
}

// ---- simulate ----

/// Simulates the configured experiment.
pub fn simulate(run: &Run) -> Result<Dataset> {
    let sim = run.config.simulation.as_ref().ok_or_else(|| CliError::Config("no `simulation` section".into()))?;
    let choi = sim.true_channel.choi(sim.dims)?;
    let mut template = tomodata::standard_settings(sim.settings, sim.scheme, sim.dims).map_err(CliError::config)?;
    if sim.scheme == Scheme::AncillaAssisted {
        let sigma = match &sim.input_state {
            Some(s) => s.clone(),
            None => ComplexMatrix::identity(sim.dims.d_a).scale(1.0 / sim.dims.d_a as f64),
        };
        template = template.with_entangled_input(tomodata::entangled_input(&sigma).map_err(CliError::config)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    tomodata::simulate(&choi, &template, sim.shots, &mut rng).map_err(CliError::config)
}

pub fn cmd_simulate(run: &Run) -> Result<Dataset> {
    let ds = simulate(run)?;
    ensure_dir(&run.out_dir)?;
    write_json(&run.out_path("dataset.json"), &ds)?;
    let counts: Vec<u64> = ds.settings.iter().map(|s| s.counts.iter().sum()).collect();
    log::info!("simulated {} events, per-setting counts {counts:?}", ds.total_n());
    Ok(ds)
}

// ---- sample ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStats {
    pub index: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub therm_acceptance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clamp_events: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank_rejects: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolveStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub chains: Vec<ChainResult>,
    pub stats: Vec<ChainStats>,
    pub histogram: Histogram,
}

impl SampleOutput {
    pub fn samples(&self) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.samples.iter().copied()).collect()
    }
}

fn chain_stats(index: usize, seed: u64, r: &walkers::Result<ChainResult>) -> ChainStats {
    match r {
        Ok(c) => ChainStats {
            index,
            seed,
            n_samples: Some(c.samples.len()),
            acceptance_rate: Some(c.acceptance_rate),
            therm_acceptance: Some(c.therm_acceptance),
            clamp_events: Some(c.clamp_events),
            rank_rejects: Some(c.rank_rejects),
            final_step: Some(c.final_step),
            solver: Some(c.solver),
            error: None,
        },
        Err(e) => ChainStats {
            index,
            seed,
            n_samples: None,
            acceptance_rate: None,
            therm_acceptance: None,
            clamp_events: None,
            rank_rejects: None,
            final_step: None,
            solver: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the configured chains on `ds` and merges them into a histogram.
///
/// On failure the successful chains are still returned alongside the error
/// so callers can keep them.
pub fn sample(run: &Run, ds: &Dataset) -> std::result::Result<SampleOutput, (CliError, Vec<(usize, ChainResult)>)> {
    let fail = |e: CliError| (e, Vec::new());
    run.config.check_method(ds.scheme).map_err(fail)?;
    let spec = run.config.figure.spec(ds.dims).map_err(fail)?;
    let evaluator = FigureEvaluator::new(spec, ds.dims).map_err(|e| fail(CliError::config(e)))?;
    let w = &run.config.walker;
    let n_chains = w.chains();
    info!("running {n_chains} {:?} chains of {} samples", w.method, w.config.n_samples);
    let results = walkers::run_chains(ds, &evaluator, &w.config, w.method, n_chains, w.rank_floor);

    let stats: Vec<ChainStats> =
        results.iter().enumerate().map(|(k, r)| chain_stats(k, w.config.seed.wrapping_add(k as u64), r)).collect();
    for s in &stats {
        match &s.error {
            None => info!(
                "chain {}: acceptance {:.3}, clamp events {}, rank rejects {}",
                s.index,
                s.acceptance_rate.unwrap_or(f64::NAN),
                s.clamp_events.unwrap_or(0),
                s.rank_rejects.unwrap_or(0)
            ),
            Some(e) => warn!("chain {} failed: {e}", s.index),
        }
    }

    let mut first_error = None;
    let mut chains = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => chains.push((k, c)),
            Err(e) => {
                first_error.get_or_insert(CliError::Walker(format!("chain {k}: {e}")));
            }
        }
    }
    if let Some(e) = first_error {
        return Err((e, chains));
    }
    let slices: Vec<&[f64]> = chains.iter().map(|(_, c)| c.samples.as_slice()).collect();
    let histogram = match walkers::merge_chains(&slices, run.config.histogram.n_bins, run.config.histogram.range) {
        Ok(h) => h,
        Err(e) => return Err((CliError::Walker(e.to_string()), chains)),
    };
    Ok(SampleOutput { chains: chains.into_iter().map(|(_, c)| c).collect(), stats, histogram })
}

fn write_chain(run: &Run, index: usize, chain: &ChainResult) -> Result<()> {
    let path = run.out_path(&format!("chain_{index}.csv"));
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    walkers::write_chain_csv(BufWriter::new(file), chain).map_err(|e| CliError::io(&path, e))
}

pub fn write_histogram(path: &Path, h: &Histogram) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    h.write_csv(BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

pub fn read_histogram(path: &Path) -> Result<Histogram> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    Histogram::read_csv(file).map_err(|e| CliError::io(path, e))
}

fn sample_and_write(run: &Run, ds: &Dataset) -> Result<SampleOutput> {
    ensure_dir(&run.out_dir)?;
    match sample(run, ds) {
        Ok(out) => {
            for (k, c) in out.chains.iter().enumerate() {
                write_chain(run, k, c)?;
            }
            write_histogram(&run.out_path("histogram.csv"), &out.histogram)?;
            write_json(&run.out_path("chains.json"), &out.stats)?;
            Ok(out)
        }
        Err((e, partial)) => {
            for (k, c) in &partial {
                write_chain(run, *k, c)?;
            }
            Err(e)
        }
    }
}

pub fn cmd_sample(run: &Run) -> Result<SampleOutput> {
    let ds = load_dataset(&run.dataset_path())?;
    sample_and_write(run, &ds)
}

// ---- fit ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub figure: FigureKind,
    /// `figure` or `one-minus-figure`: the variable the models are fitted in.
    pub fit_variable: String,
    /// Histogram peak in figure coordinates.
    pub histogram_peak: f64,
    pub model_one: FitParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_two: Option<FitParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_two_error: Option<String>,
    /// Quantum error bars of model one, in the fit variable.
    pub qeb: QuantumErrorBars,
    /// Peak `v₀` mapped back to figure coordinates.
    pub peak: f64,
}

impl FitReport {
    pub fn model(&self, model: FitModel) -> Option<&FitParams> {
        match model {
            FitModel::One => Some(&self.model_one),
            FitModel::Two => self.model_two.as_ref(),
        }
    }
}

/// Fits both models; model one carries the quantum error bars.
pub fn fit(kind: FigureKind, h: &Histogram) -> Result<FitReport> {
    let direction = kind.direction();
    let err = |e: regions::RegionError| CliError::Fit(e.to_string());
    let model_one = regions::fit_histogram(h, FitModel::One, direction).map_err(err)?;
    let qeb = regions::quantum_error_bars(&model_one).map_err(err)?;
    let (model_two, model_two_error) = match regions::fit_histogram(h, FitModel::Two, direction) {
        Ok(f) => (Some(f), None),
        Err(e) => {
            warn!("model two: {e}");
            (None, Some(e.to_string()))
        }
    };
    Ok(FitReport {
        figure: kind,
        fit_variable: match direction {
            Direction::SmallerBetter => "figure".into(),
            Direction::LargerBetter => "one-minus-figure".into(),
        },
        histogram_peak: h.peak(),
        peak: model_one.from_fit_variable(qeb.v0),
        model_one,
        model_two,
        model_two_error,
        qeb,
    })
}

pub fn cmd_fit(run: &Run) -> Result<FitReport> {
    let h = read_histogram(&run.out_path("histogram.csv"))?;
    let report = fit(run.config.figure.kind, &h)?;
    ensure_dir(&run.out_dir)?;
    write_json(&run.out_path("fit.json"), &report)?;
    Ok(report)
}

// ---- region ----

pub fn region_params(run: &Run, ds: &Dataset) -> RegionParams {
    let d_ab = (ds.dims.d_a * ds.dims.d_b) as u64;
    RegionParams {
        n: ds.total_n(),
        eps: run.config.region.eps,
        d2ab: d_ab * d_ab,
        method: run.config.walker.method,
        binom_mode: run.binom_mode(),
    }
}

pub fn region(run: &Run, fit: &FitReport, ds: &Dataset) -> Result<ConfidenceReport> {
    let model = run.config.region.fit_model;
    let fp = fit.model(model).ok_or_else(|| CliError::Region(format!("fit model {model:?} is unavailable")))?;
    regions::assemble_report(fp, &region_params(run, ds), fit.figure, ds.dims.d_a)
        .map_err(|e| CliError::Region(e.to_string()))
}

pub fn cmd_region(run: &Run) -> Result<ConfidenceReport> {
    let ds = load_dataset(&run.dataset_path())?;
    let fit: FitReport = read_json(&run.out_path("fit.json"))?;
    let report = region(run, &fit, &ds)?;
    ensure_dir(&run.out_dir)?;
    write_json(&run.out_path("report.json"), &report)?;
    Ok(report)
}

// ---- analyze ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub total_n: u64,
    pub n_samples: usize,
    pub chains: Vec<ChainStats>,
    pub fit: FitReport,
    pub report: ConfidenceReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub directory: String,
    #[serde(flatten)]
    pub stage: StageSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Summary {
    Single(Box<StageSummary>),
    Sweep {
        points: Vec<SweepPoint>,
        /// Least-squares slope of `ln Δ` against `ln n`.
        width_slope: f64,
    },
}

fn run_stages(run: &Run, ds: &Dataset) -> Result<StageSummary> {
    let out = sample_and_write(run, ds)?;
    let fit_report = fit(run.config.figure.kind, &out.histogram)?;
    write_json(&run.out_path("fit.json"), &fit_report)?;
    let report = region(run, &fit_report, ds)?;
    write_json(&run.out_path("report.json"), &report)?;
    Ok(StageSummary {
        total_n: ds.total_n(),
        n_samples: out.chains.iter().map(|c| c.samples.len()).sum(),
        chains: out.stats,
        fit: fit_report,
        report,
    })
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn cmd_analyze(run: &Run) -> Result<Summary> {
    ensure_dir(&run.out_dir)?;
    let ds = match &run.config.simulation {
        Some(_) if run.config.dataset.is_none() => cmd_simulate(run)?,
        _ => load_dataset(&run.dataset_path())?,
    };
    run.config.check_method(ds.scheme)?;
    let alphas = run.config.simulation.as_ref().and_then(|s| s.alpha_sweep.clone());
    let summary = match alphas {
        None => Summary::Single(Box::new(run_stages(run, &ds)?)),
        Some(alphas) => {
            let mut points = Vec::new();
            for (k, &alpha) in alphas.iter().enumerate() {
                let dir = format!("alpha_{k}");
                let sub = run.with_out_dir(run.out_path(&dir));
                ensure_dir(&sub.out_dir)?;
                let scaled = tomodata::rescale_counts(&ds, alpha).map_err(CliError::config)?;
                write_json(&sub.out_path("dataset.json"), &scaled)?;
                info!("alpha {alpha}: n = {}", scaled.total_n());
                let stage = run_stages(&sub, &scaled)?;
                points.push(SweepPoint { alpha, directory: dir, stage });
            }
            let width_slope = if points.len() >= 2 {
                log_log_slope(
                    &points.iter().map(|p| (p.stage.total_n as f64, p.stage.fit.qeb.delta)).collect::<Vec<_>>(),
                )
            } else {
                f64::NAN
            };
            Summary::Sweep { points, width_slope }
        }
    };
    write_json(&run.out_path("summary.json"), &summary)?;
    Ok(summary)
}
