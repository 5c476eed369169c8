//! Metropolis-Hastings walks over channels and bipartite states.
//!
//! The channel walk moves a Stinespring unitary `U` by left multiplication with
//! a random unitary (either `e^{iH}` or a product of two-level rotations);
//! both kernels are symmetric, so the Haar prior needs no correction and the
//! acceptance ratio is the likelihood ratio. The state walk moves a pure state
//! on `(BP)(B'P')` by a Gaussian kick followed by renormalization, which is
//! symmetric with respect to the uniform measure on the sphere.
//!
//! Chains record one observable per sweep after thermalization. Histogram
//! errors come from a binning analysis on per-bin indicator streams.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::choi_from_unitary_unchecked;
use crate::fom::{FigureEvaluator, FomError, SolveStats};
use crate::qmat::{self, standard_complex_normal, ComplexMatrix, QmatError, C64};
use crate::tomodata::{Dataset, LikelihoodModel, Scheme, TomoError};

#[derive(Debug, Error)]
pub enum WalkerError {
    #[error("invalid walker configuration: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("figure of merit failed at sample {index}: {source}")]
    Fom { index: usize, source: FomError },
    #[error("step-size tuning failed: acceptance {rate:.3} after {windows} windows (step {step:.3e})")]
    TuningFailed { rate: f64, windows: usize, step: f64 },
    #[error("binning analysis needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("too many rank-deficient samples ({0}) while recording")]
    TooManyRejects(u64),
    #[error(transparent)]
    Tomo(#[from] TomoError),
    #[error(transparent)]
    Qmat(#[from] QmatError),
    #[error("csv: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, WalkerError>;

/// Steps per tuning window during thermalization.
pub const TUNING_WINDOW: usize = 256;
const MAX_TUNING_WINDOWS_OUTSIDE: usize = 100;
const MIN_STEP: f64 = 1e-9;
const MAX_INNER_ITER: usize = 32;
const REORTHONORMALIZE_EVERY: u64 = 1024;
/// Smallest stream accepted by the binning analysis.
pub const MIN_BINNING_SAMPLES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum JumpKind {
    #[serde(rename = "eiH")]
    EiH,
    #[serde(rename = "elementary-rotation")]
    ElementaryRotation,
    #[serde(rename = "sphere-gaussian")]
    SphereGaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkerConfig {
    pub jump: JumpKind,
    pub step_size: f64,
    pub n_inner_iter: usize,
    pub n_therm_sweeps: usize,
    pub sweep_size: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    /// Upper bound for the tuned step size.
    pub max_step: f64,
    pub tune: bool,
}

impl Default for WalkerConfig {
    fn default() -> Self {
        Self {
            jump: JumpKind::EiH,
            step_size: 0.01,
            n_inner_iter: 1,
            n_therm_sweeps: 2048,
            sweep_size: 1000,
            n_samples: 32768,
            seed: 0,
            target_acceptance: 0.3,
            max_step: 1.0,
            tune: true,
        }
    }
}

impl WalkerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(WalkerError::Config(m.into()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step_size must be positive");
        }
        if self.max_step.is_nan() || self.max_step < self.step_size {
            return bad("max_step must be at least step_size");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be at least 1");
        }
        if self.sweep_size == 0 {
            return bad("sweep_size must be at least 1");
        }
        if self.n_inner_iter == 0 {
            return bad("n_inner_iter must be at least 1");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target_acceptance must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Current point of a chain with its cached log-likelihood.
#[derive(Debug, Clone)]
pub struct Walker<P> {
    pub point: P,
    pub log_like: f64,
}

/// One Metropolis-Hastings step with a symmetric proposal.
///
/// Accepts with probability `min(1, exp(ℓ(x') - ℓ(x)))`; a non-finite
/// proposed log-likelihood is rejected.
pub fn mh_step<P, R: Rng + ?Sized>(
    current: &mut Walker<P>,
    propose: impl FnOnce(&P, &mut R) -> P,
    log_like: impl FnOnce(&P) -> f64,
    rng: &mut R,
) -> bool {
    let proposal = propose(&current.point, rng);
    let ll = log_like(&proposal);
    let diff = ll - current.log_like;
    let accept = if diff.is_nan() { false } else { diff >= 0.0 || rng.random::<f64>() < diff.exp() };
    if accept {
        current.point = proposal;
        current.log_like = ll;
    }
    accept
}

/// `e^{iH} u` with `H = N + N†` and `N` complex Gaussian of standard deviation `step`.
pub fn propose_eih<R: Rng + ?Sized>(u: &ComplexMatrix, step: f64, rng: &mut R) -> Result<ComplexMatrix> {
    let d = u.rows();
    let n = ComplexMatrix::from_fn(d, d, |_, _| standard_complex_normal(rng) * step);
    let h = &n + &n.adjoint();
    let w = qmat::expm_i_hermitian(&h)?;
    Ok(&w * u)
}

/// Two-level rotation `e^{iα(e_m·σ)}` on indices `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementaryRotation {
    pub i: usize,
    pub j: usize,
    /// Row-major `2 × 2` block acting on `(i, j)`.
    pub block: [[C64; 2]; 2],
}

impl ElementaryRotation {
    pub fn sample<R: Rng + ?Sized>(d: usize, step: f64, rng: &mut R) -> Self {
        let i = rng.random_range(0..d);
        let mut j = rng.random_range(0..d - 1);
        if j >= i {
            j += 1;
        }
        let (i, j) = (i.min(j), i.max(j));
        let s = loop {
            let s: f64 = step * rng.sample::<f64, _>(StandardNormal);
            if s.abs() <= 1.0 {
                break s;
            }
        };
        let c = (1.0 - s * s).sqrt();
        let re = |x: f64| C64::new(x, 0.0);
        let block = match rng.random_range(0..3) {
            0 => [[re(c), C64::new(0.0, s)], [C64::new(0.0, s), re(c)]],
            1 => [[re(c), re(s)], [re(-s), re(c)]],
            _ => [[C64::new(c, s), re(0.0)], [re(0.0), C64::new(c, -s)]],
        };
        Self { i, j, block }
    }

    pub fn to_matrix(&self, d: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::identity(d);
        let idx = [self.i, self.j];
        for (a, &r) in idx.iter().enumerate() {
            for (b, &c) in idx.iter().enumerate() {
                m[(r, c)] = self.block[a][b];
            }
        }
        m
    }

    /// `u <- R u` as a two-row update.
    pub fn apply_left(&self, u: &mut ComplexMatrix) {
        let [[a, b], [c, d]] = self.block;
        for col in 0..u.cols() {
            let x = u[(self.i, col)];
            let y = u[(self.j, col)];
            u[(self.i, col)] = a * x + b * y;
            u[(self.j, col)] = c * x + d * y;
        }
    }
}

/// Product of `n_inner_iter` random two-level rotations applied to `u`.
pub fn propose_elementary_rotation<R: Rng + ?Sized>(
    u: &ComplexMatrix,
    step: f64,
    n_inner_iter: usize,
    rng: &mut R,
) -> ComplexMatrix {
    let mut out = u.clone();
    for _ in 0..n_inner_iter {
        ElementaryRotation::sample(u.rows(), step, rng).apply_left(&mut out);
    }
    out
}

/// Gaussian kick of a unit vector followed by renormalization.
pub fn propose_sphere<R: Rng + ?Sized>(psi: &[C64], step: f64, rng: &mut R) -> Vec<C64> {
    let mut out: Vec<C64> = psi.iter().map(|&z| z + standard_complex_normal(rng) * step).collect();
    qmat::normalize(&mut out);
    out
}

/// Raw output of a chain with an arbitrary recorded observable.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput<T> {
    pub samples: Vec<T>,
    /// Accepted moves between consecutive records.
    pub accepted_since_last: Vec<u64>,
    /// Acceptance over the recording phase.
    pub acceptance_rate: f64,
    /// Acceptance over the last thermalization window.
    pub therm_acceptance: f64,
    pub clamp_events: u64,
    pub rank_rejects: u64,
    pub final_step: f64,
    pub final_n_inner_iter: usize,
    /// Conic solves made by the figure evaluator during the chain.
    pub solver: SolveStats,
}

/// Chain output for a scalar figure of merit.
pub type ChainResult = ChainOutput<f64>;

impl ChainOutput<f64> {
    pub fn fom_samples(&self) -> &[f64] {
        &self.samples
    }
}

struct StepControl {
    step: f64,
    n_inner: usize,
    max_step: f64,
    target: f64,
    allow_doubling: bool,
}

impl StepControl {
    fn pinned_at_max(&self) -> bool {
        self.step >= self.max_step && (!self.allow_doubling || self.n_inner >= MAX_INNER_ITER)
    }

    fn adjust(&mut self, rate: f64) {
        if rate > self.target + 0.1 {
            if self.step * 1.1 >= self.max_step {
                self.step = self.max_step;
                if self.allow_doubling && self.n_inner < MAX_INNER_ITER {
                    self.n_inner *= 2;
                }
            } else {
                self.step *= 1.1;
            }
        } else if rate < self.target - 0.1 {
            self.step = (self.step / 1.1).max(MIN_STEP);
        }
    }
}

/// Generic driver: thermalize with step tuning, then record one observable per sweep.
///
/// `observable` returning `Ok(None)` rejects the current point for recording
/// (rank-deficient reduced state); the chain runs another sweep instead.
#[allow(clippy::too_many_arguments)]
fn run_chain<P: Clone, T, R: Rng>(
    start: P,
    cfg: &WalkerConfig,
    allow_doubling: bool,
    rng: &mut R,
    mut propose: impl FnMut(&P, f64, usize, &mut R) -> Result<P>,
    mut log_like: impl FnMut(&P) -> (f64, usize),
    mut observable: impl FnMut(&P) -> std::result::Result<Option<T>, FomError>,
) -> Result<ChainOutput<T>> {
    cfg.validate()?;
    let mut clamp_events = 0u64;
    let (ll0, c0) = log_like(&start);
    clamp_events += c0 as u64;
    let mut walker = Walker { point: start, log_like: ll0 };
    let mut ctl = StepControl {
        step: cfg.step_size,
        n_inner: cfg.n_inner_iter,
        max_step: cfg.max_step,
        target: cfg.target_acceptance,
        allow_doubling,
    };

    let mut step_once = |walker: &mut Walker<P>, ctl: &StepControl, rng: &mut R| -> Result<bool> {
        let proposal = propose(&walker.point, ctl.step, ctl.n_inner, rng)?;
        let mut clamped = 0;
        let accepted = mh_step(
            walker,
            |_, _| proposal,
            |p| {
                let (v, c) = log_like(p);
                clamped = c;
                v
            },
            rng,
        );
        clamp_events += clamped as u64;
        Ok(accepted)
    };

    let therm_steps = cfg.n_therm_sweeps * cfg.sweep_size;
    let mut window_acc = 0usize;
    let mut window_len = 0usize;
    let mut windows = 0usize;
    let mut entered = false;
    let mut therm_acceptance = f64::NAN;
    for _ in 0..therm_steps {
        window_acc += step_once(&mut walker, &ctl, rng)? as usize;
        window_len += 1;
        if window_len == TUNING_WINDOW {
            let rate = window_acc as f64 / TUNING_WINDOW as f64;
            therm_acceptance = rate;
            windows += 1;
            if (0.05..=0.95).contains(&rate) {
                entered = true;
            }
            if cfg.tune {
                ctl.adjust(rate);
                if !entered && windows >= MAX_TUNING_WINDOWS_OUTSIDE && !ctl.pinned_at_max() {
                    return Err(WalkerError::TuningFailed { rate, windows, step: ctl.step });
                }
            }
            window_acc = 0;
            window_len = 0;
        }
    }

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut accepted_since_last = Vec::with_capacity(cfg.n_samples);
    let mut rank_rejects = 0u64;
    let mut acc_total = 0u64;
    let mut steps_total = 0u64;
    let mut acc_since = 0u64;
    while samples.len() < cfg.n_samples {
        for _ in 0..cfg.sweep_size {
            let a = step_once(&mut walker, &ctl, rng)? as u64;
            acc_total += a;
            acc_since += a;
            steps_total += 1;
        }
        match observable(&walker.point) {
            Ok(Some(v)) => {
                samples.push(v);
                accepted_since_last.push(acc_since);
                acc_since = 0;
            }
            Ok(None) => {
                rank_rejects += 1;
                if rank_rejects > 10 * cfg.n_samples as u64 + 1000 {
                    return Err(WalkerError::TooManyRejects(rank_rejects));
                }
            }
            Err(source) => return Err(WalkerError::Fom { index: samples.len(), source }),
        }
    }

    Ok(ChainOutput {
        samples,
        accepted_since_last,
        acceptance_rate: acc_total as f64 / steps_total.max(1) as f64,
        therm_acceptance,
        clamp_events,
        rank_rejects,
        final_step: ctl.step,
        final_n_inner_iter: ctl.n_inner,
        solver: SolveStats::default(),
    })
}

/// Channel walk recording `observable(choi)` once per sweep. Starts at `U = I`.
pub fn channel_walk<T>(
    ds: &Dataset,
    cfg: &WalkerConfig,
    observable: impl FnMut(&ComplexMatrix) -> std::result::Result<Option<T>, FomError>,
) -> Result<ChainOutput<T>> {
    if cfg.jump == JumpKind::SphereGaussian {
        return Err(WalkerError::Unsupported("the channel walk needs an eiH or elementary-rotation jump".into()));
    }
    let model = LikelihoodModel::for_channels(ds)?;
    let dims = ds.dims;
    let flat = model.is_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut proposals = 0u64;
    let jump = cfg.jump;
    let mut observable = observable;
    run_chain(
        ComplexMatrix::identity(dims.d_u()),
        cfg,
        jump == JumpKind::ElementaryRotation,
        &mut rng,
        |u, step, n_inner, rng| {
            proposals += 1;
            let mut next = match jump {
                JumpKind::EiH => propose_eih(u, step, rng)?,
                _ => propose_elementary_rotation(u, step, n_inner, rng),
            };
            if proposals.is_multiple_of(REORTHONORMALIZE_EVERY) {
                next = qmat::orthonormalize_columns(&next);
            }
            Ok(next)
        },
        |u| {
            if flat {
                return (0.0, 0);
            }
            let ll = model.evaluate(&choi_from_unitary_unchecked(u, dims));
            (ll.value, ll.clamped)
        },
        |u| observable(&choi_from_unitary_unchecked(u, dims)),
    )
}

/// `σ_BP = Ψ Ψ†` for the purification `ψ` on `(BP)(B'P')` read as a `D × D` matrix.
pub fn reduced_state(psi: &[C64], d: usize) -> ComplexMatrix {
    let m = ComplexMatrix::from_fn(d, d, |r, c| psi[r * d + c]);
    (&m * &m.adjoint()).hermitian_part()
}

/// Bipartite-state walk over pure states on `(BP)(B'P')`, recording `observable(σ_BP)`.
/// Starts at the purification of the maximally mixed state.
pub fn state_walk<T>(
    ds: &Dataset,
    cfg: &WalkerConfig,
    observable: impl FnMut(&ComplexMatrix) -> std::result::Result<Option<T>, FomError>,
) -> Result<ChainOutput<T>> {
    if ds.scheme != Scheme::AncillaAssisted {
        return Err(WalkerError::Unsupported("the state walk needs an ancilla-assisted dataset".into()));
    }
    if cfg.jump != JumpKind::SphereGaussian {
        return Err(WalkerError::Unsupported("the state walk needs the sphere-gaussian jump".into()));
    }
    let model = LikelihoodModel::for_output_states(ds)?;
    let d = ds.dims.d_a * ds.dims.d_b;
    let flat = model.is_flat();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let amp = C64::new(1.0 / (d as f64).sqrt(), 0.0);
    let start: Vec<C64> = (0..d * d).map(|k| if k / d == k % d { amp } else { C64::new(0.0, 0.0) }).collect();
    let mut observable = observable;
    run_chain(
        start,
        cfg,
        false,
        &mut rng,
        |psi, step, _, rng| Ok(propose_sphere(psi, step, rng)),
        |psi| {
            if flat {
                return (0.0, 0);
            }
            let ll = model.evaluate(&reduced_state(psi, d));
            (ll.value, ll.clamped)
        },
        |psi| observable(&reduced_state(psi, d)),
    )
}

/// Channel chain recording the figure; `fom`'s solve statistics restart with the chain.
pub fn run_channel_chain(ds: &Dataset, fom: &mut FigureEvaluator, cfg: &WalkerConfig) -> Result<ChainResult> {
    fom.reset_stats();
    let mut out = channel_walk(ds, cfg, |choi| fom.evaluate(choi).map(Some))?;
    out.solver = fom.stats();
    Ok(out)
}

/// State chain recording the induced figure; rank-deficient marginals are resampled.
pub fn run_state_chain(ds: &Dataset, fom: &mut FigureEvaluator, cfg: &WalkerConfig, floor: f64) -> Result<ChainResult> {
    fom.reset_stats();
    let mut out = state_walk(ds, cfg, |sigma| match fom.evaluate_bipartite(sigma, floor) {
        Ok(v) => Ok(Some(v)),
        Err(FomError::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e),
    })?;
    out.solver = fom.stats();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Channel,
    State,
}

/// Runs `n_chains` independent chains concurrently with seeds `cfg.seed + k`.
pub fn run_chains(
    ds: &Dataset,
    evaluator: &FigureEvaluator,
    cfg: &WalkerConfig,
    method: Method,
    n_chains: usize,
    floor: f64,
) -> Vec<Result<ChainResult>> {
    (0..n_chains)
        .into_par_iter()
        .map(|k| {
            let cfg = WalkerConfig { seed: cfg.seed.wrapping_add(k as u64), ..cfg.clone() };
            let mut fom = evaluator.clone();
            match method {
                Method::Channel => run_channel_chain(ds, &mut fom, &cfg),
                Method::State => run_state_chain(ds, &mut fom, &cfg, floor),
            }
        })
        .collect()
}

/// Binning-analysis error of the mean of a correlated stream.
///
/// Block means at doubling sizes up to level `log₂N - 4`; the first level
/// whose standard error changes by less than 5% relative to the previous one
/// is the plateau, otherwise the last level is used.
pub fn binning_error(stream: &[f64]) -> Result<f64> {
    let n = stream.len();
    if n < MIN_BINNING_SAMPLES {
        return Err(WalkerError::TooFewSamples { needed: MIN_BINNING_SAMPLES, got: n });
    }
    if stream.iter().all(|&x| x == stream[0]) {
        return Ok(0.0);
    }
    let max_level = (n as f64).log2().floor() as usize - 4;
    let mut blocks: Vec<f64> = stream.to_vec();
    let mut prev: Option<f64> = None;
    let mut last = 0.0;
    for _ in 0..=max_level {
        let m = blocks.len() as f64;
        let mean = blocks.iter().sum::<f64>() / m;
        let var = blocks.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        if let Some(p) = prev {
            if p == 0.0 && se == 0.0 {
                return Ok(0.0);
            }
            if p > 0.0 && ((se - p) / p).abs() < 0.05 {
                return Ok(se);
            }
        }
        prev = Some(se);
        last = se;
        blocks = blocks.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
    }
    Ok(last)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
    pub error: f64,
    pub normalized_density: f64,
}

impl HistogramBin {
    pub fn center(&self) -> f64 {
        0.5 * (self.bin_lo + self.bin_hi)
    }

    pub fn width(&self) -> f64 {
        self.bin_hi - self.bin_lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: Vec<HistogramBin>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.bins.iter().map(|b| b.count).sum()
    }

    /// Error of the normalized density in bin `k`.
    pub fn density_error(&self, k: usize) -> f64 {
        let b = &self.bins[k];
        b.error / (self.total() as f64 * b.width())
    }

    /// Center of the most populated bin.
    pub fn peak(&self) -> f64 {
        self.bins.iter().max_by_key(|b| b.count).map(HistogramBin::center).unwrap_or(f64::NAN)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for b in &self.bins {
            wr.serialize(b).map_err(|e| WalkerError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| WalkerError::Csv(e.to_string()))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let bins = rd
            .deserialize()
            .collect::<std::result::Result<Vec<HistogramBin>, _>>()
            .map_err(|e| WalkerError::Csv(e.to_string()))?;
        Ok(Self { bins })
    }
}

/// Merged histogram over chains with per-bin errors from the binning analysis.
///
/// Bins span `range` or, by default, `[min, max]` of all samples. Each chain
/// contributes `N_c · binning_error(indicator stream)` to a bin's error; chain
/// contributions add in quadrature.
pub fn merge_chains(chains: &[&[f64]], n_bins: usize, range: Option<(f64, f64)>) -> Result<Histogram> {
    if n_bins == 0 {
        return Err(WalkerError::Config("histogram needs at least one bin".into()));
    }
    let all = chains.iter().flat_map(|c| c.iter().copied());
    let (lo, hi) = match range {
        Some(r) => r,
        None => all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x))),
    };
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(WalkerError::TooFewSamples { needed: MIN_BINNING_SAMPLES, got: 0 });
    }
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 1e-9, lo + 1e-9) };
    let width = (hi - lo) / n_bins as f64;
    let bin_of = |x: f64| -> Option<usize> {
        if x < lo || x > hi {
            return None;
        }
        Some((((x - lo) / width) as usize).min(n_bins - 1))
    };

    let mut counts = vec![0u64; n_bins];
    let mut var = vec![0.0f64; n_bins];
    for chain in chains {
        let idx: Vec<Option<usize>> = chain.iter().map(|&x| bin_of(x)).collect();
        let n = chain.len() as f64;
        let mut chain_counts = vec![0u64; n_bins];
        for k in idx.iter().flatten() {
            chain_counts[*k] += 1;
        }
        for k in 0..n_bins {
            counts[k] += chain_counts[k];
            if chain_counts[k] == 0 {
                continue;
            }
            let stream: Vec<f64> = idx.iter().map(|&b| if b == Some(k) { 1.0 } else { 0.0 }).collect();
            let e = n * binning_error(&stream)?;
            var[k] += e * e;
        }
    }
    let total: u64 = counts.iter().sum();
    let bins = (0..n_bins)
        .map(|k| HistogramBin {
            bin_lo: lo + k as f64 * width,
            bin_hi: lo + (k + 1) as f64 * width,
            count: counts[k],
            error: var[k].sqrt(),
            normalized_density: if total > 0 { counts[k] as f64 / (total as f64 * width) } else { 0.0 },
        })
        .collect();
    Ok(Histogram { bins })
}

/// Raw chain CSV: `sample_index,fom_value,accepted_count_since_last`.
pub fn write_chain_csv<W: Write>(w: W, chain: &ChainResult) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| WalkerError::Csv(e.to_string());
    wr.write_record(["sample_index", "fom_value", "accepted_count_since_last"]).map_err(err)?;
    for (i, (v, a)) in chain.samples.iter().zip(&chain.accepted_since_last).enumerate() {
        wr.write_record([i.to_string(), format!("{v:.12e}"), a.to_string()]).map_err(err)?;
    }
    wr.flush().map_err(|e| WalkerError::Csv(e.to_string()))
}
