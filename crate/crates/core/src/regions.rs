//! From figure-of-merit histograms to confidence intervals.
//!
//! A histogram of sampled figure values is fitted by one of two log-density
//! models, the fit is summarized by quantum error bars, and a tail quantile of
//! the normalized fit at a tiny weight (handled in log space throughout) is
//! enlarged by the purified-distance δ into a confidence interval.
//!
//! Fits work in a variable `v ≥ 0` that is small for good channels: the
//! figure itself for the diamond distance, and `1 - F` for fidelities.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::fom::{Direction, FigureKind};
use crate::walkers::{Histogram, Method};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegionError {
    #[error("need at least {needed} bins with count >= {min_count}, got {got}")]
    InsufficientBins { needed: usize, min_count: u64, got: usize },
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("tail target 10^{0} is unreachable within the fit support")]
    TargetUnreachable(f64),
    #[error("bad parameter: {0}")]
    BadParameter(String),
}

pub type Result<T> = std::result::Result<T, RegionError>;

/// Minimum count for a bin to count towards the fit's bin requirement.
pub const MIN_BIN_COUNT: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BinomMode {
    Exact,
    UpperBound,
}

/// `ln s_{n,d}` with `s_{n,d} = binom(n + d - 1, d - 1)`.
pub fn log_sym_dim(n: u64, d: u64, mode: BinomMode) -> f64 {
    assert!(d >= 1, "dimension must be positive");
    match mode {
        BinomMode::Exact => {
            let (n, d) = (n as f64, d as f64);
            ln_gamma(n + d) - ln_gamma(n + 1.0) - ln_gamma(d)
        }
        BinomMode::UpperBound => (d as f64 - 1.0) * (n as f64 + 1.0).ln(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub n: u64,
    pub eps: f64,
    /// `(d_A d_B)²`.
    pub d2ab: u64,
    pub method: Method,
    pub binom_mode: BinomMode,
}

impl RegionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(RegionError::BadParameter(format!("eps = {} outside (0, 1)", self.eps)));
        }
        if self.n == 0 {
            return Err(RegionError::BadParameter("n must be positive".into()));
        }
        if self.d2ab == 0 {
            return Err(RegionError::BadParameter("d2ab must be positive".into()));
        }
        Ok(())
    }

    fn ln_s(&self) -> f64 {
        log_sym_dim(2 * self.n, self.d2ab, self.binom_mode)
    }
}

/// `δ = sqrt((2/n)(ln(2/ε) + k ln s_{2n,d²}))` with `k = 2` (state) or `3` (channel).
pub fn enlargement_delta(rp: &RegionParams) -> f64 {
    let k = match rp.method {
        Method::State => 2.0,
        Method::Channel => 3.0,
    };
    ((2.0 / rp.n as f64) * ((2.0 / rp.eps).ln() + k * rp.ln_s())).sqrt()
}

/// `log₁₀(ε/2) - j log₁₀ s_{2n,d²}` with `j = 1` (state) or `2` (channel): the
/// log₁₀ of the weight a high-weight region may leave outside.
pub fn weight_threshold(rp: &RegionParams) -> f64 {
    let j = match rp.method {
        Method::State => 1.0,
        Method::Channel => 2.0,
    };
    (rp.eps / 2.0).log10() - j * rp.ln_s() / std::f64::consts::LN_10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    One,
    Two,
}

/// `ln μ(v) = -a₂v² - a₁v + m φ_p(ln v) + c`, with `φ_p(x) = sgn(x)|x|^p`
/// (model two) and `p = 1` for model one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub model: FitModel,
    pub a2: f64,
    pub a1: f64,
    pub m: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub reduced_chi2: f64,
    /// The free fit wanted `a₂ < 0`; `a₂` was pinned to zero.
    #[serde(default)]
    pub a2_at_bound: bool,
    /// Fidelity fits are done in `1 - F`.
    pub direction: Direction,
}

fn normalizable_at_infinity(a2: f64, a1: f64) -> bool {
    a2 > 0.0 || (a2 == 0.0 && a1 > 0.0)
}

fn power_term(v: f64, p: f64) -> f64 {
    let l = v.ln();
    if p == 1.0 {
        l
    } else {
        l.signum() * l.abs().powf(p)
    }
}

impl FitParams {
    fn exponent(&self) -> f64 {
        self.p.unwrap_or(1.0)
    }

    /// Unnormalized log-density in the fit variable.
    pub fn log_density(&self, v: f64) -> f64 {
        -self.a2 * v * v - self.a1 * v + self.m * power_term(v, self.exponent()) + self.c
    }

    /// Maps a figure value to the fit variable.
    pub fn to_fit_variable(&self, f: f64) -> f64 {
        to_fit_variable(self.direction, f)
    }

    pub fn from_fit_variable(&self, v: f64) -> f64 {
        to_fit_variable(self.direction, v)
    }
}

fn to_fit_variable(direction: Direction, f: f64) -> f64 {
    match direction {
        Direction::SmallerBetter => f,
        Direction::LargerBetter => 1.0 - f,
    }
}

struct FitPoint {
    v: f64,
    y: f64,
    sigma: f64,
}

fn fit_points(h: &Histogram, direction: Direction) -> Vec<FitPoint> {
    let total = h.total() as f64;
    h.bins
        .iter()
        .filter(|b| b.count > 0 && b.error > 0.0)
        .filter_map(|b| {
            let v = to_fit_variable(direction, b.center());
            (v > 0.0).then(|| FitPoint {
                v,
                y: (b.count as f64 / (total * b.width())).ln(),
                sigma: b.error / b.count as f64,
            })
        })
        .collect()
}

fn weighted_lstsq(points: &[FitPoint], cols: &[usize], p: f64) -> Option<(Vec<f64>, f64)> {
    let x = DMatrix::from_fn(points.len(), cols.len(), |r, c| {
        let pt = &points[r];
        let col = match cols[c] {
            0 => -pt.v * pt.v,
            1 => -pt.v,
            2 => power_term(pt.v, p),
            _ => 1.0,
        };
        col / pt.sigma
    });
    let y = DVector::from_fn(points.len(), |r, _| points[r].y / points[r].sigma);
    let sol = x.clone().svd(true, true).solve(&y, 1e-14).ok()?;
    let chi2 = (&x * &sol - &y).norm_squared();
    Some((sol.iter().copied().collect(), chi2))
}

/// Weighted least squares for fixed `p` under `a₂ ≥ 0`; returns `(a₂, a₁, m, c)` and χ².
///
/// When the free solution has `a₂ < 0` the optimum sits on the bound and the
/// fit is redone with `a₂ = 0`.
fn solve_linear(points: &[FitPoint], p: f64) -> Option<([f64; 4], f64)> {
    let (free, chi2) = weighted_lstsq(points, &[0, 1, 2, 3], p)?;
    if free[0] > 0.0 {
        return Some(([free[0], free[1], free[2], free[3]], chi2));
    }
    let (bound, chi2) = weighted_lstsq(points, &[1, 2, 3], p)?;
    Some(([0.0, bound[0], bound[1], bound[2]], chi2))
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > tol {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    0.5 * (a + b)
}

/// Fits a log-density model to a histogram of figure values.
///
/// Bins with zero count are dropped; the log-space error of a bin is its
/// binning error divided by its count. Model two searches `p ∈ [0.5, 3]` by
/// golden section around an inner linear solve and keeps `p = 1` if that is better.
pub fn fit_histogram(h: &Histogram, model: FitModel, direction: Direction) -> Result<FitParams> {
    let needed = match model {
        FitModel::One => 6,
        FitModel::Two => 8,
    };
    let populated = h.bins.iter().filter(|b| b.count >= MIN_BIN_COUNT).count();
    if populated < needed {
        return Err(RegionError::InsufficientBins { needed, min_count: MIN_BIN_COUNT, got: populated });
    }
    let points = fit_points(h, direction);
    let n_params = if model == FitModel::One { 4 } else { 5 };
    if points.len() <= n_params {
        return Err(RegionError::InsufficientBins { needed: n_params + 1, min_count: 1, got: points.len() });
    }
    let chi2_at = |p: f64| solve_linear(&points, p).map(|(_, c)| c).unwrap_or(f64::INFINITY);
    let p = match model {
        FitModel::One => 1.0,
        FitModel::Two => {
            let best = golden_section(chi2_at, 0.5, 3.0, 1e-5);
            if chi2_at(1.0) <= chi2_at(best) {
                1.0
            } else {
                best
            }
        }
    };
    let ([a2, a1, m, c], chi2) =
        solve_linear(&points, p).ok_or_else(|| RegionError::DegenerateFit("least-squares solve failed".into()))?;
    if !normalizable_at_infinity(a2, a1) {
        return Err(RegionError::DegenerateFit(format!("a2 = {a2:.4e}, a1 = {a1:.4e} is not normalizable")));
    }
    Ok(FitParams {
        model,
        a2,
        a1,
        m,
        c,
        p: (model == FitModel::Two).then_some(p),
        reduced_chi2: chi2 / (points.len() - n_params) as f64,
        a2_at_bound: a2 == 0.0,
        direction,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumErrorBars {
    pub v0: f64,
    pub delta: f64,
    pub gamma: f64,
}

/// `(v₀, Δ, γ)` from raw model-one parameters. At `a₂ = 0` the peak is the
/// limit `v₀ = m / a₁`.
pub fn error_bars_from(a2: f64, a1: f64, m: f64) -> Result<QuantumErrorBars> {
    if !normalizable_at_infinity(a2, a1) {
        return Err(RegionError::DegenerateFit(format!("a2 = {a2:.4e}, a1 = {a1:.4e} is not normalizable")));
    }
    let disc = a1 * a1 + 8.0 * a2 * m;
    if disc < 0.0 {
        return Err(RegionError::DegenerateFit(format!("a1² + 8 a2 m = {disc:.4e} is negative")));
    }
    // rationalized where the textbook form cancels
    let v0 = if a1 > 0.0 { 2.0 * m / (a1 + disc.sqrt()) } else { (-a1 + disc.sqrt()) / (4.0 * a2) };
    let width2 = a2 + m / (2.0 * v0 * v0);
    if !(width2 > 0.0 && v0 > 0.0 && v0.is_finite()) {
        return Err(RegionError::DegenerateFit(format!("no peak (v0 = {v0:.4e})")));
    }
    let delta = width2.powf(-0.5);
    let gamma = m * delta.powi(4) / (6.0 * v0.powi(3));
    if !(delta.is_finite() && gamma.is_finite()) {
        return Err(RegionError::DegenerateFit("non-finite error bars".into()));
    }
    Ok(QuantumErrorBars { v0, delta, gamma })
}

/// Quantum error bars of a model-one fit, in the fit variable.
pub fn quantum_error_bars(fp: &FitParams) -> Result<QuantumErrorBars> {
    if fp.model != FitModel::One {
        return Err(RegionError::DegenerateFit("quantum error bars are defined for model one".into()));
    }
    error_bars_from(fp.a2, fp.a1, fp.m)
}

// 16-point Gauss-Legendre rule on [-1, 1] (positive half).
const GL_NODES: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.755_404_408_355_003,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL_WEIGHTS: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Log-space integrals of a fitted density, done in `u = ln v`.
struct TailIntegrator<'a> {
    fp: &'a FitParams,
    u_peak: f64,
    h_peak: f64,
}

/// Range of `u = ln v` scanned for the peak and the integration limits.
const U_MIN: f64 = -60.0;
const U_MAX: f64 = 15.0;
/// Integrand drop (in nats) below which contributions are ignored.
const DROP: f64 = 60.0;

impl<'a> TailIntegrator<'a> {
    fn new(fp: &'a FitParams) -> Result<Self> {
        if !normalizable_at_infinity(fp.a2, fp.a1) {
            return Err(RegionError::DegenerateFit(format!(
                "a2 = {:.4e}, a1 = {:.4e} is not normalizable",
                fp.a2, fp.a1
            )));
        }
        let h = |u: f64| fp.log_density(u.exp()) - fp.c + u;
        // near v = 0 the integrand behaves like v^{m+1} (model one); it must vanish
        if h(U_MIN) > h(U_MIN + 1.0) {
            return Err(RegionError::DegenerateFit("density is not integrable at v = 0".into()));
        }
        let grid = 4000;
        let mut best = (U_MIN, f64::NEG_INFINITY);
        for k in 0..=grid {
            let u = U_MIN + (U_MAX - U_MIN) * k as f64 / grid as f64;
            let val = h(u);
            if val > best.1 {
                best = (u, val);
            }
        }
        let step = (U_MAX - U_MIN) / grid as f64;
        let u_peak = golden_section(|u| -h(u), best.0 - step, best.0 + step, 1e-10);
        Ok(Self { fp, u_peak, h_peak: h(u_peak).max(best.1) })
    }

    fn h(&self, u: f64) -> f64 {
        self.fp.log_density(u.exp()) - self.fp.c + u
    }

    /// `ln ∫_{e^{ua}}^{e^{ub}} exp(ln μ - c) dv` by composite Gauss-Legendre.
    fn log_integral(&self, ua: f64, ub: f64, panels: usize) -> f64 {
        if ub <= ua {
            return f64::NEG_INFINITY;
        }
        let width = (ub - ua) / panels as f64;
        let mut terms = Vec::with_capacity(panels * 16);
        for k in 0..panels {
            let mid = ua + (k as f64 + 0.5) * width;
            let half = 0.5 * width;
            for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
                for sign in [-1.0, 1.0] {
                    terms.push(self.h(mid + sign * x * half) + (w * half).ln());
                }
            }
        }
        log_sum_exp(&terms)
    }

    /// Upper integration limit: where the integrand has dropped `DROP` nats below its value at `ua`.
    fn upper_limit(&self, ua: f64) -> f64 {
        let reference = if ua < self.u_peak { self.h_peak } else { self.h(ua) };
        let mut ub = ua.max(self.u_peak);
        let mut step = 0.01;
        while self.h(ub) > reference - DROP && ub < U_MAX + 10.0 {
            ub += step;
            step *= 1.2;
        }
        ub
    }

    fn lower_limit(&self) -> f64 {
        let mut ua = self.u_peak;
        let mut step = 0.01;
        while self.h(ua) > self.h_peak - DROP && ua > U_MIN {
            ua -= step;
            step *= 1.2;
        }
        ua.max(U_MIN)
    }

    fn log_tail(&self, ua: f64) -> f64 {
        let ub = self.upper_limit(ua);
        let coarse = self.log_integral(ua, ub, 200);
        let fine = self.log_integral(ua, ub, 400);
        if (coarse - fine).abs() > 1e-6 {
            self.log_integral(ua, ub, 2000)
        } else {
            fine
        }
    }

    fn log_total(&self) -> f64 {
        self.log_tail(self.lower_limit())
    }
}

/// Smallest `γ` (in the fit variable) with `log₁₀ ∫_γ^∞ μ / ∫_0^∞ μ ≤ target_log10`.
///
/// Entirely in log space; bisection to `1e-4` absolute. A target of 0 gives
/// the left edge of the support, `v = 0`.
pub fn tail_quantile_fit_variable(fp: &FitParams, target_log10: f64) -> Result<f64> {
    if target_log10 > 0.0 {
        return Err(RegionError::BadParameter(format!("target 10^{target_log10} exceeds one")));
    }
    let integ = TailIntegrator::new(fp)?;
    let log_total = integ.log_total();
    let target = target_log10 * std::f64::consts::LN_10;
    let log_frac = |v: f64| -> f64 {
        if v <= 0.0 {
            0.0
        } else {
            let u = v.ln().max(integ.lower_limit());
            integ.log_tail(u) - log_total
        }
    };
    if target >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = integ.u_peak.exp().max(1e-6);
    while log_frac(hi) > target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(RegionError::TargetUnreachable(target_log10));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-5 {
        let mid = 0.5 * (lo + hi);
        if log_frac(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Tail quantile in figure coordinates: an upper bound for the diamond
/// distance, a lower bound for fidelities.
pub fn tail_quantile(fp: &FitParams, target_log10: f64) -> Result<f64> {
    Ok(fp.from_fit_variable(tail_quantile_fit_variable(fp, target_log10)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub weight_threshold_log10: f64,
    pub d_a: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub figure: FigureKind,
    pub method: Method,
    pub n: u64,
    pub eps: f64,
    pub binom_mode: BinomMode,
    pub delta: f64,
    #[serde(rename = "gamma_E")]
    pub gamma_e: f64,
    pub interval: [f64; 2],
    pub fit: FitParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qeb: Option<QuantumErrorBars>,
    pub diagnostics: Diagnostics,
}

/// Interval from a tail threshold: `[0, γ + d_Aδ/2]` for the diamond distance,
/// `[γ - d_Aδ, 1]` for fidelities (the entanglement fidelity uses the
/// worst-case bound), clipped to `[0, 1]`.
pub fn interval_from(kind: FigureKind, gamma_e: f64, delta: f64, d_a: usize) -> [f64; 2] {
    let d = d_a as f64;
    match kind {
        FigureKind::DiamondDistance => [0.0, (gamma_e + d * delta / 2.0).clamp(0.0, 1.0)],
        FigureKind::EntanglementFidelity | FigureKind::WorstEntanglementFidelity => {
            [(gamma_e - d * delta).clamp(0.0, 1.0), 1.0]
        }
    }
}

pub fn assemble_report(fp: &FitParams, rp: &RegionParams, kind: FigureKind, d_a: usize) -> Result<ConfidenceReport> {
    rp.validate()?;
    if kind.direction() != fp.direction {
        return Err(RegionError::BadParameter("fit direction does not match the figure".into()));
    }
    let threshold = weight_threshold(rp);
    let gamma_e = tail_quantile(fp, threshold)?;
    let delta = enlargement_delta(rp);
    let qeb = match fp.model {
        FitModel::One => Some(quantum_error_bars(fp)?),
        FitModel::Two => None,
    };
    Ok(ConfidenceReport {
        figure: kind,
        method: rp.method,
        n: rp.n,
        eps: rp.eps,
        binom_mode: rp.binom_mode,
        delta,
        gamma_e,
        interval: interval_from(kind, gamma_e, delta, d_a),
        fit: *fp,
        qeb,
        diagnostics: Diagnostics { weight_threshold_log10: threshold, d_a },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walkers::HistogramBin;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::function::erf::{erfc, erfc_inv};

    fn example_params(mode: BinomMode) -> RegionParams {
        RegionParams { n: 45000, eps: 0.01, d2ab: 16, method: Method::Channel, binom_mode: mode }
    }

    #[test]
    fn log_sym_dim_examples() {
        assert!((log_sym_dim(2, 2, BinomMode::Exact) - 3f64.ln()).abs() < 1e-12);
        assert!(log_sym_dim(17, 1, BinomMode::Exact).abs() < 1e-12);
        assert!(log_sym_dim(17, 1, BinomMode::UpperBound).abs() < 1e-12);
        assert!(log_sym_dim(1_000_000, 81, BinomMode::Exact).is_finite());
        // direct summation oracle: ln binom(n+d-1, d-1) = Σ_{k=1}^{d-1} ln((n+k)/k)
        let direct: f64 = (1..16).map(|k| ((90000.0 + k as f64) / k as f64).ln()).sum();
        assert!((log_sym_dim(90000, 16, BinomMode::Exact) - direct).abs() < 1e-8);

        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..100 {
            let n = rng.random_range(0..100_000u64);
            let d = rng.random_range(1..200u64);
            assert!(log_sym_dim(n, d, BinomMode::Exact) <= log_sym_dim(n, d, BinomMode::UpperBound) + 1e-9);
        }
    }

    #[test]
    fn delta_and_threshold_examples() {
        let exact = example_params(BinomMode::Exact);
        let bound = example_params(BinomMode::UpperBound);
        let oracle_ln_s: f64 = (1..16).map(|k| ((90000.0 + k as f64) / k as f64).ln()).sum();
        let oracle_delta = ((2.0 / 45000.0) * (200f64.ln() + 3.0 * oracle_ln_s)).sqrt();
        assert!((enlargement_delta(&exact) - oracle_delta).abs() < 1e-10);
        assert!((enlargement_delta(&exact) - 0.1392).abs() < 5e-4, "{}", enlargement_delta(&exact));
        assert!((enlargement_delta(&bound) - 0.1518).abs() < 5e-5, "{}", enlargement_delta(&bound));

        let oracle = -200f64.log10() - 2.0 * 15.0 * 90001f64.log10();
        assert!((weight_threshold(&bound) - oracle).abs() < 1e-9);
        assert!((weight_threshold(&bound) + 150.93).abs() < 0.01);
        assert!((weight_threshold(&exact) + 126.7).abs() < 0.05, "{}", weight_threshold(&exact));

        let degenerate = RegionParams { n: 5, eps: 2.0, d2ab: 1, method: Method::State, binom_mode: BinomMode::Exact };
        assert!(weight_threshold(&degenerate).abs() < 1e-12);
        assert!(degenerate.validate().is_err());
    }

    #[test]
    fn delta_monotonicity() {
        let base = example_params(BinomMode::Exact);
        let mut prev = f64::INFINITY;
        for k in 0..8 {
            let d = enlargement_delta(&RegionParams { n: 45000 << k, ..base });
            assert!(d < prev);
            prev = d;
        }
        assert!(enlargement_delta(&RegionParams { d2ab: 81, ..base }) > enlargement_delta(&base));
        assert!(enlargement_delta(&RegionParams { eps: 0.001, ..base }) > enlargement_delta(&base));
        let state = RegionParams { method: Method::State, ..base };
        assert!(enlargement_delta(&state) < enlargement_delta(&base));
    }

    #[test]
    fn error_bar_formula_examples() {
        let q = error_bars_from(1.0, 0.0, 2.0).unwrap();
        assert!((q.v0 - 1.0).abs() < 1e-12);
        assert!((q.delta - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((q.gamma - 1.0 / 12.0).abs() < 1e-12);

        let q = error_bars_from(1.0, -2.0, 0.0).unwrap();
        assert!((q.v0 - 1.0).abs() < 1e-12);
        assert!((q.delta - 1.0).abs() < 1e-12);
        assert_eq!(q.gamma, 0.0);

        let a2: f64 = 400.0;
        let a1 = -40.0;
        let q = error_bars_from(a2, a1, 1e-9).unwrap();
        assert!((q.delta - a2.powf(-0.5)).abs() < 1e-9);
        assert!(q.gamma.abs() < 1e-9);

        assert!(error_bars_from(-1.0, 0.0, 1.0).is_err());
        assert!(error_bars_from(0.0, -1.0, 1.0).is_err());
        // the a₂ → 0 limit agrees with the general formula
        let limit = error_bars_from(0.0, 50.0, 4.0).unwrap();
        let near = error_bars_from(1e-9, 50.0, 4.0).unwrap();
        assert!((limit.v0 - 0.08).abs() < 1e-12);
        assert!((limit.v0 - near.v0).abs() < 1e-9 && (limit.delta - near.delta).abs() < 1e-9);
        assert!(error_bars_from(1.0, 0.0, -1.0).is_err());
    }

    /// Histogram with densities drawn from a model-one curve and 1% noise.
    #[allow(clippy::too_many_arguments)]
    fn synthetic_histogram(
        a2: f64,
        a1: f64,
        m: f64,
        c: f64,
        lo: f64,
        hi: f64,
        bins: usize,
        noise: f64,
        seed: u64,
    ) -> Histogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = (hi - lo) / bins as f64;
        let scale = 1e10;
        let raw: Vec<(f64, f64)> = (0..bins)
            .map(|k| {
                let v = lo + (k as f64 + 0.5) * width;
                let dens = (-a2 * v * v - a1 * v + m * v.ln() + c).exp();
                let noisy = dens * (1.0 + noise * rng.sample::<f64, _>(rand_distr::StandardNormal));
                (v, noisy)
            })
            .collect();
        // counts proportional to density; errors at 1% of the count
        let counts: Vec<f64> = raw.iter().map(|(_, d)| d * scale * width).collect();
        Histogram {
            bins: (0..bins)
                .map(|k| HistogramBin {
                    bin_lo: lo + k as f64 * width,
                    bin_hi: lo + (k + 1) as f64 * width,
                    count: counts[k].round() as u64,
                    error: 0.01 * counts[k],
                    normalized_density: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn model_one_recovers_parameters() {
        let truth = |v: f64| -300.0 * v * v - 10.0 * v + 2.0 * v.ln();
        let exact = synthetic_histogram(300.0, 10.0, 2.0, 5.0, 0.01, 0.2, 30, 0.0, 52);
        let fp = fit_histogram(&exact, FitModel::One, Direction::SmallerBetter).unwrap();
        for (got, want) in [(fp.a2, 300.0), (fp.a1, 10.0), (fp.m, 2.0)] {
            assert!((got / want - 1.0).abs() < 1e-3, "{got} vs {want}");
        }

        let noisy = synthetic_histogram(300.0, 10.0, 2.0, 5.0, 0.01, 0.2, 30, 0.01, 52);
        let fp = fit_histogram(&noisy, FitModel::One, Direction::SmallerBetter).unwrap();
        let offset = fp.log_density(0.1) - truth(0.1);
        for k in 1..20 {
            let v = 0.01 * k as f64;
            assert!((fp.log_density(v) - truth(v) - offset).abs() < 0.03, "v={v}");
        }
        assert!(fp.reduced_chi2 < 3.0);

        let fp2 = fit_histogram(&noisy, FitModel::Two, Direction::SmallerBetter).unwrap();
        assert!(fp2.p.unwrap() >= 0.5 && fp2.p.unwrap() <= 3.0);
        assert!(fp2.reduced_chi2.is_finite());
    }

    #[test]
    fn skewed_histogram_pins_a2_at_zero() {
        let h = synthetic_histogram(-2000.0, 3000.0, 300.0, 965.0, 0.06, 0.2, 30, 0.0, 54);
        let fp = fit_histogram(&h, FitModel::One, Direction::SmallerBetter).unwrap();
        assert!(fp.a2_at_bound && fp.a2 == 0.0 && fp.a1 > 0.0);
        let q = quantum_error_bars(&fp).unwrap();
        assert!((q.v0 - fp.m / fp.a1).abs() < 1e-12);
        assert!(tail_quantile(&fp, -50.0).unwrap() > q.v0);
    }

    #[test]
    fn fit_rejects_sparse_histograms() {
        let h = Histogram {
            bins: vec![HistogramBin { bin_lo: 0.0, bin_hi: 0.1, count: 100, error: 10.0, normalized_density: 10.0 }],
        };
        assert!(matches!(
            fit_histogram(&h, FitModel::One, Direction::SmallerBetter),
            Err(RegionError::InsufficientBins { .. })
        ));
        let empty = Histogram { bins: vec![] };
        assert!(fit_histogram(&empty, FitModel::Two, Direction::SmallerBetter).is_err());
    }

    fn gaussian_fit(a2: f64) -> FitParams {
        FitParams {
            model: FitModel::One,
            a2,
            a1: 0.0,
            m: 0.0,
            c: 0.0,
            p: None,
            reduced_chi2: 0.0,
            a2_at_bound: false,
            direction: Direction::SmallerBetter,
        }
    }

    #[test]
    fn gaussian_tail_matches_erfc_oracle() {
        for a2 in [1.0, 400.0, 2.5e4] {
            let fp = gaussian_fit(a2);
            let got = tail_quantile(&fp, -2.0).unwrap();
            let want = erfc_inv(0.01) / a2.sqrt();
            assert!((got - want).abs() < 1e-4, "a2={a2}: {got} vs {want}");
        }
        // extreme target against the log of erfc's asymptotic series
        let fp = gaussian_fit(400.0);
        let got = tail_quantile(&fp, -151.0).unwrap();
        let log10_tail = |g: f64| {
            let x = g * 20.0;
            // ln erfc(x) ≈ -x² - ln(x√π) + ln(1 - 1/(2x²) + 3/(4x⁴))
            (-x * x - (x * std::f64::consts::PI.sqrt()).ln() + (1.0 - 0.5 / (x * x) + 0.75 / x.powi(4)).ln())
                / std::f64::consts::LN_10
        };
        assert!((log10_tail(got) + 151.0).abs() < 0.02, "{}", log10_tail(got));
        assert!((erfc(got * 20.0 * 0.2) - erfc(got * 4.0)).abs() < 1e-15);
    }

    #[test]
    fn tail_quantile_edges_and_monotonicity() {
        let fp = FitParams { a1: -10.0, m: 2.0, ..gaussian_fit(300.0) };
        assert_eq!(tail_quantile(&fp, 0.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for t in [-1.0, -5.0, -20.0, -80.0, -151.0] {
            let g = tail_quantile(&fp, t).unwrap();
            assert!(g > prev);
            prev = g;
        }
        let bad = FitParams { a2: -1.0, ..fp };
        assert!(matches!(tail_quantile(&bad, -2.0), Err(RegionError::DegenerateFit(_))));

        let fid = FitParams { direction: Direction::LargerBetter, ..fp };
        let g = tail_quantile(&fid, -5.0).unwrap();
        assert!((g - (1.0 - tail_quantile(&fp, -5.0).unwrap())).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        assert_eq!(interval_from(FigureKind::DiamondDistance, 0.24, 0.1, 2), [0.0, 0.24 + 0.1]);
        let [lo, hi] = interval_from(FigureKind::WorstEntanglementFidelity, 0.9, 0.05, 2);
        assert!((lo - 0.8).abs() < 1e-12 && hi == 1.0);
        assert_eq!(interval_from(FigureKind::DiamondDistance, 0.3, 0.0, 2), [0.0, 0.3]);
        assert_eq!(interval_from(FigureKind::WorstEntanglementFidelity, 0.3, 0.0, 2), [0.3, 1.0]);
        assert_eq!(interval_from(FigureKind::DiamondDistance, 0.9, 0.2, 3), [0.0, 1.0]);
    }

    #[test]
    fn report_contains_peak_and_serializes() {
        let h = synthetic_histogram(5000.0, -500.0, 3.0, 5.0, 0.01, 0.12, 30, 0.01, 53);
        let fp = fit_histogram(&h, FitModel::One, Direction::SmallerBetter).unwrap();
        let rp = example_params(BinomMode::UpperBound);
        let report = assemble_report(&fp, &rp, FigureKind::DiamondDistance, 2).unwrap();
        let q = report.qeb.unwrap();
        assert!(q.v0 <= report.gamma_e && report.gamma_e <= report.interval[1]);
        let json = serde_json::to_value(&report).unwrap();
        for key in ["figure", "method", "n", "eps", "binom_mode", "delta", "gamma_E", "interval", "fit", "qeb"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        assert_eq!(json["fit"]["model"], "one");
    }
}
