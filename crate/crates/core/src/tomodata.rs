//! Tomographic datasets, likelihoods and simulated measurement records.
//!
//! Two schemes are supported:
//!
//! - prepare-and-measure: known input states `σ^j` on `A`, POVMs on `B`;
//! - ancilla-assisted: one half of a full-Schmidt-rank pure state `ψ_AP` is
//!   sent through the channel and `B ⊗ P` is measured jointly.
//!
//! Counts are stored aggregated per effect. Likelihoods are evaluated through
//! a [`LikelihoodModel`], which folds the inputs into per-effect operators `F_k`
//! on `A ⊗ B` so that every Born probability is a single real dot product
//! `tr(Λ_AB F_k)`.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{apply_channel, channel_to_bipartite, ChannelDims, ChannelError};
use crate::qmat::{self, eigh, hvec, partial_trace, ComplexMatrix, Keep, QmatError, C64, ZERO};

/// Born probabilities are clamped below at this value before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TomoError {
    #[error("POVM is not complete: {0}")]
    BadPovm(String),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error(transparent)]
    Qmat(#[from] QmatError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, TomoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    PrepareMeasure,
    AncillaAssisted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    /// Input state on `A` (prepare-and-measure only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<ComplexMatrix>,
    /// POVM effects on `B` (prepare-and-measure) or `B ⊗ P` (ancilla-assisted).
    pub effects: Vec<ComplexMatrix>,
    pub counts: Vec<u64>,
}

impl Setting {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scheme: Scheme,
    pub dims: ChannelDims,
    /// `ψ_AP` as a vector indexed `a * d_A + p` (ancilla-assisted only).
    #[serde(default, skip_serializing_if = "Option::is_none", with = "qmat::vector_literal::option")]
    pub input_entangled: Option<Vec<C64>>,
    pub settings: Vec<Setting>,
}

impl Dataset {
    pub fn total_n(&self) -> u64 {
        self.settings.iter().map(Setting::total).sum()
    }

    /// Dimension of the space the effects act on.
    pub fn effect_dim(&self) -> usize {
        match self.scheme {
            Scheme::PrepareMeasure => self.dims.d_b,
            Scheme::AncillaAssisted => self.dims.d_b * self.dims.d_a,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d_eff = self.effect_dim();
        if self.settings.is_empty() {
            return Err(TomoError::InvalidDataset("no settings".into()));
        }
        for (j, s) in self.settings.iter().enumerate() {
            if s.counts.len() != s.effects.len() {
                return Err(TomoError::InvalidDataset(format!(
                    "setting {j}: {} counts for {} effects",
                    s.counts.len(),
                    s.effects.len()
                )));
            }
            check_povm(&s.effects, d_eff).map_err(|e| match e {
                TomoError::BadPovm(m) => TomoError::BadPovm(format!("setting {j}: {m}")),
                other => other,
            })?;
            match (self.scheme, &s.input) {
                (Scheme::PrepareMeasure, Some(rho)) => {
                    if rho.rows() != self.dims.d_a {
                        return Err(TomoError::InvalidDataset(format!("setting {j}: input is not d_A x d_A")));
                    }
                    qmat::check_state(rho, 1e-8)
                        .map_err(|e| TomoError::InvalidDataset(format!("setting {j}: input {e}")))?;
                }
                (Scheme::PrepareMeasure, None) => {
                    return Err(TomoError::InvalidDataset(format!("setting {j}: missing input state")));
                }
                (Scheme::AncillaAssisted, Some(_)) => {
                    return Err(TomoError::InvalidDataset(format!(
                        "setting {j}: ancilla-assisted settings take no input state"
                    )));
                }
                (Scheme::AncillaAssisted, None) => {}
            }
        }
        if self.scheme == Scheme::AncillaAssisted {
            let psi = self
                .input_entangled
                .as_ref()
                .ok_or_else(|| TomoError::InvalidDataset("missing input_entangled".into()))?;
            let min = min_schmidt_coefficient(psi, self.dims.d_a)?;
            if min < 1e-10 {
                return Err(TomoError::InvalidDataset(format!(
                    "entangled input lacks full Schmidt rank (min coefficient {min:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// Reference marginal `ψ_P = tr_A |ψ⟩⟨ψ|` of the entangled input.
    pub fn reference_marginal(&self) -> Result<ComplexMatrix> {
        let psi =
            self.input_entangled.as_ref().ok_or_else(|| TomoError::InvalidDataset("missing input_entangled".into()))?;
        let d = self.dims.d_a;
        Ok(partial_trace(&ComplexMatrix::outer(psi), (d, d), Keep::Y)?)
    }

    /// Output state on `B ⊗ P` after sending the `A` half of `ψ_AP` through the channel.
    ///
    /// Works for any `ψ_AP`: `ρ_BP = Σ ψ_{ap} ψ*_{a'p'} Λ(|a⟩⟨a'|) ⊗ |p⟩⟨p'|`.
    pub fn output_state(&self, choi: &ComplexMatrix) -> Result<ComplexMatrix> {
        let psi =
            self.input_entangled.as_ref().ok_or_else(|| TomoError::InvalidDataset("missing input_entangled".into()))?;
        let (d_a, d_b) = (self.dims.d_a, self.dims.d_b);
        let mut out = ComplexMatrix::zeros(d_b * d_a, d_b * d_a);
        for a in 0..d_a {
            for ap in 0..d_a {
                let mut eij = ComplexMatrix::zeros(d_a, d_a);
                eij[(a, ap)] = C64::new(1.0, 0.0);
                let block = apply_channel(choi, &eij, self.dims)?;
                for p in 0..d_a {
                    for pp in 0..d_a {
                        let w = psi[a * d_a + p] * psi[ap * d_a + pp].conj();
                        if w == ZERO {
                            continue;
                        }
                        for b in 0..d_b {
                            for bp in 0..d_b {
                                out[(b * d_a + p, bp * d_a + pp)] += w * block[(b, bp)];
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    /// Same output state through `d_A ψ_P^{1/2} Λ_BP ψ_P^{1/2}`; valid when `ψ_AP = (σ^{1/2} ⊗ 1) Σ|ii⟩`.
    pub fn output_state_via_marginal(&self, choi: &ComplexMatrix) -> Result<ComplexMatrix> {
        let marg = self.reference_marginal()?;
        Ok(channel_to_bipartite(choi, &marg.hermitian_part(), self.dims)?)
    }
}

/// `ψ_AP = Σ_i σ^{1/2}|i⟩ ⊗ |i⟩ = d_A^{1/2} (σ^{1/2} ⊗ 1)|Φ̂⟩`; its `P` marginal is `σᵀ`.
pub fn entangled_input(sigma_a: &ComplexMatrix) -> Result<Vec<C64>> {
    qmat::check_state(sigma_a, 1e-8)?;
    let root = qmat::mat_sqrt(sigma_a)?;
    let d = sigma_a.rows();
    Ok((0..d * d).map(|idx| root[(idx / d, idx % d)]).collect())
}

fn min_schmidt_coefficient(psi: &[C64], d_a: usize) -> Result<f64> {
    if psi.len() != d_a * d_a {
        return Err(TomoError::InvalidDataset(format!("entangled input must have {} entries", d_a * d_a)));
    }
    let m = ComplexMatrix::from_vec(d_a, d_a, psi.to_vec())?;
    let gram = (&m * &m.adjoint()).hermitian_part();
    Ok(eigh(&gram)?.min().max(0.0).sqrt())
}

fn check_povm(effects: &[ComplexMatrix], d: usize) -> Result<()> {
    if effects.is_empty() {
        return Err(TomoError::BadPovm("no effects".into()));
    }
    let mut sum = ComplexMatrix::zeros(d, d);
    for e in effects {
        if e.rows() != d || e.cols() != d {
            return Err(TomoError::BadPovm(format!("effect is {}x{}, expected {d}x{d}", e.rows(), e.cols())));
        }
        if !e.is_hermitian(1e-9) {
            return Err(TomoError::BadPovm("effect is not Hermitian".into()));
        }
        if eigh(e)?.min() < -1e-9 {
            return Err(TomoError::BadPovm("effect is not positive".into()));
        }
        sum += e;
    }
    let defect = (&sum - &ComplexMatrix::identity(d)).max_abs();
    if defect > 1e-9 {
        return Err(TomoError::BadPovm(format!("effects sum to identity only within {defect:.3e}")));
    }
    Ok(())
}

/// Log-likelihood together with the number of clamped Born probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLikelihood {
    pub value: f64,
    pub clamped: usize,
}

/// Dataset compiled to `ℓ(X) = Σ_k n_k ln max(tr(X F_k), floor)`.
///
/// Effects with zero counts are dropped. `X` is either a Choi matrix
/// (channel likelihood) or a bipartite output state (state likelihood),
/// depending on how the model was built.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    dim: usize,
    stride: usize,
    counts: Vec<f64>,
    operators: Vec<f64>,
    total_n: u64,
}

impl LikelihoodModel {
    fn build(dim: usize, terms: impl Iterator<Item = (u64, ComplexMatrix)>) -> Self {
        let stride = dim * dim;
        let mut counts = Vec::new();
        let mut operators = Vec::new();
        let mut total_n = 0;
        for (n, f) in terms {
            if n == 0 {
                continue;
            }
            total_n += n;
            counts.push(n as f64);
            operators.extend(hvec(&f.hermitian_part()));
        }
        Self { dim, stride, counts, operators, total_n }
    }

    /// Channel likelihood: operators `F_k` on `A ⊗ B` with `p_k = tr(Λ_AB F_k)`.
    pub fn for_channels(ds: &Dataset) -> Result<Self> {
        ds.validate()?;
        let dims = ds.dims;
        let d_a = dims.d_a as f64;
        let terms = channel_operators(ds)?;
        let terms: Vec<(u64, ComplexMatrix)> = terms.into_iter().map(|(n, f)| (n, f.scale(d_a))).collect();
        Ok(Self::build(dims.d_choi(), terms.into_iter()))
    }

    /// State likelihood on `B ⊗ P` for the ancilla-assisted scheme: `p_k = tr(ρ_BP E_k)`.
    pub fn for_output_states(ds: &Dataset) -> Result<Self> {
        if ds.scheme != Scheme::AncillaAssisted {
            return Err(TomoError::Unsupported("state likelihood needs an ancilla-assisted dataset".into()));
        }
        ds.validate()?;
        let terms = ds.settings.iter().flat_map(|s| s.counts.iter().copied().zip(s.effects.iter().cloned()));
        Ok(Self::build(ds.effect_dim(), terms))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn total_n(&self) -> u64 {
        self.total_n
    }

    pub fn is_flat(&self) -> bool {
        self.counts.is_empty()
    }

    /// Evaluates the log-likelihood at `x` given as [`hvec`] of the Hermitian argument.
    pub fn evaluate_hvec(&self, x: &[f64]) -> LogLikelihood {
        debug_assert_eq!(x.len(), self.stride);
        let mut value = 0.0;
        let mut clamped = 0;
        for (n, f) in self.counts.iter().zip(self.operators.chunks_exact(self.stride)) {
            let p: f64 = f.iter().zip(x).map(|(a, b)| a * b).sum();
            let p = if p < PROBABILITY_FLOOR {
                clamped += 1;
                PROBABILITY_FLOOR
            } else {
                p
            };
            value += n * p.ln();
        }
        LogLikelihood { value, clamped }
    }

    pub fn evaluate(&self, x: &ComplexMatrix) -> LogLikelihood {
        self.evaluate_hvec(&hvec(x))
    }
}

/// Per-effect `(count, G_k)` with `p_k = d_A tr(Λ_AB G_k)`.
fn channel_operators(ds: &Dataset) -> Result<Vec<(u64, ComplexMatrix)>> {
    let dims = ds.dims;
    let mut out = Vec::new();
    match ds.scheme {
        Scheme::PrepareMeasure => {
            for s in &ds.settings {
                let input_t = s.input.as_ref().expect("validated").transpose();
                for (n, e) in s.counts.iter().zip(&s.effects) {
                    out.push((*n, input_t.kron(e)));
                }
            }
        }
        Scheme::AncillaAssisted => {
            let psi = ds.input_entangled.as_ref().expect("validated");
            let d_a = dims.d_a;
            // K_{pa} = ψ_{ap}; ρ_PB = d_A (K ⊗ 1) Λ_AB (K† ⊗ 1)
            let k = ComplexMatrix::from_fn(d_a, d_a, |p, a| psi[a * d_a + p]);
            let lift = k.kron(&ComplexMatrix::identity(dims.d_b));
            let lift_adj = lift.adjoint();
            for s in &ds.settings {
                for (n, e) in s.counts.iter().zip(&s.effects) {
                    let e_pb = e.swap_subsystems(dims.d_b, d_a)?;
                    out.push((*n, &(&lift_adj * &e_pb) * &lift));
                }
            }
        }
    }
    Ok(out)
}

/// Channel log-likelihood of the dataset at the given Choi matrix.
pub fn log_likelihood(ds: &Dataset, choi: &ComplexMatrix) -> Result<LogLikelihood> {
    Ok(LikelihoodModel::for_channels(ds)?.evaluate(choi))
}

/// One group of settings sharing a shot budget. Each shot picks a setting with
/// probability `prior[s]` (a random preparation within a basis), then an outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingGroup {
    pub settings: Vec<Setting>,
    pub prior: Vec<f64>,
}

/// Measurement design without counts.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingsTemplate {
    pub scheme: Scheme,
    pub dims: ChannelDims,
    pub input_entangled: Option<Vec<C64>>,
    pub groups: Vec<SettingGroup>,
}

impl SettingsTemplate {
    pub fn with_entangled_input(mut self, psi: Vec<C64>) -> Self {
        self.input_entangled = Some(psi);
        self
    }

    pub fn n_settings(&self) -> usize {
        self.groups.iter().map(|g| g.settings.len()).sum()
    }

    /// The template as a dataset with all counts zero.
    pub fn empty_dataset(&self) -> Dataset {
        Dataset {
            scheme: self.scheme,
            dims: self.dims,
            input_entangled: self.input_entangled.clone(),
            settings: self.groups.iter().flat_map(|g| g.settings.iter().cloned()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SettingsKind {
    PauliQubit,
    GellmannQutrit,
    PauliNQubit,
}

/// Local measurement family: each observable is a list of orthogonal projectors summing to `I`.
fn observable_family(kind: SettingsKind, d: usize) -> Result<Vec<Vec<ComplexMatrix>>> {
    let unsupported = |what: &str| Err(TomoError::Unsupported(format!("{what} settings on dimension {d}")));
    match kind {
        SettingsKind::PauliQubit => {
            if d != 2 {
                return unsupported("pauli-qubit");
            }
            qmat::paulis().iter().map(rank_one_projectors).collect()
        }
        SettingsKind::GellmannQutrit => {
            if d != 3 {
                return unsupported("gellmann-qutrit");
            }
            gell_mann().iter().map(rank_one_projectors).collect()
        }
        SettingsKind::PauliNQubit => {
            if d < 2 || !d.is_power_of_two() {
                return unsupported("pauli-n-qubit");
            }
            let n_qubits = d.trailing_zeros() as usize;
            let paulis = qmat::paulis();
            let mut out = Vec::new();
            for idx in 0..3usize.pow(n_qubits as u32) {
                let mut obs = ComplexMatrix::identity(1);
                let mut rest = idx;
                for _ in 0..n_qubits {
                    obs = obs.kron(&paulis[rest % 3]);
                    rest /= 3;
                }
                let id = ComplexMatrix::identity(d);
                let plus = (&id + &obs).scale(0.5);
                let minus = (&id - &obs).scale(0.5);
                out.push(vec![plus, minus]);
            }
            Ok(out)
        }
    }
}

/// Rank-one eigenprojectors of an observable, one per eigenvector. Degenerate
/// eigenspaces are split along the eigenbasis the solver returns, which is
/// the computational basis for diagonal observables.
fn rank_one_projectors(obs: &ComplexMatrix) -> Result<Vec<ComplexMatrix>> {
    let e = eigh(obs)?;
    Ok((0..obs.rows()).map(|c| ComplexMatrix::outer(&e.vectors.column(c))).collect())
}

/// The eight Gell-Mann matrices.
pub fn gell_mann() -> Vec<ComplexMatrix> {
    let i = C64::new(0.0, 1.0);
    let mut out = Vec::with_capacity(8);
    let sym = |r: usize, c: usize, z: C64| {
        let mut m = ComplexMatrix::zeros(3, 3);
        m[(r, c)] = z;
        m[(c, r)] = z.conj();
        m
    };
    out.push(sym(0, 1, C64::new(1.0, 0.0)));
    out.push(sym(0, 1, -i));
    out.push(ComplexMatrix::from_real_diag(&[1.0, -1.0, 0.0]));
    out.push(sym(0, 2, C64::new(1.0, 0.0)));
    out.push(sym(0, 2, -i));
    out.push(sym(1, 2, C64::new(1.0, 0.0)));
    out.push(sym(1, 2, -i));
    let s = 1.0 / 3f64.sqrt();
    out.push(ComplexMatrix::from_real_diag(&[s, s, -2.0 * s]));
    out
}

/// Standard measurement designs.
///
/// Ancilla-assisted: every pair of local observables on `B` and `P`, with
/// product effects on `B ⊗ P`. Prepare-and-measure: every pair (preparation
/// basis, measured observable); within a pair the input is a uniformly random
/// eigenstate of the preparation observable.
pub fn standard_settings(kind: SettingsKind, scheme: Scheme, dims: ChannelDims) -> Result<SettingsTemplate> {
    let out_family = observable_family(kind, dims.d_b)?;
    let in_family = observable_family(kind, dims.d_a)?;
    let mut groups = Vec::new();
    match scheme {
        Scheme::AncillaAssisted => {
            for out_obs in &out_family {
                for ref_obs in &in_family {
                    let effects: Vec<ComplexMatrix> =
                        out_obs.iter().flat_map(|eb| ref_obs.iter().map(move |ep| eb.kron(ep))).collect();
                    let counts = vec![0; effects.len()];
                    groups.push(SettingGroup {
                        settings: vec![Setting { input: None, effects, counts }],
                        prior: vec![1.0],
                    });
                }
            }
        }
        Scheme::PrepareMeasure => {
            for in_obs in &in_family {
                for out_obs in &out_family {
                    let mut settings = Vec::new();
                    let mut prior = Vec::new();
                    for proj in in_obs {
                        let rank = proj.trace().re;
                        settings.push(Setting {
                            input: Some(proj.scale(1.0 / rank)),
                            effects: out_obs.clone(),
                            counts: vec![0; out_obs.len()],
                        });
                        prior.push(rank / dims.d_a as f64);
                    }
                    groups.push(SettingGroup { settings, prior });
                }
            }
        }
    }
    Ok(SettingsTemplate { scheme, dims, input_entangled: None, groups })
}

/// Multinomial sample by sequential binomial draws.
fn multinomial<R: Rng + ?Sized>(shots: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0; probs.len()];
    let mut remaining = shots;
    let mut mass_left: f64 = probs.iter().sum();
    for (k, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if k + 1 == probs.len() {
            out[k] = remaining;
            break;
        }
        let q = if mass_left > 0.0 { (p / mass_left).clamp(0.0, 1.0) } else { 0.0 };
        let draw = if q <= 0.0 {
            0
        } else if q >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        out[k] = draw;
        remaining -= draw;
        mass_left -= p;
    }
    out
}

/// Simulates `shots` outcomes per setting group from the channel with Choi matrix `true_choi`.
pub fn simulate<R: Rng + ?Sized>(
    true_choi: &ComplexMatrix,
    template: &SettingsTemplate,
    shots: u64,
    rng: &mut R,
) -> Result<Dataset> {
    let mut ds = template.empty_dataset();
    for s in &ds.settings {
        check_povm(&s.effects, ds.effect_dim())?;
    }
    ds.validate()?;
    crate::channels::check_choi(true_choi, ds.dims, 1e-8)?;

    let ops = channel_operators(&Dataset {
        settings: ds.settings.iter().map(|s| Setting { counts: vec![1; s.effects.len()], ..s.clone() }).collect(),
        ..ds.clone()
    })?;
    let d_a = ds.dims.d_a as f64;
    let probs: Vec<f64> = ops.iter().map(|(_, g)| (d_a * true_choi.trace_product(g).re).max(0.0)).collect();

    let mut offset = 0;
    let mut setting_idx = 0;
    for group in &template.groups {
        let mut flat = Vec::new();
        for (s, &w) in group.settings.iter().zip(&group.prior) {
            let n_eff = s.effects.len();
            let p = &probs[offset..offset + n_eff];
            let norm: f64 = p.iter().sum();
            flat.extend(p.iter().map(|x| w * x / norm));
            offset += n_eff;
        }
        let counts = multinomial(shots, &flat, rng);
        let mut k = 0;
        for s in &group.settings {
            let n_eff = s.effects.len();
            ds.settings[setting_idx].counts = counts[k..k + n_eff].to_vec();
            k += n_eff;
            setting_idx += 1;
        }
    }
    Ok(ds)
}

/// Maps every count `n` to `⌊alpha n⌋`. Flooring does not compose, so two
/// rescalings can differ from one rescaling by the product factor.
pub fn rescale_counts(ds: &Dataset, alpha: f64) -> Result<Dataset> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TomoError::BadParameter(format!("rescaling factor {alpha} outside (0, 1]")));
    }
    let mut out = ds.clone();
    for s in &mut out.settings {
        for n in &mut s.counts {
            *n = rescale_one(*n, alpha);
        }
    }
    Ok(out)
}

fn rescale_one(n: u64, alpha: f64) -> u64 {
    if alpha == 1.0 {
        return n;
    }
    // guard against products like 0.29 * 100 = 28.999999999999996
    (alpha * n as f64 * (1.0 + 4.0 * f64::EPSILON)).floor() as u64
}
