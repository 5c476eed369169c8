//! Figures of merit on channels: diamond distance to a reference channel,
//! entanglement fidelity and worst-case entanglement fidelity.
//!
//! The two SDP-based figures keep a [`Solver`] between calls. For the diamond
//! distance the constraint matrix only depends on the dimensions, so one
//! factorization serves every sample; the worst-case fidelity refactorizes a
//! small system per call.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{bipartite_to_channel, check_choi, ChannelDims, ChannelError};
use crate::qmat::{self, hmat, hvec, partial_trace, ComplexMatrix, Keep, QmatError, C64};
use crate::sdpcore::{ConicSolution, ProblemBuilder, SdpError, Settings, Solver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FomError {
    #[error("solver failure: {0}")]
    SolverFailure(#[from] SdpError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("missing reference channel for the diamond distance")]
    MissingReference,
    #[error("reduced state is rank deficient (min eigenvalue {min:.3e} < {floor:.3e})")]
    RankDeficient { min: f64, floor: f64 },
    #[error(transparent)]
    Qmat(QmatError),
    #[error(transparent)]
    Channel(ChannelError),
}

impl From<QmatError> for FomError {
    fn from(e: QmatError) -> Self {
        match e {
            QmatError::RankDeficient { min, floor } => FomError::RankDeficient { min, floor },
            other => FomError::Qmat(other),
        }
    }
}

impl From<ChannelError> for FomError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Qmat(q) => q.into(),
            other => FomError::Channel(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, FomError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FigureKind {
    DiamondDistance,
    EntanglementFidelity,
    WorstEntanglementFidelity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    SmallerBetter,
    LargerBetter,
}

impl FigureKind {
    pub fn direction(self) -> Direction {
        match self {
            FigureKind::DiamondDistance => Direction::SmallerBetter,
            _ => Direction::LargerBetter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    /// Choi matrix of the ideal channel (diamond distance only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ComplexMatrix>,
}

impl FigureSpec {
    pub fn direction(&self) -> Direction {
        self.kind.direction()
    }
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn require_square(dims: ChannelDims) -> Result<()> {
    if dims.d_a != dims.d_b {
        return Err(FomError::DimensionMismatch(format!("needs d_A = d_B, got {} and {}", dims.d_a, dims.d_b)));
    }
    Ok(())
}

fn check_shape(choi: &ComplexMatrix, dims: ChannelDims) -> Result<()> {
    let d = dims.d_choi();
    if choi.rows() != d || choi.cols() != d {
        return Err(FomError::DimensionMismatch(format!(
            "Choi matrix is {}x{}, expected {d}x{d}",
            choi.rows(),
            choi.cols()
        )));
    }
    Ok(())
}

/// Solver settings used for the figure SDPs.
pub fn default_settings() -> Settings {
    Settings::default()
}

/// Dual diamond-norm program with cached factorization:
/// minimize `t` s.t. `Z ⪰ Δ`, `Z ⪰ 0`, `t I - tr_B Z ⪰ 0`, `Δ = d_A (Λ - Λ')`.
/// Its optimal value is `½‖Λ - Λ'‖⋄`.
#[derive(Debug, Clone)]
pub struct DiamondSolver {
    dims: ChannelDims,
    solver: Solver,
}

impl DiamondSolver {
    pub fn new(dims: ChannelDims) -> Result<Self> {
        Self::with_settings(dims, default_settings())
    }

    pub fn with_settings(dims: ChannelDims, settings: Settings) -> Result<Self> {
        let d = dims.d_choi();
        let nz = d * d;
        let n = nz + 1;
        let neg_id: Vec<Vec<f64>> = (0..nz)
            .map(|r| {
                let mut row = vec![0.0; n];
                row[r] = -1.0;
                row
            })
            .collect();
        let mut generators = Vec::with_capacity(n);
        let mut unit = vec![0.0; nz];
        for j in 0..nz {
            unit[j] = 1.0;
            generators.push(partial_trace(&hmat(&unit, d), (dims.d_a, dims.d_b), Keep::X)?);
            unit[j] = 0.0;
        }
        generators.push(ComplexMatrix::identity(dims.d_a).scale(-1.0));
        let mut q = vec![0.0; n];
        q[nz] = 1.0;
        let problem = ProblemBuilder::new(n)
            .objective(q)
            .constraint(crate::sdpcore::Cone::HermitianPsd(d), neg_id.clone(), vec![0.0; nz])
            .constraint(crate::sdpcore::Cone::HermitianPsd(d), neg_id, vec![0.0; nz])
            .psd_constraint(dims.d_a, &generators, &ComplexMatrix::zeros(dims.d_a, dims.d_a))
            .build();
        Ok(Self { dims, solver: Solver::new(problem, settings)? })
    }

    pub fn dims(&self) -> ChannelDims {
        self.dims
    }

    /// `½‖Λ - Λ'‖⋄` for normalized Choi matrices, clipped to `[0, 1]`.
    pub fn distance(&mut self, choi: &ComplexMatrix, reference: &ComplexMatrix) -> Result<f64> {
        Ok(clip_unit(self.solve(choi, reference)?.primal))
    }

    fn solve(&mut self, choi: &ComplexMatrix, reference: &ComplexMatrix) -> Result<ConicSolution> {
        check_shape(choi, self.dims)?;
        check_shape(reference, self.dims)?;
        let delta = (choi - reference).scale(self.dims.d_a as f64).hermitian_part();
        let nz = self.dims.d_choi().pow(2);
        let mut b = vec![0.0; self.solver.problem().n_rows()];
        for (dst, v) in b.iter_mut().zip(hvec(&delta)) {
            *dst = -v;
        }
        debug_assert_eq!(b.len(), 2 * nz + self.dims.d_a * self.dims.d_a);
        self.solver.set_b(b.into())?;
        Ok(self.solver.solve()?)
    }
}

/// One-off diamond distance `½‖Λ - Λ'‖⋄`.
pub fn diamond_distance(choi: &ComplexMatrix, reference: &ComplexMatrix, dims: ChannelDims) -> Result<f64> {
    DiamondSolver::new(dims)?.distance(choi, reference)
}

/// `⟨Φ̂|Λ_AB|Φ̂⟩`.
pub fn entanglement_fidelity(choi: &ComplexMatrix, dims: ChannelDims) -> Result<f64> {
    require_square(dims)?;
    check_shape(choi, dims)?;
    let d = dims.d_a;
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += choi[(i * d + i, j * d + j)];
        }
    }
    Ok(clip_unit(acc.re / d as f64))
}

/// Worst-case entanglement fidelity:
/// minimize `μ` s.t. `tr ρ = 1`, `ρ ⪰ 0`, `[[I, M†v], [v†M, μ]] ⪰ 0` with
/// `v = (ρ ⊗ 1)|Φ̃⟩` and `M = (d_A Λ)^{1/2}`.
#[derive(Debug, Clone)]
pub struct WorstFidelitySolver {
    dims: ChannelDims,
    settings: Settings,
    solver: Option<Solver>,
}

impl WorstFidelitySolver {
    pub fn new(dims: ChannelDims) -> Result<Self> {
        Self::with_settings(dims, default_settings())
    }

    pub fn with_settings(dims: ChannelDims, settings: Settings) -> Result<Self> {
        require_square(dims)?;
        Ok(Self { dims, settings, solver: None })
    }

    fn problem(&self, choi: &ComplexMatrix) -> Result<crate::sdpcore::ConicProblem> {
        let d = self.dims.d_a;
        let big = self.dims.d_choi();
        let nr = d * d;
        let n = nr + 1;
        let m = qmat::mat_sqrt(&choi.scale(d as f64).hermitian_part())?;
        let m_adj = m.adjoint();
        let phi: Vec<C64> =
            (0..big).map(|k| if k / d == k % d { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
        let id_b = ComplexMatrix::identity(d);

        let mut generators = Vec::with_capacity(n);
        let mut unit = vec![0.0; nr];
        for j in 0..nr {
            unit[j] = 1.0;
            let e = hmat(&unit, d);
            unit[j] = 0.0;
            let w = m_adj.matvec(&e.kron(&id_b).matvec(&phi));
            let mut g = ComplexMatrix::zeros(big + 1, big + 1);
            for (r, wr) in w.iter().enumerate() {
                g[(r, big)] = -wr;
                g[(big, r)] = -wr.conj();
            }
            generators.push(g);
        }
        let mut g_mu = ComplexMatrix::zeros(big + 1, big + 1);
        g_mu[(big, big)] = C64::new(-1.0, 0.0);
        generators.push(g_mu);
        let mut constant = ComplexMatrix::zeros(big + 1, big + 1);
        for r in 0..big {
            constant[(r, r)] = C64::new(1.0, 0.0);
        }

        let mut trace_row = hvec(&ComplexMatrix::identity(d));
        trace_row.push(0.0);
        let neg_id: Vec<Vec<f64>> = (0..nr)
            .map(|r| {
                let mut row = vec![0.0; n];
                row[r] = -1.0;
                row
            })
            .collect();
        let mut q = vec![0.0; n];
        q[nr] = 1.0;
        Ok(ProblemBuilder::new(n)
            .objective(q)
            .constraint(crate::sdpcore::Cone::Zero(1), vec![trace_row], vec![1.0])
            .constraint(crate::sdpcore::Cone::HermitianPsd(d), neg_id, vec![0.0; nr])
            .psd_constraint(big + 1, &generators, &constant)
            .build())
    }

    pub fn evaluate(&mut self, choi: &ComplexMatrix) -> Result<f64> {
        Ok(clip_unit(self.solve(choi)?.primal))
    }

    fn solve(&mut self, choi: &ComplexMatrix) -> Result<ConicSolution> {
        check_shape(choi, self.dims)?;
        let problem = self.problem(choi)?;
        match &mut self.solver {
            Some(s) => s.set_a(problem.a)?,
            None => self.solver = Some(Solver::new(problem, self.settings)?),
        }
        Ok(self.solver.as_mut().expect("set above").solve()?)
    }
}

pub fn worst_entanglement_fidelity(choi: &ComplexMatrix, dims: ChannelDims) -> Result<f64> {
    WorstFidelitySolver::new(dims)?.evaluate(choi)
}

/// Running record of the conic solves behind a figure evaluator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub solves: u64,
    /// Largest `|primal - dual|` seen.
    pub max_gap: f64,
    pub max_iterations: usize,
}

impl SolveStats {
    fn record(&mut self, sol: &ConicSolution) {
        self.solves += 1;
        self.max_gap = self.max_gap.max(sol.residuals.gap);
        self.max_iterations = self.max_iterations.max(sol.iterations);
    }
}

/// A figure of merit bundled with the solver state it needs. Clone one per chain.
#[derive(Debug, Clone)]
pub struct FigureEvaluator {
    spec: FigureSpec,
    dims: ChannelDims,
    diamond: Option<DiamondSolver>,
    worst: Option<WorstFidelitySolver>,
    stats: SolveStats,
}

impl FigureEvaluator {
    pub fn new(spec: FigureSpec, dims: ChannelDims) -> Result<Self> {
        Self::with_settings(spec, dims, default_settings())
    }

    pub fn with_settings(spec: FigureSpec, dims: ChannelDims, settings: Settings) -> Result<Self> {
        let mut diamond = None;
        let mut worst = None;
        match spec.kind {
            FigureKind::DiamondDistance => {
                let reference = spec.reference.as_ref().ok_or(FomError::MissingReference)?;
                check_shape(reference, dims)?;
                check_choi(reference, dims, 1e-8)?;
                diamond = Some(DiamondSolver::with_settings(dims, settings)?);
            }
            FigureKind::EntanglementFidelity => require_square(dims)?,
            FigureKind::WorstEntanglementFidelity => worst = Some(WorstFidelitySolver::with_settings(dims, settings)?),
        }
        Ok(Self { spec, dims, diamond, worst, stats: SolveStats::default() })
    }

    pub fn spec(&self) -> &FigureSpec {
        &self.spec
    }

    pub fn dims(&self) -> ChannelDims {
        self.dims
    }

    pub fn stats(&self) -> SolveStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SolveStats::default();
    }

    pub fn evaluate(&mut self, choi: &ComplexMatrix) -> Result<f64> {
        let sol = match self.spec.kind {
            FigureKind::DiamondDistance => {
                let reference = self.spec.reference.as_ref().expect("checked in constructor");
                self.diamond.as_mut().expect("constructed").solve(choi, reference)?
            }
            FigureKind::EntanglementFidelity => return entanglement_fidelity(choi, self.dims),
            FigureKind::WorstEntanglementFidelity => self.worst.as_mut().expect("constructed").solve(choi)?,
        };
        self.stats.record(&sol);
        Ok(clip_unit(sol.primal))
    }

    /// Figure of the channel recovered from an output state on `B ⊗ P`.
    pub fn evaluate_bipartite(&mut self, rho_out: &ComplexMatrix, floor: f64) -> Result<f64> {
        let choi = bipartite_to_channel(rho_out, self.dims, floor)?;
        self.evaluate(&choi)
    }
}

/// `f(ρ_BP) = f(channel of ρ_BP)` for a one-off evaluation.
pub fn induced_bipartite_fom(rho_out: &ComplexMatrix, spec: &FigureSpec, dims: ChannelDims, floor: f64) -> Result<f64> {
    FigureEvaluator::new(spec.clone(), dims)?.evaluate_bipartite(rho_out, floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::{channel_to_bipartite, choi_from_unitary_unchecked, depolarizing, identity_channel};
    use crate::qmat::{fidelity, haar_unitary, max_entangled, purified_distance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_choi(dims: ChannelDims, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        choi_from_unitary_unchecked(&haar_unitary(dims.d_u(), rng), dims)
    }

    fn qubit() -> ChannelDims {
        ChannelDims::new(2, 2).unwrap()
    }

    #[test]
    fn evaluator_records_solve_statistics() {
        let dims = ChannelDims::new(2, 2).unwrap();
        let spec = FigureSpec { kind: FigureKind::DiamondDistance, reference: Some(identity_channel(2)) };
        let mut ev = FigureEvaluator::new(spec, dims).unwrap();
        for p in [0.5, 0.9, 0.99] {
            ev.evaluate(&depolarizing(p, 2).unwrap()).unwrap();
        }
        let stats = ev.stats();
        assert_eq!(stats.solves, 3);
        assert!(stats.max_gap < 1e-6 && stats.max_iterations > 0);
        ev.reset_stats();
        assert_eq!(ev.stats().solves, 0);

        let spec = FigureSpec { kind: FigureKind::EntanglementFidelity, reference: None };
        let mut ev = FigureEvaluator::new(spec, dims).unwrap();
        ev.evaluate(&depolarizing(0.5, 2).unwrap()).unwrap();
        assert_eq!(ev.stats().solves, 0);
    }

    #[test]
    fn diamond_depolarizing_examples() {
        let id = identity_channel(2);
        for (p, want) in [(0.5, 0.375), (0.8, 0.15), (0.9, 0.075)] {
            let got = diamond_distance(&depolarizing(p, 2).unwrap(), &id, qubit()).unwrap();
            assert!((got - want).abs() < 1e-5, "p={p}: {got}");
        }
        assert!(diamond_distance(&id, &id, qubit()).unwrap() < 1e-7);
    }

    #[test]
    fn diamond_qutrit_depolarizing() {
        let dims = ChannelDims::new(3, 3).unwrap();
        let got = diamond_distance(&depolarizing(0.96, 3).unwrap(), &identity_channel(3), dims).unwrap();
        assert!((got - 0.03556).abs() < 2e-4, "{got}");
        assert!((got - 0.04 * 8.0 / 9.0).abs() < 1e-5);
    }

    #[test]
    fn diamond_metric_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dims = qubit();
        let mut solver = DiamondSolver::new(dims).unwrap();
        for _ in 0..10 {
            let a = random_choi(dims, &mut rng);
            let b = random_choi(dims, &mut rng);
            let c = random_choi(dims, &mut rng);
            let ab = solver.distance(&a, &b).unwrap();
            let ba = solver.distance(&b, &a).unwrap();
            let bc = solver.distance(&b, &c).unwrap();
            let ac = solver.distance(&a, &c).unwrap();
            assert!((ab - ba).abs() < 1e-6);
            assert!(ac <= ab + bc + 1e-6);
            assert!(solver.distance(&a, &a).unwrap() < 1e-6);
        }
    }

    #[test]
    fn entanglement_fidelity_examples() {
        let dims = qubit();
        assert!((entanglement_fidelity(&identity_channel(2), dims).unwrap() - 1.0).abs() < 1e-14);
        assert!((entanglement_fidelity(&depolarizing(0.0, 2).unwrap(), dims).unwrap() - 0.25).abs() < 1e-14);
        assert!((entanglement_fidelity(&depolarizing(0.9, 2).unwrap(), dims).unwrap() - 0.925).abs() < 1e-14);
        assert!(matches!(
            entanglement_fidelity(&ComplexMatrix::identity(6).scale(1.0 / 6.0), ChannelDims::new(2, 3).unwrap()),
            Err(FomError::DimensionMismatch(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let phi = max_entangled(2);
        for _ in 0..10 {
            let choi = random_choi(dims, &mut rng);
            let f = fidelity(&choi, &phi).unwrap();
            assert!((entanglement_fidelity(&choi, dims).unwrap() - f * f).abs() < 1e-9);
        }
    }

    #[test]
    fn worst_fidelity_examples() {
        let dims = qubit();
        let id = worst_entanglement_fidelity(&identity_channel(2), dims).unwrap();
        assert!((id - 1.0).abs() < 1e-6, "{id}");
        let dep = worst_entanglement_fidelity(&depolarizing(0.9, 2).unwrap(), dims).unwrap();
        assert!((dep - 0.925).abs() < 1e-5, "{dep}");

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut solver = WorstFidelitySolver::new(dims).unwrap();
        for _ in 0..50 {
            let choi = random_choi(dims, &mut rng);
            let fw = solver.evaluate(&choi).unwrap();
            let fe = entanglement_fidelity(&choi, dims).unwrap();
            assert!(fw <= fe + 1e-6, "{fw} > {fe}");
        }
    }

    #[test]
    fn worst_fidelity_below_pure_input_grid() {
        // the minimum over all ρ is below every pure-state value
        let dims = qubit();
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let choi = random_choi(dims, &mut rng);
        let fw = worst_entanglement_fidelity(&choi, dims).unwrap();
        let m2 = choi.scale(2.0);
        let phi: Vec<C64> =
            (0..4).map(|k| if k / 2 == k % 2 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
        let mut best = f64::INFINITY;
        for it in 0..=40 {
            for ip in 0..40 {
                let theta = std::f64::consts::PI * it as f64 / 40.0;
                let ph = 2.0 * std::f64::consts::PI * ip as f64 / 40.0;
                let psi = [C64::new((theta / 2.0).cos(), 0.0), C64::from_polar((theta / 2.0).sin(), ph)];
                let rho = ComplexMatrix::outer(&psi);
                let v = rho.kron(&ComplexMatrix::identity(2)).matvec(&phi);
                let val: C64 = v.iter().zip(m2.matvec(&v)).map(|(a, b)| a.conj() * b).sum();
                best = best.min(val.re);
            }
        }
        assert!(fw <= best + 1e-6);
    }

    #[test]
    fn lipschitz_bounds_on_random_pairs() {
        let dims = qubit();
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let reference = identity_channel(2);
        let mut diamond = DiamondSolver::new(dims).unwrap();
        let mut worst = WorstFidelitySolver::new(dims).unwrap();
        for _ in 0..20 {
            let a = random_choi(dims, &mut rng);
            // nearby partner: mix with another channel
            let other = random_choi(dims, &mut rng);
            let b = (&a.scale(0.9) + &other.scale(0.1)).hermitian_part();
            for (x, y) in [(&a, &other), (&a, &b)] {
                let p = purified_distance(x, y).unwrap();
                let fd = (diamond.distance(x, &reference).unwrap() - diamond.distance(y, &reference).unwrap()).abs();
                assert!(fd <= dims.d_a as f64 / 2.0 * p + 1e-6);
                let fw = (worst.evaluate(x).unwrap() - worst.evaluate(y).unwrap()).abs();
                assert!(fw <= dims.d_a as f64 * p + 1e-6);
            }
        }
    }

    #[test]
    fn induced_bipartite_examples() {
        let dims = qubit();
        let spec = FigureSpec { kind: FigureKind::DiamondDistance, reference: Some(identity_channel(2)) };
        let f = induced_bipartite_fom(&identity_channel(2), &spec, dims, 1e-12).unwrap();
        assert!(f < 1e-6);

        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let mut eval = FigureEvaluator::new(spec.clone(), dims).unwrap();
        for _ in 0..5 {
            let choi = random_choi(dims, &mut rng);
            let sigma = ComplexMatrix::outer(&crate::qmat::haar_state(4, &mut rng));
            let sigma = partial_trace(&sigma, (2, 2), Keep::X).unwrap();
            let rho = channel_to_bipartite(&choi, &sigma, dims).unwrap();
            let direct = eval.evaluate(&choi).unwrap();
            let induced = eval.evaluate_bipartite(&rho, 1e-12).unwrap();
            assert!((direct - induced).abs() < 1e-6);
        }

        let degenerate =
            ComplexMatrix::outer(&[C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
        assert!(matches!(eval.evaluate_bipartite(&degenerate, 1e-12), Err(FomError::RankDeficient { .. })));
    }

    #[test]
    fn spec_directions_and_json() {
        assert_eq!(FigureKind::DiamondDistance.direction(), Direction::SmallerBetter);
        assert_eq!(FigureKind::WorstEntanglementFidelity.direction(), Direction::LargerBetter);
        let spec = FigureSpec { kind: FigureKind::EntanglementFidelity, reference: None };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(s, r#"{"kind":"entanglement-fidelity"}"#);
        assert!(matches!(
            FigureEvaluator::new(FigureSpec { kind: FigureKind::DiamondDistance, reference: None }, qubit()),
            Err(FomError::MissingReference)
        ));
    }
}
