//! Dense ADMM solver for small conic programs.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    qᵀx
//! subject to  A x + s = b,   s ∈ K
//! ```
//!
//! where `K` is a product of zero cones (equalities), nonnegative orthants and
//! Hermitian PSD cones. A Hermitian block of size `k` occupies `k²` slack
//! entries in the isometric [`hvec`](crate::qmat::hvec) layout, so the complex
//! cone is handled without a real embedding. The dual is `maximize bᵀy` over
//! `Aᵀy = q`, `-y ∈ K*`.
//!
//! Each iteration solves `(σI + AᵀRA) x̃ = rhs` with a cached Cholesky factor,
//! projects onto `K`, and updates the scaled dual. The factor depends only on
//! `A` and the step sizes, so a [`Solver`] can be reused across many problems
//! that share `A` and differ in `b` or `q`, starting each solve from the
//! previous iterate.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex;
use thiserror::Error;

use crate::qmat::{hmat, hvec_into, ComplexMatrix, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("linear system is not positive definite")]
    Factorization,
    #[error("no convergence after {} iterations (residuals {:.2e}, {:.2e}, gap {:.2e})",
        .0.iterations, .0.residuals.primal, .0.residuals.dual, .0.residuals.gap)]
    NoConvergence(Box<ConicSolution>),
    #[error("residuals diverge; problem looks infeasible or unbounded")]
    Infeasible(Box<ConicSolution>),
}

pub type Result<T> = std::result::Result<T, SdpError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cone {
    /// `n` slacks pinned to zero.
    Zero(usize),
    /// `n` nonnegative slacks.
    NonNeg(usize),
    /// One `k × k` Hermitian PSD block with `k²` slacks.
    HermitianPsd(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::NonNeg(n) => n,
            Cone::HermitianPsd(k) => k * k,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub cones: Vec<Cone>,
}

impl ConicProblem {
    pub fn n_vars(&self) -> usize {
        self.q.len()
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    fn check(&self) -> Result<()> {
        let m: usize = self.cones.iter().map(Cone::len).sum();
        if self.a.nrows() != m || self.b.len() != m || self.a.ncols() != self.q.len() {
            return Err(SdpError::DimensionMismatch(format!(
                "A is {}x{}, b has {}, q has {}, cones cover {m} rows",
                self.a.nrows(),
                self.a.ncols(),
                self.b.len(),
                self.q.len()
            )));
        }
        Ok(())
    }

    /// Plain-text dump: sizes, cones, then one line per constraint row.
    pub fn debug_dump(&self) -> String {
        let mut out = format!(
            "vars {} rows {}\ncones {:?}\nq {:?}\n",
            self.n_vars(),
            self.n_rows(),
            self.cones,
            self.q.as_slice()
        );
        for r in 0..self.n_rows() {
            let row: Vec<f64> = self.a.row(r).iter().copied().collect();
            out.push_str(&format!("{:?} | {}\n", row, self.b[r]));
        }
        out
    }
}

/// Row-block assembly of a [`ConicProblem`].
#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    n: usize,
    q: Vec<f64>,
    rows: Vec<Vec<f64>>,
    b: Vec<f64>,
    cones: Vec<Cone>,
}

impl ProblemBuilder {
    pub fn new(n_vars: usize) -> Self {
        Self { n: n_vars, q: vec![0.0; n_vars], rows: Vec::new(), b: Vec::new(), cones: Vec::new() }
    }

    pub fn objective(mut self, q: Vec<f64>) -> Self {
        assert_eq!(q.len(), self.n);
        self.q = q;
        self
    }

    /// Adds rows with `s = b - A x ∈ cone`; `a` holds `cone.len()` rows of length `n_vars`.
    pub fn constraint(mut self, cone: Cone, a: Vec<Vec<f64>>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), cone.len());
        assert_eq!(b.len(), cone.len());
        for row in &a {
            assert_eq!(row.len(), self.n);
        }
        self.rows.extend(a);
        self.b.extend(b);
        self.cones.push(cone);
        self
    }

    /// Hermitian block `k × k` with slack `hvec(C - Σ_j x_j G_j) ⪰ 0`, given `G_j` for each variable.
    pub fn psd_constraint(self, k: usize, generators: &[ComplexMatrix], constant: &ComplexMatrix) -> Self {
        assert_eq!(generators.len(), self.n);
        let mut cols = Vec::with_capacity(self.n);
        let mut buf = Vec::new();
        for g in generators {
            hvec_into(g, &mut buf);
            cols.push(buf.clone());
        }
        let rows = (0..k * k).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
        let mut b = Vec::new();
        hvec_into(constant, &mut b);
        self.constraint(Cone::HermitianPsd(k), rows, b)
    }

    pub fn build(self) -> ConicProblem {
        let m = self.rows.len();
        let a = DMatrix::from_fn(m, self.n, |r, c| self.rows[r][c]);
        ConicProblem { q: DVector::from_vec(self.q), a, b: DVector::from_vec(self.b), cones: self.cones }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub tol: f64,
    pub max_iter: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub rho: f64,
    /// Step size multiplier on equality rows.
    pub rho_eq_scale: f64,
    /// Check residuals and adapt `ρ` every this many iterations (0 disables adaptation).
    pub adapt_interval: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self { tol: 1e-7, max_iter: 50_000, alpha: 1.5, sigma: 1e-6, rho: 0.1, rho_eq_scale: 1e3, adapt_interval: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub primal: f64,
    pub dual: f64,
    pub iterations: usize,
    pub residuals: Residuals,
    pub x: DVector<f64>,
    pub s: DVector<f64>,
    pub y: DVector<f64>,
}

/// ADMM solver holding a problem, its factorization and the last iterate.
#[derive(Debug, Clone)]
pub struct Solver {
    problem: ConicProblem,
    settings: Settings,
    rho: f64,
    rho_vec: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    s: DVector<f64>,
    y: DVector<f64>,
}

fn factorize(a: &DMatrix<f64>, rho_vec: &DVector<f64>, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = a.ncols();
    let ra = DMatrix::from_fn(a.nrows(), n, |r, c| rho_vec[r] * a[(r, c)]);
    let mut k = a.transpose() * ra;
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    Cholesky::new(k).ok_or(SdpError::Factorization)
}

impl Solver {
    pub fn new(problem: ConicProblem, settings: Settings) -> Result<Self> {
        problem.check()?;
        let rho = settings.rho;
        let rho_vec = Self::rho_vector(&problem.cones, rho, settings.rho_eq_scale);
        let factor = factorize(&problem.a, &rho_vec, settings.sigma)?;
        let (n, m) = (problem.n_vars(), problem.n_rows());
        Ok(Self {
            problem,
            settings,
            rho,
            rho_vec,
            factor,
            x: DVector::zeros(n),
            s: DVector::zeros(m),
            y: DVector::zeros(m),
        })
    }

    fn rho_vector(cones: &[Cone], rho: f64, eq_scale: f64) -> DVector<f64> {
        let mut v = Vec::new();
        for c in cones {
            let r = if matches!(c, Cone::Zero(_)) { rho * eq_scale } else { rho };
            v.extend(std::iter::repeat_n(r, c.len()));
        }
        DVector::from_vec(v)
    }

    pub fn problem(&self) -> &ConicProblem {
        &self.problem
    }

    pub fn settings(&self) -> &Settings {
        &self.settings
    }

    pub fn set_b(&mut self, b: DVector<f64>) -> Result<()> {
        if b.len() != self.problem.n_rows() {
            return Err(SdpError::DimensionMismatch("b".into()));
        }
        self.problem.b = b;
        Ok(())
    }

    pub fn set_q(&mut self, q: DVector<f64>) -> Result<()> {
        if q.len() != self.problem.n_vars() {
            return Err(SdpError::DimensionMismatch("q".into()));
        }
        self.problem.q = q;
        Ok(())
    }

    /// Replaces the constraint matrix (same shape), refactorizing but keeping the iterate.
    pub fn set_a(&mut self, a: DMatrix<f64>) -> Result<()> {
        if a.shape() != self.problem.a.shape() {
            return Err(SdpError::DimensionMismatch("A".into()));
        }
        self.factor = factorize(&a, &self.rho_vec, self.settings.sigma)?;
        self.problem.a = a;
        Ok(())
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.x.fill(0.0);
        self.s.fill(0.0);
        self.y.fill(0.0);
    }

    fn set_rho(&mut self, rho: f64) -> Result<()> {
        self.rho = rho;
        self.rho_vec = Self::rho_vector(&self.problem.cones, rho, self.settings.rho_eq_scale);
        self.factor = factorize(&self.problem.a, &self.rho_vec, self.settings.sigma)?;
        Ok(())
    }

    fn project(&self, v: &mut DVector<f64>) {
        let mut offset = 0;
        for cone in &self.problem.cones {
            let len = cone.len();
            let block = &mut v.as_mut_slice()[offset..offset + len];
            match *cone {
                Cone::Zero(_) => block.fill(0.0),
                Cone::NonNeg(_) => block.iter_mut().for_each(|x| *x = x.max(0.0)),
                Cone::HermitianPsd(k) => project_hvec_psd(block, k),
            }
            offset += len;
        }
    }

    fn residuals(&self, ax: &DVector<f64>, aty: &DVector<f64>) -> (Residuals, f64, f64, f64, f64) {
        let p = &self.problem;
        let r_prim = (ax + &self.s - &p.b).amax();
        let r_dual = (&p.q - aty).amax();
        let primal = p.q.dot(&self.x);
        let dual = p.b.dot(&self.y);
        let prim_scale = ax.amax().max(self.s.amax()).max(p.b.amax());
        let dual_scale = p.q.amax().max(aty.amax());
        (Residuals { primal: r_prim, dual: r_dual, gap: (primal - dual).abs() }, primal, dual, prim_scale, dual_scale)
    }

    fn solution(&self, iterations: usize, residuals: Residuals, primal: f64, dual: f64) -> ConicSolution {
        ConicSolution { primal, dual, iterations, residuals, x: self.x.clone(), s: self.s.clone(), y: self.y.clone() }
    }

    pub fn solve(&mut self) -> Result<ConicSolution> {
        let Settings { tol, max_iter, alpha, sigma, adapt_interval, .. } = self.settings;
        let mut first_residual = None;
        for it in 1..=max_iter {
            let p = &self.problem;
            let mut rhs = p.b.clone() - &self.s;
            rhs.component_mul_assign(&self.rho_vec);
            rhs += &self.y;
            let mut rhs = p.a.tr_mul(&rhs);
            rhs += sigma * &self.x - &p.q;
            let x_tilde = self.factor.solve(&rhs);
            let s_tilde = &p.b - &p.a * &x_tilde;

            let s_relaxed = alpha * &s_tilde + (1.0 - alpha) * &self.s;
            self.x = alpha * &x_tilde + (1.0 - alpha) * &self.x;
            let mut s_new = &s_relaxed + self.y.component_div(&self.rho_vec);
            self.project(&mut s_new);
            self.y += (&s_relaxed - &s_new).component_mul(&self.rho_vec);
            self.s = s_new;

            let check = it % 10 == 0 || it == max_iter;
            if !check {
                continue;
            }
            let ax = &self.problem.a * &self.x;
            let aty = self.problem.a.tr_mul(&self.y);
            let (res, primal, dual, prim_scale, dual_scale) = self.residuals(&ax, &aty);
            let first = *first_residual.get_or_insert(res.primal.max(res.dual));
            if res.primal <= tol * (1.0 + prim_scale)
                && res.dual <= tol * (1.0 + dual_scale)
                && res.gap <= tol * (1.0 + primal.abs())
            {
                return Ok(self.solution(it, res, primal, dual));
            }
            if !res.primal.is_finite() || !res.dual.is_finite() || res.primal.max(res.dual) > 1e8 * (1.0 + first) {
                return Err(SdpError::Infeasible(Box::new(self.solution(it, res, primal, dual))));
            }
            if it == max_iter {
                return Err(SdpError::NoConvergence(Box::new(self.solution(it, res, primal, dual))));
            }
            if adapt_interval > 0 && it % adapt_interval.max(10).next_multiple_of(10) == 0 {
                let num = res.primal / (prim_scale + 1e-12);
                let den = res.dual / (dual_scale + 1e-12);
                if den > 0.0 && num > 0.0 {
                    let new_rho = (self.rho * (num / den).sqrt()).clamp(1e-6, 1e6);
                    if new_rho > 5.0 * self.rho || new_rho < 0.2 * self.rho {
                        self.set_rho(new_rho)?;
                    }
                }
            }
        }
        unreachable!("loop returns on the last iteration")
    }
}

/// One-shot solve with default settings apart from `tol` and `max_iter`.
pub fn solve(p: ConicProblem, tol: f64, max_iter: usize) -> Result<ConicSolution> {
    Solver::new(p, Settings { tol, max_iter, ..Settings::default() })?.solve()
}

fn project_hvec_psd(block: &mut [f64], k: usize) {
    let m = hmat(block, k);
    let na = DMatrix::from_fn(k, k, |r, c| m[(r, c)]);
    let eig = na.symmetric_eigen();
    if eig.eigenvalues.iter().all(|&v| v >= 0.0) {
        return;
    }
    let mut out = DMatrix::<Complex<f64>>::zeros(k, k);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= 0.0 {
            continue;
        }
        let v = eig.eigenvectors.column(j);
        for c in 0..k {
            let vc = v[c].conj() * lam;
            for r in 0..k {
                out[(r, c)] += v[r] * vc;
            }
        }
    }
    let proj = ComplexMatrix::from_fn(k, k, |r, c| out[(r, c)]);
    let mut buf = Vec::with_capacity(k * k);
    hvec_into(&proj, &mut buf);
    block.copy_from_slice(&buf);
}

/// Nearest PSD matrix in Frobenius norm: eigenvalues clipped at zero.
pub fn psd_project(m: &ComplexMatrix) -> std::result::Result<ComplexMatrix, crate::qmat::QmatError> {
    crate::qmat::psd_project(m)
}

/// Standard real embedding `[[Re, -Im], [Im, Re]]` of a complex matrix.
pub fn embed_real(m: &ComplexMatrix) -> DMatrix<f64> {
    let (r, c) = (m.rows(), m.cols());
    DMatrix::from_fn(2 * r, 2 * c, |i, j| {
        let z: C64 = m[(i % r, j % c)];
        match (i < r, j < c) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Reads a complex matrix back from a (possibly perturbed) real embedding by averaging the redundant blocks.
pub fn extract_complex(s: &DMatrix<f64>) -> ComplexMatrix {
    let r = s.nrows() / 2;
    let c = s.ncols() / 2;
    ComplexMatrix::from_fn(r, c, |i, j| {
        let re = 0.5 * (s[(i, j)] + s[(i + r, j + c)]);
        let im = 0.5 * (s[(i + r, j)] - s[(i, j + c)]);
        C64::new(re, im)
    })
}
