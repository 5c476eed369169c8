//! Dense complex linear algebra and quantum-information primitives.
//!
//! Everything here works on [`ComplexMatrix`], a row-major matrix of
//! `Complex<f64>` entries. `Complex<f64>` is `repr(C)` with `(re, im)` layout,
//! so the backing storage is interleaved real/imaginary pairs.
//!
//! Hermitian eigendecompositions use a cyclic complex Jacobi method, which is
//! slower than tridiagonal QR for large matrices but accurate to working
//! precision on the small (d <= 64) matrices this crate deals with.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub type C64 = Complex<f64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as round-off and clamped to 0.
pub const PSD_CLAMP: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmatError {
    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NonHermitian(f64),
    #[error("eigensolver did not converge within {0} rotations")]
    NoConvergence(usize),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("matrix is rank deficient (min eigenvalue {min:.3e} < floor {floor:.3e})")]
    RankDeficient { min: f64, floor: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not a density matrix: {0}")]
    NotState(String),
}

pub type Result<T> = std::result::Result<T, QmatError>;

#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            write!(f, "  ")?;
            for c in 0..self.cols {
                let z = self[(r, c)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![ZERO; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = ONE;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(QmatError::DimensionMismatch(format!("{} entries for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_real_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &x) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(x, 0.0);
        }
        m
    }

    /// Build from rows of complex entries.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(QmatError::DimensionMismatch("ragged rows".into()));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    /// Build from rows of real entries.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows.iter().map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect()).collect();
        Self::from_rows(&rows)
    }

    /// Column vector `|v><v|`.
    pub fn outer(v: &[C64]) -> Self {
        Self::from_fn(v.len(), v.len(), |i, j| v[i] * v[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn column(&self, c: usize) -> Vec<C64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn conj(&self) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn scale_c(&self, s: C64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Largest entrywise modulus.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max |M - M^dagger|` over entries; infinite for non-square input.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0f64;
        for r in 0..self.rows {
            for c in r..self.cols {
                worst = worst.max((self[(r, c)] - self[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermitian_defect() <= tol
    }

    /// `(M + M^dagger) / 2`.
    pub fn hermitian_part(&self) -> Self {
        Self::from_fn(self.rows, self.cols, |r, c| (self[(r, c)] + self[(c, r)].conj()) * 0.5)
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let rrow = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, &b) in orow.iter_mut().zip(rrow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, v: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, v.len(), "matvec shape mismatch");
        (0..self.rows)
            .map(|r| self.data[r * self.cols..(r + 1) * self.cols].iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn kron(&self, rhs: &Self) -> Self {
        let (r2, c2) = (rhs.rows, rhs.cols);
        Self::from_fn(self.rows * r2, self.cols * c2, |r, c| self[(r / r2, c / c2)] * rhs[(r % r2, c % c2)])
    }

    /// `tr(self * rhs)` without forming the product.
    pub fn trace_product(&self, rhs: &Self) -> C64 {
        assert_eq!(self.cols, rhs.rows);
        assert_eq!(self.rows, rhs.cols);
        let mut acc = ZERO;
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self[(i, k)] * rhs[(k, i)];
            }
        }
        acc
    }

    /// Hilbert-Schmidt inner product `tr(self^dagger rhs)`.
    pub fn inner(&self, rhs: &Self) -> C64 {
        self.data.iter().zip(&rhs.data).map(|(a, b)| a.conj() * b).sum()
    }

    /// Swap the tensor factors of a matrix on `H_X (dx) ⊗ H_Y (dy)`, giving one on `H_Y ⊗ H_X`.
    pub fn swap_subsystems(&self, dx: usize, dy: usize) -> Result<Self> {
        check_bipartite(self, dx, dy)?;
        let n = dx * dy;
        Ok(Self::from_fn(n, n, |r, c| {
            let (ry, rx) = (r / dx, r % dx);
            let (cy, cx) = (c / dx, c % dx);
            self[(rx * dy + ry, cx * dy + cy)]
        }))
    }
}

impl Index<(usize, usize)> for ComplexMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ComplexMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

impl Add for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn add(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn sub(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        ComplexMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn mul(self, rhs: &ComplexMatrix) -> ComplexMatrix {
        self.matmul(rhs)
    }
}

impl Neg for &ComplexMatrix {
    type Output = ComplexMatrix;
    fn neg(self) -> ComplexMatrix {
        self.scale(-1.0)
    }
}

impl AddAssign<&ComplexMatrix> for ComplexMatrix {
    fn add_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&ComplexMatrix> for ComplexMatrix {
    fn sub_assign(&mut self, rhs: &ComplexMatrix) {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

// Matrix literal: a list of rows, each entry a `[re, im]` pair.
impl Serialize for ComplexMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> =
            (0..self.rows).map(|r| (0..self.cols).map(|c| [self[(r, c)].re, self[(r, c)].im]).collect()).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ComplexMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(deserializer)?;
        let rows: Vec<Vec<C64>> =
            rows.into_iter().map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect()).collect();
        ComplexMatrix::from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Serde adapter for state vectors stored as a list of `[re, im]` pairs.
pub mod vector_literal {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C64>, D::Error> {
        let raw: Vec<[f64; 2]> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }

    pub mod option {
        use super::C64;
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(v: &Option<Vec<C64>>, s: S) -> Result<S::Ok, S::Error> {
            match v {
                Some(v) => super::serialize(v, s),
                None => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<C64>>, D::Error> {
            let raw: Option<Vec<[f64; 2]>> = Option::deserialize(d)?;
            Ok(raw.map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect()))
        }
    }
}

/// Eigendecomposition of a Hermitian matrix: `m = V diag(values) V^dagger`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: ComplexMatrix,
}

impl HermitianEigen {
    /// `V f(diag) V^dagger`.
    pub fn map_values(&self, f: impl Fn(f64) -> C64) -> ComplexMatrix {
        let n = self.values.len();
        let fv: Vec<C64> = self.values.iter().map(|&x| f(x)).collect();
        let v = &self.vectors;
        let mut out = ComplexMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += v[(r, k)] * fv[k] * v[(c, k)].conj();
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> ComplexMatrix {
        self.map_values(|x| C64::new(x, 0.0))
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }
}

/// Hermitian eigendecomposition by cyclic Jacobi rotations.
///
/// The input is symmetrized before iterating. Fails with `NonHermitian` if the
/// asymmetry exceeds `1e-8` (relative to the largest entry when that is above one).
pub fn eigh(m: &ComplexMatrix) -> Result<HermitianEigen> {
    if !m.is_square() {
        return Err(QmatError::DimensionMismatch(format!("eigh of {}x{}", m.rows, m.cols)));
    }
    let defect = m.hermitian_defect();
    if defect > 1e-8 * m.max_abs().max(1.0) {
        return Err(QmatError::NonHermitian(defect));
    }
    let n = m.rows;
    let mut a = m.hermitian_part();
    let mut v = ComplexMatrix::identity(n);
    let cap = 200 * n * n;
    let scale = a.frobenius_norm();
    let mut rotations = 0usize;

    if scale > 0.0 {
        loop {
            let off: f64 = (0..n)
                .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
                .map(|(p, q)| a[(p, q)].norm_sqr())
                .sum::<f64>()
                .sqrt();
            if off <= 1e-15 * scale {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    let mag = apq.norm();
                    if mag <= 1e-300 || mag <= 1e-18 * scale {
                        continue;
                    }
                    if rotations >= cap {
                        return Err(QmatError::NoConvergence(cap));
                    }
                    rotations += 1;
                    let phase = apq / mag;
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let tau = (aqq - app) / (2.0 * mag);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    let ph_conj = phase.conj();
                    // columns: A <- A G
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * c - akq * ph_conj * s;
                        a[(k, q)] = akp * s + akq * ph_conj * c;
                    }
                    // rows: A <- G^dagger A
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = apk * c - aqk * phase * s;
                        a[(q, k)] = apk * s + aqk * phase * c;
                    }
                    a[(p, q)] = ZERO;
                    a[(q, p)] = ZERO;
                    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * c - vkq * ph_conj * s;
                        v[(k, q)] = vkp * s + vkq * ph_conj * c;
                    }
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = ComplexMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

fn check_psd(e: &HermitianEigen) -> Result<()> {
    let min = e.min();
    if min < -PSD_CLAMP {
        return Err(QmatError::NotPsd(min));
    }
    Ok(())
}

pub fn mat_sqrt(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let e = eigh(m)?;
    check_psd(&e)?;
    Ok(e.map_values(|x| C64::new(x.max(0.0).sqrt(), 0.0)))
}

pub fn mat_inv_sqrt(m: &ComplexMatrix, floor: f64) -> Result<ComplexMatrix> {
    let e = eigh(m)?;
    check_psd(&e)?;
    let min = e.min();
    if min < floor {
        return Err(QmatError::RankDeficient { min, floor });
    }
    Ok(e.map_values(|x| C64::new(1.0 / x.sqrt(), 0.0)))
}

/// Orthogonal projection onto the PSD cone in Frobenius norm (eigenvalue clipping).
pub fn psd_project(m: &ComplexMatrix) -> Result<ComplexMatrix> {
    let e = eigh(m)?;
    if e.min() >= 0.0 {
        return Ok(m.hermitian_part());
    }
    Ok(e.map_values(|x| C64::new(x.max(0.0), 0.0)))
}

/// Which tensor factor survives a partial trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Keep {
    X,
    Y,
}

fn check_bipartite(m: &ComplexMatrix, dx: usize, dy: usize) -> Result<()> {
    if m.rows != dx * dy || m.cols != dx * dy {
        return Err(QmatError::DimensionMismatch(format!(
            "{}x{} matrix on a {dx}x{dy} bipartite space",
            m.rows, m.cols
        )));
    }
    Ok(())
}

/// Partial trace of a matrix on `H_X ⊗ H_Y` with dimensions `(dx, dy)`.
pub fn partial_trace(m: &ComplexMatrix, (dx, dy): (usize, usize), keep: Keep) -> Result<ComplexMatrix> {
    check_bipartite(m, dx, dy)?;
    Ok(match keep {
        Keep::X => ComplexMatrix::from_fn(dx, dx, |i, k| (0..dy).map(|j| m[(i * dy + j, k * dy + j)]).sum()),
        Keep::Y => ComplexMatrix::from_fn(dy, dy, |j, l| (0..dx).map(|i| m[(i * dy + j, i * dy + l)]).sum()),
    })
}

/// Validates a density matrix: Hermitian, unit trace and PSD, all within `tol`.
pub fn check_state(s: &ComplexMatrix, tol: f64) -> Result<HermitianEigen> {
    if !s.is_square() {
        return Err(QmatError::NotState("non-square".into()));
    }
    let defect = s.hermitian_defect();
    if defect > tol {
        return Err(QmatError::NotState(format!("asymmetry {defect:.3e}")));
    }
    let tr = s.trace();
    if (tr.re - 1.0).abs() > tol || tr.im.abs() > tol {
        return Err(QmatError::NotState(format!("trace {tr}")));
    }
    let e = eigh(s)?;
    if e.min() < -tol {
        return Err(QmatError::NotState(format!("negative eigenvalue {:.3e}", e.min())));
    }
    Ok(e)
}

/// Uhlmann fidelity `tr sqrt(sqrt(s) t sqrt(s))`, in `[0, 1]`.
///
/// Evaluated on the support of the operand with lower numerical rank, which
/// keeps rank-deficient arguments (pure states in particular) accurate.
pub fn fidelity(s: &ComplexMatrix, t: &ComplexMatrix) -> Result<f64> {
    if s.rows != t.rows || !s.is_square() || !t.is_square() {
        return Err(QmatError::DimensionMismatch("fidelity operands".into()));
    }
    let es = check_state(s, 1e-8)?;
    let et = check_state(t, 1e-8)?;
    let support = |e: &HermitianEigen| -> Vec<usize> {
        let cut = 1e-12 * e.max().max(0.0);
        (0..e.values.len()).filter(|&i| e.values[i] > cut).collect()
    };
    let (ss, st) = (support(&es), support(&et));
    let (e, keep, other) = if ss.len() <= st.len() { (&es, ss, t) } else { (&et, st, s) };
    let r = keep.len();
    // diag(sqrt λ) V† other V diag(sqrt λ) on the kept eigenvectors
    let v = ComplexMatrix::from_fn(s.rows, r, |row, c| e.vectors[(row, keep[c])]);
    let roots: Vec<f64> = keep.iter().map(|&i| e.values[i].sqrt()).collect();
    let mid = &(&v.adjoint() * other) * &v;
    let inner = ComplexMatrix::from_fn(r, r, |a, b| mid[(a, b)] * (roots[a] * roots[b])).hermitian_part();
    let ei = eigh(&inner)?;
    let f: f64 = ei.values.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok(f.clamp(0.0, 1.0))
}

/// `sqrt(1 - F^2)`.
pub fn purified_distance(s: &ComplexMatrix, t: &ComplexMatrix) -> Result<f64> {
    let f = fidelity(s, t)?;
    Ok((1.0 - f * f).max(0.0).sqrt())
}

fn singular_values(m: &ComplexMatrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(QmatError::DimensionMismatch("norm of non-square matrix".into()));
    }
    if m.is_hermitian(1e-12 * m.max_abs().max(1.0)) {
        return Ok(eigh(m)?.values.iter().map(|x| x.abs()).collect());
    }
    let gram = (&m.adjoint() * m).hermitian_part();
    Ok(eigh(&gram)?.values.iter().map(|x| x.max(0.0).sqrt()).collect())
}

pub fn trace_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

pub fn op_norm(m: &ComplexMatrix) -> Result<f64> {
    Ok(singular_values(m)?.into_iter().fold(0.0, f64::max))
}

/// `max |U^dagger U - I|`.
pub fn unitarity_residual(u: &ComplexMatrix) -> f64 {
    let g = &u.adjoint() * u;
    (&g - &ComplexMatrix::identity(u.cols)).max_abs()
}

/// `exp(i H)` for Hermitian `H`.
pub fn expm_i_hermitian(h: &ComplexMatrix) -> Result<ComplexMatrix> {
    let e = eigh(h)?;
    Ok(e.map_values(|x| C64::from_polar(1.0, x)))
}

pub fn standard_complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Haar-random `d x d` unitary.
///
/// Orthonormalizes the columns of a complex Ginibre matrix with modified
/// Gram-Schmidt (two passes). The resulting triangular factor has a positive
/// real diagonal, which is the phase convention that makes the distribution
/// exactly Haar.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    let g = ComplexMatrix::from_fn(d, d, |_, _| standard_complex_normal(rng));
    orthonormalize_columns(&g)
}

/// Haar-random unit vector in `C^d`.
pub fn haar_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<C64> {
    let mut v: Vec<C64> = (0..d).map(|_| standard_complex_normal(rng)).collect();
    normalize(&mut v);
    v
}

pub fn normalize(v: &mut [C64]) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    for z in v.iter_mut() {
        *z /= n;
    }
}

pub fn orthonormalize_columns(g: &ComplexMatrix) -> ComplexMatrix {
    let (n, k) = (g.rows, g.cols);
    let mut cols: Vec<Vec<C64>> = (0..k).map(|c| g.column(c)).collect();
    for j in 0..k {
        for _pass in 0..2 {
            for i in 0..j {
                let (head, tail) = cols.split_at_mut(j);
                let qi = &head[i];
                let proj: C64 = qi.iter().zip(tail[0].iter()).map(|(a, b)| a.conj() * b).sum();
                for (x, q) in tail[0].iter_mut().zip(qi) {
                    *x -= proj * q;
                }
            }
        }
        normalize(&mut cols[j]);
    }
    ComplexMatrix::from_fn(n, k, |r, c| cols[c][r])
}

/// Hermitian matrix to an isometric real vector: diagonal entries, then for
/// each `r < c` the pair `(sqrt2 Re, sqrt2 Im)` of entry `(r, c)`.
pub fn hvec(m: &ComplexMatrix) -> Vec<f64> {
    let n = m.rows;
    let mut out = Vec::with_capacity(n * n);
    hvec_into(m, &mut out);
    out
}

pub fn hvec_into(m: &ComplexMatrix, out: &mut Vec<f64>) {
    let n = m.rows;
    out.clear();
    for i in 0..n {
        out.push(m[(i, i)].re);
    }
    let s2 = std::f64::consts::SQRT_2;
    for r in 0..n {
        for c in (r + 1)..n {
            let z = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
            out.push(s2 * z.re);
            out.push(s2 * z.im);
        }
    }
}

/// Inverse of [`hvec`].
pub fn hmat(v: &[f64], n: usize) -> ComplexMatrix {
    debug_assert_eq!(v.len(), n * n);
    let mut m = ComplexMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(v[i], 0.0);
    }
    let inv = std::f64::consts::FRAC_1_SQRT_2;
    let mut k = n;
    for r in 0..n {
        for c in (r + 1)..n {
            let z = C64::new(v[k] * inv, v[k + 1] * inv);
            m[(r, c)] = z;
            m[(c, r)] = z.conj();
            k += 2;
        }
    }
    m
}

/// Pauli matrices `(X, Y, Z)`.
pub fn paulis() -> [ComplexMatrix; 3] {
    let x = ComplexMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
    let y = ComplexMatrix::from_rows(&[vec![ZERO, -I], vec![I, ZERO]]).unwrap();
    let z = ComplexMatrix::from_real_rows(&[&[1.0, 0.0], &[0.0, -1.0]]).unwrap();
    [x, y, z]
}

/// Normalized maximally entangled projector on `C^d ⊗ C^d`.
pub fn max_entangled(d: usize) -> ComplexMatrix {
    let n = d * d;
    ComplexMatrix::from_fn(n, n, |r, c| {
        if r % (d + 1) == 0 && c % (d + 1) == 0 {
            C64::new(1.0 / d as f64, 0.0)
        } else {
            ZERO
        }
    })
}
