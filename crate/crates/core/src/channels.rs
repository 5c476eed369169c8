//! Channel representations.
//!
//! A channel `Λ: A -> B` is stored as its normalized Choi matrix
//! `Λ_AB = (id ⊗ Λ)(Φ̂)` with the input factor first (`A ⊗ B`, row-major),
//! so `tr Λ_AB = 1` and `tr_B Λ_AB = I/d_A`.
//!
//! The channel-space walker parametrizes channels by a unitary `U` on
//! `B ⊗ A' ⊗ B'` acting on a fixed purification
//! `|Ψ₀⟩ = d_A^{-1/2} Σ_i |i⟩_A |0⟩_B |i⟩_A' |0⟩_B'`; the Choi matrix is
//! `tr_{A'B'} (1 ⊗ U)|Ψ₀⟩⟨Ψ₀|(1 ⊗ U†)`. Haar-distributed `U` induce the
//! uniform measure over channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qmat::{
    self, eigh, mat_inv_sqrt, mat_sqrt, partial_trace, unitarity_residual, ComplexMatrix, Keep, QmatError, C64, ZERO,
};

/// Default smallest admissible eigenvalue of the reference marginal in [`bipartite_to_channel`].
pub const DEFAULT_RANK_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error(transparent)]
    Qmat(#[from] QmatError),
    #[error("matrix is not unitary (residual {0:.3e})")]
    NotUnitary(f64),
    #[error("bad parameter: {0}")]
    BadParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

pub type Result<T> = std::result::Result<T, ChannelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    #[serde(rename = "d_A")]
    pub d_a: usize,
    #[serde(rename = "d_B")]
    pub d_b: usize,
}

impl ChannelDims {
    pub fn new(d_a: usize, d_b: usize) -> Result<Self> {
        if d_a == 0 || d_b == 0 {
            return Err(ChannelError::BadParameter(format!("dimensions ({d_a}, {d_b}) must be positive")));
        }
        Ok(Self { d_a, d_b })
    }

    /// Dimension of `A' ⊗ B'`.
    pub fn d_env(&self) -> usize {
        self.d_a * self.d_b
    }

    /// Dimension of `B ⊗ A' ⊗ B'`, where the walker unitary acts.
    pub fn d_u(&self) -> usize {
        self.d_b * self.d_env()
    }

    /// Dimension of the Choi matrix, `d_A d_B`.
    pub fn d_choi(&self) -> usize {
        self.d_a * self.d_b
    }

    fn check_choi_shape(&self, m: &ComplexMatrix) -> Result<()> {
        let n = self.d_choi();
        if m.rows() != n || m.cols() != n {
            return Err(ChannelError::DimensionMismatch(format!(
                "expected {n}x{n} Choi matrix, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }
}

/// Reference purification `|Ψ₀⟩` on `A ⊗ B ⊗ A' ⊗ B'`.
pub fn reference_state(dims: ChannelDims) -> Vec<C64> {
    let d_u = dims.d_u();
    let mut psi = vec![ZERO; dims.d_a * d_u];
    let amp = C64::new(1.0 / (dims.d_a as f64).sqrt(), 0.0);
    for i in 0..dims.d_a {
        psi[i * d_u + reference_column(dims, i)] = amp;
    }
    psi
}

/// Index in `B ⊗ A' ⊗ B'` of `|0⟩_B |i⟩_A' |0⟩_B'`.
#[inline]
pub fn reference_column(dims: ChannelDims, i: usize) -> usize {
    i * dims.d_b
}

/// Choi matrix from the Stinespring unitary, without validating `u`.
///
/// Only the `d_A` columns of `u` hit by `|Ψ₀⟩` contribute.
pub fn choi_from_unitary_unchecked(u: &ComplexMatrix, dims: ChannelDims) -> ComplexMatrix {
    let (d_a, d_b, d_env) = (dims.d_a, dims.d_b, dims.d_env());
    let n = d_a * d_b;
    let cols: Vec<Vec<C64>> = (0..d_a).map(|i| u.column(reference_column(dims, i))).collect();
    let inv = 1.0 / d_a as f64;
    let mut choi = ComplexMatrix::zeros(n, n);
    for i in 0..d_a {
        for ip in i..d_a {
            for b in 0..d_b {
                for bp in 0..d_b {
                    let x = &cols[i][b * d_env..(b + 1) * d_env];
                    let y = &cols[ip][bp * d_env..(bp + 1) * d_env];
                    let z: C64 = x.iter().zip(y).map(|(p, q)| p * q.conj()).sum::<C64>() * inv;
                    choi[(i * d_b + b, ip * d_b + bp)] = z;
                    choi[(ip * d_b + bp, i * d_b + b)] = z.conj();
                }
            }
        }
    }
    choi
}

/// Choi matrix of the channel whose Stinespring unitary on `B A' B'` is `u`.
pub fn sample_to_choi(u: &ComplexMatrix, dims: ChannelDims) -> Result<ComplexMatrix> {
    let d_u = dims.d_u();
    if u.rows() != d_u || u.cols() != d_u {
        return Err(ChannelError::DimensionMismatch(format!("unitary must be {d_u}x{d_u}")));
    }
    let res = unitarity_residual(u);
    if res > 1e-10 {
        return Err(ChannelError::NotUnitary(res));
    }
    Ok(choi_from_unitary_unchecked(u, dims))
}

/// A channel given by its Stinespring unitary together with the cached Choi matrix.
#[derive(Debug, Clone)]
pub struct ChannelSample {
    dims: ChannelDims,
    u: ComplexMatrix,
    choi: ComplexMatrix,
}

impl ChannelSample {
    pub fn new(u: ComplexMatrix, dims: ChannelDims) -> Result<Self> {
        let choi = sample_to_choi(&u, dims)?;
        Ok(Self { dims, u, choi })
    }

    pub fn dims(&self) -> ChannelDims {
        self.dims
    }

    pub fn unitary(&self) -> &ComplexMatrix {
        &self.u
    }

    pub fn choi(&self) -> &ComplexMatrix {
        &self.choi
    }
}

/// Deviations of a candidate Choi matrix from the channel constraints.
#[derive(Debug, Clone, Copy)]
pub struct ChoiDefects {
    pub trace: f64,
    pub marginal: f64,
    pub hermitian: f64,
    pub min_eigenvalue: f64,
}

impl ChoiDefects {
    pub fn within(&self, tol: f64) -> bool {
        self.trace <= tol && self.marginal <= tol && self.hermitian <= tol && self.min_eigenvalue >= -tol
    }
}

pub fn choi_defects(choi: &ComplexMatrix, dims: ChannelDims) -> Result<ChoiDefects> {
    dims.check_choi_shape(choi)?;
    let hermitian = choi.hermitian_defect();
    let trace = (choi.trace() - C64::new(1.0, 0.0)).norm();
    let marg = partial_trace(choi, (dims.d_a, dims.d_b), Keep::X)?;
    let marginal = (&marg - &ComplexMatrix::identity(dims.d_a).scale(1.0 / dims.d_a as f64)).max_abs();
    let min_eigenvalue = eigh(&choi.hermitian_part())?.min();
    Ok(ChoiDefects { trace, marginal, hermitian, min_eigenvalue })
}

/// Validates a Choi matrix (PSD, unit trace, uniform input marginal) within `tol`.
pub fn check_choi(choi: &ComplexMatrix, dims: ChannelDims, tol: f64) -> Result<()> {
    let d = choi_defects(choi, dims)?;
    if !d.within(tol) {
        return Err(ChannelError::BadParameter(format!("not a valid Choi matrix: {d:?}")));
    }
    Ok(())
}

/// `Λ(ρ) = d_A tr_A(Λ_AB (ρᵀ ⊗ 1_B))`.
pub fn apply_channel(choi: &ComplexMatrix, rho: &ComplexMatrix, dims: ChannelDims) -> Result<ComplexMatrix> {
    dims.check_choi_shape(choi)?;
    if rho.rows() != dims.d_a || rho.cols() != dims.d_a {
        return Err(ChannelError::DimensionMismatch(format!("input state must be {0}x{0}", dims.d_a)));
    }
    let (d_a, d_b) = (dims.d_a, dims.d_b);
    let scale = d_a as f64;
    Ok(ComplexMatrix::from_fn(d_b, d_b, |b, bp| {
        let mut acc = ZERO;
        for a in 0..d_a {
            for ap in 0..d_a {
                acc += choi[(a * d_b + b, ap * d_b + bp)] * rho[(a, ap)];
            }
        }
        acc * scale
    }))
}

/// Choi matrix of an arbitrary linear map given by its action on operators.
pub fn choi_of_map(dims: ChannelDims, map: impl Fn(&ComplexMatrix) -> ComplexMatrix) -> Result<ComplexMatrix> {
    let (d_a, d_b) = (dims.d_a, dims.d_b);
    let mut choi = ComplexMatrix::zeros(d_a * d_b, d_a * d_b);
    for i in 0..d_a {
        for j in 0..d_a {
            let mut eij = ComplexMatrix::zeros(d_a, d_a);
            eij[(i, j)] = C64::new(1.0, 0.0);
            let out = map(&eij);
            if out.rows() != d_b || out.cols() != d_b {
                return Err(ChannelError::DimensionMismatch("map output has wrong dimension".into()));
            }
            for b in 0..d_b {
                for bp in 0..d_b {
                    choi[(i * d_b + b, j * d_b + bp)] = out[(b, bp)] / d_a as f64;
                }
            }
        }
    }
    Ok(choi)
}

/// Choi matrix of `ρ ↦ Σ_k K_k ρ K_k†`.
pub fn choi_of_kraus(kraus: &[ComplexMatrix], dims: ChannelDims) -> Result<ComplexMatrix> {
    for k in kraus {
        if k.rows() != dims.d_b || k.cols() != dims.d_a {
            return Err(ChannelError::DimensionMismatch("Kraus operator must be d_B x d_A".into()));
        }
    }
    choi_of_map(dims, |x| {
        let mut acc = ComplexMatrix::zeros(dims.d_b, dims.d_b);
        for k in kraus {
            acc += &(&(k * x) * &k.adjoint());
        }
        acc
    })
}

/// Depolarizing channel `ρ ↦ pρ + (1-p) tr(ρ) I/d`: Choi `p Φ̂ + (1-p) I/d²`.
pub fn depolarizing(p: f64, d: usize) -> Result<ComplexMatrix> {
    if !(0.0..=1.0).contains(&p) || !p.is_finite() {
        return Err(ChannelError::BadParameter(format!("depolarizing parameter {p} outside [0, 1]")));
    }
    if d == 0 {
        return Err(ChannelError::BadParameter("dimension must be positive".into()));
    }
    let n = d * d;
    let phi = qmat::max_entangled(d);
    Ok(&phi.scale(p) + &ComplexMatrix::identity(n).scale((1.0 - p) / n as f64))
}

pub fn identity_channel(d: usize) -> ComplexMatrix {
    qmat::max_entangled(d)
}

/// Inverse of `Λ_AB ↦ d_A (1_B ⊗ ρ_P^{1/2}) Λ_BP (1_B ⊗ ρ_P^{1/2})`.
///
/// `rho_out` lives on `B ⊗ P` with `d_P = d_A`. The reference marginal `ρ_P`
/// is read off `rho_out`; the returned Choi matrix is ordered `A ⊗ B` with the
/// reference system playing the role of the input.
pub fn bipartite_to_channel(rho_out: &ComplexMatrix, dims: ChannelDims, floor: f64) -> Result<ComplexMatrix> {
    let (d_a, d_b) = (dims.d_a, dims.d_b);
    if rho_out.rows() != d_a * d_b || rho_out.cols() != d_a * d_b {
        return Err(ChannelError::DimensionMismatch("bipartite state must live on B ⊗ P".into()));
    }
    let rho_p = partial_trace(rho_out, (d_b, d_a), Keep::Y)?;
    let inv = mat_inv_sqrt(&rho_p.hermitian_part(), floor)?;
    let lift = ComplexMatrix::identity(d_b).kron(&inv);
    let bp = (&(&lift * rho_out) * &lift).scale(1.0 / d_a as f64);
    Ok(bp.swap_subsystems(d_b, d_a)?.hermitian_part())
}

/// `d_A (1_B ⊗ σ_P^{1/2}) Λ_BP (1_B ⊗ σ_P^{1/2})` on `B ⊗ P`: the output of
/// sending half of a purification of `σ_P` through the channel.
pub fn channel_to_bipartite(choi: &ComplexMatrix, sigma_p: &ComplexMatrix, dims: ChannelDims) -> Result<ComplexMatrix> {
    dims.check_choi_shape(choi)?;
    if sigma_p.rows() != dims.d_a || sigma_p.cols() != dims.d_a {
        return Err(ChannelError::DimensionMismatch("reference state must be d_A x d_A".into()));
    }
    let root = mat_sqrt(sigma_p)?;
    let lift = ComplexMatrix::identity(dims.d_b).kron(&root);
    let bp = choi.swap_subsystems(dims.d_a, dims.d_b)?;
    Ok((&(&lift * &bp) * &lift).scale(dims.d_a as f64).hermitian_part())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::{haar_unitary, standard_complex_normal};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: &ComplexMatrix, b: &ComplexMatrix) -> f64 {
        (a - b).frobenius_norm() / b.frobenius_norm().max(1e-300)
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
        let g = ComplexMatrix::from_fn(n, n, |_, _| standard_complex_normal(rng));
        let p = &g * &g.adjoint();
        let tr = p.trace().re;
        p.scale(1.0 / tr)
    }

    /// Random Kraus decomposition from the first d_A columns of a Haar unitary.
    fn random_kraus(dims: ChannelDims, rank: usize, rng: &mut ChaCha8Rng) -> Vec<ComplexMatrix> {
        let u = haar_unitary(dims.d_b * rank, rng);
        (0..rank).map(|k| ComplexMatrix::from_fn(dims.d_b, dims.d_a, |b, a| u[(b * rank + k, a)])).collect()
    }

    #[test]
    fn reference_state_examples() {
        let psi = reference_state(ChannelDims::new(1, 1).unwrap());
        assert_eq!(psi, vec![C64::new(1.0, 0.0)]);

        let dims = ChannelDims::new(2, 2).unwrap();
        let psi = reference_state(dims);
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-15);
        let rho = ComplexMatrix::outer(&psi);
        let marg = partial_trace(&rho, (2, dims.d_u()), Keep::X).unwrap();
        assert!(rel_err(&marg, &ComplexMatrix::identity(2).scale(0.5)) < 1e-15);
    }

    #[test]
    fn identity_unitary_gives_constant_output_channel() {
        for (d_a, d_b) in [(2, 2), (2, 3), (3, 2)] {
            let dims = ChannelDims::new(d_a, d_b).unwrap();
            let choi = sample_to_choi(&ComplexMatrix::identity(dims.d_u()), dims).unwrap();
            let mut ket0 = ComplexMatrix::zeros(d_b, d_b);
            ket0[(0, 0)] = C64::new(1.0, 0.0);
            let expected = ComplexMatrix::identity(d_a).scale(1.0 / d_a as f64).kron(&ket0);
            assert!(rel_err(&choi, &expected) < 1e-15);
        }
    }

    #[test]
    fn choi_matches_explicit_partial_trace_of_purification() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dims = ChannelDims::new(2, 2).unwrap();
        let u = haar_unitary(dims.d_u(), &mut rng);
        let full_u = ComplexMatrix::identity(dims.d_a).kron(&u);
        let psi = full_u.matvec(&reference_state(dims));
        let rho = ComplexMatrix::outer(&psi);
        let direct = partial_trace(&rho, (dims.d_choi(), dims.d_env()), Keep::X).unwrap();
        let choi = sample_to_choi(&u, dims).unwrap();
        assert!(rel_err(&choi, &direct) < 1e-12);
    }

    #[test]
    fn haar_samples_are_valid_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for (d_a, d_b) in [(2, 2), (3, 3), (2, 3)] {
            let dims = ChannelDims::new(d_a, d_b).unwrap();
            for _ in 0..10 {
                let s = ChannelSample::new(haar_unitary(dims.d_u(), &mut rng), dims).unwrap();
                assert!(choi_defects(s.choi(), dims).unwrap().within(1e-9));
            }
        }
    }

    #[test]
    fn left_multiplication_preserves_choi_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dims = ChannelDims::new(2, 2).unwrap();
        let u = haar_unitary(dims.d_u(), &mut rng);
        let v = haar_unitary(dims.d_u(), &mut rng);
        let a = sample_to_choi(&u, dims).unwrap();
        let b = sample_to_choi(&(&v * &u), dims).unwrap();
        assert!(rel_err(&a, &b) > 1e-3);
        assert!(choi_defects(&b, dims).unwrap().within(1e-9));
    }

    #[test]
    fn rejects_non_unitary() {
        let dims = ChannelDims::new(2, 2).unwrap();
        let m = ComplexMatrix::identity(dims.d_u()).scale(1.01);
        assert!(matches!(sample_to_choi(&m, dims), Err(ChannelError::NotUnitary(_))));
    }

    #[test]
    fn mean_haar_choi_is_maximally_mixed() {
        // E[U X U†] = tr(X) I / D
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let dims = ChannelDims::new(2, 2).unwrap();
        let n = 10_000;
        let mut sum = ComplexMatrix::zeros(4, 4);
        let mut sq = [0.0; 16];
        for _ in 0..n {
            let c = choi_from_unitary_unchecked(&haar_unitary(dims.d_u(), &mut rng), dims);
            for (s, z) in sq.iter_mut().zip(c.as_slice()) {
                *s += z.norm_sqr();
            }
            sum += &c;
        }
        let mean = sum.scale(1.0 / n as f64);
        for r in 0..4 {
            for c in 0..4 {
                let idx = r * 4 + c;
                let target = if r == c { 0.25 } else { 0.0 };
                let m = mean[(r, c)];
                let var = (sq[idx] / n as f64 - m.norm_sqr()).max(1e-12);
                let sigma = (var / n as f64).sqrt();
                assert!((m - C64::new(target, 0.0)).norm() < 4.0 * sigma, "entry ({r},{c}) = {m}");
            }
        }
    }

    #[test]
    fn apply_channel_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let dims = ChannelDims::new(3, 3).unwrap();
        let rho = random_state(3, &mut rng);
        let out = apply_channel(&identity_channel(3), &rho, dims).unwrap();
        assert!(rel_err(&out, &rho) < 1e-14);

        let dims = ChannelDims::new(2, 2).unwrap();
        let ket0 = ComplexMatrix::from_real_diag(&[1.0, 0.0]);
        let out = apply_channel(&depolarizing(0.0, 2).unwrap(), &ket0, dims).unwrap();
        assert!(rel_err(&out, &ComplexMatrix::identity(2).scale(0.5)) < 1e-14);
        let out = apply_channel(&depolarizing(0.9, 2).unwrap(), &ket0, dims).unwrap();
        assert!(rel_err(&out, &ComplexMatrix::from_real_diag(&[0.95, 0.05])) < 1e-14);

        assert!(matches!(
            apply_channel(&depolarizing(0.9, 2).unwrap(), &ComplexMatrix::identity(3), dims),
            Err(ChannelError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn depolarizing_examples() {
        let one = depolarizing(1.0, 2).unwrap();
        assert!(rel_err(&one, &qmat::max_entangled(2)) < 1e-15);
        let zero = depolarizing(0.0, 2).unwrap();
        assert!(rel_err(&zero, &ComplexMatrix::identity(4).scale(0.25)) < 1e-15);
        let e = eigh(&depolarizing(0.9, 2).unwrap()).unwrap();
        for (got, want) in e.values.iter().zip([0.025, 0.025, 0.025, 0.925]) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!(depolarizing(1.5, 2).is_err());
        assert!(depolarizing(-0.1, 2).is_err());
    }

    #[test]
    fn kraus_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        for (d_a, d_b, rank) in [(2, 2, 3), (2, 3, 2), (3, 2, 4)] {
            let dims = ChannelDims::new(d_a, d_b).unwrap();
            let kraus = random_kraus(dims, rank, &mut rng);
            let choi = choi_of_kraus(&kraus, dims).unwrap();
            assert!(choi_defects(&choi, dims).unwrap().within(1e-12));
            for _ in 0..5 {
                let rho = random_state(d_a, &mut rng);
                let mut direct = ComplexMatrix::zeros(d_b, d_b);
                for k in &kraus {
                    direct += &(&(k * &rho) * &k.adjoint());
                }
                let via = apply_channel(&choi, &rho, dims).unwrap();
                assert!((&via - &direct).max_abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bipartite_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        for (d_a, d_b) in [(2, 2), (2, 3), (3, 2)] {
            let dims = ChannelDims::new(d_a, d_b).unwrap();
            let choi = choi_from_unitary_unchecked(&haar_unitary(dims.d_u(), &mut rng), dims);
            let sigma = random_state(d_a, &mut rng);
            let rho = channel_to_bipartite(&choi, &sigma, dims).unwrap();
            assert!((rho.trace().re - 1.0).abs() < 1e-12);
            let back = bipartite_to_channel(&rho, dims, DEFAULT_RANK_FLOOR).unwrap();
            assert!((&back - &choi).max_abs() < 1e-9);
            assert!(choi_defects(&back, dims).unwrap().within(1e-8));
        }
    }

    #[test]
    fn bipartite_identity_and_degenerate_marginal() {
        let dims = ChannelDims::new(2, 2).unwrap();
        // identity-channel Choi with uniform marginal, reordered to B ⊗ P (symmetric here)
        let phi = identity_channel(2);
        let back = bipartite_to_channel(&phi, dims, DEFAULT_RANK_FLOOR).unwrap();
        assert!(rel_err(&back, &phi) < 1e-12);

        let pure = ComplexMatrix::from_real_diag(&[1.0, 0.0, 0.0, 1e-15]);
        let r = bipartite_to_channel(&pure, dims, 1e-12);
        assert!(matches!(r, Err(ChannelError::Qmat(QmatError::RankDeficient { .. }))));
    }
}
