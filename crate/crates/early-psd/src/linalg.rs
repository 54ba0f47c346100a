//! Dense complex decompositions with the normalization contracts the rest of
//! the crate relies on: Hermitian EVD and SVD with descending values, a
//! Hermitian-positive-definite factorization with an optional jitter rescue,
//! and a GEVD implemented by whitening.
//!
//! The GEVD of `(A, B)` returns eigenvectors scaled such that `P^H B P = I`,
//! which is exactly the scaling the subspace estimator assumes. Backing
//! decompositions are delegated to `nalgebra`; this module owns ordering,
//! scaling and error policy.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::{CMat, Error, RVec, Result};

/// Relative jitter applied to a coherence matrix when its factorization
/// fails; the diffuse coherence matrix is near-singular at low frequencies
/// for closely spaced microphones.
pub const DEFAULT_JITTER: f64 = 1e-10;

/// An `M x M` Hermitian matrix. Construction symmetrizes, so the wrapped
/// matrix satisfies `A = A^H` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMat);

impl HermitianMatrix {
    /// Builds from an (approximately) Hermitian matrix by averaging `A` with
    /// `A^H`. Fails on non-square or non-finite input.
    pub fn new(a: CMat) -> Result<Self> {
        if a.nrows() == 0 || a.nrows() != a.ncols() {
            return Err(Error::InvalidInput(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_finite(&a)?;
        let sym = (&a + a.adjoint()).scale(0.5);
        Ok(Self(sym))
    }

    /// Identity of the given dimension.
    pub fn identity(dim: usize) -> Self {
        Self(CMat::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    /// Mean of the (real) diagonal, `tr(A) / dim`.
    pub fn mean_diagonal(&self) -> f64 {
        let n = self.dim();
        (0..n).map(|i| self.0[(i, i)].re).sum::<f64>() / n as f64
    }

    /// `self + c * other`, re-symmetrized.
    pub fn add_scaled(&self, other: &HermitianMatrix, c: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::InvalidInput(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Self::new(&self.0 + other.0.scale(c))
    }
}

/// Result of a Hermitian eigendecomposition: real eigenvalues in descending
/// order and the matching unitary eigenvector columns.
#[derive(Debug, Clone)]
pub struct Evd {
    pub values: RVec,
    pub vectors: CMat,
}

/// Result of a singular value decomposition `A = U S V^H` with `S`
/// non-negative and descending.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMat,
    pub singular_values: RVec,
    pub v: CMat,
}

/// Generalized eigendecomposition of `(A, B)`: `A P = B P Diag(values)` with
/// `P^H B P = I` and values sorted descending.
#[derive(Debug, Clone)]
pub struct GevdPair {
    pub vectors: CMat,
    pub values: RVec,
}

pub(crate) fn check_finite(a: &CMat) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("non-finite matrix entry".into()))
    }
}

/// Sorts eigen/singular values descending, ties keeping input order, and
/// returns the permutation.
fn descending_permutation(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap_or(std::cmp::Ordering::Equal));
    idx
}

fn permute_columns(m: &CMat, perm: &[usize]) -> CMat {
    let mut out = CMat::zeros(m.nrows(), m.ncols());
    for (dst, &src) in perm.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

/// Hermitian eigendecomposition with descending eigenvalues.
///
/// Postconditions: `A V = V Diag(values)` and `V^H V = I`, both to ~1e-10
/// relative for conditioned inputs.
pub fn hermitian_evd(a: &HermitianMatrix) -> Result<Evd> {
    let se = a
        .matrix()
        .clone()
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or_else(|| Error::InvalidInput("hermitian eigendecomposition failed".into()))?;
    let raw: Vec<f64> = se.eigenvalues.iter().copied().collect();
    let perm = descending_permutation(&raw);
    let values = RVec::from_iterator(raw.len(), perm.iter().map(|&i| raw[i]));
    let vectors = permute_columns(&se.eigenvectors, &perm);
    Ok(Evd { values, vectors })
}

/// Singular value decomposition with descending singular values.
pub fn svd(a: &CMat) -> Result<Svd> {
    check_finite(a)?;
    let decomp = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::InvalidInput("svd failed to converge".into()))?;
    let u = decomp.u.expect("u requested");
    let v_t = decomp.v_t.expect("v_t requested");
    let raw: Vec<f64> = decomp.singular_values.iter().copied().collect();
    let perm = descending_permutation(&raw);
    let singular_values = RVec::from_iterator(raw.len(), perm.iter().map(|&i| raw[i]));
    let u = permute_columns(&u, &perm);
    let v = permute_columns(&v_t.adjoint(), &perm);
    Ok(Svd { u, singular_values, v })
}

/// Factorizes a Hermitian positive definite matrix as `B = F F^H` with `F`
/// lower triangular.
///
/// If the plain factorization fails and `jitter > 0`, retries on
/// `B + jitter * (tr B / dim) * I`. Returns [`Error::NotPositiveDefinite`]
/// when the matrix is indefinite beyond that rescue.
pub fn factor_hpd(b: &HermitianMatrix, jitter: f64) -> Result<CMat> {
    if jitter < 0.0 || !jitter.is_finite() {
        return Err(Error::InvalidInput("jitter must be finite and >= 0".into()));
    }
    if let Some(f) = cholesky_checked(b.matrix().clone()) {
        return Ok(f);
    }
    if jitter > 0.0 {
        let dim = b.dim();
        let bump = jitter * b.mean_diagonal();
        let jittered = b.matrix() + CMat::identity(dim, dim).scale(bump);
        if let Some(f) = cholesky_checked(jittered) {
            return Ok(f);
        }
    }
    Err(Error::NotPositiveDefinite)
}

/// Cholesky with an explicit positivity check. Over the complex field the
/// square root of a negative pivot exists, so `nalgebra`'s factorization does
/// not fail on indefinite Hermitian input; a valid factor of an HPD matrix
/// has a finite, real, strictly positive diagonal.
fn cholesky_checked(m: CMat) -> Option<CMat> {
    let f = nalgebra::Cholesky::new(m)?.l();
    for i in 0..f.nrows() {
        let d = f[(i, i)];
        if !d.re.is_finite() || !d.im.is_finite() || d.re <= 0.0 || d.im.abs() > 1e-8 * d.re {
            return None;
        }
    }
    if f.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return None;
    }
    Some(f)
}

/// Generalized eigendecomposition of `(A, B)` via whitening: with
/// `B = F F^H`, the EVD of `F^{-1} A F^{-H}` gives the eigenvalues, and the
/// back-transform `P = F^{-H} V` yields eigenvectors with `P^H B P = I`.
pub fn gevd(a: &HermitianMatrix, b: &HermitianMatrix, jitter: f64) -> Result<GevdPair> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let f = factor_hpd(b, jitter)?;
    // W = F^{-1} A F^{-H}, computed by two triangular solves.
    let y = f
        .solve_lower_triangular(a.matrix())
        .ok_or(Error::NotPositiveDefinite)?;
    let w = f
        .solve_lower_triangular(&y.adjoint())
        .ok_or(Error::NotPositiveDefinite)?;
    let evd = hermitian_evd(&HermitianMatrix::new(w)?)?;
    // P = F^{-H} V  <=>  F^H P = V.
    let vectors = f
        .adjoint()
        .solve_upper_triangular(&evd.vectors)
        .ok_or(Error::NotPositiveDefinite)?;
    Ok(GevdPair { vectors, values: evd.values })
}

/// Frobenius norm of a complex matrix.
pub fn fro_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `sum_i |a_i|^2` over a complex vector.
pub fn norm_sqr(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}
