//! Domain value types shared across the estimators.

use num_complex::Complex64;

use crate::{CMat, CVec, Error, RVec, Result};

/// Stacked RETF matrix `H` of shape `M x N`: column `n` relates the early
/// component of source `n` across microphones, normalized to the first
/// microphone. The first row is identically one.
#[derive(Debug, Clone, PartialEq)]
pub struct RetfMatrix(CMat);

impl RetfMatrix {
    /// Builds from an `M x N` matrix whose first row is (numerically) one.
    /// The first row is snapped to exactly one; anything further off than
    /// 1e-9 is rejected.
    pub fn new(mut m: CMat) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 {
            return Err(Error::InvalidInput("empty RETF matrix".into()));
        }
        crate::linalg::check_finite(&m)?;
        for j in 0..m.ncols() {
            if (m[(0, j)] - Complex64::new(1.0, 0.0)).norm() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "RETF column {j} is not normalized to the reference microphone"
                )));
            }
            m[(0, j)] = Complex64::new(1.0, 0.0);
        }
        Ok(Self(m))
    }

    /// Number of microphones `M`.
    pub fn mics(&self) -> usize {
        self.0.nrows()
    }

    /// Number of sources `N`.
    pub fn sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn column(&self, n: usize) -> CVec {
        CVec::from_column_slice(self.0.column(n).as_slice())
    }
}

/// Length-`N` vector of non-negative early PSDs.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdVector(RVec);

impl PsdVector {
    /// Fails if any entry is negative or non-finite.
    pub fn new(v: RVec) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(
                "PSD vector entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self(v))
    }

    /// Clamps negative entries to zero (the `max[·, 0]` operation).
    pub fn clamped(v: RVec) -> Self {
        Self(v.map(|x| x.max(0.0)))
    }

    /// Element-wise squared magnitude of a complex square-root vector.
    pub fn from_sqrt(v: &CVec) -> Self {
        Self(RVec::from_iterator(v.len(), v.iter().map(|z| z.norm_sqr())))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn values(&self) -> &RVec {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.sum()
    }

    /// Element-wise non-negative square root.
    pub fn sqrt(&self) -> RVec {
        self.0.map(f64::sqrt)
    }
}

/// An `M x N` square-root factor of the early correlation matrix:
/// `S S^H = Psi_xe`. Any right-multiplication by a unitary matrix is an
/// equally valid factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlySqrt(CMat);

impl EarlySqrt {
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() == 0 || m.ncols() == 0 || m.ncols() > m.nrows() {
            return Err(Error::InvalidInput(format!(
                "square-root factor must be M x N with N <= M, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        crate::linalg::check_finite(&m)?;
        Ok(Self(m))
    }

    pub fn mics(&self) -> usize {
        self.0.nrows()
    }

    pub fn sources(&self) -> usize {
        self.0.ncols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    /// The implied early correlation matrix `S S^H`.
    pub fn outer(&self) -> CMat {
        &self.0 * self.0.adjoint()
    }

    /// Energy of the first row, `sum_n |S_{1,n}|^2`; equals the (1,1) entry
    /// of the implied early correlation matrix.
    pub fn first_row_energy(&self) -> f64 {
        (0..self.0.ncols()).map(|j| self.0[(0, j)].norm_sqr()).sum()
    }
}
