//! Early-PSD estimation on the square root of the early correlation matrix:
//! alternating minimization of a generalized orthogonal Procrustes problem.
//!
//! Writing the rank-N factor as `Psi^{1/2} Omega = H Diag(phi^{1/2})` with a
//! unitary `Omega`, the solver alternates two exact subproblem minimizers:
//! the unitary step is solved by one SVD per iteration, and the square-root
//! step is a diagonal linear solve. Because PSDs are recovered as
//! `|phi^{1/2}|^2`, no non-negativity constraint or clamping is needed
//! anywhere in this module.

use num_complex::Complex64;

use crate::linalg::{norm_sqr, svd};
use crate::types::{EarlySqrt, PsdVector, RetfMatrix};
use crate::{CMat, CVec, Error, Result};

/// Initial square-root PSD vector of the alternating iteration.
#[derive(Debug, Clone)]
pub enum Init {
    /// Distribute the first-row energy of the square root evenly:
    /// `sqrt(psi_11 / N) * 1`.
    SumConstraint,
    /// Element-wise square root of a PSD estimate obtained elsewhere
    /// (typically the closed-form unconstrained estimate).
    ConventionalSeed(PsdVector),
}

/// One instance of the square-root minimization problem.
#[derive(Debug, Clone)]
pub struct SquareRootProblem {
    pub psi_sqrt_hat: EarlySqrt,
    pub retf_hat: RetfMatrix,
    /// Penalty on the per-source square-root sum constraint.
    pub alpha: f64,
    pub i_max: usize,
    /// Relative change of the PSD vector below which iteration stops.
    pub tol: f64,
    pub init: Init,
}

/// Result of one unitary Procrustes step.
#[derive(Debug, Clone)]
pub struct ProcrustesStep {
    pub omega: CMat,
    /// Set when the cross matrix was rank deficient: the returned factor is
    /// still a maximizer, but not the unique one.
    pub non_unique: bool,
}

/// Solution of the alternating square-root solve.
#[derive(Debug, Clone)]
pub struct SquareRootSolution {
    pub omega_hat: CMat,
    pub phi_sqrt_hat: CVec,
    pub phi_s_hat: PsdVector,
    pub iterations_used: usize,
    /// Full objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Any iteration hit a rank-deficient Procrustes step.
    pub non_unique: bool,
}

fn dims_consistent(psi_sqrt: &EarlySqrt, retf: &RetfMatrix) -> Result<()> {
    if psi_sqrt.mics() != retf.mics() || psi_sqrt.sources() != retf.sources() {
        return Err(Error::InvalidInput(format!(
            "square root is {}x{} but RETF is {}x{}",
            psi_sqrt.mics(),
            psi_sqrt.sources(),
            retf.mics(),
            retf.sources()
        )));
    }
    Ok(())
}

/// Unitary factor maximizing `Re tr(Omega C)` with
/// `C = Diag(conj(phi_sqrt)) H^H Psi^{1/2}`, obtained from the SVD
/// `C^H = U_L S U_R^H` as `Omega = U_L U_R^H`.
pub fn procrustes_step(
    psi_sqrt: &EarlySqrt,
    retf: &RetfMatrix,
    phi_sqrt: &CVec,
) -> Result<ProcrustesStep> {
    dims_consistent(psi_sqrt, retf)?;
    let n = retf.sources();
    if phi_sqrt.len() != n {
        return Err(Error::InvalidInput("square-root PSD vector has wrong length".into()));
    }
    let mut c = retf.matrix().adjoint() * psi_sqrt.matrix();
    for i in 0..n {
        let w = phi_sqrt[i].conj();
        for j in 0..n {
            c[(i, j)] *= w;
        }
    }
    let dec = svd(&c.adjoint())?;
    let omega = &dec.u * dec.v.adjoint();
    let s_max = dec.singular_values[0];
    let s_min = dec.singular_values[n - 1];
    let non_unique = s_max <= 0.0 || s_min <= s_max * 1e-12;
    Ok(ProcrustesStep { omega, non_unique })
}

/// Closed-form square-root PSD step: with `Y = Psi^{1/2} Omega`,
/// `phi^{1/2}_n = (h_n^H y_n + alpha * Y_{1,n}) / (||h_n||^2 + alpha)`.
pub fn psd_sqrt_step(
    psi_sqrt: &EarlySqrt,
    retf: &RetfMatrix,
    omega: &CMat,
    alpha: f64,
) -> CVec {
    let y = psi_sqrt.matrix() * omega;
    let n = retf.sources();
    CVec::from_fn(n, |j, _| {
        let h = retf.matrix().column(j);
        let num: Complex64 =
            h.iter().zip(y.column(j).iter()).map(|(a, b)| a.conj() * b).sum::<Complex64>()
                + y[(0, j)] * alpha;
        let den: f64 = h.iter().map(|z| z.norm_sqr()).sum::<f64>() + alpha;
        num / den
    })
}

/// Objective value `||Psi^{1/2} Omega - H Diag(phi^{1/2})||_F^2
/// + alpha ||[Psi^{1/2} Omega]_{1,:}^T - phi^{1/2}||_2^2`.
pub fn objective(
    psi_sqrt: &EarlySqrt,
    retf: &RetfMatrix,
    omega: &CMat,
    phi_sqrt: &CVec,
    alpha: f64,
) -> f64 {
    let y = psi_sqrt.matrix() * omega;
    let mut model = retf.matrix().clone();
    for j in 0..model.ncols() {
        let w = phi_sqrt[j];
        for i in 0..model.nrows() {
            model[(i, j)] *= w;
        }
    }
    let e = &y - model;
    let fro2: f64 = e.iter().map(|z| z.norm_sqr()).sum();
    let first_row = CVec::from_fn(phi_sqrt.len(), |j, _| y[(0, j)] - phi_sqrt[j]);
    fro2 + alpha * norm_sqr(&first_row)
}

/// Alternating solve: unitary step then square-root step, stopping when the
/// relative change of the PSD vector drops below `tol` or after `i_max`
/// iterations. Always returns; the `converged` flag reports which exit was
/// taken.
pub fn solve_square_root_mp(problem: &SquareRootProblem) -> Result<SquareRootSolution> {
    dims_consistent(&problem.psi_sqrt_hat, &problem.retf_hat)?;
    if problem.alpha < 0.0 || !problem.alpha.is_finite() {
        return Err(Error::InvalidInput("alpha must be finite and >= 0".into()));
    }
    let n = problem.retf_hat.sources();
    let mut phi_sqrt: CVec = match &problem.init {
        Init::SumConstraint => {
            let level = (problem.psi_sqrt_hat.first_row_energy() / n as f64).sqrt();
            CVec::from_element(n, Complex64::new(level, 0.0))
        }
        Init::ConventionalSeed(seed) => {
            if seed.len() != n {
                return Err(Error::InvalidInput("seed PSD vector has wrong length".into()));
            }
            CVec::from_iterator(n, seed.values().iter().map(|&v| Complex64::new(v.sqrt(), 0.0)))
        }
    };
    let mut phi_s = PsdVector::from_sqrt(&phi_sqrt);
    let mut omega = CMat::identity(n, n);
    let mut trace = Vec::with_capacity(problem.i_max);
    let mut converged = false;
    let mut non_unique = false;
    let mut iterations_used = 0;

    for _ in 0..problem.i_max {
        let step = procrustes_step(&problem.psi_sqrt_hat, &problem.retf_hat, &phi_sqrt)?;
        non_unique |= step.non_unique;
        omega = step.omega;
        phi_sqrt = psd_sqrt_step(&problem.psi_sqrt_hat, &problem.retf_hat, &omega, problem.alpha);
        iterations_used += 1;
        trace.push(objective(
            &problem.psi_sqrt_hat,
            &problem.retf_hat,
            &omega,
            &phi_sqrt,
            problem.alpha,
        ));

        let next = PsdVector::from_sqrt(&phi_sqrt);
        let change = (next.values() - phi_s.values()).norm();
        let prev_norm = phi_s.values().norm();
        phi_s = next;
        if change <= problem.tol * prev_norm {
            converged = true;
            break;
        }
    }

    Ok(SquareRootSolution {
        omega_hat: omega,
        phi_sqrt_hat: phi_sqrt,
        phi_s_hat: phi_s,
        iterations_used,
        objective_trace: trace,
        converged,
        non_unique,
    })
}
