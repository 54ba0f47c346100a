//! Baseline early-PSD estimation from the early correlation matrix: the
//! closed-form unconstrained least-squares estimate and the soft-constrained
//! non-negative solver driven by the proximal gradient method.

use nalgebra::{DMatrix, DVector};

use crate::linalg::HermitianMatrix;
use crate::types::{PsdVector, RetfMatrix};
use crate::{Error, Result};

/// Singular values below `s_max * RANK_EPS` count as zero; the normal
/// matrix is declared singular when its condition number exceeds 1e10.
const RANK_EPS: f64 = 1e-10;
const MAX_COND: f64 = 1e10;

/// Step size of the proximal gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepSize {
    /// `1 / lambda_max(A_c)`, which guarantees monotone descent of the
    /// quadratic objective.
    #[default]
    Auto,
    Fixed(f64),
}

/// One instance of the conventional minimization problem.
#[derive(Debug, Clone)]
pub struct ConventionalProblem {
    pub psi_xe_hat: HermitianMatrix,
    pub retf_hat: RetfMatrix,
    /// Soft-constraint penalty on the summed early PSDs.
    pub alpha: f64,
    pub step: StepSize,
    pub i_max: usize,
    /// Relative change of the iterate below which the iteration stops.
    pub tol: f64,
}

/// Outcome of the proximal gradient solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub phi_s_hat: PsdVector,
    pub iterations_used: usize,
    pub final_objective: f64,
    pub converged: bool,
    /// Set when the normal matrix was singular and the initial value came
    /// from a pseudo-inverse instead of a direct solve.
    pub init_fallback: bool,
}

/// Normal-equation pieces of the unconstrained problem:
/// `A[n, n'] = |h_n^H h_n'|^2` and `b = diag(H^H Psi H)` (real parts; the
/// imaginary parts of a Hermitian quadratic form vanish up to rounding).
pub fn normal_matrices(
    retf_hat: &RetfMatrix,
    psi_xe_hat: &HermitianMatrix,
) -> (DMatrix<f64>, DVector<f64>) {
    let h = retf_hat.matrix();
    let n = retf_hat.sources();
    let gram = h.adjoint() * h;
    let a = DMatrix::from_fn(n, n, |i, j| gram[(i, j)].norm_sqr());
    let hph = h.adjoint() * psi_xe_hat.matrix() * h;
    let b = DVector::from_fn(n, |i, _| {
        debug_assert!(hph[(i, i)].im.abs() <= 1e-8 * hph[(i, i)].re.abs().max(1.0));
        hph[(i, i)].re
    });
    (a, b)
}

/// Solves `A x = b` for a symmetric non-negative definite `A`, reporting the
/// result together with whether a rank-truncated pseudo-inverse was needed.
fn solve_normal(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let svd = a
        .clone()
        .try_svd(true, true, f64::EPSILON, 0)
        .ok_or(Error::SingularNormalEquations)?;
    let s_max = svd.singular_values.iter().fold(0.0f64, |m, &v| m.max(v));
    if s_max == 0.0 {
        return Err(Error::SingularNormalEquations);
    }
    let s_min = svd.singular_values.iter().fold(f64::INFINITY, |m, &v| m.min(v));
    let singular = s_min < s_max / MAX_COND;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut coeff = u.transpose() * b;
    for (i, c) in coeff.iter_mut().enumerate() {
        let s = svd.singular_values[i];
        *c = if s > s_max * RANK_EPS { *c / s } else { 0.0 };
    }
    Ok((vt.transpose() * coeff, singular))
}

/// Closed-form unconstrained estimate `max(A^{-1} b, 0)`. Fails with
/// [`Error::SingularNormalEquations`] when the normal matrix has condition
/// number beyond 1e10 (duplicated RETF columns at spatial-aliasing
/// frequencies).
pub fn solve_unconstrained(
    retf_hat: &RetfMatrix,
    psi_xe_hat: &HermitianMatrix,
) -> Result<PsdVector> {
    let (a, b) = normal_matrices(retf_hat, psi_xe_hat);
    let (x, singular) = solve_normal(&a, &b)?;
    if singular {
        return Err(Error::SingularNormalEquations);
    }
    Ok(PsdVector::clamped(x))
}

/// Frobenius-plus-penalty objective of the conventional problem at `phi`.
pub fn objective(problem: &ConventionalProblem, phi: &DVector<f64>) -> f64 {
    let h = problem.retf_hat.matrix();
    let phi_c = crate::CVec::from_iterator(phi.len(), phi.iter().map(|&v| num_complex::Complex64::new(v, 0.0)));
    let model = h * crate::CMat::from_diagonal(&phi_c) * h.adjoint();
    let e = problem.psi_xe_hat.matrix() - model;
    let fro2: f64 = e.iter().map(|z| z.norm_sqr()).sum();
    fro2 + problem.alpha * e[(0, 0)].norm_sqr()
}

/// Proximal gradient solve of the soft-constrained non-negative problem.
///
/// The iteration starts from the clamped solve of the penalized normal
/// equations and alternates a gradient step with a non-negativity clamp
/// until the relative change drops below `tol` or `i_max` is reached.
pub fn solve_conventional_mp(problem: &ConventionalProblem) -> Result<SolveReport> {
    if problem.alpha < 0.0 || !problem.alpha.is_finite() {
        return Err(Error::InvalidInput("alpha must be finite and >= 0".into()));
    }
    let n = problem.retf_hat.sources();
    let (a0, b0) = normal_matrices(&problem.retf_hat, &problem.psi_xe_hat);
    let alpha = problem.alpha;
    let a_c = &a0 + DMatrix::from_element(n, n, alpha);
    let psi_11 = problem.psi_xe_hat.matrix()[(0, 0)].re;
    let b_c = &b0 + DVector::from_element(n, alpha * psi_11);

    let (init, init_fallback) = solve_normal(&a_c, &b_c)?;
    let mut phi = init.map(|v| v.max(0.0));

    let mu = match problem.step {
        StepSize::Fixed(m) => {
            if !(m.is_finite() && m > 0.0) {
                return Err(Error::InvalidInput("step size must be positive".into()));
            }
            m
        }
        StepSize::Auto => {
            let eig = a_c.clone().symmetric_eigen();
            let lam_max = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
            if lam_max <= 0.0 {
                return Err(Error::SingularNormalEquations);
            }
            1.0 / lam_max
        }
    };

    let mut iterations_used = 0;
    let mut converged = false;
    for _ in 0..problem.i_max {
        let grad = &b_c - &a_c * &phi;
        let next = (&phi + grad.scale(mu)).map(|v: f64| v.max(0.0));
        iterations_used += 1;
        let change = (&next - &phi).norm();
        let prev_norm = phi.norm();
        phi = next;
        if change <= problem.tol * prev_norm {
            converged = true;
            break;
        }
    }

    let final_objective = objective(problem, &phi);
    Ok(SolveReport {
        phi_s_hat: PsdVector::clamped(phi),
        iterations_used,
        final_objective,
        converged,
        init_fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{steering_retf, synthesize_scene, ArrayGeometry, SceneConfig};
    use crate::{CMat, CVec};
    use num_complex::Complex64;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom5() -> ArrayGeometry {
        ArrayGeometry::linear(5, 0.08, 340.0).unwrap()
    }

    fn psi_from(h: &RetfMatrix, phi: &[f64]) -> HermitianMatrix {
        let d = CMat::from_diagonal(&CVec::from_iterator(
            phi.len(),
            phi.iter().map(|&v| Complex64::new(v, 0.0)),
        ));
        HermitianMatrix::new(h.matrix() * d * h.matrix().adjoint()).unwrap()
    }

    #[test]
    fn normal_matrix_orthogonal_columns() {
        // Columns of a DFT-like matrix are mutually orthogonal with
        // squared norm M, so A = M^2 I.
        let m = 4;
        let h = CMat::from_fn(m, 2, |i, j| {
            Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (i * j) as f64 / m as f64)
        });
        let h = RetfMatrix::new(h).unwrap();
        let (a, _) = normal_matrices(&h, &HermitianMatrix::identity(m));
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { (m * m) as f64 } else { 0.0 };
                assert!((a[(i, j)] - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn normal_matrix_single_source() {
        let h = steering_retf(&geom5(), &[17.0], 2000.0).unwrap();
        let psi = psi_from(&h, &[2.5]);
        let (a, b) = normal_matrices(&h, &psi);
        // ||h||^2 = M for unit-modulus steering columns.
        assert!((a[(0, 0)] - 25.0).abs() < 1e-10);
        let hph = (h.matrix().adjoint() * psi.matrix() * h.matrix())[(0, 0)].re;
        assert!((b[0] - hph).abs() < 1e-12);
    }

    #[test]
    fn normal_matrix_matches_entrywise_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = {
            let mut m = CMat::from_fn(5, 3, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            for j in 0..3 {
                m[(0, j)] = Complex64::new(1.0, 0.0);
            }
            RetfMatrix::new(m).unwrap()
        };
        let g = CMat::from_fn(5, 5, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let psi = HermitianMatrix::new(&g * g.adjoint()).unwrap();
        let (a, b) = normal_matrices(&h, &psi);
        for i in 0..3 {
            for j in 0..3 {
                let hi = h.column(i);
                let hj = h.column(j);
                let dot: Complex64 = hi.iter().zip(hj.iter()).map(|(x, y)| x.conj() * y).sum();
                assert!((a[(i, j)] - dot.norm_sqr()).abs() < 1e-12 * dot.norm_sqr().max(1.0));
            }
            let hi = h.column(i);
            let expect = (hi.adjoint() * psi.matrix() * hi)[(0, 0)].re;
            assert!((b[i] - expect).abs() < 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn consistent_system_recovers_exactly() {
        let h = steering_retf(&geom5(), &[-30.0, 0.0, 60.0], 2000.0).unwrap();
        let truth = [1.5, 0.25, 3.0];
        let psi = psi_from(&h, &truth);
        let sol = solve_unconstrained(&h, &psi).unwrap();
        for i in 0..3 {
            assert!((sol.values()[i] - truth[i]).abs() < 1e-9 * truth[i]);
        }
    }

    #[test]
    fn duplicated_columns_are_singular() {
        // At the aliasing frequency the two steering columns coincide.
        let h = steering_retf(&geom5(), &[-30.0, 60.0], 3111.2197).unwrap();
        let psi = psi_from(&h, &[1.0, 1.0]);
        assert!(matches!(
            solve_unconstrained(&h, &psi),
            Err(Error::SingularNormalEquations)
        ));
    }

    /// Stacks the real and imaginary parts of `vec(Psi - H Diag(phi) H^H)`
    /// into one tall real least-squares system and solves its normal
    /// equations; an independent route to the unconstrained minimizer.
    fn dense_ls_oracle(h: &RetfMatrix, psi: &HermitianMatrix) -> DVector<f64> {
        let (m, n) = (h.mics(), h.sources());
        let rows = 2 * m * m;
        let mut design = DMatrix::<f64>::zeros(rows, n);
        let mut target = DVector::<f64>::zeros(rows);
        for c in 0..m {
            for r in 0..m {
                let idx = 2 * (c * m + r);
                target[idx] = psi.matrix()[(r, c)].re;
                target[idx + 1] = psi.matrix()[(r, c)].im;
                for j in 0..n {
                    let outer = h.matrix()[(r, j)] * h.matrix()[(c, j)].conj();
                    design[(idx, j)] = outer.re;
                    design[(idx + 1, j)] = outer.im;
                }
            }
        }
        let ata = design.transpose() * &design;
        let atb = design.transpose() * target;
        ata.lu().solve(&atb).unwrap()
    }

    #[test]
    fn unconstrained_matches_dense_ls_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = SceneConfig {
            geometry: geom5(),
            doas_deg: vec![-30.0, 0.0, 60.0],
            freq_hz: 2000.0,
            laplace_diversity: 1.0,
            late_psd: 0.0,
            seed: 2,
        };
        let scene = synthesize_scene(&cfg, &mut rng).unwrap();
        let h_hat = crate::scene::perturb_retf(&scene.retf_true, -10.0, &mut rng).unwrap();
        let oracle = dense_ls_oracle(&h_hat, &scene.psi_xe).map(|v| v.max(0.0));
        let sol = solve_unconstrained(&h_hat, &scene.psi_xe).unwrap();
        for i in 0..3 {
            assert!(
                (sol.values()[i] - oracle[i]).abs() <= 1e-6 * oracle[i].abs().max(1.0),
                "{} vs {}",
                sol.values()[i],
                oracle[i]
            );
        }
    }

    fn problem(h: &RetfMatrix, psi: &HermitianMatrix, alpha: f64) -> ConventionalProblem {
        ConventionalProblem {
            psi_xe_hat: psi.clone(),
            retf_hat: h.clone(),
            alpha,
            step: StepSize::Auto,
            i_max: 20,
            tol: 1e-8,
        }
    }

    #[test]
    fn non_negative_init_converges_in_one_iteration() {
        let h = steering_retf(&geom5(), &[-30.0, 0.0, 60.0], 2000.0).unwrap();
        let psi = psi_from(&h, &[1.0, 2.0, 0.5]);
        let report = solve_conventional_mp(&problem(&h, &psi, 10.0)).unwrap();
        assert!(report.converged);
        assert_eq!(report.iterations_used, 1);
        for (i, truth) in [1.0, 2.0, 0.5].iter().enumerate() {
            assert!((report.phi_s_hat.values()[i] - truth).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_alpha_equals_unconstrained() {
        let h = steering_retf(&geom5(), &[-30.0, 0.0, 60.0], 2000.0).unwrap();
        let psi = psi_from(&h, &[0.7, 1.3, 2.1]);
        let report = solve_conventional_mp(&problem(&h, &psi, 0.0)).unwrap();
        let unc = solve_unconstrained(&h, &psi).unwrap();
        for i in 0..3 {
            assert!((report.phi_s_hat.values()[i] - unc.values()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn clamped_coordinate_beats_naive_clamp() {
        // An inconsistent instance whose unconstrained solution has a
        // negative coordinate: the projected iteration must zero it and do
        // at least as well as clamping alone.
        let h = steering_retf(&geom5(), &[-10.0, 14.0], 2000.0).unwrap();
        let d = CMat::from_diagonal(&CVec::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(-0.15, 0.0),
        ]));
        let psi =
            HermitianMatrix::new(h.matrix() * d * h.matrix().adjoint()).unwrap();
        let prob = ConventionalProblem { i_max: 200, ..problem(&h, &psi, 0.0) };

        let (a, b) = normal_matrices(&h, &psi);
        let unc = solve_normal(&a, &b).unwrap().0;
        assert!(unc.iter().any(|&v| v < 0.0), "instance must go negative");

        let report = solve_conventional_mp(&prob).unwrap();
        assert!(report.phi_s_hat.values()[1].abs() < 1e-12);

        // Long-run projected gradient oracle with a conservative step.
        let eig = a.clone().symmetric_eigen();
        let mu = 0.5 / eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let mut x = DVector::<f64>::zeros(2);
        for _ in 0..10_000 {
            let grad = &b - &a * &x;
            x = (&x + grad.scale(mu)).map(|v: f64| v.max(0.0));
        }
        for i in 0..2 {
            assert!((report.phi_s_hat.values()[i] - x[i]).abs() < 1e-6);
        }

        let naive = unc.map(|v| v.max(0.0));
        assert!(report.final_objective <= objective(&prob, &naive) + 1e-12);
    }

    #[test]
    fn objective_is_monotone_with_auto_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let cfg = SceneConfig {
                geometry: geom5(),
                doas_deg: vec![-30.0, 0.0, 60.0],
                freq_hz: 2000.0,
                laplace_diversity: 1.0,
                late_psd: 0.0,
                seed: trial,
            };
            let scene = synthesize_scene(&cfg, &mut rng).unwrap();
            let h_hat = crate::scene::perturb_retf(&scene.retf_true, 0.0, &mut rng).unwrap();
            let prob = problem(&h_hat, &scene.psi_xe, 1000.0);

            let (a0, b0) = normal_matrices(&prob.retf_hat, &prob.psi_xe_hat);
            let a_c = &a0 + DMatrix::from_element(3, 3, prob.alpha);
            let b_c = &b0
                + DVector::from_element(3, prob.alpha * prob.psi_xe_hat.matrix()[(0, 0)].re);
            let eig = a_c.clone().symmetric_eigen();
            let mu = 1.0 / eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));

            let mut phi = solve_normal(&a_c, &b_c).unwrap().0.map(|v| v.max(0.0));
            let mut prev = objective(&prob, &phi);
            for _ in 0..20 {
                let grad = &b_c - &a_c * &phi;
                phi = (&phi + grad.scale(mu)).map(|v: f64| v.max(0.0));
                let now = objective(&prob, &phi);
                assert!(now <= prev + 1e-9 * prev.abs().max(1.0), "objective increased");
                prev = now;
            }
        }
    }

    #[test]
    fn solution_scales_with_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = SceneConfig {
            geometry: geom5(),
            doas_deg: vec![-30.0, 0.0, 60.0],
            freq_hz: 2000.0,
            laplace_diversity: 1.0,
            late_psd: 0.0,
            seed: 4,
        };
        let scene = synthesize_scene(&cfg, &mut rng).unwrap();
        let h_hat = crate::scene::perturb_retf(&scene.retf_true, -5.0, &mut rng).unwrap();
        let sol1 = solve_unconstrained(&h_hat, &scene.psi_xe).unwrap();
        let scaled = HermitianMatrix::new(scene.psi_xe.matrix().scale(3.0)).unwrap();
        let sol2 = solve_unconstrained(&h_hat, &scaled).unwrap();
        for i in 0..3 {
            assert!((sol2.values()[i] - 3.0 * sol1.values()[i]).abs() < 1e-9 * sol2.values()[i].max(1.0));
        }
    }

    #[test]
    fn singular_instance_falls_back_to_pseudo_inverse() {
        let h = steering_retf(&geom5(), &[-30.0, 60.0], 3111.2197).unwrap();
        let psi = psi_from(&h, &[1.0, 0.5]);
        let report = solve_conventional_mp(&problem(&h, &psi, 1000.0)).unwrap();
        assert!(report.init_fallback);
        for v in report.phi_s_hat.values().iter() {
            assert!(v.is_finite() && *v >= 0.0);
        }
    }
}
