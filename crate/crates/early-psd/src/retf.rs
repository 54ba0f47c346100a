//! Recursive RETF re-estimation from the square-root solution, with a
//! per-source power-ratio gate deciding whether a column is updated or the
//! prior is kept.

use crate::types::{EarlySqrt, PsdVector, RetfMatrix};
use crate::{CMat, CVec, Error, RVec, Result};

/// Tuning of the gated update.
#[derive(Debug, Clone)]
pub struct RetfUpdateConfig {
    /// Regularizer pulling updated columns toward the prior; scales with
    /// the dynamic range of the early PSDs.
    pub beta: f64,
    /// Power-ratio threshold in dB below which a source is not updated.
    pub xi_th_db: f64,
    /// Regularization added to the power-ratio denominator (set to the
    /// late-reverberant PSD estimate on acoustic data).
    pub phi_reg: f64,
}

impl Default for RetfUpdateConfig {
    fn default() -> Self {
        Self { beta: 20.0, xi_th_db: -2.0, phi_reg: 0.0 }
    }
}

/// Per-source update decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gate {
    /// Blend data and prior with the given finite regularizer.
    Blend(f64),
    /// Infinite regularizer: keep the prior column exactly.
    Hold,
}

/// One gate per source.
#[derive(Debug, Clone, PartialEq)]
pub struct GateVector(pub Vec<Gate>);

/// Power ratio `xi_n = phi_n / (sum(phi) + phi_reg)`, with `0/0 = 0`.
pub fn power_ratio(phi_s: &PsdVector, phi_reg: f64) -> RVec {
    let den = phi_s.sum() + phi_reg;
    RVec::from_fn(phi_s.len(), |i, _| {
        if den == 0.0 {
            0.0
        } else {
            phi_s.values()[i] / den
        }
    })
}

/// Applies the binary rule: blend when `xi_n >= 10^(xi_th_db / 10)`, hold
/// otherwise. The bound is inclusive.
pub fn gate(xi: &RVec, cfg: &RetfUpdateConfig) -> GateVector {
    let th = 10f64.powf(cfg.xi_th_db / 10.0);
    GateVector(
        xi.iter()
            .map(|&x| if x >= th { Gate::Blend(cfg.beta) } else { Gate::Hold })
            .collect(),
    )
}

/// Posterior RETF: held sources copy the prior column exactly; for updated
/// sources rows `2..M` are the regularized blend
/// `(Y Diag(conj(phi^{1/2})) + H_prior Diag(beta)) Diag(phi_s + beta)^{-1}`
/// with `Y = Psi^{1/2} Omega`. The reference row stays exactly one.
pub fn update_retf(
    prior: &RetfMatrix,
    psi_sqrt: &EarlySqrt,
    omega: &CMat,
    phi_sqrt: &CVec,
    gates: &GateVector,
) -> Result<RetfMatrix> {
    let (m, n) = (prior.mics(), prior.sources());
    if psi_sqrt.mics() != m || psi_sqrt.sources() != n {
        return Err(Error::InvalidInput("square root does not match the prior RETF".into()));
    }
    if omega.nrows() != n || omega.ncols() != n || phi_sqrt.len() != n || gates.0.len() != n {
        return Err(Error::InvalidInput("mismatched update inputs".into()));
    }
    let y = psi_sqrt.matrix() * omega;
    let mut out = prior.matrix().clone();
    for j in 0..n {
        let beta = match gates.0[j] {
            Gate::Hold => continue,
            Gate::Blend(b) => b,
        };
        let phi = phi_sqrt[j].norm_sqr();
        let den = phi + beta;
        if den == 0.0 {
            continue;
        }
        let w = phi_sqrt[j].conj();
        for i in 1..m {
            out[(i, j)] = (y[(i, j)] * w + prior.matrix()[(i, j)] * beta) / den;
        }
    }
    RetfMatrix::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use crate::scene::{steering_retf, ArrayGeometry};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom5() -> ArrayGeometry {
        ArrayGeometry::linear(5, 0.08, 340.0).unwrap()
    }

    fn psd(values: &[f64]) -> PsdVector {
        PsdVector::new(RVec::from_row_slice(values)).unwrap()
    }

    #[test]
    fn power_ratio_basic_cases() {
        let xi = power_ratio(&psd(&[2.0, 0.0, 0.0]), 0.0);
        assert_eq!(xi[0], 1.0);
        assert_eq!(xi[1], 0.0);

        let xi = power_ratio(&psd(&[1.0, 1.0, 1.0]), 0.0);
        for i in 0..3 {
            assert!((xi[i] - 1.0 / 3.0).abs() < 1e-15);
        }

        let xi = power_ratio(&psd(&[1.0, 1.0]), 2.0);
        assert!((xi[0] - 0.25).abs() < 1e-15);
        assert!((xi[1] - 0.25).abs() < 1e-15);

        let xi = power_ratio(&psd(&[0.0, 0.0]), 0.0);
        assert_eq!(xi[0], 0.0);
        assert_eq!(xi[1], 0.0);
    }

    #[test]
    fn power_ratio_sums_to_at_most_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..5.0)).collect();
            let reg = rng.gen_range(0.0..2.0);
            let xi = power_ratio(&psd(&v), reg);
            assert!(xi.iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!(xi.sum() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn gate_threshold_is_inclusive() {
        let cfg = RetfUpdateConfig { beta: 7.0, xi_th_db: 0.0, phi_reg: 0.0 };
        // 10^(0/10) = 1 exactly; a ratio of exactly one must blend.
        let g = gate(&RVec::from_vec(vec![1.0, 0.5]), &cfg);
        assert_eq!(g.0[0], Gate::Blend(7.0));
        assert_eq!(g.0[1], Gate::Hold);
    }

    #[test]
    fn gate_all_zero_holds_everything() {
        let cfg = RetfUpdateConfig::default();
        let g = gate(&RVec::zeros(3), &cfg);
        assert!(g.0.iter().all(|&x| x == Gate::Hold));
    }

    #[test]
    fn gate_matches_minus_two_db_threshold() {
        let cfg = RetfUpdateConfig { beta: 5.0, xi_th_db: -2.0, phi_reg: 0.0 };
        // 10^(-0.2) = 0.631.
        let g = gate(&RVec::from_vec(vec![0.8, 0.5, 0.01]), &cfg);
        assert_eq!(g.0[0], Gate::Blend(5.0));
        assert_eq!(g.0[1], Gate::Hold);
        assert_eq!(g.0[2], Gate::Hold);
    }

    fn exact_inputs(seed: u64) -> (RetfMatrix, EarlySqrt, CMat, CVec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = steering_retf(&geom5(), &[-30.0, 0.0, 60.0], 2000.0).unwrap();
        let phi_sqrt = CVec::from_fn(3, |_, _| {
            Complex64::new(rng.gen_range(0.4..1.6), rng.gen_range(-0.8..0.8))
        });
        let q = CMat::from_fn(3, 3, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
        .qr()
        .q();
        let mut m = h.matrix().clone();
        for j in 0..3 {
            let w = phi_sqrt[j];
            for i in 0..5 {
                m[(i, j)] *= w;
            }
        }
        let sq = EarlySqrt::new(m * q.adjoint()).unwrap();
        (h, sq, q, phi_sqrt)
    }

    #[test]
    fn all_hold_returns_prior_exactly() {
        let (h, sq, q, phi_sqrt) = exact_inputs(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = crate::scene::perturb_retf(&h, 0.0, &mut rng).unwrap();
        let gates = GateVector(vec![Gate::Hold; 3]);
        let post = update_retf(&prior, &sq, &q, &phi_sqrt, &gates).unwrap();
        assert_eq!(post.matrix(), prior.matrix());
    }

    #[test]
    fn vanishing_beta_recovers_data_implied_retf() {
        let (h, sq, q, phi_sqrt) = exact_inputs(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prior = crate::scene::perturb_retf(&h, 0.0, &mut rng).unwrap();
        let gates = GateVector(vec![Gate::Blend(1e-12); 3]);
        let post = update_retf(&prior, &sq, &q, &phi_sqrt, &gates).unwrap();
        for j in 0..3 {
            for i in 0..5 {
                assert!((post.matrix()[(i, j)] - h.matrix()[(i, j)]).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn beta_equal_to_psd_gives_midpoint() {
        let (h, sq, q, phi_sqrt) = exact_inputs(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let prior = crate::scene::perturb_retf(&h, 0.0, &mut rng).unwrap();
        let phi0 = phi_sqrt[0].norm_sqr();
        let gates = GateVector(vec![Gate::Blend(phi0), Gate::Hold, Gate::Hold]);
        let post = update_retf(&prior, &sq, &q, &phi_sqrt, &gates).unwrap();
        // Exact inputs: the data-implied column equals the true one, so the
        // posterior is the midpoint of prior and truth on rows 2..M.
        for i in 1..5 {
            let mid = (prior.matrix()[(i, 0)] + h.matrix()[(i, 0)]) * 0.5;
            assert!((post.matrix()[(i, 0)] - mid).norm() < 1e-10);
        }
    }

    #[test]
    fn first_row_always_ones() {
        let (h, sq, q, phi_sqrt) = exact_inputs(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prior = crate::scene::perturb_retf(&h, 2.0, &mut rng).unwrap();
        let gates = GateVector(vec![Gate::Blend(0.3), Gate::Hold, Gate::Blend(5.0)]);
        let post = update_retf(&prior, &sq, &q, &phi_sqrt, &gates).unwrap();
        for j in 0..3 {
            assert_eq!(post.matrix()[(0, j)], Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn larger_beta_moves_less_from_prior() {
        let (h, sq, q, phi_sqrt) = exact_inputs(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let prior = crate::scene::perturb_retf(&h, 0.0, &mut rng).unwrap();
        let mut last_dist = f64::INFINITY;
        for beta in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let gates = GateVector(vec![Gate::Blend(beta); 3]);
            let post = update_retf(&prior, &sq, &q, &phi_sqrt, &gates).unwrap();
            let dist = crate::linalg::fro_norm(&(post.matrix() - prior.matrix()));
            assert!(dist <= last_dist + 1e-12, "distance must not grow with beta");
            last_dist = dist;
        }
    }
}
