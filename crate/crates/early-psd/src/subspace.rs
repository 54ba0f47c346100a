//! Per-bin recursive correlation averaging, GEVD tracking with
//! frame-to-frame eigenpair association, eigenvalue desmoothing and rank-N
//! early-matrix extraction.
//!
//! Smoothing is a first-order recursion with forgetting factor `zeta`;
//! desmoothing applies the exact inverse filter to the generalized
//! eigenvalues, which requires the eigenpairs of consecutive frames to be
//! associated. Association maximizes `|diag(P_prev^H Gamma P_new)|`, relying
//! on the decomposition being slowly time-varying for `zeta` close to one.

use num_complex::Complex64;

use crate::linalg::{gevd, GevdPair, HermitianMatrix, DEFAULT_JITTER};
use crate::types::EarlySqrt;
use crate::{CMat, Error, RVec, Result};

/// How eigenpairs of consecutive frames are matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignmentMode {
    /// Greedy matching on the association matrix; adequate when the
    /// decomposition varies slowly between frames.
    #[default]
    Greedy,
    /// Exhaustive search over permutations, maximizing the summed
    /// association magnitude. Only viable for small channel counts.
    Optimal,
}

/// Per-bin smoothing and tracking state.
#[derive(Debug, Clone)]
pub struct SmootherState {
    psi_sm: HermitianMatrix,
    lambda_sm_prev: Option<RVec>,
    p_prev: Option<CMat>,
    zeta: f64,
    frame_count: usize,
    jitter: f64,
    assignment: AssignmentMode,
}

/// Rank-N early correlation estimate extracted from the tracked GEVD.
#[derive(Debug, Clone)]
pub struct EarlyEstimate {
    pub psi_xe_hat: HermitianMatrix,
    pub psi_xe_sqrt_hat: EarlySqrt,
    /// Estimated late reverberant PSD (mean of the trailing eigenvalues).
    pub phi_xl_hat: f64,
    /// Desmoothed generalized eigenvalues, descending-paired with the
    /// eigenvectors they were extracted from.
    pub lambda_x_hat: RVec,
}

impl SmootherState {
    /// Fresh state for `dim` channels with forgetting factor `zeta` in
    /// `(0, 1)`; `zeta = 0` is accepted and makes smoothing a pass-through.
    pub fn new(dim: usize, zeta: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("dimension must be positive".into()));
        }
        if !(zeta.is_finite() && (0.0..1.0).contains(&zeta)) {
            return Err(Error::InvalidInput("zeta must lie in [0, 1)".into()));
        }
        Ok(Self {
            psi_sm: HermitianMatrix::new(CMat::zeros(dim, dim))?,
            lambda_sm_prev: None,
            p_prev: None,
            zeta,
            frame_count: 0,
            jitter: DEFAULT_JITTER,
            assignment: AssignmentMode::Greedy,
        })
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_assignment(mut self, mode: AssignmentMode) -> Self {
        self.assignment = mode;
        self
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn smoothed(&self) -> &HermitianMatrix {
        &self.psi_sm
    }

    /// Smoothed eigenvalues of the previous frame, in tracked order.
    pub fn lambda_sm_prev(&self) -> Option<&RVec> {
        self.lambda_sm_prev.as_ref()
    }
}

/// Folds one instantaneous correlation matrix into the recursive average:
/// `psi_sm <- zeta * psi_sm + (1 - zeta) * psi_inst`.
pub fn update_smooth(state: &mut SmootherState, psi_inst: &HermitianMatrix) -> Result<()> {
    if psi_inst.dim() != state.psi_sm.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            psi_inst.dim(),
            state.psi_sm.dim()
        )));
    }
    let z = state.zeta;
    state.psi_sm = HermitianMatrix::new(
        state.psi_sm.matrix().scale(z) + psi_inst.matrix().scale(1.0 - z),
    )?;
    state.frame_count += 1;
    Ok(())
}

/// GEVD of the smoothed estimate against `gamma`, with columns permuted and
/// phase-aligned to follow the previous frame's eigenvectors. Returns the
/// sorted eigenvector matrix and the matching smoothed eigenvalues, and
/// updates the state's tracking memory.
pub fn track_gevd(state: &mut SmootherState, gamma: &HermitianMatrix) -> Result<(CMat, RVec)> {
    if state.frame_count == 0 {
        return Err(Error::InvalidInput("no frames folded into the smoother yet".into()));
    }
    let pair = gevd(&state.psi_sm, gamma, state.jitter)?;
    let (p, lambda) = match &state.p_prev {
        None => (pair.vectors, pair.values),
        Some(prev) => associate(prev, &pair, gamma, state.assignment),
    };
    state.p_prev = Some(p.clone());
    state.lambda_sm_prev = Some(lambda.clone());
    Ok((p, lambda))
}

/// Permutes and phase-aligns the new eigenpairs so that
/// `P_prev^H Gamma P_new` is close to the identity.
fn associate(
    p_prev: &CMat,
    pair: &GevdPair,
    gamma: &HermitianMatrix,
    mode: AssignmentMode,
) -> (CMat, RVec) {
    let m = p_prev.ncols();
    let assoc = p_prev.adjoint() * gamma.matrix() * &pair.vectors;

    let perm = match mode {
        AssignmentMode::Greedy => greedy_assignment(&assoc),
        AssignmentMode::Optimal => optimal_assignment(&assoc),
    };

    // If the match quality collapsed (severe non-stationarity), the pairing
    // is meaningless; fall back to plain descending order.
    let weak = perm
        .iter()
        .enumerate()
        .any(|(slot, &col)| assoc[(slot, col)].norm() < 0.5);
    if weak {
        log::warn!("ambiguous eigenpair association; falling back to descending order");
        return (pair.vectors.clone(), pair.values.clone());
    }

    let mut p = CMat::zeros(pair.vectors.nrows(), m);
    let mut lambda = RVec::zeros(m);
    for (slot, &col) in perm.iter().enumerate() {
        let d = assoc[(slot, col)];
        // Per-column phase is free in the GEVD; rotate so the association
        // diagonal becomes real positive.
        let phase = d.conj() / d.norm();
        let aligned = pair.vectors.column(col) * Complex64::new(phase.re, phase.im);
        p.set_column(slot, &aligned);
        lambda[slot] = pair.values[col];
    }
    (p, lambda)
}

/// Greedy maximum-magnitude assignment: repeatedly picks the largest
/// remaining `|assoc|` entry. Each column is used exactly once.
fn greedy_assignment(assoc: &CMat) -> Vec<usize> {
    let m = assoc.nrows();
    let mut slot_taken = vec![false; m];
    let mut col_taken = vec![false; m];
    let mut perm = vec![0usize; m];
    for _ in 0..m {
        let mut best = (0usize, 0usize, -1.0f64);
        for i in 0..m {
            if slot_taken[i] {
                continue;
            }
            for j in 0..m {
                if col_taken[j] {
                    continue;
                }
                let v = assoc[(i, j)].norm();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        perm[best.0] = best.1;
        slot_taken[best.0] = true;
        col_taken[best.1] = true;
    }
    perm
}

/// Exhaustive assignment maximizing the summed association magnitude.
fn optimal_assignment(assoc: &CMat) -> Vec<usize> {
    let m = assoc.nrows();
    let mut cols: Vec<usize> = (0..m).collect();
    let mut best_perm = cols.clone();
    let mut best_score = f64::NEG_INFINITY;
    permute_heap(&mut cols, &mut |perm: &[usize]| {
        let score: f64 = perm.iter().enumerate().map(|(i, &j)| assoc[(i, j)].norm()).sum();
        if score > best_score {
            best_score = score;
            best_perm = perm.to_vec();
        }
    });
    best_perm
}

fn permute_heap(items: &mut [usize], visit: &mut impl FnMut(&[usize])) {
    let n = items.len();
    if n <= 1 {
        visit(items);
        return;
    }
    for i in 0..n {
        permute_heap_inner(items, n - 1, visit);
        if n.is_multiple_of(2) {
            items.swap(i, n - 1);
        } else {
            items.swap(0, n - 1);
        }
    }
}

fn permute_heap_inner(items: &mut [usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == 0 {
        visit(items);
        return;
    }
    for i in 0..=k {
        permute_heap_inner(items, k - 1, visit);
        if k.is_multiple_of(2) {
            items.swap(0, k);
        } else {
            items.swap(i, k);
        }
    }
}

/// Inverts the first-order smoothing filter element-wise and thresholds at
/// zero: `lambda_hat = max((lambda_now - zeta * lambda_prev) / (1 - zeta), 0)`.
///
/// The two vectors must be paired, i.e. sorted in the same eigenvector
/// order.
pub fn desmooth(lambda_now: &RVec, lambda_prev: &RVec, zeta: f64) -> RVec {
    assert_eq!(lambda_now.len(), lambda_prev.len(), "paired vectors required");
    RVec::from_fn(lambda_now.len(), |i, _| {
        ((lambda_now[i] - zeta * lambda_prev[i]) / (1.0 - zeta)).max(0.0)
    })
}

/// Splits the desmoothed eigenvalues into the rank-N early part and the late
/// reverberant PSD, and reassembles the early correlation matrix and its
/// square root:
///
/// - `phi_xl_hat` is the mean of the trailing `M - N` eigenvalues,
/// - the leading eigenvalues are reduced by `phi_xl_hat` and clamped at zero,
/// - `psi_xe_sqrt_hat = Gamma P_{:,1:N} Diag(sqrt(lambda_xe))` with the real
///   non-negative root.
pub fn extract_early(
    p: &CMat,
    lambda_hat: &RVec,
    gamma: &HermitianMatrix,
    n_sources: usize,
) -> Result<EarlyEstimate> {
    let m = p.ncols();
    if n_sources >= m {
        return Err(Error::InvalidInput("need N < M to separate the late PSD".into()));
    }
    if lambda_hat.len() != m || p.nrows() != m || gamma.dim() != m {
        return Err(Error::InvalidInput("mismatched GEVD dimensions".into()));
    }
    let phi_xl_hat = lambda_hat.rows(n_sources, m - n_sources).sum() / (m - n_sources) as f64;
    let lambda_xe = RVec::from_fn(n_sources, |i, _| (lambda_hat[i] - phi_xl_hat).max(0.0));

    let mut sqrt = gamma.matrix() * p.columns(0, n_sources);
    for j in 0..n_sources {
        let root = lambda_xe[j].sqrt();
        for i in 0..m {
            sqrt[(i, j)] *= root;
        }
    }
    let sqrt = EarlySqrt::new(sqrt)?;
    let psi_xe_hat = HermitianMatrix::new(sqrt.outer())?;
    Ok(EarlyEstimate {
        psi_xe_hat,
        psi_xe_sqrt_hat: sqrt,
        phi_xl_hat,
        lambda_x_hat: lambda_hat.clone(),
    })
}

/// One-shot estimate from an exact correlation matrix: GEVD of
/// `(psi_x, gamma)` followed by [`extract_early`]. This is the path used on
/// model-based data, where no smoothing is involved.
pub fn estimate_from_exact(
    psi_x: &HermitianMatrix,
    gamma: &HermitianMatrix,
    n_sources: usize,
    jitter: f64,
) -> Result<EarlyEstimate> {
    let pair = gevd(psi_x, gamma, jitter)?;
    extract_early(&pair.vectors, &pair.values, gamma, n_sources)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fro_norm;
    use crate::scene::{diffuse_coherence, synthesize_scene, ArrayGeometry, SceneConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom5() -> ArrayGeometry {
        ArrayGeometry::linear(5, 0.08, 340.0).unwrap()
    }

    fn random_hermitian(dim: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix {
        let m = CMat::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        HermitianMatrix::new(m).unwrap()
    }

    #[test]
    fn zero_forgetting_is_passthrough() {
        let mut st = SmootherState::new(3, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_hermitian(3, &mut rng);
        update_smooth(&mut st, &a).unwrap();
        assert!(fro_norm(&(st.smoothed().matrix() - a.matrix())) < 1e-15);
    }

    #[test]
    fn constant_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_hermitian(4, &mut rng);
        let mut st = SmootherState::new(4, 0.8).unwrap();
        // Start the recursion exactly at the fixed point.
        st.psi_sm = a.clone();
        for _ in 0..10 {
            update_smooth(&mut st, &a).unwrap();
        }
        assert!(fro_norm(&(st.smoothed().matrix() - a.matrix())) < 1e-12);
    }

    #[test]
    fn two_step_recursion_unrolls() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_hermitian(3, &mut rng);
        let b = random_hermitian(3, &mut rng);
        let mut st = SmootherState::new(3, 0.5).unwrap();
        update_smooth(&mut st, &a).unwrap();
        update_smooth(&mut st, &b).unwrap();
        let expect = a.matrix().scale(0.25) + b.matrix().scale(0.5);
        assert!(fro_norm(&(st.smoothed().matrix() - expect)) < 1e-14);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut st = SmootherState::new(3, 0.5).unwrap();
        let a = HermitianMatrix::identity(4);
        assert!(matches!(update_smooth(&mut st, &a), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn first_frame_uses_descending_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gamma = diffuse_coherence(&geom5(), 2000.0).unwrap();
        let g = CMat::from_fn(5, 5, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let psi = HermitianMatrix::new(&g * g.adjoint()).unwrap();
        let mut st = SmootherState::new(5, 0.0).unwrap();
        update_smooth(&mut st, &psi).unwrap();
        let (_, lambda) = track_gevd(&mut st, &gamma).unwrap();
        for i in 1..5 {
            assert!(lambda[i - 1] >= lambda[i] - 1e-12);
        }
    }

    #[test]
    fn repeated_frame_associates_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gamma = diffuse_coherence(&geom5(), 2000.0).unwrap();
        let g = CMat::from_fn(5, 5, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let psi = HermitianMatrix::new(&g * g.adjoint()).unwrap();
        let mut st = SmootherState::new(5, 0.0).unwrap();

        update_smooth(&mut st, &psi).unwrap();
        let (p1, l1) = track_gevd(&mut st, &gamma).unwrap();
        update_smooth(&mut st, &psi).unwrap();
        let (p2, l2) = track_gevd(&mut st, &gamma).unwrap();

        assert!(fro_norm(&(&p1 - &p2)) < 1e-8);
        for i in 0..5 {
            assert!((l1[i] - l2[i]).abs() < 1e-10);
        }
        let assoc = p1.adjoint() * gamma.matrix() * &p2;
        for i in 0..5 {
            assert!((assoc[(i, i)].norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn association_follows_eigenvectors_not_magnitudes() {
        // Build two frames sharing the eigenvector basis but with the two
        // leading eigenvalues swapped in magnitude. P^{-1} = P^H Gamma, so
        // Psi = Gamma P Diag(lambda) P^H Gamma.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let gamma = diffuse_coherence(&geom5(), 2000.0).unwrap();
        let g = CMat::from_fn(5, 5, |_, _| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let psi0 = HermitianMatrix::new(&g * g.adjoint() + CMat::identity(5, 5)).unwrap();
        let pair = crate::linalg::gevd(&psi0, &gamma, 0.0).unwrap();
        let p = pair.vectors;

        let build = |lambda: &[f64]| {
            let l = CMat::from_diagonal(&crate::CVec::from_iterator(
                5,
                lambda.iter().map(|&v| Complex64::new(v, 0.0)),
            ));
            HermitianMatrix::new(gamma.matrix() * &p * l * p.adjoint() * gamma.matrix()).unwrap()
        };

        let mut st = SmootherState::new(5, 0.0).unwrap();
        update_smooth(&mut st, &build(&[3.0, 2.0, 1.0, 0.5, 0.25])).unwrap();
        let (_, l1) = track_gevd(&mut st, &gamma).unwrap();
        assert!((l1[0] - 3.0).abs() < 1e-8 && (l1[1] - 2.0).abs() < 1e-8);

        // Swap the magnitudes of the first two modes; tracked order must
        // keep each eigenvector's slot, so slot 0 now carries value 2.
        update_smooth(&mut st, &build(&[2.0, 3.0, 1.0, 0.5, 0.25])).unwrap();
        let (_, l2) = track_gevd(&mut st, &gamma).unwrap();
        assert!((l2[0] - 2.0).abs() < 1e-8, "slot 0 kept its eigenvector");
        assert!((l2[1] - 3.0).abs() < 1e-8, "slot 1 kept its eigenvector");
    }

    #[test]
    fn desmooth_inverts_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let zeta = 0.9;
        let mut smoothed_prev = RVec::from_fn(4, |_, _| rng.gen_range(0.5..2.0));
        let mut prev_raw: Option<RVec> = None;
        for _ in 0..20 {
            let raw = RVec::from_fn(4, |_, _| rng.gen_range(0.5..2.0));
            let smoothed_now = &smoothed_prev * zeta + &raw * (1.0 - zeta);
            let rec = desmooth(&smoothed_now, &smoothed_prev, zeta);
            for i in 0..4 {
                assert!((rec[i] - raw[i]).abs() < 1e-10);
            }
            smoothed_prev = smoothed_now;
            prev_raw = Some(raw);
        }
        assert!(prev_raw.is_some());
    }

    #[test]
    fn desmooth_constant_sequence_is_identity() {
        let lam = RVec::from_vec(vec![1.0, 2.0, 3.0]);
        let rec = desmooth(&lam, &lam, 0.9);
        for i in 0..3 {
            assert!((rec[i] - lam[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn desmooth_thresholds_negative_estimates() {
        let now = RVec::from_vec(vec![1.0]);
        let prev = RVec::from_vec(vec![20.0]);
        let rec = desmooth(&now, &prev, 0.9);
        // (1 - 18) / 0.1 = -170, clamped to zero.
        assert_eq!(rec[0], 0.0);
    }

    fn model_scene(late: f64, seed: u64) -> crate::scene::CorrelationScene {
        let cfg = SceneConfig {
            geometry: geom5(),
            doas_deg: vec![-30.0, 0.0, 60.0],
            freq_hz: 2000.0,
            laplace_diversity: 1.0,
            late_psd: late,
            seed,
        };
        synthesize_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn exact_scene_is_recovered() {
        let scene = model_scene(0.8, 8);
        let est = estimate_from_exact(&scene.psi_x, &scene.gamma, 3, DEFAULT_JITTER).unwrap();
        let rel = fro_norm(&(est.psi_xe_hat.matrix() - scene.psi_xe.matrix()))
            / fro_norm(scene.psi_xe.matrix());
        assert!(rel < 1e-8, "early matrix residual {rel}");
        assert!((est.phi_xl_hat - 0.8).abs() <= 1e-8 * 0.8);
        // The square root reproduces the early matrix by construction.
        let rel2 = fro_norm(&(est.psi_xe_sqrt_hat.outer() - est.psi_xe_hat.matrix()))
            / fro_norm(est.psi_xe_hat.matrix());
        assert!(rel2 < 1e-10);
    }

    #[test]
    fn pure_late_field_yields_zero_early_part() {
        let gamma = diffuse_coherence(&geom5(), 2000.0).unwrap();
        let psi_x = HermitianMatrix::new(gamma.matrix().scale(0.5)).unwrap();
        let est = estimate_from_exact(&psi_x, &gamma, 3, DEFAULT_JITTER).unwrap();
        assert!(fro_norm(est.psi_xe_hat.matrix()) < 1e-10);
        assert!((est.phi_xl_hat - 0.5).abs() < 1e-10);
    }

    #[test]
    fn single_source_sqrt_recovers_retf() {
        let cfg = SceneConfig {
            geometry: geom5(),
            doas_deg: vec![40.0],
            freq_hz: 2000.0,
            laplace_diversity: 1.0,
            late_psd: 0.0,
            seed: 9,
        };
        let scene = synthesize_scene(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let est = estimate_from_exact(&scene.psi_x, &scene.gamma, 1, DEFAULT_JITTER).unwrap();
        let col = est.psi_xe_sqrt_hat.matrix().column(0).clone_owned();
        let h = col.clone() / col[0];
        for i in 0..5 {
            assert!((h[i] - scene.retf_true.matrix()[(i, 0)]).norm() < 1e-8);
        }
    }

    #[test]
    fn extraction_is_degree_one_homogeneous() {
        let scene = model_scene(0.6, 10);
        let est1 = estimate_from_exact(&scene.psi_x, &scene.gamma, 3, DEFAULT_JITTER).unwrap();
        let scaled = HermitianMatrix::new(scene.psi_x.matrix().scale(4.0)).unwrap();
        let est2 = estimate_from_exact(&scaled, &scene.gamma, 3, DEFAULT_JITTER).unwrap();
        assert!((est2.phi_xl_hat - 4.0 * est1.phi_xl_hat).abs() <= 1e-8 * est2.phi_xl_hat.abs());
        let rel = fro_norm(&(est2.psi_xe_hat.matrix() - est1.psi_xe_hat.matrix().scale(4.0)))
            / fro_norm(est2.psi_xe_hat.matrix());
        assert!(rel < 1e-8);
        let rel_sqrt = fro_norm(
            &(est2.psi_xe_sqrt_hat.matrix() - est1.psi_xe_sqrt_hat.matrix().scale(2.0)),
        ) / fro_norm(est2.psi_xe_sqrt_hat.matrix());
        assert!(rel_sqrt < 1e-8);
    }

    #[test]
    fn association_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let assoc = CMat::from_fn(5, 5, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            for perm in [greedy_assignment(&assoc), optimal_assignment(&assoc)] {
                let mut seen = [false; 5];
                for &c in &perm {
                    assert!(!seen[c], "column used twice");
                    seen[c] = true;
                }
            }
        }
    }
}
