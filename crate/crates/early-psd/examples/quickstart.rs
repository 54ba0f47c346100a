//! Minimal end-to-end use of the library on one exact model scene.

use early_psd::conventional::solve_unconstrained;
use early_psd::procrustes::{solve_square_root_mp, Init, SquareRootProblem};
use early_psd::scene::{perturb_retf, synthesize_scene, ArrayGeometry, SceneConfig};
use early_psd::subspace::estimate_from_exact;
use rand::SeedableRng;

fn main() -> Result<(), early_psd::Error> {
    let cfg = SceneConfig {
        geometry: ArrayGeometry::linear(5, 0.08, 340.0)?,
        doas_deg: vec![-30.0, 0.0, 60.0],
        freq_hz: 2000.0,
        laplace_diversity: 1.0,
        late_psd: 1.0,
        seed: 7,
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let scene = synthesize_scene(&cfg, &mut rng)?;
    let retf_hat = perturb_retf(&scene.retf_true, -10.0, &mut rng)?;

    // Rank-N early matrix and square root from the GEVD of (Psi_x, Gamma).
    let est = estimate_from_exact(&scene.psi_x, &scene.gamma, 3, 1e-10)?;

    // Square-root solve, seeded with the closed-form conventional estimate.
    let seed = solve_unconstrained(&retf_hat, &est.psi_xe_hat)?;
    let sol = solve_square_root_mp(&SquareRootProblem {
        psi_sqrt_hat: est.psi_xe_sqrt_hat,
        retf_hat,
        alpha: 1e3,
        i_max: 20,
        tol: 1e-8,
        init: Init::ConventionalSeed(seed),
    })?;
    println!("true early PSDs:      {:?}", scene.phi_s_true.values().as_slice());
    println!("estimated early PSDs: {:?}", sol.phi_s_hat.values().as_slice());
    Ok(())
}
