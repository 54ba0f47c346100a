//! Model-based experiments: correlation matrices are generated exactly in
//! the transform domain, the subspace front end recovers the early matrix
//! and its square root, and both solvers run against a perturbed RETF
//! estimate. Realizations are independent work items with their own RNG
//! streams, so results do not depend on thread count.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use early_psd::conventional::{solve_conventional_mp, solve_unconstrained, ConventionalProblem, StepSize};
use early_psd::metrics::{psd_error, retf_error};
use early_psd::procrustes::{
    procrustes_step, psd_sqrt_step, solve_square_root_mp, Init, SquareRootProblem,
};
use early_psd::retf::{gate, power_ratio, update_retf, RetfUpdateConfig};
use early_psd::scene::{
    perturb_retf, steering_retf, synthesize_scene, ArrayGeometry, SceneConfig,
};
use early_psd::subspace::{estimate_from_exact, EarlyEstimate};
use early_psd::types::{PsdVector, RetfMatrix};
use early_psd::CVec;

use crate::config::{
    ExperimentConfig, InitKind, SceneSection, SolverSection,
};
use crate::rows::{stat_rows, ResultRow};
use crate::{stream_rng, CliError};

pub(crate) fn geometry(scene: &SceneSection) -> Result<ArrayGeometry, CliError> {
    Ok(ArrayGeometry::linear(scene.mics, scene.spacing_m, scene.speed_of_sound_mps)?)
}

fn scene_config(
    geom: &ArrayGeometry,
    scene: &SceneSection,
    freq_hz: f64,
    seed: u64,
) -> SceneConfig {
    SceneConfig {
        geometry: geom.clone(),
        doas_deg: scene.doas_deg.clone(),
        freq_hz,
        laplace_diversity: scene.laplace_diversity,
        late_psd: scene.late_psd,
        seed,
    }
}

/// Per-realization outcome of running both solvers on one scene.
struct Outcome {
    eps_conv_db: f64,
    eps_sqrt_db: f64,
    conv_fallback: bool,
    sqrt_seed_fallback: bool,
    sqrt_non_unique: bool,
}

fn sqrt_init(
    kind: InitKind,
    retf_hat: &RetfMatrix,
    est: &EarlyEstimate,
) -> (Init, bool) {
    match kind {
        InitKind::SumConstraint => (Init::SumConstraint, false),
        InitKind::ConventionalSeed => match solve_unconstrained(retf_hat, &est.psi_xe_hat) {
            Ok(seed) => (Init::ConventionalSeed(seed), false),
            // Singular normal equations (aliasing): fall back to the
            // sum-constraint init and record it.
            Err(_) => (Init::SumConstraint, true),
        },
    }
}

fn run_both_solvers(
    est: &EarlyEstimate,
    retf_hat: &RetfMatrix,
    phi_true: &PsdVector,
    solver: &SolverSection,
    alpha: f64,
) -> Result<Outcome, CliError> {
    let conv = solve_conventional_mp(&ConventionalProblem {
        psi_xe_hat: est.psi_xe_hat.clone(),
        retf_hat: retf_hat.clone(),
        alpha,
        step: StepSize::Auto,
        i_max: solver.i_max,
        tol: solver.tol,
    })?;
    let eps_conv_db = psd_error(&conv.phi_s_hat, phi_true)?;

    let (init, seed_fallback) = sqrt_init(solver.init, retf_hat, est);
    let sol = solve_square_root_mp(&SquareRootProblem {
        psi_sqrt_hat: est.psi_xe_sqrt_hat.clone(),
        retf_hat: retf_hat.clone(),
        alpha,
        i_max: solver.i_max,
        tol: solver.tol,
        init,
    })?;
    let eps_sqrt_db = psd_error(&sol.phi_s_hat, phi_true)?;

    Ok(Outcome {
        eps_conv_db,
        eps_sqrt_db,
        conv_fallback: conv.init_fallback,
        sqrt_seed_fallback: seed_fallback,
        sqrt_non_unique: sol.non_unique,
    })
}

fn one_realization(
    cfg: &ExperimentConfig,
    geom: &ArrayGeometry,
    freq_hz: f64,
    eps_h_db: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Outcome, CliError> {
    let sc = scene_config(geom, &cfg.scene, freq_hz, cfg.seed);
    let scene = synthesize_scene(&sc, rng)?;
    let retf_hat = perturb_retf(&scene.retf_true, eps_h_db, rng)?;
    let est = estimate_from_exact(
        &scene.psi_x,
        &scene.gamma,
        cfg.scene.doas_deg.len(),
        cfg.solver.jitter,
    )?;
    run_both_solvers(&est, &retf_hat, &scene.phi_s_true, &cfg.solver, alpha)
}

fn count_row(template: &ResultRow, metric: &str, count: usize) -> ResultRow {
    let mut row = template.clone();
    row.statistic = "count";
    row.metric = metric.to_string();
    row.value_db = count as f64;
    row
}

fn grid_rows(
    template: &ResultRow,
    outcomes: &[Outcome],
) -> Vec<ResultRow> {
    let conv: Vec<f64> = outcomes.iter().map(|o| o.eps_conv_db).collect();
    let sqrt: Vec<f64> = outcomes.iter().map(|o| o.eps_sqrt_db).collect();
    let mut rows = stat_rows(template, "eps_phis_conv_db", &conv);
    rows.extend(stat_rows(template, "eps_phis_sqrt_db", &sqrt));
    rows.push(count_row(
        template,
        "conv_init_fallback",
        outcomes.iter().filter(|o| o.conv_fallback).count(),
    ));
    rows.push(count_row(
        template,
        "sqrt_seed_fallback",
        outcomes.iter().filter(|o| o.sqrt_seed_fallback).count(),
    ));
    rows.push(count_row(
        template,
        "sqrt_non_unique",
        outcomes.iter().filter(|o| o.sqrt_non_unique).count(),
    ));
    rows
}

/// PSD error of both solvers versus the RETF perturbation level.
pub fn run_eps_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let section = cfg.eps_sweep.as_ref().expect("validated");
    let geom = geometry(&cfg.scene)?;
    let mut rows = Vec::new();
    for (gi, &eps) in section.eps_h_db.iter().enumerate() {
        let outcomes: Vec<Outcome> = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(cfg.seed, ((gi as u64) << 32) | r as u64);
                one_realization(cfg, &geom, cfg.scene.freq_hz, eps, cfg.solver.alpha, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let mut template = ResultRow::new("eps-sweep", "median", "", 0.0);
        template.eps_h_db = Some(eps);
        template.alpha = Some(cfg.solver.alpha);
        template.freq_hz = Some(cfg.scene.freq_hz);
        rows.extend(grid_rows(&template, &outcomes));
    }
    Ok(rows)
}

/// PSD error of both solvers versus the soft-constraint penalty.
pub fn run_alpha_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let section = cfg.alpha_sweep.as_ref().expect("validated");
    let geom = geometry(&cfg.scene)?;
    let mut rows = Vec::new();
    for (gi, &alpha) in section.alphas.iter().enumerate() {
        let outcomes: Vec<Outcome> = (0..cfg.realizations)
            .into_par_iter()
            .map(|r| {
                let mut rng = stream_rng(cfg.seed, ((gi as u64) << 32) | r as u64);
                one_realization(cfg, &geom, cfg.scene.freq_hz, section.eps_h_db, alpha, &mut rng)
            })
            .collect::<Result<_, _>>()?;
        let mut template = ResultRow::new("alpha-sweep", "median", "", 0.0);
        template.eps_h_db = Some(section.eps_h_db);
        template.alpha = Some(alpha);
        template.freq_hz = Some(cfg.scene.freq_hz);
        rows.extend(grid_rows(&template, &outcomes));
    }
    Ok(rows)
}

/// Frequency grid for the sweep, inclusive of the stop point up to rounding.
pub fn freq_grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).filter(|&f| f <= stop + 1e-9).collect()
}

/// PSD error of both solvers versus frequency, plus the deterministic
/// RETF-collinearity diagnostic `10 log10(|h_n^H h_n'| / M)` per pair.
pub fn run_freq_sweep(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let section = cfg.freq_sweep.as_ref().expect("validated");
    let geom = geometry(&cfg.scene)?;
    let freqs = freq_grid(section.freq_start_hz, section.freq_stop_hz, section.freq_step_hz);
    let n_eps = section.eps_h_db.len();
    let mut rows = Vec::new();
    for (fi, &freq) in freqs.iter().enumerate() {
        // Collinearity of the true steering columns at this frequency.
        let h = steering_retf(&geom, &cfg.scene.doas_deg, freq)?;
        let m = h.mics() as f64;
        let mut max_db = f64::NEG_INFINITY;
        for i in 0..h.sources() {
            for j in i + 1..h.sources() {
                let dot: num_complex::Complex64 = h
                    .column(i)
                    .iter()
                    .zip(h.column(j).iter())
                    .map(|(a, b)| a.conj() * b)
                    .sum();
                let val = 10.0 * (dot.norm() / m).log10();
                max_db = max_db.max(val);
                let mut row = ResultRow::new(
                    "freq-sweep",
                    "median",
                    format!("collinearity_{}{}_db", i + 1, j + 1),
                    val,
                );
                row.freq_hz = Some(freq);
                rows.push(row);
            }
        }
        let mut row = ResultRow::new("freq-sweep", "median", "collinearity_max_db", max_db);
        row.freq_hz = Some(freq);
        rows.push(row);

        for (ei, &eps) in section.eps_h_db.iter().enumerate() {
            let outcomes: Vec<Outcome> = (0..cfg.realizations)
                .into_par_iter()
                .map(|r| {
                    let stream = (((fi * n_eps + ei) as u64) << 32) | r as u64;
                    let mut rng = stream_rng(cfg.seed, stream);
                    one_realization(cfg, &geom, freq, eps, cfg.solver.alpha, &mut rng)
                })
                .collect::<Result<_, _>>()?;
            let mut template = ResultRow::new("freq-sweep", "median", "", 0.0);
            template.eps_h_db = Some(eps);
            template.alpha = Some(cfg.solver.alpha);
            template.freq_hz = Some(freq);
            rows.extend(grid_rows(&template, &outcomes));
        }
    }
    Ok(rows)
}

/// Per-realization PSD error after each full alternating iteration, for
/// both initializations on the same scene.
pub struct ConvergenceTrace {
    /// Error after iteration `i` (1-based index `i-1`) with the
    /// conventional-estimate seed.
    pub seeded: Vec<f64>,
    /// Same with the sum-constraint init.
    pub summed: Vec<f64>,
}

/// Iteration traces for one RETF error target, one entry per realization.
pub fn convergence_traces(
    cfg: &ExperimentConfig,
    grid_index: usize,
    eps_h_db: f64,
) -> Result<Vec<ConvergenceTrace>, CliError> {
    let geom = geometry(&cfg.scene)?;
    let i_max = cfg.solver.i_max;
    (0..cfg.realizations)
        .into_par_iter()
        .map(|r| -> Result<ConvergenceTrace, CliError> {
            let mut rng = stream_rng(cfg.seed, ((grid_index as u64) << 32) | r as u64);
            let sc = scene_config(&geom, &cfg.scene, cfg.scene.freq_hz, cfg.seed);
            let scene = synthesize_scene(&sc, &mut rng)?;
            let retf_hat = perturb_retf(&scene.retf_true, eps_h_db, &mut rng)?;
            let est = estimate_from_exact(
                &scene.psi_x,
                &scene.gamma,
                cfg.scene.doas_deg.len(),
                cfg.solver.jitter,
            )?;
            let mut trace = ConvergenceTrace {
                seeded: Vec::with_capacity(i_max),
                summed: Vec::with_capacity(i_max),
            };
            for init_kind in [InitKind::ConventionalSeed, InitKind::SumConstraint] {
                let (init, _) = sqrt_init(init_kind, &retf_hat, &est);
                let n = retf_hat.sources();
                let mut phi_sqrt: CVec = match init {
                    Init::SumConstraint => {
                        let level = (est.psi_xe_sqrt_hat.first_row_energy() / n as f64).sqrt();
                        CVec::from_element(n, num_complex::Complex64::new(level, 0.0))
                    }
                    Init::ConventionalSeed(seed) => CVec::from_iterator(
                        n,
                        seed.values()
                            .iter()
                            .map(|&v| num_complex::Complex64::new(v.sqrt(), 0.0)),
                    ),
                };
                let errs = match init_kind {
                    InitKind::ConventionalSeed => &mut trace.seeded,
                    InitKind::SumConstraint => &mut trace.summed,
                };
                for _ in 1..=i_max {
                    let step = procrustes_step(&est.psi_xe_sqrt_hat, &retf_hat, &phi_sqrt)?;
                    phi_sqrt = psd_sqrt_step(
                        &est.psi_xe_sqrt_hat,
                        &retf_hat,
                        &step.omega,
                        cfg.solver.alpha,
                    );
                    let phi = PsdVector::from_sqrt(&phi_sqrt);
                    errs.push(psd_error(&phi, &scene.phi_s_true)?);
                }
            }
            Ok(trace)
        })
        .collect()
}

/// Per-iteration PSD error of the square-root solver under both
/// initializations, sharing scenes pairwise.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let section = cfg.convergence.as_ref().expect("validated");
    let i_max = cfg.solver.i_max;
    let mut rows = Vec::new();
    for (gi, &eps) in section.eps_h_db.iter().enumerate() {
        let per_real = convergence_traces(cfg, gi, eps)?;
        for i in 0..i_max {
            let seeded: Vec<f64> = per_real.iter().map(|o| o.seeded[i]).collect();
            let summed: Vec<f64> = per_real.iter().map(|o| o.summed[i]).collect();
            let mut template = ResultRow::new("convergence", "median", "", 0.0);
            template.eps_h_db = Some(eps);
            template.alpha = Some(cfg.solver.alpha);
            template.freq_hz = Some(cfg.scene.freq_hz);
            template.iteration = Some(i + 1);
            rows.extend(stat_rows(&template, "eps_phis_sqrt_seed_db", &seeded));
            rows.extend(stat_rows(&template, "eps_phis_sqrt_sum_db", &summed));
        }
    }
    Ok(rows)
}

/// Recursive RETF tracking: the square-root arm updates its RETF estimate
/// each recursion while the conventional arm keeps the initial one. One
/// source changes direction after the configured recursion.
pub fn run_recursive(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let section = cfg.recursive.as_ref().expect("validated");
    let geom = geometry(&cfg.scene)?;
    let n_rec = section.recursions;
    let beta = section.beta_factor * cfg.scene.laplace_diversity * cfg.scene.laplace_diversity;
    let update_cfg = RetfUpdateConfig {
        beta,
        xi_th_db: section.xi_th_db,
        phi_reg: section.phi_reg,
    };

    struct RecOutcome {
        eps_h_conv: Vec<f64>,
        eps_h_sqrt: Vec<f64>,
        eps_phis_conv: Vec<f64>,
        eps_phis_sqrt: Vec<f64>,
    }

    let per_real: Vec<RecOutcome> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| -> Result<RecOutcome, CliError> {
            let mut rng = stream_rng(cfg.seed, r as u64);
            let doas_of = |rec: usize| -> Vec<f64> {
                let mut d = cfg.scene.doas_deg.clone();
                if rec > section.transition_at {
                    d[section.transition_source] = section.transition_doa_deg;
                }
                d
            };
            let h0_true = steering_retf(&geom, &doas_of(0), cfg.scene.freq_hz)?;
            let initial = perturb_retf(&h0_true, section.eps_h_init_db, &mut rng)?;
            let retf_conv = initial.clone();
            let mut retf_sqrt = initial;

            let mut out = RecOutcome {
                eps_h_conv: Vec::with_capacity(n_rec + 1),
                eps_h_sqrt: Vec::with_capacity(n_rec + 1),
                eps_phis_conv: Vec::with_capacity(n_rec + 1),
                eps_phis_sqrt: Vec::with_capacity(n_rec + 1),
            };
            for rec in 0..=n_rec {
                let sc = SceneConfig {
                    geometry: geom.clone(),
                    doas_deg: doas_of(rec),
                    freq_hz: cfg.scene.freq_hz,
                    laplace_diversity: cfg.scene.laplace_diversity,
                    late_psd: cfg.scene.late_psd,
                    seed: cfg.seed,
                };
                let scene = synthesize_scene(&sc, &mut rng)?;
                out.eps_h_conv.push(retf_error(&retf_conv, &scene.retf_true)?);
                out.eps_h_sqrt.push(retf_error(&retf_sqrt, &scene.retf_true)?);

                let est = estimate_from_exact(
                    &scene.psi_x,
                    &scene.gamma,
                    sc.doas_deg.len(),
                    cfg.solver.jitter,
                )?;

                let conv = solve_conventional_mp(&ConventionalProblem {
                    psi_xe_hat: est.psi_xe_hat.clone(),
                    retf_hat: retf_conv.clone(),
                    alpha: cfg.solver.alpha,
                    step: StepSize::Auto,
                    i_max: cfg.solver.i_max,
                    tol: cfg.solver.tol,
                })?;
                out.eps_phis_conv.push(psd_error(&conv.phi_s_hat, &scene.phi_s_true)?);

                let (init, _) = sqrt_init(cfg.solver.init, &retf_sqrt, &est);
                let sol = solve_square_root_mp(&SquareRootProblem {
                    psi_sqrt_hat: est.psi_xe_sqrt_hat.clone(),
                    retf_hat: retf_sqrt.clone(),
                    alpha: cfg.solver.alpha,
                    i_max: cfg.solver.i_max,
                    tol: cfg.solver.tol,
                    init,
                })?;
                out.eps_phis_sqrt.push(psd_error(&sol.phi_s_hat, &scene.phi_s_true)?);

                let xi = power_ratio(&sol.phi_s_hat, update_cfg.phi_reg);
                let gates = gate(&xi, &update_cfg);
                retf_sqrt = update_retf(
                    &retf_sqrt,
                    &est.psi_xe_sqrt_hat,
                    &sol.omega_hat,
                    &sol.phi_sqrt_hat,
                    &gates,
                )?;
            }
            Ok(out)
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for rec in 0..=n_rec {
        let mut template = ResultRow::new("recursive", "median", "", 0.0);
        template.alpha = Some(cfg.solver.alpha);
        template.freq_hz = Some(cfg.scene.freq_hz);
        template.recursion = Some(rec);
        let grab = |f: &dyn Fn(&RecOutcome) -> f64| -> Vec<f64> {
            per_real.iter().map(f).collect()
        };
        rows.extend(stat_rows(&template, "eps_h_conv_db", &grab(&|o| o.eps_h_conv[rec])));
        rows.extend(stat_rows(&template, "eps_h_sqrt_db", &grab(&|o| o.eps_h_sqrt[rec])));
        rows.extend(stat_rows(&template, "eps_phis_conv_db", &grab(&|o| o.eps_phis_conv[rec])));
        rows.extend(stat_rows(&template, "eps_phis_sqrt_db", &grab(&|o| o.eps_phis_sqrt[rec])));
    }
    Ok(rows)
}
