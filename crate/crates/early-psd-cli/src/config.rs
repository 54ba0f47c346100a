//! Experiment configuration: one TOML file per run with documented keys,
//! selected by the CLI subcommand.

use serde::Deserialize;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Which experiment a config drives; must match the CLI subcommand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    EpsSweep,
    AlphaSweep,
    FreqSweep,
    Convergence,
    Recursive,
    Acoustic,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::EpsSweep => "eps-sweep",
            ExperimentKind::AlphaSweep => "alpha-sweep",
            ExperimentKind::FreqSweep => "freq-sweep",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Recursive => "recursive",
            ExperimentKind::Acoustic => "acoustic",
        }
    }
}

/// Scene parameters shared by all model-based experiments.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    #[serde(default = "default_mics")]
    pub mics: usize,
    #[serde(default = "default_spacing")]
    pub spacing_m: f64,
    #[serde(default = "default_speed")]
    pub speed_of_sound_mps: f64,
    #[serde(default = "default_doas")]
    pub doas_deg: Vec<f64>,
    #[serde(default = "default_freq")]
    pub freq_hz: f64,
    #[serde(default = "default_diversity")]
    pub laplace_diversity: f64,
    #[serde(default = "default_late_psd")]
    pub late_psd: f64,
}

fn default_mics() -> usize {
    5
}
fn default_spacing() -> f64 {
    0.08
}
fn default_speed() -> f64 {
    340.0
}
fn default_doas() -> Vec<f64> {
    vec![-30.0, 0.0, 60.0]
}
fn default_freq() -> f64 {
    2000.0
}
fn default_diversity() -> f64 {
    1.0
}
fn default_late_psd() -> f64 {
    1.0
}

impl Default for SceneSection {
    fn default() -> Self {
        Self {
            mics: default_mics(),
            spacing_m: default_spacing(),
            speed_of_sound_mps: default_speed(),
            doas_deg: default_doas(),
            freq_hz: default_freq(),
            laplace_diversity: default_diversity(),
            late_psd: default_late_psd(),
        }
    }
}

/// Solver parameters shared by all experiments.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_i_max")]
    pub i_max: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// `"conventional-seed"` or `"sum-constraint"`.
    #[serde(default = "default_init")]
    pub init: InitKind,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    ConventionalSeed,
    SumConstraint,
}

fn default_alpha() -> f64 {
    1e3
}
fn default_i_max() -> usize {
    20
}
fn default_tol() -> f64 {
    1e-8
}
fn default_init() -> InitKind {
    InitKind::ConventionalSeed
}
fn default_jitter() -> f64 {
    1e-10
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            i_max: default_i_max(),
            tol: default_tol(),
            init: default_init(),
            jitter: default_jitter(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpsSweepSection {
    /// RETF error targets in dB; the string "-inf" is accepted via TOML
    /// `-inf` float syntax.
    pub eps_h_db: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSweepSection {
    pub eps_h_db: f64,
    pub alphas: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FreqSweepSection {
    pub eps_h_db: Vec<f64>,
    pub freq_start_hz: f64,
    pub freq_stop_hz: f64,
    pub freq_step_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub eps_h_db: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecursiveSection {
    #[serde(default = "default_recursions")]
    pub recursions: usize,
    #[serde(default = "default_transition_at")]
    pub transition_at: usize,
    #[serde(default)]
    pub transition_source: usize,
    #[serde(default = "default_transition_doa")]
    pub transition_doa_deg: f64,
    #[serde(default = "default_eps_h_init")]
    pub eps_h_init_db: f64,
    /// Blend regularizer as a multiple of the squared Laplace diversity.
    #[serde(default = "default_beta_factor")]
    pub beta_factor: f64,
    #[serde(default = "default_xi_th")]
    pub xi_th_db: f64,
    #[serde(default)]
    pub phi_reg: f64,
}

fn default_recursions() -> usize {
    64
}
fn default_transition_at() -> usize {
    32
}
fn default_transition_doa() -> f64 {
    -40.0
}
fn default_eps_h_init() -> f64 {
    0.0
}
fn default_beta_factor() -> f64 {
    20.0
}
fn default_xi_th() -> f64 {
    -2.0
}

impl Default for RecursiveSection {
    fn default() -> Self {
        Self {
            recursions: default_recursions(),
            transition_at: default_transition_at(),
            transition_source: 0,
            transition_doa_deg: default_transition_doa(),
            eps_h_init_db: default_eps_h_init(),
            beta_factor: default_beta_factor(),
            xi_th_db: default_xi_th(),
            phi_reg: 0.0,
        }
    }
}

/// Source and impulse-response material for the acoustic pipeline; either
/// synthesized in place or loaded from files.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcousticSection {
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    #[serde(default = "default_n_stft")]
    pub n_stft: usize,
    /// Correlation smoothing time constant; the forgetting factor is
    /// `exp(-n_stft / (2 f_s tau))`.
    #[serde(default = "default_tau_ms")]
    pub tau_smooth_ms: f64,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_t60")]
    pub t60_s: f64,
    #[serde(default = "default_source_doas")]
    pub source_doas_deg: Vec<f64>,
    #[serde(default = "default_source_distance")]
    pub source_distance_m: f64,
    /// WAV files, one per source; synthesized speech-shaped signals when
    /// empty.
    #[serde(default)]
    pub source_files: Vec<PathBuf>,
    /// Impulse responses, one file per (source, mic) pair in source-major
    /// order; synthesized when empty.
    #[serde(default)]
    pub rir_files: Vec<PathBuf>,
    #[serde(default = "default_alpha_conv")]
    pub alpha_conventional: f64,
    #[serde(default = "default_alpha_sqrt_low")]
    pub alpha_sqrt_low: f64,
    #[serde(default = "default_alpha_sqrt_high")]
    pub alpha_sqrt_high: f64,
    #[serde(default = "default_alpha_split")]
    pub alpha_split_hz: f64,
    /// Also run the square-root arm with the recursive RETF update.
    #[serde(default = "default_true")]
    pub retf_update: bool,
    #[serde(default = "default_beta_factor")]
    pub beta_factor: f64,
    #[serde(default = "default_xi_th")]
    pub xi_th_db: f64,
}

fn default_sample_rate() -> u32 {
    16_000
}
fn default_n_stft() -> usize {
    512
}
fn default_tau_ms() -> f64 {
    160.0
}
fn default_duration() -> f64 {
    5.0
}
fn default_t60() -> f64 {
    0.61
}
fn default_source_doas() -> Vec<f64> {
    vec![-30.0, 60.0]
}
fn default_source_distance() -> f64 {
    2.0
}
fn default_alpha_conv() -> f64 {
    1e-3
}
fn default_alpha_sqrt_low() -> f64 {
    1e3
}
fn default_alpha_sqrt_high() -> f64 {
    1.0
}
fn default_alpha_split() -> f64 {
    500.0
}
fn default_true() -> bool {
    true
}

impl Default for AcousticSection {
    fn default() -> Self {
        Self {
            sample_rate_hz: default_sample_rate(),
            n_stft: default_n_stft(),
            tau_smooth_ms: default_tau_ms(),
            duration_s: default_duration(),
            t60_s: default_t60(),
            source_doas_deg: default_source_doas(),
            source_distance_m: default_source_distance(),
            source_files: Vec::new(),
            rir_files: Vec::new(),
            alpha_conventional: default_alpha_conv(),
            alpha_sqrt_low: default_alpha_sqrt_low(),
            alpha_sqrt_high: default_alpha_sqrt_high(),
            alpha_split_hz: default_alpha_split(),
            retf_update: default_true(),
            beta_factor: default_beta_factor(),
            xi_th_db: default_xi_th(),
        }
    }
}

/// Full experiment configuration as parsed from TOML.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub scene: SceneSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub eps_sweep: Option<EpsSweepSection>,
    #[serde(default)]
    pub alpha_sweep: Option<AlphaSweepSection>,
    #[serde(default)]
    pub freq_sweep: Option<FreqSweepSection>,
    #[serde(default)]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default)]
    pub recursive: Option<RecursiveSection>,
    #[serde(default)]
    pub acoustic: Option<AcousticSection>,
}

fn default_realizations() -> usize {
    1 << 12
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.scene;
        if s.mics < 2 {
            return Err(CliError::Config("scene.mics must be at least 2".into()));
        }
        if s.doas_deg.is_empty() || s.doas_deg.len() > s.mics {
            return Err(CliError::Config("need 1 <= N <= M source directions".into()));
        }
        if self.realizations == 0 {
            return Err(CliError::Config("realizations must be at least 1".into()));
        }
        if !(self.solver.alpha.is_finite() && self.solver.alpha >= 0.0) {
            return Err(CliError::Config("solver.alpha must be finite and >= 0".into()));
        }
        match self.experiment {
            ExperimentKind::EpsSweep => {
                let sec = self.eps_sweep.as_ref().ok_or_else(|| {
                    CliError::Config("missing [eps_sweep] section".into())
                })?;
                if sec.eps_h_db.is_empty() {
                    return Err(CliError::Config("eps_sweep.eps_h_db must be non-empty".into()));
                }
            }
            ExperimentKind::AlphaSweep => {
                let sec = self.alpha_sweep.as_ref().ok_or_else(|| {
                    CliError::Config("missing [alpha_sweep] section".into())
                })?;
                if sec.alphas.is_empty() {
                    return Err(CliError::Config("alpha_sweep.alphas must be non-empty".into()));
                }
            }
            ExperimentKind::FreqSweep => {
                let sec = self.freq_sweep.as_ref().ok_or_else(|| {
                    CliError::Config("missing [freq_sweep] section".into())
                })?;
                if sec.eps_h_db.is_empty() {
                    return Err(CliError::Config("freq_sweep.eps_h_db must be non-empty".into()));
                }
                if !(sec.freq_step_hz > 0.0 && sec.freq_stop_hz > sec.freq_start_hz) {
                    return Err(CliError::Config("invalid freq_sweep grid".into()));
                }
                if sec.freq_start_hz <= 0.0 {
                    return Err(CliError::Config("freq_sweep.freq_start_hz must be > 0".into()));
                }
            }
            ExperimentKind::Convergence => {
                let sec = self.convergence.as_ref().ok_or_else(|| {
                    CliError::Config("missing [convergence] section".into())
                })?;
                if sec.eps_h_db.is_empty() {
                    return Err(CliError::Config("convergence.eps_h_db must be non-empty".into()));
                }
            }
            ExperimentKind::Recursive => {
                let sec = self.recursive.as_ref().ok_or_else(|| {
                    CliError::Config("missing [recursive] section".into())
                })?;
                if sec.recursions == 0 {
                    return Err(CliError::Config("recursive.recursions must be >= 1".into()));
                }
                if sec.transition_source >= self.scene.doas_deg.len() {
                    return Err(CliError::Config("recursive.transition_source out of range".into()));
                }
            }
            ExperimentKind::Acoustic => {
                let sec = self.acoustic.as_ref().ok_or_else(|| {
                    CliError::Config("missing [acoustic] section".into())
                })?;
                let n = sec.source_doas_deg.len();
                if n == 0 || n >= self.scene.mics {
                    return Err(CliError::Config(
                        "acoustic.source_doas_deg needs 1 <= N < M entries".into(),
                    ));
                }
                if !sec.source_files.is_empty() && sec.source_files.len() != n {
                    return Err(CliError::Config(
                        "acoustic.source_files must list one file per source".into(),
                    ));
                }
                if !sec.rir_files.is_empty() && sec.rir_files.len() != n * self.scene.mics {
                    return Err(CliError::Config(
                        "acoustic.rir_files must list one file per (source, mic) pair".into(),
                    ));
                }
                if sec.n_stft < 2 || sec.n_stft % 2 != 0 {
                    return Err(CliError::Config("acoustic.n_stft must be even and >= 2".into()));
                }
                for f in sec.source_files.iter().chain(sec.rir_files.iter()) {
                    if !f.exists() {
                        return Err(CliError::Config(format!(
                            "declared file does not exist: {}",
                            f.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}
