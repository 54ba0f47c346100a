//! Model-based scenario generation: array geometry, far-field steering
//! RETFs, spherical-isotropic diffuse coherence, Laplace-distributed source
//! coefficients, exact correlation matrices and controlled RETF
//! perturbations.

use nalgebra::Vector3;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

use crate::linalg::HermitianMatrix;
use crate::types::{EarlySqrt, PsdVector, RetfMatrix};
use crate::{CMat, CVec, Error, Result};

/// Microphone positions in meters plus the speed of sound.
#[derive(Debug, Clone)]
pub struct ArrayGeometry {
    positions: Vec<Vector3<f64>>,
    pub speed_of_sound: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Vector3<f64>>, speed_of_sound: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::InvalidInput("need at least 2 microphones".into()));
        }
        if !(speed_of_sound.is_finite() && speed_of_sound > 0.0) {
            return Err(Error::InvalidInput("speed of sound must be positive".into()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidInput(format!("non-finite position for mic {i}")));
            }
            for q in &positions[..i] {
                if (p - q).norm() == 0.0 {
                    return Err(Error::InvalidInput("duplicate microphone positions".into()));
                }
            }
        }
        Ok(Self { positions, speed_of_sound })
    }

    /// Uniform linear array along the x axis, first microphone at the origin.
    pub fn linear(mics: usize, spacing_m: f64, speed_of_sound: f64) -> Result<Self> {
        if !(spacing_m.is_finite() && spacing_m > 0.0) {
            return Err(Error::InvalidInput("spacing must be positive".into()));
        }
        let positions = (0..mics)
            .map(|m| Vector3::new(m as f64 * spacing_m, 0.0, 0.0))
            .collect();
        Self::new(positions, speed_of_sound)
    }

    pub fn mics(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        (self.positions[i] - self.positions[j]).norm()
    }
}

/// Parameters of one model-based scenario at a single frequency bin.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub geometry: ArrayGeometry,
    /// Source directions of arrival in degrees relative to broadside.
    pub doas_deg: Vec<f64>,
    pub freq_hz: f64,
    /// Scale ("diversity") of the Laplace distributions the real and
    /// imaginary source parts are drawn from.
    pub laplace_diversity: f64,
    /// PSD of the late reverberant component.
    pub late_psd: f64,
    /// Base seed; callers derive their RNG streams from it.
    pub seed: u64,
}

impl SceneConfig {
    fn validate(&self) -> Result<()> {
        if self.doas_deg.is_empty() || self.doas_deg.len() > self.geometry.mics() {
            return Err(Error::InvalidInput("need 1 <= N <= M source directions".into()));
        }
        if !(self.freq_hz.is_finite() && self.freq_hz > 0.0) {
            return Err(Error::InvalidInput("frequency must be positive".into()));
        }
        if !(self.laplace_diversity.is_finite() && self.laplace_diversity > 0.0) {
            return Err(Error::InvalidInput("Laplace diversity must be positive".into()));
        }
        if !(self.late_psd.is_finite() && self.late_psd >= 0.0) {
            return Err(Error::InvalidInput("late PSD must be non-negative".into()));
        }
        Ok(())
    }
}

/// Exact correlation matrices of one realization, together with the ground
/// truth they were built from.
#[derive(Debug, Clone)]
pub struct CorrelationScene {
    pub psi_x: HermitianMatrix,
    pub psi_xe: HermitianMatrix,
    pub psi_xe_sqrt: EarlySqrt,
    pub retf_true: RetfMatrix,
    pub phi_s_true: PsdVector,
    pub gamma: HermitianMatrix,
}

/// Unit propagation direction for a DoA measured in degrees relative to
/// broadside (the y axis); the array lies along the x axis.
fn doa_unit(theta_deg: f64) -> Vector3<f64> {
    let t = theta_deg.to_radians();
    Vector3::new(t.sin(), t.cos(), 0.0)
}

/// Far-field steering RETFs: entry `(m, n)` is the phase shift of DoA `n` at
/// microphone `m` relative to the first microphone, so the first row is one
/// and all entries have unit modulus.
pub fn steering_retf(geom: &ArrayGeometry, doas_deg: &[f64], freq_hz: f64) -> Result<RetfMatrix> {
    if doas_deg.is_empty() || doas_deg.len() > geom.mics() {
        return Err(Error::InvalidInput("need 1 <= N <= M source directions".into()));
    }
    if !(freq_hz.is_finite() && freq_hz > 0.0) {
        return Err(Error::InvalidInput("frequency must be positive".into()));
    }
    let m = geom.mics();
    let n = doas_deg.len();
    let mut h = CMat::zeros(m, n);
    for (j, &doa) in doas_deg.iter().enumerate() {
        let u = doa_unit(doa);
        let tau_ref = geom.positions()[0].dot(&u) / geom.speed_of_sound;
        for i in 0..m {
            let tau = geom.positions()[i].dot(&u) / geom.speed_of_sound;
            let phase = -2.0 * PI * freq_hz * (tau - tau_ref);
            h[(i, j)] = Complex64::from_polar(1.0, phase);
        }
    }
    RetfMatrix::new(h)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Spatial coherence of a spherical-isotropic diffuse field:
/// `Gamma_{ij} = sinc(2 f d_{ij} / c)` with unit diagonal.
pub fn diffuse_coherence(geom: &ArrayGeometry, freq_hz: f64) -> Result<HermitianMatrix> {
    if !(freq_hz.is_finite() && freq_hz >= 0.0) {
        return Err(Error::InvalidInput("frequency must be finite and >= 0".into()));
    }
    let m = geom.mics();
    let g = CMat::from_fn(m, m, |i, j| {
        let x = 2.0 * freq_hz * geom.distance(i, j) / geom.speed_of_sound;
        Complex64::new(sinc(x), 0.0)
    });
    HermitianMatrix::new(g)
}

/// Inverse-CDF sample of a zero-mean Laplace distribution with density
/// `(1/b) exp(-2|x|/b)`, i.e. scale `b/2`.
fn laplace_inverse_cdf(b: f64, u: f64) -> f64 {
    let v = u - 0.5;
    let t = (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE);
    -(b / 2.0) * v.signum() * t.ln()
}

/// Draws `n` complex source coefficients whose real and imaginary parts are
/// independent Laplace variables of diversity `b`.
pub fn sample_sources<R: Rng + ?Sized>(b: f64, n: usize, rng: &mut R) -> CVec {
    CVec::from_fn(n, |_, _| {
        let re = laplace_inverse_cdf(b, rng.gen::<f64>());
        let im = laplace_inverse_cdf(b, rng.gen::<f64>());
        Complex64::new(re, im)
    })
}

/// Builds one exact realization: steering RETFs, diffuse coherence, drawn
/// source coefficients and the resulting correlation matrices. The returned
/// square root is `H Diag(s)`, a valid factor that generally differs from
/// the GEVD-produced one by a unitary rotation.
pub fn synthesize_scene<R: Rng + ?Sized>(cfg: &SceneConfig, rng: &mut R) -> Result<CorrelationScene> {
    cfg.validate()?;
    let retf = steering_retf(&cfg.geometry, &cfg.doas_deg, cfg.freq_hz)?;
    let gamma = diffuse_coherence(&cfg.geometry, cfg.freq_hz)?;
    let s = sample_sources(cfg.laplace_diversity, cfg.doas_deg.len(), rng);

    let phi_s = PsdVector::from_sqrt(&s);
    let sqrt = {
        let mut m = retf.matrix().clone();
        for j in 0..m.ncols() {
            let sj = s[j];
            for i in 0..m.nrows() {
                m[(i, j)] *= sj;
            }
        }
        EarlySqrt::new(m)?
    };
    let psi_xe = HermitianMatrix::new(sqrt.outer())?;
    let psi_x = psi_xe.add_scaled(&gamma, cfg.late_psd)?;

    Ok(CorrelationScene {
        psi_x,
        psi_xe,
        psi_xe_sqrt: sqrt,
        retf_true: retf,
        phi_s_true: phi_s,
        gamma,
    })
}

/// Adds a complex Gaussian error to all but the reference row of `h` and
/// rescales it so the relative squared RETF error lands exactly on
/// `target_eps_h_db`. A target of `-inf` returns `h` unchanged.
pub fn perturb_retf<R: Rng + ?Sized>(
    h: &RetfMatrix,
    target_eps_h_db: f64,
    rng: &mut R,
) -> Result<RetfMatrix> {
    if target_eps_h_db == f64::NEG_INFINITY {
        return Ok(h.clone());
    }
    if !target_eps_h_db.is_finite() {
        return Err(Error::InvalidInput("perturbation target must be finite or -inf".into()));
    }
    let (m, n) = (h.mics(), h.sources());
    let denom = h.matrix().iter().map(|z| z.norm_sqr()).sum::<f64>() - n as f64;
    if denom <= 0.0 {
        return Err(Error::InvalidInput(
            "RETF has no energy outside the reference row".into(),
        ));
    }
    let mut e = CMat::zeros(m, n);
    let mut e_energy = 0.0;
    for j in 0..n {
        for i in 1..m {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            let z = Complex64::new(re, im);
            e_energy += z.norm_sqr();
            e[(i, j)] = z;
        }
    }
    if e_energy == 0.0 {
        return Err(Error::InvalidInput("degenerate zero perturbation draw".into()));
    }
    let scale = (10f64.powf(target_eps_h_db / 10.0) * denom / e_energy).sqrt();
    RetfMatrix::new(h.matrix() + e.scale(scale))
}
