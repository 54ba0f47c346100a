//! Synthetic room impulse responses, FFT convolution, and the reference
//! early-PSD computation used by the acoustic pipeline.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use std::path::Path;

use crate::metrics::{PsdTrack, Track};
use crate::stft::{stft_analyze, Waveform};
use crate::{Error, Result};

/// A sampled impulse response with a declared early/late split.
#[derive(Debug, Clone)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    /// Number of leading taps counted as the early part.
    pub early_len: usize,
}

impl Rir {
    pub fn new(taps: Vec<f64>, sample_rate: u32, early_len: usize) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidInput("empty impulse response".into()));
        }
        if early_len > taps.len() {
            return Err(Error::InvalidInput("early_len exceeds tap count".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("non-finite tap".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self { taps, sample_rate, early_len })
    }

    pub fn with_early_len(mut self, early_len: usize) -> Result<Self> {
        if early_len > self.taps.len() {
            return Err(Error::InvalidInput("early_len exceeds tap count".into()));
        }
        self.early_len = early_len;
        Ok(self)
    }
}

/// Windowed-sinc fractional delay kernel; degenerates to a single unit tap
/// when the delay is (numerically) integer.
fn place_direct_tap(taps: &mut [f64], delay_samples: f64) {
    let nearest = delay_samples.round();
    if (delay_samples - nearest).abs() < 1e-9 {
        let idx = nearest as usize;
        if idx < taps.len() {
            taps[idx] = 1.0;
        }
        return;
    }
    const HALF_WIDTH: i64 = 16;
    let center = delay_samples.floor() as i64;
    for k in (center - HALF_WIDTH)..=(center + HALF_WIDTH + 1) {
        if k < 0 || k as usize >= taps.len() {
            continue;
        }
        let x = k as f64 - delay_samples;
        let sinc = if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let win = 0.5 * (1.0 + (std::f64::consts::PI * x / (HALF_WIDTH as f64 + 1.0)).cos());
        taps[k as usize] += sinc * win;
    }
}

/// Synthesizes an impulse response: a unit direct tap at `direct_delay_s`
/// (fractional delays are realized with a windowed sinc) followed by white
/// Gaussian noise under the exponential envelope `exp(-3 ln(10) t / t60)`,
/// which decays by 60 dB in energy over `t60_s`. The tail energy roughly
/// matches the direct-tap energy.
pub fn synth_rir<R: Rng + ?Sized>(
    rng: &mut R,
    t60_s: f64,
    sample_rate: u32,
    direct_delay_s: f64,
) -> Result<Rir> {
    if !(t60_s.is_finite() && t60_s > 0.0) {
        return Err(Error::InvalidInput("t60 must be positive".into()));
    }
    if !(direct_delay_s.is_finite() && direct_delay_s >= 0.0) {
        return Err(Error::InvalidInput("direct delay must be non-negative".into()));
    }
    let sr = sample_rate as f64;
    let delay = direct_delay_s * sr;
    let tail_len = (1.25 * t60_s * sr).ceil() as usize;
    let len = delay.ceil() as usize + tail_len + 32;
    let mut taps = vec![0.0f64; len];
    place_direct_tap(&mut taps, delay);

    let decay = 3.0 * std::f64::consts::LN_10 / (t60_s * sr);
    let sigma = (2.0 * decay).sqrt();
    let start = delay.ceil() as usize + 1;
    for (i, tap) in taps.iter_mut().enumerate().skip(start) {
        let t = i as f64 - delay;
        let g: f64 = rng.sample(StandardNormal);
        *tap += sigma * g * (-decay * t).exp();
    }
    let early = len.min(taps.len());
    Rir::new(taps, sample_rate, early)
}

/// Loads an impulse response from a WAV file (first channel) or a
/// single-column CSV of taps at the declared sample rate. The early length
/// defaults to the full response.
pub fn load_rir(path: &Path, expected_rate: u32) -> Result<Rir> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    match ext.to_ascii_lowercase().as_str() {
        "wav" => {
            let w = crate::wav::read_wav(path)?;
            if w.sample_rate != expected_rate {
                return Err(Error::InvalidInput(format!(
                    "{}: sample rate {} does not match configured {}",
                    path.display(),
                    w.sample_rate,
                    expected_rate
                )));
            }
            let taps = w.channel(0).to_vec();
            let len = taps.len();
            Rir::new(taps, expected_rate, len)
        }
        "csv" | "txt" => {
            let text = std::fs::read_to_string(path)?;
            let mut taps = Vec::new();
            for (ln, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let v: f64 = line.parse().map_err(|_| {
                    Error::InvalidInput(format!("{}:{}: not a number", path.display(), ln + 1))
                })?;
                taps.push(v);
            }
            let len = taps.len();
            Rir::new(taps, expected_rate, len)
        }
        _ => Err(Error::InvalidInput(format!(
            "{}: unsupported impulse response format",
            path.display()
        ))),
    }
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

/// Full linear convolution via FFT; output length `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = next_pow2(out_len);
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);

    let mut fa: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fa.resize(n, Complex64::new(0.0, 0.0));
    let mut fb: Vec<Complex64> = b.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fb.resize(n, Complex64::new(0.0, 0.0));
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= y;
    }
    ifft.process(&mut fa);
    fa.truncate(out_len);
    fa.into_iter().map(|z| z.re / n as f64).collect()
}

/// Reference early PSDs of one source: the source convolved with only the
/// early part of its impulse response, transformed, and squared per bin and
/// frame. Returns a single-source track.
pub fn reference_early_psd(source: &Waveform, rir: &Rir, n_stft: usize) -> Result<PsdTrack> {
    if source.channels() != 1 {
        return Err(Error::InvalidInput("reference source must be mono".into()));
    }
    if source.sample_rate != rir.sample_rate {
        return Err(Error::InvalidInput("source and RIR sample rates differ".into()));
    }
    let early = &rir.taps[..rir.early_len.min(rir.taps.len())];
    let convolved = convolve(source.channel(0), early);
    let t = stft_analyze(&Waveform::mono(convolved, source.sample_rate)?, n_stft)?;
    let track = Track::from_fn(1, t.frames(), t.bins(), |_, l, k| t.get(l, k, 0).norm_sqr());
    PsdTrack::new(track)
}
