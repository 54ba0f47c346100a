//! STFT analysis and synthesis with square-root Hann windows at 50%
//! overlap, which satisfy the constant-overlap-add property and give
//! perfect reconstruction away from the segment edges.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::{Error, Result};

/// Multichannel time-domain audio, full-scale around +-1.
#[derive(Debug, Clone)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() || channels[0].is_empty() {
            return Err(Error::InvalidInput("empty waveform".into()));
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidInput("channels must have equal length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("non-finite sample".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        Ok(Self { channels, sample_rate })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }
}

/// Complex STFT coefficients, frames x bins x channels.
#[derive(Debug, Clone)]
pub struct StftTensor {
    data: Vec<Complex64>,
    n_frames: usize,
    n_bins: usize,
    n_channels: usize,
    pub n_stft: usize,
    pub sample_rate: u32,
    /// Input was shorter than one window and was zero-padded.
    pub padded: bool,
}

impl StftTensor {
    pub fn frames(&self) -> usize {
        self.n_frames
    }

    pub fn bins(&self) -> usize {
        self.n_bins
    }

    pub fn channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    fn idx(&self, frame: usize, bin: usize, channel: usize) -> usize {
        debug_assert!(frame < self.n_frames && bin < self.n_bins && channel < self.n_channels);
        (frame * self.n_bins + bin) * self.n_channels + channel
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize, channel: usize) -> Complex64 {
        self.data[self.idx(frame, bin, channel)]
    }

    #[inline]
    pub fn get_mut(&mut self, frame: usize, bin: usize, channel: usize) -> &mut Complex64 {
        let i = self.idx(frame, bin, channel);
        &mut self.data[i]
    }

    /// Center frequency of a bin in Hz.
    pub fn bin_hz(&self, bin: usize) -> f64 {
        bin as f64 * self.sample_rate as f64 / self.n_stft as f64
    }
}

/// Square-root periodic Hann window of length `n`.
pub fn sqrt_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let h = 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos());
            h.sqrt()
        })
        .collect()
}

/// Windowed DFT analysis with hop `n_stft / 2`. Inputs shorter than one
/// window are zero-padded and flagged; the trailing partial frame is
/// zero-padded silently.
pub fn stft_analyze(w: &Waveform, n_stft: usize) -> Result<StftTensor> {
    if n_stft < 2 || !n_stft.is_multiple_of(2) {
        return Err(Error::InvalidInput("window length must be even and >= 2".into()));
    }
    let hop = n_stft / 2;
    let len = w.len();
    let padded = len < n_stft;
    let n_frames = if padded { 1 } else { (len - n_stft).div_ceil(hop) + 1 };
    let n_bins = n_stft / 2 + 1;
    let window = sqrt_hann(n_stft);

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_stft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_stft];

    let mut out = StftTensor {
        data: vec![Complex64::new(0.0, 0.0); n_frames * n_bins * w.channels()],
        n_frames,
        n_bins,
        n_channels: w.channels(),
        n_stft,
        sample_rate: w.sample_rate,
        padded,
    };

    for ch in 0..w.channels() {
        let samples = w.channel(ch);
        for frame in 0..n_frames {
            let start = frame * hop;
            for (i, (slot, w)) in buf.iter_mut().zip(&window).enumerate() {
                let x = samples.get(start + i).copied().unwrap_or(0.0);
                *slot = Complex64::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for (bin, v) in buf.iter().take(n_bins).enumerate() {
                *out.get_mut(frame, bin, ch) = *v;
            }
        }
    }
    Ok(out)
}

/// Weighted overlap-add synthesis with the same square-root Hann window.
/// Reconstructs the interior of the analyzed signal; the first and last
/// half-window lack full overlap.
pub fn stft_synthesize(t: &StftTensor) -> Result<Waveform> {
    let n_stft = t.n_stft;
    let hop = n_stft / 2;
    let out_len = (t.n_frames - 1) * hop + n_stft;
    let window = sqrt_hann(n_stft);

    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n_stft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_stft];

    let mut channels = vec![vec![0.0f64; out_len]; t.n_channels];
    for (ch, samples) in channels.iter_mut().enumerate() {
        for frame in 0..t.n_frames {
            // Rebuild the full spectrum from the one-sided bins.
            for (bin, slot) in buf.iter_mut().enumerate() {
                *slot = if bin < t.n_bins {
                    t.get(frame, bin, ch)
                } else {
                    t.get(frame, n_stft - bin, ch).conj()
                };
            }
            ifft.process(&mut buf);
            let start = frame * hop;
            for (i, (b, w)) in buf.iter().zip(&window).enumerate() {
                samples[start + i] += b.re / n_stft as f64 * w;
            }
        }
    }
    Waveform::new(channels, t.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn window_satisfies_overlap_add() {
        let n = 512;
        let w = sqrt_hann(n);
        for i in 0..n / 2 {
            let s = w[i] * w[i] + w[i + n / 2] * w[i + n / 2];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_has_flat_frame_magnitude() {
        let n = 64;
        let mut x = vec![0.0; 4 * n];
        x[96] = 1.0;
        let t = stft_analyze(&Waveform::mono(x, 8000).unwrap(), n).unwrap();
        // Frame 2 starts at 64 and contains the impulse at offset 32.
        let mags: Vec<f64> = (0..t.bins()).map(|k| t.get(2, k, 0).norm()).collect();
        let mx = mags.iter().cloned().fold(0.0f64, f64::max);
        let mn = mags.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(mx > 0.0 && (mx - mn) / mx < 1e-10);
    }

    #[test]
    fn sine_concentrates_in_its_bin() {
        let n = 128;
        let k0 = 12;
        let fs = 8000u32;
        let samples: Vec<f64> = (0..20 * n)
            .map(|t| (2.0 * std::f64::consts::PI * k0 as f64 * t as f64 / n as f64).cos())
            .collect();
        let t = stft_analyze(&Waveform::mono(samples, fs).unwrap(), n).unwrap();
        let frame = t.frames() / 2;
        let energy: Vec<f64> = (0..t.bins()).map(|k| t.get(frame, k, 0).norm_sqr()).collect();
        let total: f64 = energy.iter().sum();
        let peak = (0..t.bins()).max_by(|&a, &b| energy[a].total_cmp(&energy[b])).unwrap();
        assert_eq!(peak, k0);
        let local: f64 = energy[k0 - 1..=k0 + 1].iter().sum();
        assert!(local / total > 0.95, "concentration {}", local / total);
    }

    #[test]
    fn white_noise_round_trip_is_exact_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 512;
        let fs = 16000;
        let x: Vec<f64> = (0..fs as usize).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let t = stft_analyze(&Waveform::mono(x.clone(), fs).unwrap(), n).unwrap();
        let y = stft_synthesize(&t).unwrap();
        let mut max_err = 0.0f64;
        for i in n / 2..x.len() - n / 2 {
            max_err = max_err.max((y.channel(0)[i] - x[i]).abs());
        }
        assert!(max_err <= 1e-10, "interior error {max_err}");
    }

    #[test]
    fn multichannel_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 64;
        let chans: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..n * 10).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let w = Waveform::new(chans.clone(), 8000).unwrap();
        let y = stft_synthesize(&stft_analyze(&w, n).unwrap()).unwrap();
        for c in 0..3 {
            for i in n / 2..n * 10 - n / 2 {
                assert!((y.channel(c)[i] - chans[c][i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn short_input_pads_and_flags() {
        let t = stft_analyze(&Waveform::mono(vec![0.25; 100], 8000).unwrap(), 256).unwrap();
        assert!(t.padded);
        assert_eq!(t.frames(), 1);
    }

    #[test]
    fn five_second_segment_frame_count() {
        let x = vec![0.1; 80_000];
        let t = stft_analyze(&Waveform::mono(x, 16_000).unwrap(), 512).unwrap();
        assert_eq!(t.frames(), 312);
    }
}
