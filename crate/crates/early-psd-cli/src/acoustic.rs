//! Acoustic pipeline: time-domain microphone signals (synthetic or
//! user-supplied), STFT analysis, recursive per-bin subspace estimation,
//! both solvers, an optional recursive RETF update, and SIR/SAR/SDR against
//! reference early PSDs per third-octave band.

use rayon::prelude::*;

use early_psd::conventional::{solve_conventional_mp, solve_unconstrained, ConventionalProblem, StepSize};
use early_psd::linalg::HermitianMatrix;
use early_psd::metrics::{band_ratios, decompose_tracks, BandSpec, PsdTrack, Track};
use early_psd::procrustes::{solve_square_root_mp, Init, SquareRootProblem};
use early_psd::retf::{gate, power_ratio, update_retf, RetfUpdateConfig};
use early_psd::rir::{convolve, load_rir, reference_early_psd, synth_rir, Rir};
use early_psd::scene::{diffuse_coherence, steering_retf, ArrayGeometry};
use early_psd::stft::{stft_analyze, stft_synthesize, Waveform};
use early_psd::subspace::{desmooth, extract_early, track_gevd, update_smooth, SmootherState};
use early_psd::types::{EarlySqrt, RetfMatrix};
use early_psd::RVec;
use rand::Rng;

use crate::config::{AcousticSection, ExperimentConfig};
use crate::rows::ResultRow;
use crate::{model, stream_rng, CliError};

const STREAM_SOURCES: u64 = 0x6163_0001_0000_0000;
const STREAM_RIRS: u64 = 0x6163_0002_0000_0000;

/// Deterministic speech-shaped test signal: syllable-length segments of
/// resonant or broadband noise separated by pauses, with raised-cosine
/// ramps. Nonstationary on the ~100 ms scale, which the desmoothing front
/// end relies on.
pub fn synth_speechlike(len: usize, sample_rate: u32, rng: &mut impl Rng) -> Vec<f64> {
    let fs = sample_rate as f64;
    let ramp = (0.010 * fs) as usize;
    let mut out = vec![0.0f64; len];
    let mut t = 0usize;
    while t < len {
        let dur = (rng.gen_range(0.10..0.30) * fs) as usize;
        let end = (t + dur).min(len);
        let kind: f64 = rng.gen();
        if kind < 0.25 {
            // Pause.
            t = end;
            continue;
        }
        let amp = rng.gen_range(0.4..1.0);
        if kind < 0.75 {
            // Voiced-like: second-order resonator driven by white noise.
            let f0 = 250.0 * (2800.0f64 / 250.0).powf(rng.gen_range(0.0..1.0));
            let rho: f64 = 0.96;
            let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
            let (a1, a2) = (2.0 * rho * w0.cos(), -rho * rho);
            let mut y1 = 0.0f64;
            let mut y2 = 0.0f64;
            for (i, slot) in out[t..end].iter_mut().enumerate() {
                let e: f64 = rng.gen_range(-1.0..1.0);
                let y = a1 * y1 + a2 * y2 + e;
                y2 = y1;
                y1 = y;
                *slot = amp * 0.05 * y * segment_ramp(i, end - t, ramp);
            }
        } else {
            // Unvoiced-like: first-difference of white noise.
            let mut prev = 0.0f64;
            for (i, slot) in out[t..end].iter_mut().enumerate() {
                let e: f64 = rng.gen_range(-1.0..1.0);
                *slot = amp * 0.25 * (e - 0.7 * prev) * segment_ramp(i, end - t, ramp);
                prev = e;
            }
        }
        t = end;
    }
    // Normalize toward a common level.
    let rms = (out.iter().map(|x| x * x).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        let g = 0.1 / rms;
        for x in &mut out {
            *x = (*x * g).clamp(-0.999, 0.999);
        }
    }
    out
}

fn segment_ramp(i: usize, len: usize, ramp: usize) -> f64 {
    let r = ramp.min(len / 2).max(1);
    let up = if i < r { i as f64 / r as f64 } else { 1.0 };
    let down = if i + r >= len { (len - i) as f64 / r as f64 } else { 1.0 };
    let x = up.min(down);
    0.5 * (1.0 - (std::f64::consts::PI * x).cos())
}

struct Material {
    sources: Vec<Waveform>,
    /// Source-major: `rirs[n * mics + m]`.
    rirs: Vec<Rir>,
}

fn gather_material(
    cfg: &ExperimentConfig,
    sec: &AcousticSection,
    geom: &ArrayGeometry,
) -> Result<Material, CliError> {
    let n = sec.source_doas_deg.len();
    let m = geom.mics();
    let fs = sec.sample_rate_hz;
    let len = (sec.duration_s * fs as f64) as usize;

    let sources: Vec<Waveform> = if sec.source_files.is_empty() {
        (0..n)
            .map(|i| {
                let mut rng = stream_rng(cfg.seed, STREAM_SOURCES | i as u64);
                Waveform::mono(synth_speechlike(len, fs, &mut rng), fs).map_err(CliError::from)
            })
            .collect::<Result<_, _>>()?
    } else {
        sec.source_files
            .iter()
            .map(|p| {
                let w = early_psd::wav::read_wav(p)?;
                if w.sample_rate != fs {
                    return Err(CliError::Config(format!(
                        "{}: sample rate {} does not match configured {}",
                        p.display(),
                        w.sample_rate,
                        fs
                    )));
                }
                if w.channels() != 1 {
                    return Err(CliError::Config(format!(
                        "{}: source files must be mono",
                        p.display()
                    )));
                }
                Ok(w)
            })
            .collect::<Result<_, _>>()?
    };

    let rirs: Vec<Rir> = if sec.rir_files.is_empty() {
        let base_delay = sec.source_distance_m / geom.speed_of_sound;
        let mut out = Vec::with_capacity(n * m);
        for (si, &doa) in sec.source_doas_deg.iter().enumerate() {
            let theta = doa.to_radians();
            let u = nalgebra::Vector3::new(theta.sin(), theta.cos(), 0.0);
            for mi in 0..m {
                let tau = geom.positions()[mi].dot(&u) / geom.speed_of_sound;
                let mut rng =
                    stream_rng(cfg.seed, STREAM_RIRS | ((si * m + mi) as u64));
                let rir = synth_rir(&mut rng, sec.t60_s, fs, base_delay + tau)?
                    .with_early_len(sec.n_stft)?;
                out.push(rir);
            }
        }
        out
    } else {
        sec.rir_files
            .iter()
            .map(|p| {
                let r = load_rir(p, fs)?;
                let early = sec.n_stft.min(r.taps.len());
                r.with_early_len(early).map_err(CliError::from)
            })
            .collect::<Result<_, _>>()?
    };

    Ok(Material { sources, rirs })
}

/// Per-bin solver outputs: `values[method][frame][source]`.
struct BinResult {
    bin: usize,
    conv: Vec<Vec<f64>>,
    sqrt: Vec<Vec<f64>>,
    sqrt_up: Vec<Vec<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn process_bin(
    cfg: &ExperimentConfig,
    sec: &AcousticSection,
    geom: &ArrayGeometry,
    stft: &early_psd::stft::StftTensor,
    bin: usize,
    n_frames: usize,
    zeta: f64,
    beta_of_bin: &[f64],
) -> Result<BinResult, CliError> {
    let n = sec.source_doas_deg.len();
    let m = geom.mics();
    let f_k = stft.bin_hz(bin);
    let gamma = diffuse_coherence(geom, f_k)?;
    // Steering needs a strictly positive frequency; the DC bin reuses the
    // first bin's steering (its estimates land below every analysis band).
    let f_steer = if f_k > 0.0 { f_k } else { stft.bin_hz(1) };
    let steering = steering_retf(geom, &sec.source_doas_deg, f_steer)?;
    let alpha_sqrt = if f_k < sec.alpha_split_hz { sec.alpha_sqrt_low } else { sec.alpha_sqrt_high };

    let mut state = SmootherState::new(m, zeta)?.with_jitter(cfg.solver.jitter);
    let mut prior_up = steering.clone();
    let mut result = BinResult {
        bin,
        conv: Vec::with_capacity(n_frames),
        sqrt: Vec::with_capacity(n_frames),
        sqrt_up: Vec::with_capacity(n_frames),
    };

    for l in 0..n_frames {
        let x = early_psd::CVec::from_fn(m, |c, _| stft.get(l, bin, c));
        let psi_inst = HermitianMatrix::new(&x * x.adjoint())?;
        update_smooth(&mut state, &psi_inst)?;
        let prev = state
            .lambda_sm_prev()
            .cloned()
            .unwrap_or_else(|| RVec::zeros(m));
        let (p, lam) = track_gevd(&mut state, &gamma)?;
        let lam_hat = desmooth(&lam, &prev, zeta);
        let est = extract_early(&p, &lam_hat, &gamma, n)?;

        let conv = solve_conventional_mp(&ConventionalProblem {
            psi_xe_hat: est.psi_xe_hat.clone(),
            retf_hat: steering.clone(),
            alpha: sec.alpha_conventional,
            step: StepSize::Auto,
            i_max: cfg.solver.i_max,
            tol: cfg.solver.tol,
        })?;
        result.conv.push(conv.phi_s_hat.values().iter().copied().collect());

        let solve_sqrt = |prior: &RetfMatrix| -> Result<_, CliError> {
            let init = match solve_unconstrained(prior, &est.psi_xe_hat) {
                Ok(seed) => Init::ConventionalSeed(seed),
                Err(_) => Init::SumConstraint,
            };
            Ok(solve_square_root_mp(&SquareRootProblem {
                psi_sqrt_hat: EarlySqrt::new(est.psi_xe_sqrt_hat.matrix().clone())?,
                retf_hat: prior.clone(),
                alpha: alpha_sqrt,
                i_max: cfg.solver.i_max,
                tol: cfg.solver.tol,
                init,
            })?)
        };

        let plain = solve_sqrt(&steering)?;
        result.sqrt.push(plain.phi_s_hat.values().iter().copied().collect());

        if sec.retf_update {
            let sol = solve_sqrt(&prior_up)?;
            result
                .sqrt_up
                .push(sol.phi_s_hat.values().iter().copied().collect());
            let update_cfg = RetfUpdateConfig {
                beta: beta_of_bin[bin],
                xi_th_db: sec.xi_th_db,
                // Limit updates in frames dominated by late reverberation.
                phi_reg: est.phi_xl_hat.max(0.0),
            };
            let xi = power_ratio(&sol.phi_s_hat, update_cfg.phi_reg);
            let gates = gate(&xi, &update_cfg);
            prior_up = update_retf(
                &prior_up,
                &est.psi_xe_sqrt_hat,
                &sol.omega_hat,
                &sol.phi_sqrt_hat,
                &gates,
            )?;
        } else {
            result.sqrt_up.push(vec![0.0; n]);
        }
    }
    Ok(result)
}

fn tracks_from_bins(
    bins: &[BinResult],
    pick: impl Fn(&BinResult) -> &Vec<Vec<f64>>,
    n_sources: usize,
    n_frames: usize,
    n_bins: usize,
) -> Result<PsdTrack, CliError> {
    let mut t = Track::zeros(n_sources, n_frames, n_bins);
    for b in bins {
        let per_frame = pick(b);
        for (l, phis) in per_frame.iter().enumerate() {
            for (s, &v) in phis.iter().enumerate() {
                *t.get_mut(s, l, b.bin) = v.max(0.0);
            }
        }
    }
    Ok(PsdTrack::new(t)?)
}

/// Median per-band Laplace diversity fitted to the real and imaginary
/// parts of the early-source STFT coefficients, mapped back to per-bin
/// blend regularizers `beta = factor * b^2`.
fn fit_beta_per_bin(
    early_stfts: &[early_psd::stft::StftTensor],
    n_bins: usize,
    sample_rate: f64,
    n_stft: usize,
    factor: f64,
) -> Vec<f64> {
    let edges = {
        // Reuse the analysis bands: contiguous third-octave partition.
        let half = 2f64.powf(1.0 / 6.0);
        let mut v = Vec::new();
        for k in -30..40 {
            let fc = 1000.0 * 2f64.powf(k as f64 / 3.0);
            if fc * half <= 0.0 || fc / half >= sample_rate / 2.0 {
                continue;
            }
            v.push((fc / half, (fc * half).min(sample_rate / 2.0)));
        }
        v
    };
    let bin_hz = sample_rate / n_stft as f64;
    let mut beta = vec![0.0f64; n_bins];
    let mut global_abs = 0.0f64;
    let mut global_count = 0usize;
    for &(lo, hi) in &edges {
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for t in early_stfts {
            for k in 0..n_bins.min(t.bins()) {
                let f = k as f64 * bin_hz;
                if f < lo || f >= hi {
                    continue;
                }
                for l in 0..t.frames() {
                    let z = t.get(l, k, 0);
                    acc += z.re.abs() + z.im.abs();
                    count += 2;
                }
            }
        }
        if count == 0 {
            continue;
        }
        let scale = acc / count as f64; // Laplace scale s = mean |x|
        let b = 2.0 * scale;
        global_abs += acc;
        global_count += count;
        for (k, slot) in beta.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            if f >= lo && f < hi {
                *slot = factor * b * b;
            }
        }
    }
    // Bins outside every band (DC) use the global fit.
    if global_count > 0 {
        let b = 2.0 * global_abs / global_count as f64;
        for slot in beta.iter_mut() {
            if *slot == 0.0 {
                *slot = factor * b * b;
            }
        }
    }
    beta
}

/// Full acoustic run; returns one row per (band, metric, method).
pub fn run_acoustic(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>, CliError> {
    let sec = cfg.acoustic.as_ref().expect("validated");
    let geom = model::geometry(&cfg.scene)?;
    let n = sec.source_doas_deg.len();
    let m = geom.mics();
    let fs = sec.sample_rate_hz;
    let material = gather_material(cfg, sec, &geom)?;

    // Microphone mixture: each source convolved with its RIR per mic,
    // truncated to the source duration.
    let len = material.sources.iter().map(|s| s.len()).min().unwrap();
    let mut channels = vec![vec![0.0f64; len]; m];
    for (si, src) in material.sources.iter().enumerate() {
        for (mi, chan) in channels.iter_mut().enumerate() {
            let conv = convolve(src.channel(0), &material.rirs[si * m + mi].taps);
            for (t, slot) in chan.iter_mut().enumerate() {
                *slot += conv[t];
            }
        }
    }
    let mics = Waveform::new(channels, fs)?;

    // Transform-domain processing.
    let stft = stft_analyze(&mics, sec.n_stft)?;
    verify_roundtrip(&mics, &stft)?;

    // Reference early PSDs and the per-band regularizer fit.
    let early_stfts: Vec<early_psd::stft::StftTensor> = material
        .sources
        .iter()
        .enumerate()
        .map(|(si, src)| {
            let rir = &material.rirs[si * m];
            let early = &rir.taps[..rir.early_len];
            let w = Waveform::mono(convolve(src.channel(0), early), fs)?;
            Ok(stft_analyze(&w, sec.n_stft)?)
        })
        .collect::<Result<_, CliError>>()?;
    let references: Vec<PsdTrack> = material
        .sources
        .iter()
        .enumerate()
        .map(|(si, src)| {
            Ok(reference_early_psd(src, &material.rirs[si * m], sec.n_stft)?)
        })
        .collect::<Result<_, CliError>>()?;

    let n_frames = stft
        .frames()
        .min(references.iter().map(|r| r.track().frames()).min().unwrap());
    let n_bins = stft.bins();
    let zeta = (-(sec.n_stft as f64) / (2.0 * fs as f64 * sec.tau_smooth_ms / 1000.0)).exp();
    let beta_of_bin = fit_beta_per_bin(
        &early_stfts,
        n_bins,
        fs as f64,
        sec.n_stft,
        sec.beta_factor,
    );

    let bins: Vec<BinResult> = (0..n_bins)
        .into_par_iter()
        .map(|k| process_bin(cfg, sec, &geom, &stft, k, n_frames, zeta, &beta_of_bin))
        .collect::<Result<_, _>>()?;

    let reference = {
        let trimmed: Vec<PsdTrack> = references
            .iter()
            .map(|r| {
                let t = Track::from_fn(1, n_frames, n_bins, |_, l, k| r.track().get(0, l, k));
                PsdTrack::new(t).map_err(CliError::from)
            })
            .collect::<Result<_, _>>()?;
        PsdTrack::stack(&trimmed)?
    };

    let mut rows = Vec::new();
    let methods: Vec<(&str, PsdTrack)> = {
        let mut v = vec![
            ("conv", tracks_from_bins(&bins, |b| &b.conv, n, n_frames, n_bins)?),
            ("sqrt", tracks_from_bins(&bins, |b| &b.sqrt, n, n_frames, n_bins)?),
        ];
        if sec.retf_update {
            v.push(("sqrt_up", tracks_from_bins(&bins, |b| &b.sqrt_up, n, n_frames, n_bins)?));
        }
        v
    };

    for (name, track) in &methods {
        let decomp = decompose_tracks(track, &reference)?;
        verify_decomposition(track, &decomp)?;
        let report = band_ratios(&decomp, fs as f64, sec.n_stft, &BandSpec::ThirdOctave)?;
        for band in &report.bands {
            for (metric, value) in [
                (format!("sir_{name}_db"), band.sir_db),
                (format!("sar_{name}_db"), band.sar_db),
                (format!("sdr_{name}_db"), band.sdr_db),
            ] {
                let mut row = ResultRow::new("acoustic", "median", metric, value);
                row.band_lo_hz = Some(band.lo_hz);
                row.band_hi_hz = Some(band.hi_hz);
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// Interior samples must survive analysis/synthesis to machine precision.
fn verify_roundtrip(
    mics: &Waveform,
    stft: &early_psd::stft::StftTensor,
) -> Result<(), CliError> {
    let back = stft_synthesize(stft)?;
    let n = stft.n_stft;
    let lo = n / 2;
    let hi = mics.len().min(back.len()).saturating_sub(n / 2);
    for c in 0..mics.channels() {
        for i in lo..hi {
            let err = (back.channel(c)[i] - mics.channel(c)[i]).abs();
            if err > 1e-10 {
                return Err(CliError::Compute(format!(
                    "stft round trip violated at channel {c} sample {i}: error {err}"
                )));
            }
        }
    }
    Ok(())
}

/// The decomposition must reconstruct the square-root track exactly and its
/// parts must be mutually orthogonal over frames.
fn verify_decomposition(
    track: &PsdTrack,
    d: &early_psd::metrics::TrackDecomposition,
) -> Result<(), CliError> {
    let t = track.track();
    for s in 0..t.sources() {
        for k in 0..t.bins() {
            let mut dot_bi = 0.0f64;
            let mut dot_ba = 0.0f64;
            let mut dot_ia = 0.0f64;
            let mut scale = 0.0f64;
            for l in 0..t.frames() {
                let y = t.get(s, l, k).sqrt();
                let b = d.bar.get(s, l, k);
                let i = d.e_int.get(s, l, k);
                let a = d.e_art.get(s, l, k);
                if (b + i + a - y).abs() > 1e-10 * y.abs().max(1.0) {
                    return Err(CliError::Compute(
                        "track decomposition does not reconstruct the estimate".into(),
                    ));
                }
                dot_bi += b * i;
                dot_ba += b * a;
                dot_ia += i * a;
                scale = scale.max(b * b).max(i * i).max(a * a);
            }
            let tol = 1e-8 * scale.max(1e-30) * t.frames() as f64;
            if dot_bi.abs() > tol || dot_ba.abs() > tol || dot_ia.abs() > tol {
                return Err(CliError::Compute(
                    "track decomposition parts are not orthogonal".into(),
                ));
            }
        }
    }
    Ok(())
}
