//! Audio conditioning features on a 25 ms / 10 ms analysis grid, aligned to
//! the 30 fps gesture frames.
//!
//! Column layout: MFCC (40) | log-mel (64) | pitch (F0 / 500 Hz, voicing) |
//! energy (RMS, delta RMS) | pretrained embedding (1024) | onset strength.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::dims::{AUDIO_WIDTH, EMBEDDING, ENERGY, MEL, MFCC, PITCH};
use crate::error::{Error, Result};

pub const ANALYSIS_RATE: u32 = 16_000;
pub const WINDOW: usize = 400;
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const MIN_SAMPLE_RATE: u32 = 8_000;
pub const LOG_FLOOR: f64 = 1e-10;
pub const F0_MIN: f64 = 60.0;
pub const F0_MAX: f64 = 500.0;
pub const F0_NORM: f64 = 500.0;
const VOICING_THRESHOLD: f64 = 0.5;
const SILENCE_RMS: f64 = 1e-4;

const COL_MEL: usize = MFCC;
const COL_PITCH: usize = COL_MEL + MEL;
const COL_ENERGY: usize = COL_PITCH + PITCH;
const COL_EMBED: usize = COL_ENERGY + ENERGY;
const COL_ONSET: usize = COL_EMBED + EMBEDDING;
/// Width of the analysis-rate block (everything but the embedding).
const ACOUSTIC_WIDTH: usize = AUDIO_WIDTH - EMBEDDING;

/// N x 1133 audio features at 30 fps.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureSeq {
    pub frames: Array2<f64>,
}

impl AudioFeatureSeq {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != AUDIO_WIDTH {
            return Err(Error::Shape(format!(
                "audio features must be {AUDIO_WIDTH} wide, got {}",
                frames.ncols()
            )));
        }
        Ok(AudioFeatureSeq { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn mfcc(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., ..COL_MEL])
    }

    pub fn mel(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., COL_MEL..COL_PITCH])
    }

    pub fn pitch(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., COL_PITCH..COL_ENERGY])
    }

    pub fn energy(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., COL_ENERGY..COL_EMBED])
    }

    pub fn embedding(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., COL_EMBED..COL_ONSET])
    }

    pub fn onset(&self) -> ArrayView2<'_, f64> {
        self.frames.slice(s![.., COL_ONSET..])
    }
}

/// Stretches `features` (M rows) onto `target` rows by per-column linear
/// interpolation, first and last rows mapped onto each other.
pub fn align_to_frames(features: ArrayView2<'_, f64>, target: usize) -> Result<Array2<f64>> {
    let m = features.nrows();
    if m < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 source rows to interpolate, got {m}"
        )));
    }
    if target == 0 {
        return Err(Error::Invalid("target frame count must be positive".into()));
    }
    let mut out = Array2::zeros((target, features.ncols()));
    let scale = if target > 1 {
        (m - 1) as f64 / (target - 1) as f64
    } else {
        0.0
    };
    for i in 0..target {
        let pos = (i as f64 * scale).clamp(0.0, (m - 1) as f64);
        let lo = (pos.floor() as usize).min(m - 2);
        let frac = pos - lo as f64;
        let mut dst = out.row_mut(i);
        let (a, b) = (features.row(lo), features.row(lo + 1));
        for ((d, &x), &y) in dst.iter_mut().zip(a.iter()).zip(b.iter()) {
            *d = x + (y - x) * frac;
        }
    }
    Ok(out)
}

pub fn resample_linear(samples: &[f32], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return samples.iter().map(|&v| v as f64).collect();
    }
    let n_out = ((samples.len() as f64) * to as f64 / from as f64).round().max(1.0) as usize;
    let step = from as f64 / to as f64;
    let last = samples.len() - 1;
    (0..n_out)
        .map(|i| {
            let pos = i as f64 * step;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            samples[lo] as f64 * (1.0 - frac) + samples[hi] as f64 * frac
        })
        .collect()
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters over `0..sample_rate/2`, shape bands x bins.
pub fn mel_filterbank(bands: usize, n_fft: usize, sample_rate: u32) -> Array2<f64> {
    let bins = n_fft / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let (lo, hi) = (hz_to_mel(0.0), hz_to_mel(nyquist));
    let edges: Vec<f64> = (0..bands + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((bands, bins));
    for b in 0..bands {
        let (l, c, r) = (edges[b], edges[b + 1], edges[b + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > l && f <= c {
                (f - l) / (c - l)
            } else if f > c && f < r {
                (r - f) / (r - c)
            } else {
                0.0
            };
            fb[[b, k]] = w;
        }
    }
    fb
}

/// Orthonormal DCT-II matrix, shape n_out x n_in.
fn dct_matrix(n_out: usize, n_in: usize) -> Array2<f64> {
    Array2::from_shape_fn((n_out, n_in), |(k, n)| {
        let norm = if k == 0 {
            (1.0 / n_in as f64).sqrt()
        } else {
            (2.0 / n_in as f64).sqrt()
        };
        norm * (PI * k as f64 * (n as f64 + 0.5) / n_in as f64).cos()
    })
}

/// Normalized-autocorrelation pitch of one frame: (F0 in Hz, voiced).
pub fn autocorrelation_pitch(frame: &[f64], sample_rate: u32) -> (f64, bool) {
    let sr = sample_rate as f64;
    let min_lag = (sr / F0_MAX).floor() as usize;
    let max_lag = ((sr / F0_MIN).ceil() as usize).min(frame.len() - 2);
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let x: Vec<f64> = frame.iter().map(|v| v - mean).collect();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms < SILENCE_RMS || min_lag >= max_lag {
        return (0.0, false);
    }
    let corr = |lag: usize| {
        let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
        for n in 0..x.len() - lag {
            xy += x[n] * x[n + lag];
            xx += x[n] * x[n];
            yy += x[n + lag] * x[n + lag];
        }
        if xx > 0.0 && yy > 0.0 {
            xy / (xx * yy).sqrt()
        } else {
            0.0
        }
    };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(corr).collect();
    let at = |lag: usize| r[lag + 1 - min_lag];
    let best = (min_lag..=max_lag).map(at).fold(f64::MIN, f64::max);
    if best < VOICING_THRESHOLD {
        return (0.0, false);
    }
    // Earliest local peak close to the global one avoids octave errors.
    let lag = (min_lag..=max_lag)
        .find(|&l| {
            let v = at(l);
            v >= 0.9 * best && v >= at(l - 1) && v >= at(l + 1)
        })
        .unwrap_or(min_lag);
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    (sr / (lag as f64 + shift), true)
}

struct Analyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Array2<f64>,
    dct: Array2<f64>,
}

impl Analyzer {
    fn new() -> Self {
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / WINDOW as f64).cos())
            .collect();
        Analyzer {
            fft: FftPlanner::new().plan_fft_forward(N_FFT),
            window,
            filterbank: mel_filterbank(MEL, N_FFT, ANALYSIS_RATE),
            dct: dct_matrix(MFCC, MEL),
        }
    }

    fn magnitude(&self, frame: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(N_FFT)
            .collect();
        self.fft.process(&mut buf);
        buf[..N_FFT / 2 + 1].iter().map(|c| c.norm()).collect()
    }

    /// M x (ACOUSTIC_WIDTH) features at the 100 Hz analysis rate.
    fn analyze(&self, signal: &[f64]) -> Array2<f64> {
        let mut padded = signal.to_vec();
        if padded.len() < WINDOW + HOP {
            padded.resize(WINDOW + HOP, 0.0);
        }
        let m = 1 + (padded.len() - WINDOW) / HOP;
        let mut out = Array2::zeros((m, ACOUSTIC_WIDTH));
        let mut prev_log_mag: Option<Vec<f64>> = None;
        let mut prev_rms = 0.0;
        for i in 0..m {
            let frame = &padded[i * HOP..i * HOP + WINDOW];
            let mag = self.magnitude(frame);
            let power = ndarray::Array1::from_iter(mag.iter().map(|v| v * v));
            let log_mel = self.filterbank.dot(&power).mapv(|e| e.max(LOG_FLOOR).ln());
            let mfcc = self.dct.dot(&log_mel);
            let (f0, voiced) = autocorrelation_pitch(frame, ANALYSIS_RATE);
            let rms = (frame.iter().map(|v| v * v).sum::<f64>() / WINDOW as f64).sqrt();
            let log_mag: Vec<f64> = mag.iter().map(|v| v.ln_1p()).collect();
            let flux = prev_log_mag
                .as_ref()
                .map_or(0.0, |p| log_mag.iter().zip(p).map(|(a, b)| (a - b).max(0.0)).sum());

            let mut row = out.row_mut(i);
            row.slice_mut(s![..COL_MEL]).assign(&mfcc);
            row.slice_mut(s![COL_MEL..COL_PITCH]).assign(&log_mel);
            row[COL_PITCH] = f0 / F0_NORM;
            row[COL_PITCH + 1] = if voiced { 1.0 } else { 0.0 };
            row[COL_ENERGY] = rms;
            row[COL_ENERGY + 1] = if i == 0 { 0.0 } else { rms - prev_rms };
            // the onset sits after the embedding in the final layout
            row[COL_EMBED] = flux;
            prev_rms = rms;
            prev_log_mag = Some(log_mag);
        }
        out
    }
}

/// Computes the N x 1133 audio features. `embedding` is an optional
/// precomputed M' x 1024 pretrained-model feature table; it is
/// interpolated to N rows, or zero-filled when absent.
pub fn extract_audio_features(
    samples: &[f32],
    sample_rate: u32,
    target_frames: usize,
    embedding: Option<&Array2<f64>>,
) -> Result<AudioFeatureSeq> {
    if sample_rate < MIN_SAMPLE_RATE {
        return Err(Error::Invalid(format!(
            "sample rate {sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz"
        )));
    }
    if samples.is_empty() {
        return Err(Error::Invalid("audio signal is empty".into()));
    }
    if target_frames == 0 {
        return Err(Error::Invalid("target frame count must be positive".into()));
    }
    if let Some(e) = embedding {
        if e.ncols() != EMBEDDING {
            return Err(Error::Shape(format!(
                "embedding sidecar has {} columns, expected {EMBEDDING}",
                e.ncols()
            )));
        }
        if e.nrows() < 2 {
            return Err(Error::Shape(format!(
                "embedding sidecar has {} rows, need at least 2",
                e.nrows()
            )));
        }
    }
    let signal = resample_linear(samples, sample_rate, ANALYSIS_RATE);
    let acoustic = align_to_frames(Analyzer::new().analyze(&signal).view(), target_frames)?;
    let mut frames = Array2::zeros((target_frames, AUDIO_WIDTH));
    frames
        .slice_mut(s![.., ..COL_EMBED])
        .assign(&acoustic.slice(s![.., ..COL_EMBED]));
    frames
        .slice_mut(s![.., COL_ONSET])
        .assign(&acoustic.slice(s![.., COL_EMBED]));
    if let Some(e) = embedding {
        frames
            .slice_mut(s![.., COL_EMBED..COL_ONSET])
            .assign(&align_to_frames(e.view(), target_frames)?);
    }
    AudioFeatureSeq::new(frames)
}

/// Mono samples in [-1, 1] and the sample rate. Multi-channel audio is
/// averaged to mono.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let mut reader = hound::WavReader::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format(path, e.to_string()))?
        }
    };
    let mono = raw
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / c.len() as f32)
        .collect();
    Ok((mono, spec.sample_rate))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let fail = |e: hound::Error| Error::format(path, e.to_string());
    let mut w = hound::WavWriter::create(path, spec).map_err(fail)?;
    for &s in samples {
        w.write_sample((s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)
            .map_err(fail)?;
    }
    w.finalize().map_err(fail)
}
