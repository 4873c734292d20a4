//! Reverse-diffusion sampling, classifier-free style guidance and long-form
//! synthesis by splicing clips with seed handoff.

use log::debug;
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{Conditioning, Denoiser, X0Predictor};
use crate::diffusion::{posterior_step, NoiseSchedule};
use crate::error::{Error, Result};
use crate::features::{features_to_motion, FeatureJoints, GestureFeatureSeq, Standardizer};
use crate::motion::{write_bvh, MotionSequence, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerOptions {
    /// Guidance scale; 0 is purely conditional, -1 purely speaker-masked.
    pub gamma: f64,
    /// Skip the fresh noise of each reverse step (the initial draw stays).
    pub zero_noise: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            gamma: 0.0,
            zero_noise: false,
        }
    }
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// `(1 + gamma) * D(x_t, c) - gamma * D(x_t, c with speaker masked)`.
pub fn guided_denoise<P: X0Predictor + ?Sized>(
    model: &P,
    x_t: &Array2<f64>,
    t: usize,
    cond: &Conditioning,
    gamma: f64,
) -> Result<Array2<f64>> {
    if !(gamma >= -1.0) {
        return Err(Error::Invalid(format!("guidance scale {gamma} is below -1")));
    }
    let conditional = model.predict_x0(x_t, t, cond)?;
    if gamma == 0.0 {
        return Ok(conditional);
    }
    let masked = model.predict_x0(x_t, t, &cond.speaker_masked())?;
    Ok(conditional * (1.0 + gamma) - masked * gamma)
}

/// Draws one clip of `n_seed + n_pred` frames, starting from standard
/// normal noise and running the reverse process down to step 1.
pub fn sample_clip<P: X0Predictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    cond: &Conditioning,
    options: SamplerOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Array2<f64>> {
    let rows = cond.seed.nrows() + cond.n_pred();
    let width = cond.seed.ncols();
    let mut x = gaussian(rows, width, rng);
    let zeros = Array2::zeros((rows, width));
    for t in (1..=schedule.steps()).rev() {
        let x0_hat = guided_denoise(model, &x, t, cond, options.gamma)?;
        x = if t == 1 || options.zero_noise {
            posterior_step(&x, &x0_hat, t, &zeros, schedule)?
        } else {
            posterior_step(&x, &x0_hat, t, &gaussian(rows, width, rng), schedule)?
        };
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("sampled clip is not finite".into()));
    }
    Ok(x)
}

/// Inputs for long-form synthesis. `audio` and `text` are frame-aligned
/// over the whole utterance; `seed` is `n_seed` standardized gesture rows
/// (zeros give the mean pose).
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub audio: Array2<f64>,
    pub text: Array2<f64>,
    pub speaker: usize,
    pub seed: Array2<f64>,
    pub options: SamplerOptions,
    pub rng_seed: u64,
    /// Frames of linear crossfade at each clip boundary; 0 disables it.
    pub blend_frames: usize,
}

impl GenerationRequest {
    pub fn num_frames(&self) -> usize {
        self.audio.nrows()
    }

    fn check(&self) -> Result<()> {
        if self.audio.nrows() == 0 {
            return Err(Error::Invalid("audio features are empty".into()));
        }
        if self.audio.nrows() != self.text.nrows() {
            return Err(Error::Shape(format!(
                "audio has {} frames, text has {}",
                self.audio.nrows(),
                self.text.nrows()
            )));
        }
        if self.seed.nrows() == 0 {
            return Err(Error::Shape("seed gesture is empty".into()));
        }
        Ok(())
    }
}

/// Rows `start .. start + len` of `m`, zero-filled where out of range.
fn rows_padded(m: &Array2<f64>, start: isize, len: usize) -> Array2<f64> {
    let mut out = Array2::zeros((len, m.ncols()));
    for i in 0..len {
        let src = start + i as isize;
        if src >= 0 && (src as usize) < m.nrows() {
            out.row_mut(i).assign(&m.row(src as usize));
        }
    }
    out
}

/// Standardized output of [`generate_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedFeatures {
    /// One row per input frame.
    pub frames: Array2<f64>,
    /// Every sampled clip, seed rows included.
    pub clips: Vec<Array2<f64>>,
    /// The seed each clip was conditioned on.
    pub seeds: Vec<Array2<f64>>,
}

/// Splits the utterance into `n_pred`-frame segments (the last one
/// zero-padded), samples one clip per segment, hands the last `n_seed`
/// frames of each clip to the next as its seed, and keeps the predicted
/// rows, truncated to the input length.
pub fn generate_features<P: X0Predictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    request: &GenerationRequest,
    n_pred: usize,
) -> Result<GeneratedFeatures> {
    request.check()?;
    if n_pred == 0 {
        return Err(Error::Invalid("n_pred must be positive".into()));
    }
    let n_seed = request.seed.nrows();
    let total = request.num_frames();
    let segments = total.div_ceil(n_pred);
    let mut rng = ChaCha8Rng::seed_from_u64(request.rng_seed);
    let mut seed = request.seed.clone();
    let mut emitted: Vec<Array2<f64>> = Vec::with_capacity(segments);
    let (mut clips, mut seeds) = (Vec::with_capacity(segments), Vec::with_capacity(segments));
    for k in 0..segments {
        let start = (k * n_pred) as isize;
        let cond = Conditioning::new(
            seed.clone(),
            rows_padded(&request.audio, start, n_pred),
            rows_padded(&request.text, start, n_pred),
            request.speaker,
        )
        .with_lead(
            rows_padded(&request.audio, start - n_seed as isize, n_seed),
            rows_padded(&request.text, start - n_seed as isize, n_seed),
        );
        let clip = sample_clip(model, schedule, &cond, request.options, &mut rng)?;
        debug!("sampled clip {}/{segments}", k + 1);
        let mut pred = clip.slice(s![n_seed.., ..]).to_owned();
        if request.blend_frames > 0 {
            if let Some(prev) = emitted.last() {
                let last = prev.row(prev.nrows() - 1).to_owned();
                let b = request.blend_frames.min(pred.nrows());
                for i in 0..b {
                    let w = (i + 1) as f64 / (b + 1) as f64;
                    let mixed = &last * (1.0 - w) + &pred.row(i) * w;
                    pred.row_mut(i).assign(&mixed);
                }
            }
        }
        seeds.push(seed);
        seed = clip.slice(s![clip.nrows() - n_seed.., ..]).to_owned();
        clips.push(clip);
        emitted.push(pred);
    }
    let views: Vec<_> = emitted.iter().map(|m| m.view()).collect();
    let all = ndarray::concatenate(ndarray::Axis(0), &views).expect("uniform widths");
    Ok(GeneratedFeatures {
        frames: all.slice(s![..total, ..]).to_owned(),
        clips,
        seeds,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratedMotion {
    pub standardized: GeneratedFeatures,
    /// De-standardized gesture features.
    pub features: GestureFeatureSeq,
    pub motion: MotionSequence,
    pub bvh: String,
}

/// Full synthesis: sampling, de-standardization, conversion to Euler
/// channels and BVH text.
pub fn generate_long(
    model: &Denoiser,
    schedule: &NoiseSchedule,
    request: &GenerationRequest,
    standardizer: &Standardizer,
    skeleton: &Skeleton,
    joints: &FeatureJoints,
) -> Result<GeneratedMotion> {
    let generated = generate_features(model, schedule, request, model.config().n_pred)?;
    if standardizer.dim() != generated.frames.ncols() {
        return Err(Error::Shape(format!(
            "standardizer is {} wide, model emits {}",
            standardizer.dim(),
            generated.frames.ncols()
        )));
    }
    let features = GestureFeatureSeq::new(crate::dims::FPS, standardizer.invert(&generated.frames))?;
    let motion = features_to_motion(&features, skeleton, joints)?;
    let bvh = write_bvh(skeleton, &motion)?;
    Ok(GeneratedMotion {
        standardized: generated,
        features,
        motion,
        bvh,
    })
}
