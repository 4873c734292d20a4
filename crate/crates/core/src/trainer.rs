//! Clip windowing, the training loop and the run configuration.

use std::io::Write;
use std::path::Path;

use log::{debug, info, warn};
use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{apply_condition_masks, Conditioning, Denoiser, DenoiserConfig, Sample};
use crate::diffusion::{cosine_schedule, q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::kv::KeyValues;
use crate::nn::AdamW;

pub use crate::denoiser::AblationLayout;

/// Frame-aligned features of one recording, before standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub name: String,
    pub gesture: Array2<f64>,
    pub audio: Array2<f64>,
    pub text: Array2<f64>,
    pub speaker: usize,
}

impl Session {
    pub fn num_frames(&self) -> usize {
        self.gesture.nrows()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.gesture.nrows();
        if self.audio.nrows() != n || self.text.nrows() != n {
            return Err(Error::Shape(format!(
                "session '{}': gesture {} rows, audio {}, text {}",
                self.name,
                n,
                self.audio.nrows(),
                self.text.nrows()
            )));
        }
        Ok(())
    }
}

/// One training window. The first `n_seed` gesture rows are the seed, the
/// rest are the prediction target; speech covers the target rows, and the
/// `lead_*` tables cover the seed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainClip {
    pub gesture: Array2<f64>,
    pub audio: Array2<f64>,
    pub text: Array2<f64>,
    pub lead_audio: Array2<f64>,
    pub lead_text: Array2<f64>,
    pub speaker: usize,
    pub session: usize,
    pub start: usize,
}

impl TrainClip {
    pub fn n_seed(&self) -> usize {
        self.lead_audio.nrows()
    }

    pub fn conditioning(&self) -> Conditioning {
        let ns = self.n_seed();
        Conditioning::new(
            self.gesture.slice(s![..ns, ..]).to_owned(),
            self.audio.clone(),
            self.text.clone(),
            self.speaker,
        )
        .with_lead(self.lead_audio.clone(), self.lead_text.clone())
    }

    pub fn target(&self) -> Array2<f64> {
        self.gesture.slice(s![self.n_seed().., ..]).to_owned()
    }
}

/// Start frames of every full window: `0, stride, 2 * stride, ...`.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if frames < window || stride == 0 {
        return Vec::new();
    }
    (0..=(frames - window) / stride).map(|k| k * stride).collect()
}

/// Cuts sessions into `n_seed + n_pred` windows and standardizes the
/// gesture rows. Sessions shorter than one window are skipped.
pub fn window_dataset(
    sessions: &[Session],
    standardizer: &Standardizer,
    n_seed: usize,
    n_pred: usize,
    stride: usize,
) -> Result<Vec<TrainClip>> {
    if stride == 0 {
        return Err(Error::Invalid("window stride must be positive".into()));
    }
    let len = n_seed + n_pred;
    let mut clips = Vec::new();
    for (si, session) in sessions.iter().enumerate() {
        session.check()?;
        if session.num_frames() < len {
            warn!(
                "skipping session '{}': {} frames is shorter than one {len}-frame window",
                session.name,
                session.num_frames()
            );
            continue;
        }
        let gesture = standardizer.apply(&session.gesture);
        for start in window_starts(session.num_frames(), len, stride) {
            let seed_rows = s![start..start + n_seed, ..];
            let pred_rows = s![start + n_seed..start + len, ..];
            clips.push(TrainClip {
                gesture: gesture.slice(s![start..start + len, ..]).to_owned(),
                audio: session.audio.slice(pred_rows).to_owned(),
                text: session.text.slice(pred_rows).to_owned(),
                lead_audio: session.audio.slice(seed_rows).to_owned(),
                lead_text: session.text.slice(seed_rows).to_owned(),
                speaker: session.speaker,
                session: si,
                start,
            });
        }
    }
    Ok(clips)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub diffusion_steps: usize,
    pub p_mask: f64,
    pub mask_seed: bool,
    pub huber_delta: f64,
    pub stride: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 8,
            lr: 3e-5,
            weight_decay: 0.0,
            diffusion_steps: 50,
            p_mask: 0.1,
            mask_seed: false,
            huber_delta: 1.0,
            stride: 30,
            seed: 0,
        }
    }
}

/// Model and optimization settings, stored together as one flat file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: DenoiserConfig,
    pub train: TrainConfig,
}

const TRAIN_KEYS: [&str; 10] = [
    "steps",
    "batch_size",
    "lr",
    "weight_decay",
    "diffusion_steps",
    "p_mask",
    "mask_seed",
    "huber_delta",
    "stride",
    "seed",
];

impl RunConfig {
    pub fn desk() -> Self {
        RunConfig::default()
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = self.model.to_kv();
        let t = &self.train;
        kv.set("steps", t.steps);
        kv.set("batch_size", t.batch_size);
        kv.set("lr", t.lr);
        kv.set("weight_decay", t.weight_decay);
        kv.set("diffusion_steps", t.diffusion_steps);
        kv.set("p_mask", t.p_mask);
        kv.set("mask_seed", t.mask_seed);
        kv.set("huber_delta", t.huber_delta);
        kv.set("stride", t.stride);
        kv.set("seed", t.seed);
        kv
    }

    /// Starts from the preset named by `preset` (default desk) and applies
    /// every other key. Unknown keys are rejected.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut known: Vec<&str> = DenoiserConfig::known_keys().to_vec();
        known.extend(TRAIN_KEYS);
        known.push("preset");
        if let Some(k) = kv.unknown_keys(&known).first() {
            return Err(Error::Invalid(format!("unknown config key '{k}'")));
        }
        let base = match kv.raw("preset") {
            Some(p) => DenoiserConfig::preset(p)?,
            None => DenoiserConfig::desk(),
        };
        let model = base.apply_kv(kv)?;
        let mut t = TrainConfig::default();
        kv.read_into("steps", &mut t.steps)?;
        kv.read_into("batch_size", &mut t.batch_size)?;
        kv.read_into("lr", &mut t.lr)?;
        kv.read_into("weight_decay", &mut t.weight_decay)?;
        kv.read_into("diffusion_steps", &mut t.diffusion_steps)?;
        kv.read_into("p_mask", &mut t.p_mask)?;
        kv.read_into("mask_seed", &mut t.mask_seed)?;
        kv.read_into("huber_delta", &mut t.huber_delta)?;
        kv.read_into("stride", &mut t.stride)?;
        kv.read_into("seed", &mut t.seed)?;
        let run = RunConfig { model, train: t };
        run.validate()?;
        Ok(run)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::from_kv(&KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = &self.train;
        if t.batch_size == 0 || t.diffusion_steps == 0 || t.stride == 0 {
            return Err(Error::Invalid(
                "batch_size, diffusion_steps and stride must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&t.p_mask) {
            return Err(Error::Invalid(format!("p_mask {} outside [0, 1]", t.p_mask)));
        }
        if !(t.lr >= 0.0 && t.weight_decay >= 0.0 && t.huber_delta > 0.0) {
            return Err(Error::Invalid(
                "lr and weight_decay must be >= 0, huber_delta > 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    /// Mean training loss of every step.
    pub losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn write_loss_csv(&self, path: &Path) -> Result<()> {
        write_loss_csv(&self.losses, path)
    }
}

pub fn write_loss_csv(losses: &[f64], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        body.push_str(&format!("{},{l}\n", i + 1));
    }
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

fn check_clips(clips: &[TrainClip], config: &DenoiserConfig) -> Result<()> {
    if clips.is_empty() {
        return Err(Error::Invalid("no training clips".into()));
    }
    for (i, c) in clips.iter().enumerate() {
        c.conditioning()
            .check(config)
            .map_err(|e| Error::Shape(format!("clip {i}: {e}")))?;
        if c.gesture.nrows() != config.clip_frames() {
            return Err(Error::Shape(format!(
                "clip {i}: {} gesture rows, expected {}",
                c.gesture.nrows(),
                config.clip_frames()
            )));
        }
    }
    Ok(())
}

/// Trains a fresh model from `run.train.seed`.
pub fn train(clips: &[TrainClip], run: &RunConfig) -> Result<TrainOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
    let model = Denoiser::new(run.model.clone(), &mut rng)?;
    train_from(model, clips, run, &mut rng)
}

/// Continues training `model`. Every random draw (batch order, noising
/// steps, noise, masks, dropout) comes from `rng`.
pub fn train_from(
    mut model: Denoiser,
    clips: &[TrainClip],
    run: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    run.validate()?;
    check_clips(clips, model.config())?;
    let t = &run.train;
    let schedule = cosine_schedule(t.diffusion_steps);
    let mut opt = AdamW::new(model.params(), t.lr, t.weight_decay);
    let mut order: Vec<usize> = (0..clips.len()).collect();
    let mut cursor = order.len();
    let mut losses = Vec::with_capacity(t.steps);
    let conds: Vec<Conditioning> = clips.iter().map(TrainClip::conditioning).collect();
    let targets: Vec<Array2<f64>> = clips.iter().map(TrainClip::target).collect();
    let batch = t.batch_size.min(clips.len());
    for step in 1..=t.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let mut noisy = Vec::with_capacity(batch);
        for &i in &picked {
            let step_t = schedule.sample_step(rng);
            let eps = gaussian(clips[i].gesture.nrows(), clips[i].gesture.ncols(), rng);
            let x_t = q_sample(&clips[i].gesture, step_t, &eps, &schedule)?;
            let cond = apply_condition_masks(&conds[i], t.p_mask, t.mask_seed, rng);
            noisy.push((x_t, step_t, cond));
        }
        let samples: Vec<Sample> = noisy
            .iter()
            .map(|(x, st, c)| Sample {
                x_t: x,
                t: *st,
                cond: c,
            })
            .collect();
        let batch_targets: Vec<Array2<f64>> = picked.iter().map(|&i| targets[i].clone()).collect();
        let (loss, grads) = model
            .loss_and_grads(&samples, &batch_targets, t.huber_delta, Some(rng))
            .map_err(|e| Error::Numeric(format!("training step {step}: {e}")))?;
        opt.step(model.params_mut(), &grads);
        if !model.params().all_finite() {
            return Err(Error::Numeric(format!(
                "training step {step}: parameters became non-finite"
            )));
        }
        losses.push(loss);
        if step % 100 == 0 || step == 1 {
            debug!("step {step}: loss {loss:.6}");
        }
    }
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        info!("trained {} steps, loss {first:.5} -> {last:.5}", losses.len());
    }
    Ok(TrainOutcome {
        model,
        schedule,
        losses,
    })
}

/// A fixed set of (clip, noising step, noise) triples for comparing a
/// model's loss before and after training without sampling noise.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    items: Vec<(usize, usize, Array2<f64>)>,
}

impl ProbeSet {
    /// `per_clip` probes per clip at evenly spaced noising steps.
    pub fn new(clips: &[TrainClip], schedule: &NoiseSchedule, per_clip: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let steps = schedule.steps();
        let mut items = Vec::new();
        for (i, c) in clips.iter().enumerate() {
            for k in 0..per_clip {
                let t = 1 + (k * steps) / per_clip.max(1);
                items.push((
                    i,
                    t.min(steps),
                    gaussian(c.gesture.nrows(), c.gesture.ncols(), &mut rng),
                ));
            }
        }
        ProbeSet { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Mean Huber loss of `model` over the probes, with no masking or dropout.
    pub fn loss(&self, model: &Denoiser, clips: &[TrainClip], schedule: &NoiseSchedule, delta: f64) -> Result<f64> {
        let mut total = 0.0;
        for (i, t, eps) in &self.items {
            let clip = &clips[*i];
            let x_t = q_sample(&clip.gesture, *t, eps, schedule)?;
            let cond = clip.conditioning();
            total += model.loss(
                &[Sample {
                    x_t: &x_t,
                    t: *t,
                    cond: &cond,
                }],
                &[clip.target()],
                delta,
            )?;
        }
        Ok(total / self.items.len().max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;

    fn tiny_session(frames: usize, rng: &mut ChaCha8Rng, cfg: &DenoiserConfig) -> Session {
        Session {
            name: "s".into(),
            gesture: gaussian(frames, cfg.gesture_width, rng),
            audio: gaussian(frames, cfg.audio_width, rng),
            text: gaussian(frames, cfg.text_width, rng),
            speaker: 1,
        }
    }

    fn identity_standardizer(width: usize) -> Standardizer {
        Standardizer {
            mean: ndarray::Array1::zeros(width),
            std: ndarray::Array1::ones(width),
        }
    }

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_starts(150, 150, 30), vec![0]);
        assert_eq!(window_starts(300, 150, 30), vec![0, 30, 60, 90, 120, 150]);
        assert_eq!(window_starts(149, 150, 30), Vec::<usize>::new());
        assert_eq!(window_starts(179, 150, 30), vec![0]);
    }

    #[test]
    fn windows_slice_aligned_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = DenoiserConfig::desk();
        let sessions = vec![
            tiny_session(300, &mut rng, &cfg),
            tiny_session(100, &mut rng, &cfg),
            tiny_session(150, &mut rng, &cfg),
        ];
        let clips = window_dataset(&sessions, &identity_standardizer(cfg.gesture_width), 30, 120, 30).unwrap();
        assert_eq!(clips.len(), 7);
        for c in &clips {
            assert_eq!(c.audio.nrows(), 120);
            assert_eq!(c.text.nrows(), 120);
            assert_eq!(c.gesture.nrows(), 150);
            let s = &sessions[c.session];
            assert_eq!(c.audio.row(0), s.audio.row(c.start + 30));
            assert_eq!(c.lead_audio.row(0), s.audio.row(c.start));
            assert_eq!(c.gesture.row(149), s.gesture.row(c.start + 149));
        }
        assert_eq!(clips[5].start, 150);
        assert_eq!(clips[6].session, 2);
    }

    #[test]
    fn run_config_round_trip_and_unknown_keys() {
        let mut run = RunConfig::desk();
        run.train.lr = 1e-3;
        run.train.steps = 7;
        run.model.layout = AblationLayout::FullLengthSeed;
        let back = RunConfig::from_kv(&run.to_kv()).unwrap();
        assert_eq!(back, run);
        let kv = KeyValues::parse("preset = tiny\nsteps = 3\n").unwrap();
        let r = RunConfig::from_kv(&kv).unwrap();
        assert_eq!((r.model.latent_dim, r.train.steps), (16, 3));
        assert!(RunConfig::from_kv(&KeyValues::parse("stepz = 3").unwrap()).is_err());
    }

    fn tiny_run(steps: usize, lr: f64) -> (Vec<TrainClip>, RunConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = DenoiserConfig::tiny();
        let sessions = vec![tiny_session(40, &mut rng, &cfg), tiny_session(30, &mut rng, &cfg)];
        let clips = window_dataset(&sessions, &identity_standardizer(cfg.gesture_width), 8, 16, 4).unwrap();
        let run = RunConfig {
            model: cfg,
            train: TrainConfig {
                steps,
                batch_size: 2,
                lr,
                diffusion_steps: 10,
                ..TrainConfig::default()
            },
        };
        (clips, run)
    }

    #[test]
    fn zero_learning_rate_leaves_params_untouched() {
        let (clips, run) = tiny_run(5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(run.train.seed);
        let init = Denoiser::new(run.model.clone(), &mut rng).unwrap();
        let out = train(&clips, &run).unwrap();
        assert_eq!(out.model.params(), init.params());
        assert_eq!(out.losses.len(), 5);
    }

    #[test]
    fn training_is_deterministic() {
        let (clips, run) = tiny_run(6, 1e-2);
        let a = train(&clips, &run).unwrap();
        let b = train(&clips, &run).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn loss_reads_only_predicted_rows() {
        let (clips, run) = tiny_run(1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut model = Denoiser::new(run.model.clone(), &mut rng).unwrap();
        let ps = model.params_mut();
        for i in 0..ps.len() {
            let noise = gaussian(ps.value(i).nrows(), ps.value(i).ncols(), &mut rng);
            *ps.value_mut(i) += &(noise * 0.2);
        }
        let clip = &clips[0];
        let x = gaussian(clip.gesture.nrows(), clip.gesture.ncols(), &mut rng);
        let cond = clip.conditioning();
        let loss = model
            .loss(
                &[Sample {
                    x_t: &x,
                    t: 3,
                    cond: &cond,
                }],
                &[clip.target()],
                1.0,
            )
            .unwrap();
        let full = model.forward(&x, 3, &cond).unwrap();
        let pred_rows = full.slice(s![8.., ..]).to_owned();
        assert!((loss - crate::diffusion::huber_loss(&clip.target(), &pred_rows, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn empty_clip_list_is_an_error() {
        let (_, run) = tiny_run(1, 0.0);
        assert!(train(&[], &run).is_err());
    }
}
