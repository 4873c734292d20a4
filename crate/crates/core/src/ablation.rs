//! Conditioning-layout ablation: one model per layout trained with the
//! same data, seed and budget, each scored by FGD against held-out motion.

use std::fmt::Write as _;
use std::path::Path;

use log::info;
use ndarray::{s, Array2};

use crate::denoiser::AblationLayout;
use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::fgd::{train_autoencoder, AutoencoderConfig, FgdReference, RawSpace};
use crate::generator::{generate_features, GenerationRequest, SamplerOptions};
use crate::kv::KeyValues;
use crate::trainer::{train, window_dataset, RunConfig, Session};

/// Published full-scale numbers (feature-space FGD, raw-space FGD) for each
/// layout. Printed beside local results as context; they come from a far
/// larger dataset and autoencoder and are not comparable.
pub const REFERENCE_FGD: [(AblationLayout, f64, f64); 3] = [
    (AblationLayout::SplitConditioning, 14.461, 531.172),
    (AblationLayout::FullLengthSeedAndSpeech, 19.017, 767.503),
    (AblationLayout::FullLengthSeed, 15.539, 616.437),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationConfig {
    /// The layout field of the model config is overridden per row.
    pub run: RunConfig,
    /// Autoencoder settings; the width always follows the model.
    pub autoencoder: AutoencoderConfig,
    pub gamma: f64,
    pub rng_seed: u64,
    pub raw_space: RawSpace,
    /// Frame stride between encoded windows when scoring.
    pub fgd_stride: usize,
}

impl AblationConfig {
    pub fn new(run: RunConfig) -> Self {
        let autoencoder = AutoencoderConfig::new(run.model.gesture_width);
        AblationConfig {
            run,
            autoencoder,
            gamma: 0.0,
            rng_seed: 0,
            raw_space: RawSpace::Frames,
            fgd_stride: 1,
        }
    }

    /// Reads a run config where keys prefixed `ae.` configure the
    /// autoencoder and keys prefixed `ablation.` the scoring.
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let (mut run_kv, mut ae_kv, mut own) = (KeyValues::default(), KeyValues::default(), KeyValues::default());
        for key in kv.keys() {
            let value = kv.raw(key).expect("listed key");
            if let Some(k) = key.strip_prefix("ae.") {
                ae_kv.set(k, value);
            } else if let Some(k) = key.strip_prefix("ablation.") {
                own.set(k, value);
            } else {
                run_kv.set(key, value);
            }
        }
        let run = RunConfig::from_kv(&run_kv)?;
        if ae_kv.raw("width").is_some() {
            return Err(Error::Invalid("ae.width follows the model and cannot be set".into()));
        }
        ae_kv.set("width", run.model.gesture_width);
        let mut c = AblationConfig::new(run);
        c.autoencoder = AutoencoderConfig::from_kv(&ae_kv)?;
        own.read_into("gamma", &mut c.gamma)?;
        own.read_into("rng_seed", &mut c.rng_seed)?;
        own.read_into("raw_space", &mut c.raw_space)?;
        own.read_into("fgd_stride", &mut c.fgd_stride)?;
        if let Some(k) = own
            .unknown_keys(&["gamma", "rng_seed", "raw_space", "fgd_stride"])
            .first()
        {
            return Err(Error::Invalid(format!("unknown config key 'ablation.{k}'")));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        AblationConfig::from_kv(&KeyValues::load(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub layout: AblationLayout,
    pub feature_space: f64,
    pub raw_space: f64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn reference(layout: AblationLayout) -> (f64, f64) {
    REFERENCE_FGD
        .iter()
        .find(|(l, _, _)| *l == layout)
        .map(|&(_, f, r)| (f, r))
        .expect("every layout has a reference")
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layout,fgd_feature,fgd_raw,final_loss\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{}",
                r.layout.key(),
                r.feature_space,
                r.raw_space,
                r.final_loss
            )
            .unwrap();
        }
        out
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{:<34} {:>14} {:>14} | {:>14} {:>14}",
            "layout", "FGD feature", "FGD raw", "ref feature*", "ref raw*"
        )
        .unwrap();
        for r in &self.rows {
            let (rf, rr) = reference(r.layout);
            writeln!(
                out,
                "{:<34} {:>14.4} {:>14.4} | {:>14.3} {:>14.3}",
                r.layout.label(),
                r.feature_space,
                r.raw_space,
                rf,
                rr
            )
            .unwrap();
        }
        out.push_str("* published full-scale values, shown for context only; not comparable to local scores\n");
        out
    }
}

/// Trains every layout on windows of `train_sessions`, then continues each
/// held-out session from its first `n_seed` real frames and compares the
/// generated continuation with the real one.
pub fn run_ablation(
    train_sessions: &[Session],
    heldout: &[Session],
    config: &AblationConfig,
) -> Result<AblationReport> {
    if heldout.is_empty() {
        return Err(Error::Invalid("ablation needs at least one held-out session".into()));
    }
    let model = &config.run.model;
    let standardizer = Standardizer::fit(train_sessions.iter().map(|s| &s.gesture))?;
    let clips = window_dataset(
        train_sessions,
        &standardizer,
        model.n_seed,
        model.n_pred,
        config.run.train.stride,
    )?;
    let train_std: Vec<Array2<f64>> = train_sessions.iter().map(|s| standardizer.apply(&s.gesture)).collect();
    let autoencoder = train_autoencoder(&train_std, config.autoencoder)?;

    let n_seed = model.n_seed;
    let mut real = Vec::with_capacity(heldout.len());
    let mut requests = Vec::with_capacity(heldout.len());
    for (i, h) in heldout.iter().enumerate() {
        h.check()?;
        if h.num_frames() <= n_seed {
            return Err(Error::Invalid(format!(
                "held-out session '{}' has {} frames, needs more than {n_seed}",
                h.name,
                h.num_frames()
            )));
        }
        let g = standardizer.apply(&h.gesture);
        requests.push(GenerationRequest {
            audio: h.audio.slice(s![n_seed.., ..]).to_owned(),
            text: h.text.slice(s![n_seed.., ..]).to_owned(),
            speaker: h.speaker,
            seed: g.slice(s![..n_seed, ..]).to_owned(),
            options: SamplerOptions {
                gamma: config.gamma,
                zero_noise: false,
            },
            rng_seed: config.rng_seed.wrapping_add(i as u64),
            blend_frames: 0,
        });
        real.push(g.slice(s![n_seed.., ..]).to_owned());
    }
    let reference = FgdReference::new(&real, &autoencoder, config.raw_space, config.fgd_stride)?;

    let mut rows = Vec::with_capacity(AblationLayout::ALL.len());
    for layout in AblationLayout::ALL {
        let mut run = config.run.clone();
        run.model.layout = layout;
        info!("ablation: training layout {}", layout.key());
        let outcome = train(&clips, &run)?;
        let mut generated = Vec::with_capacity(requests.len());
        for request in &requests {
            generated.push(generate_features(&outcome.model, &outcome.schedule, request, run.model.n_pred)?.frames);
        }
        let scores = reference.compare(&generated, &autoencoder)?;
        info!(
            "ablation: {} feature {:.4} raw {:.4}",
            layout.key(),
            scores.feature_space,
            scores.raw_space
        );
        rows.push(AblationRow {
            layout,
            feature_space: scores.feature_space,
            raw_space: scores.raw_space,
            final_loss: outcome.losses.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(AblationReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::DenoiserConfig;
    use crate::trainer::TrainConfig;
    use ndarray::Array2;

    fn tiny_session(k: usize, frames: usize) -> Session {
        let c = DenoiserConfig::tiny();
        let wave = |w: usize, phase: f64| {
            Array2::from_shape_fn((frames, w), move |(t, j)| {
                ((t as f64) * 0.11 * (j + 1) as f64 + phase).sin()
            })
        };
        Session {
            name: format!("s{k}"),
            gesture: wave(c.gesture_width, k as f64),
            audio: wave(c.audio_width, 0.5 * k as f64),
            text: wave(c.text_width, 0.2 * k as f64),
            speaker: k % c.speakers,
        }
    }

    fn tiny_config() -> AblationConfig {
        let run = RunConfig {
            model: DenoiserConfig::tiny(),
            train: TrainConfig {
                steps: 3,
                batch_size: 2,
                lr: 1e-3,
                diffusion_steps: 4,
                stride: 4,
                ..TrainConfig::default()
            },
        };
        let mut c = AblationConfig::new(run);
        c.autoencoder = AutoencoderConfig {
            window: 8,
            hidden: 8,
            latent: 4,
            epochs: 2,
            batch_size: 8,
            stride: 1,
            ..c.autoencoder
        };
        c
    }

    #[test]
    fn report_has_three_rows_and_two_scores() {
        let train: Vec<_> = (0..4).map(|k| tiny_session(k, 40)).collect();
        let held: Vec<_> = (4..6).map(|k| tiny_session(k, 40)).collect();
        let config = tiny_config();
        let report = run_ablation(&train, &held, &config).unwrap();
        let layouts: Vec<_> = report.rows.iter().map(|r| r.layout).collect();
        assert_eq!(layouts, AblationLayout::ALL.to_vec());
        for r in &report.rows {
            assert!(r.feature_space.is_finite() && r.raw_space.is_finite() && r.feature_space >= 0.0);
        }
        assert_eq!(report.to_csv().lines().count(), 4);
        assert_eq!(report.to_csv().lines().next().unwrap().split(',').count(), 4);
        assert!(report.render_table().contains("14.461"));
        assert_eq!(run_ablation(&train, &held, &config).unwrap(), report);
    }

    #[test]
    fn config_keys_split_by_prefix() {
        let kv = KeyValues::parse(
            "preset = tiny\nsteps = 7\nae.hidden = 5\nae.latent = 3\nablation.gamma = 0.5\nablation.raw_space = windows\n",
        )
        .unwrap();
        let c = AblationConfig::from_kv(&kv).unwrap();
        assert_eq!(c.run.train.steps, 7);
        assert_eq!((c.autoencoder.hidden, c.autoencoder.latent), (5, 3));
        assert_eq!(c.autoencoder.width, DenoiserConfig::tiny().gesture_width);
        assert_eq!((c.gamma, c.raw_space), (0.5, RawSpace::Windows));
        assert!(AblationConfig::from_kv(&KeyValues::parse("ablation.bogus = 1\n").unwrap()).is_err());
        assert!(AblationConfig::from_kv(&KeyValues::parse("ae.width = 4\n").unwrap()).is_err());
    }

    #[test]
    fn needs_heldout_sessions() {
        let train: Vec<_> = (0..4).map(|k| tiny_session(k, 40)).collect();
        assert!(run_ablation(&train, &[], &tiny_config()).is_err());
    }
}
