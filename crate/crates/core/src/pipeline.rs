//! File-level plumbing shared by the command-line tool and the bindings:
//! feature extraction from recordings and session directories on disk.
//!
//! A session directory holds `gesture.gdf`, `audio.gdf`, `text.gdf`,
//! a `speaker` file with the speaker index, and `standardizer.gds` fitted
//! on that session's gesture.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::denoiser::Denoiser;
use crate::diffusion::NoiseSchedule;
use crate::dims::FPS;
use crate::error::{Error, Result};
use crate::features::audio::read_wav;
use crate::features::FeatureJoints;
use crate::features::{
    extract_audio_features, extract_motion_features, frame_align_text, speaker_onehot, GestureFeatureSeq, Lexicon,
    Standardizer, Transcript,
};
use crate::generator::{generate_long, GeneratedMotion, GenerationRequest, SamplerOptions};
use crate::io::{read_matrix, write_matrix};
use crate::motion::{parse_bvh, MotionSequence, Skeleton};
use crate::synth::humanoid_skeleton;
use crate::trainer::Session;

pub const GESTURE_FILE: &str = "gesture.gdf";
pub const AUDIO_FILE: &str = "audio.gdf";
pub const TEXT_FILE: &str = "text.gdf";
pub const SPEAKER_FILE: &str = "speaker";
pub const STANDARDIZER_FILE: &str = "standardizer.gds";

fn require(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}

pub fn read_bvh(path: &Path) -> Result<(Skeleton, MotionSequence)> {
    require(path)?;
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_bvh(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Gesture features of a BVH file recorded at the model frame rate.
pub fn bvh_features(path: &Path) -> Result<(Skeleton, GestureFeatureSeq)> {
    let (skeleton, motion) = read_bvh(path)?;
    if motion.fps != FPS {
        return Err(Error::format(
            path,
            format!("motion is {} fps, expected {FPS}", motion.fps),
        ));
    }
    let features = extract_motion_features(&skeleton, &motion)?;
    Ok((skeleton, features))
}

/// Audio and text features for `frames` frames of a recording and its
/// transcript. Without `frames`, the length follows the audio duration.
pub fn speech_features(
    wav: &Path,
    tsv: &Path,
    lexicon: &Lexicon,
    frames: Option<usize>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    require(wav)?;
    require(tsv)?;
    let (samples, rate) = read_wav(wav)?;
    let transcript = Transcript::read_tsv(tsv).map_err(|e| Error::format(tsv, e.to_string()))?;
    let frames = frames.unwrap_or_else(|| (samples.len() as f64 / rate as f64 * FPS as f64).round() as usize);
    if frames == 0 {
        return Err(Error::format(wav, "recording is shorter than one frame"));
    }
    let audio = extract_audio_features(&samples, rate, frames, None)?;
    let text = frame_align_text(&transcript, lexicon, frames)?;
    Ok((audio.frames, text.frames))
}

/// All features of one recorded session, aligned to the motion frames.
pub fn extract_session(
    name: &str,
    wav: &Path,
    tsv: &Path,
    bvh: &Path,
    speaker: usize,
    lexicon: &Lexicon,
) -> Result<Session> {
    speaker_onehot(speaker)?;
    require(wav)?;
    require(tsv)?;
    let (_, gesture) = bvh_features(bvh)?;
    let (audio, text) = speech_features(wav, tsv, lexicon, Some(gesture.num_frames()))?;
    Ok(Session {
        name: name.to_string(),
        gesture: gesture.frames,
        audio,
        text,
        speaker,
    })
}

pub fn save_session(session: &Session, dir: &Path) -> Result<()> {
    session.check()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(&dir.join(GESTURE_FILE), &session.gesture)?;
    write_matrix(&dir.join(AUDIO_FILE), &session.audio)?;
    write_matrix(&dir.join(TEXT_FILE), &session.text)?;
    let speaker = dir.join(SPEAKER_FILE);
    fs::write(&speaker, format!("{}\n", session.speaker)).map_err(|e| Error::io(&speaker, e))?;
    Standardizer::fit([&session.gesture])?.save(&dir.join(STANDARDIZER_FILE))
}

pub fn load_session(dir: &Path) -> Result<Session> {
    let speaker_path = dir.join(SPEAKER_FILE);
    let raw = fs::read_to_string(&speaker_path).map_err(|e| Error::io(&speaker_path, e))?;
    let speaker = raw
        .trim()
        .parse()
        .map_err(|_| Error::format(&speaker_path, format!("bad speaker index '{}'", raw.trim())))?;
    let session = Session {
        name: dir
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        gesture: read_matrix(&dir.join(GESTURE_FILE))?,
        audio: read_matrix(&dir.join(AUDIO_FILE))?,
        text: read_matrix(&dir.join(TEXT_FILE))?,
        speaker,
    };
    session.check()?;
    Ok(session)
}

/// Every session directory directly under `data_dir`, in name order.
pub fn load_sessions(data_dir: &Path) -> Result<Vec<Session>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(data_dir)
        .map_err(|e| Error::io(data_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GESTURE_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Invalid(format!(
            "no session directories (with {GESTURE_FILE}) under {}",
            data_dir.display()
        )));
    }
    dirs.iter().map(|d| load_session(d)).collect()
}

/// Gesture features of every `.bvh` file in `dir`, in name order.
pub fn load_bvh_features(dir: &Path) -> Result<Vec<GestureFeatureSeq>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("bvh")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no .bvh files in {}", dir.display())));
    }
    files.iter().map(|f| bvh_features(f).map(|(_, g)| g)).collect()
}

/// A trained model with the schedule it was trained under and the gesture
/// standardizer of its corpus. On disk: the checkpoint plus `.cfg`, `.gns`
/// and `.gds` files beside it.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Denoiser,
    pub schedule: NoiseSchedule,
    pub standardizer: Standardizer,
}

impl TrainedModel {
    pub fn schedule_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("gns")
    }

    pub fn standardizer_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("gds")
    }

    pub fn save(&self, checkpoint: &Path) -> Result<()> {
        self.model.save(checkpoint)?;
        self.schedule.save(&Self::schedule_path(checkpoint))?;
        self.standardizer.save(&Self::standardizer_path(checkpoint))
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        require(checkpoint)?;
        Ok(TrainedModel {
            model: Denoiser::load(checkpoint)?,
            schedule: NoiseSchedule::load(&Self::schedule_path(checkpoint))?,
            standardizer: Standardizer::load(&Self::standardizer_path(checkpoint))?,
        })
    }

    /// Long-form synthesis from already extracted speech features. The
    /// seed comes from the first frames of `seed_motion` when given (its
    /// skeleton is then used for the output), otherwise the mean pose on
    /// the built-in humanoid.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        &self,
        audio: Array2<f64>,
        text: Array2<f64>,
        speaker: usize,
        seed_motion: Option<(&Skeleton, &GestureFeatureSeq)>,
        options: SamplerOptions,
        rng_seed: u64,
        blend_frames: usize,
    ) -> Result<(Skeleton, GeneratedMotion)> {
        speaker_onehot(speaker)?;
        let c = self.model.config();
        let (skeleton, seed) = match seed_motion {
            Some((sk, g)) => {
                if g.num_frames() < c.n_seed {
                    return Err(Error::Invalid(format!(
                        "seed motion has {} frames, needs {}",
                        g.num_frames(),
                        c.n_seed
                    )));
                }
                (sk.clone(), self.standardizer.apply(&g.head(c.n_seed)))
            }
            None => (humanoid_skeleton(), Array2::zeros((c.n_seed, c.gesture_width))),
        };
        let joints = FeatureJoints::all(&skeleton);
        if joints.width() != c.gesture_width {
            return Err(Error::Shape(format!(
                "skeleton gives {}-wide features, model expects {}",
                joints.width(),
                c.gesture_width
            )));
        }
        let request = GenerationRequest {
            audio,
            text,
            speaker,
            seed,
            options,
            rng_seed,
            blend_frames,
        };
        let out = generate_long(
            &self.model,
            &self.schedule,
            &request,
            &self.standardizer,
            &skeleton,
            &joints,
        )?;
        Ok((skeleton, out))
    }
}
