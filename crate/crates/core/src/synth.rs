//! Deterministic synthetic fixtures: a 62-joint humanoid, smooth gesture
//! motion, speech-like audio and transcripts. Used by tests, demos and
//! the acceptance suite.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dims::FPS;
use crate::error::{Error, Result};
use crate::features::audio::write_wav;
use crate::features::text::{Transcript, Word};
use crate::features::{extract_audio_features, extract_motion_features, frame_align_text, Lexicon};
use crate::motion::{write_bvh, Axis, Channel, EndSite, Joint, MotionSequence, Skeleton};
use crate::trainer::Session;

fn rot_channels() -> Vec<Channel> {
    vec![
        Channel::Rotation(Axis::Z),
        Channel::Rotation(Axis::X),
        Channel::Rotation(Axis::Y),
    ]
}

struct Builder {
    joints: Vec<Joint>,
    sites: Vec<EndSite>,
}

impl Builder {
    fn add(&mut self, name: &str, parent: usize, offset: [f64; 3]) -> usize {
        self.joints.push(Joint {
            name: name.to_string(),
            parent: Some(parent),
            offset,
            channels: rot_channels(),
        });
        self.joints.len() - 1
    }

    fn chain(&mut self, parent: usize, names: &[&str], step: [f64; 3], site: bool) -> usize {
        let mut p = parent;
        for n in names {
            p = self.add(n, p, step);
        }
        if site {
            self.sites.push(EndSite {
                parent: p,
                offset: step,
            });
        }
        p
    }
}

/// A 62-joint skeleton (spine, head, legs, arms and four-joint fingers)
/// with end sites on every leaf, ZXY rotation order throughout.
pub fn humanoid_skeleton() -> Skeleton {
    let mut b = Builder {
        joints: vec![Joint {
            name: "Hips".into(),
            parent: None,
            offset: [0.0; 3],
            channels: [
                vec![
                    Channel::Position(Axis::X),
                    Channel::Position(Axis::Y),
                    Channel::Position(Axis::Z),
                ],
                rot_channels(),
            ]
            .concat(),
        }],
        sites: vec![],
    };
    let neck_base = b.chain(0, &["Spine", "Spine1", "Spine2", "Spine3"], [0.0, 12.0, 0.0], false);
    b.chain(neck_base, &["Neck", "Neck1", "Head"], [0.0, 8.0, 1.0], true);
    for (side, sx) in [("Right", -1.0), ("Left", 1.0)] {
        let names: Vec<String> = ["UpLeg", "Leg", "Foot"].iter().map(|n| format!("{side}{n}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let ankle = b.chain(0, &refs[..1], [sx * 9.0, -5.0, 0.0], false);
        let ankle = b.chain(ankle, &refs[1..], [0.0, -42.0, 0.0], false);
        b.chain(ankle, &[&format!("{side}ToeBase")], [0.0, -6.0, 12.0], true);

        let shoulder = b.add(&format!("{side}Shoulder"), neck_base, [sx * 4.0, 6.0, 0.0]);
        let arm = b.add(&format!("{side}Arm"), shoulder, [sx * 14.0, 0.0, 0.0]);
        let fore = b.add(&format!("{side}ForeArm"), arm, [sx * 28.0, 0.0, 0.0]);
        let hand = b.add(&format!("{side}Hand"), fore, [sx * 25.0, 0.0, 0.0]);
        let thumb: Vec<String> = (1..=3).map(|k| format!("{side}HandThumb{k}")).collect();
        let refs: Vec<&str> = thumb.iter().map(String::as_str).collect();
        b.chain(hand, &refs, [sx * 2.0, 0.0, 2.5], true);
        for (f, z) in [("Index", 2.0), ("Middle", 0.5), ("Ring", -1.0), ("Pinky", -2.5)] {
            let names: Vec<String> = (0..=3).map(|k| format!("{side}Hand{f}{k}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            b.chain(hand, &refs, [sx * 2.5, 0.0, z * 0.4], true);
        }
    }
    Skeleton::new(b.joints, b.sites).expect("humanoid skeleton is well formed")
}

/// Number of shared movement patterns behind [`gesture_motion`].
pub const SYNERGIES: usize = 6;

const BODY_SEED: u64 = 0x6e57_b0d1;

/// Smooth quasi-periodic motion at 30 fps. Like real motion capture, the
/// channels are strongly correlated: each is a fixed per-body mix of
/// [`SYNERGIES`] latent oscillators, and only the oscillators (plus a small
/// pose offset) vary with `seed`. The middle Euler angle stays within
/// +-40 degrees. `energy` scales all amplitudes.
pub fn gesture_motion(skeleton: &Skeleton, frames: usize, seed: u64, energy: f64) -> MotionSequence {
    let c = skeleton.channel_count();
    let pos = skeleton.root_position_columns();
    let mut body = ChaCha8Rng::seed_from_u64(BODY_SEED);
    let channels: Vec<(f64, f64, [f64; SYNERGIES])> = (0..c)
        .map(|col| {
            let (amp, base) = if pos.contains(&col) {
                (3.0, if col == pos[1] { 95.0 } else { 0.0 })
            } else {
                (body.random_range(5.0..15.0), body.random_range(-8.0..8.0))
            };
            let mut mix = [0.0; SYNERGIES];
            mix.iter_mut().for_each(|m| *m = body.random_range(-1.0..1.0));
            let norm: f64 = mix.iter().map(|m: &f64| m.abs()).sum();
            mix.iter_mut().for_each(|m| *m /= norm);
            (amp, base, mix)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<[(f64, f64, f64); 2]> = (0..SYNERGIES)
        .map(|_| {
            [(); 2].map(|_| {
                (
                    rng.random_range(0.2..1.5),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.5..1.0),
                )
            })
        })
        .collect();
    let offsets: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut data = Array2::zeros((frames, c));
    for t in 0..frames {
        let time = t as f64 / 30.0;
        let latent: Vec<f64> = waves
            .iter()
            .map(|w| w.iter().map(|(f, ph, a)| a * (TAU * f * time + ph).sin()).sum())
            .collect();
        for (col, (amp, base, mix)) in channels.iter().enumerate() {
            let v: f64 = mix.iter().zip(&latent).map(|(m, z)| m * z).sum();
            data[[t, col]] = base + offsets[col] + energy * amp * v;
        }
    }
    MotionSequence::new(30, data).expect("non-empty motion")
}

/// Speech-like test audio: a voiced carrier whose pitch wanders around
/// `f0`, amplitude-modulated by a syllable-rate envelope, with short pauses.
pub fn speech_like_audio(seconds: f64, sample_rate: u32, f0: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sample_rate as f64).round() as usize;
    let sr = sample_rate as f64;
    let syllable = rng.random_range(3.0..5.0);
    let mut phase = 0.0f64;
    (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let pitch = f0 * (1.0 + 0.08 * (TAU * 0.7 * t).sin());
            phase += TAU * pitch / sr;
            let env = (0.5 - 0.5 * (TAU * syllable * t).cos()).powi(2);
            let pause = if (t * 0.5).fract() > 0.85 { 0.0 } else { 1.0 };
            let voiced = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            let noise: f64 = rng.random_range(-0.02..0.02);
            (0.3 * env * pause * voiced + noise) as f32
        })
        .collect()
}

const VOCAB: [&str; 12] = [
    "yeah", "so", "like", "the", "really", "big", "you", "know", "okay", "house", "went", "#",
];

/// Back-to-back words of 0.2..0.6 s with occasional gaps; about one word in
/// twelve is the laughter token `#`.
pub fn transcript(seconds: f64, seed: u64) -> Transcript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut words = Vec::new();
    while t < seconds {
        let dur = rng.random_range(0.2..0.6);
        let end = (t + dur).min(seconds);
        words.push(Word {
            start: t,
            end,
            text: VOCAB[rng.random_range(0..VOCAB.len())].to_string(),
        });
        t = end + if rng.random_bool(0.2) { 0.3 } else { 0.0 };
    }
    Transcript::new(words).expect("generated words are ordered")
}

/// A synthetic recording with frame-aligned features: motion from
/// [`gesture_motion`], speech-like audio whose pitch depends on the speaker,
/// and a random transcript embedded with hashed word vectors.
pub fn session(skeleton: &Skeleton, frames: usize, speaker: usize, seed: u64) -> Result<Session> {
    let motion = gesture_motion(skeleton, frames, seed, 1.0);
    let gesture = extract_motion_features(skeleton, &motion)?;
    let seconds = frames as f64 / FPS as f64;
    let f0 = 100.0 + 12.0 * speaker as f64;
    let samples = speech_like_audio(seconds, SESSION_SAMPLE_RATE, f0, seed ^ 0x5eed);
    let audio = extract_audio_features(&samples, SESSION_SAMPLE_RATE, frames, None)?;
    let words = transcript(seconds, seed ^ 0x7e47);
    let text = frame_align_text(&words, &Lexicon::default(), frames)?;
    Ok(Session {
        name: format!("synthetic-{seed}"),
        gesture: gesture.frames,
        audio: audio.frames,
        text: text.frames,
        speaker,
    })
}

const SESSION_SAMPLE_RATE: u32 = 16_000;

/// Writes `<name>.wav`, `<name>.tsv` and `<name>.bvh` for a synthetic
/// recording into `dir` and returns their paths.
pub fn write_recording(
    dir: &Path,
    name: &str,
    frames: usize,
    speaker: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let skeleton = humanoid_skeleton();
    let seconds = frames as f64 / FPS as f64;
    let f0 = 100.0 + 12.0 * speaker as f64;
    let (wav, tsv, bvh) = (
        dir.join(format!("{name}.wav")),
        dir.join(format!("{name}.tsv")),
        dir.join(format!("{name}.bvh")),
    );
    write_wav(
        &wav,
        &speech_like_audio(seconds, SESSION_SAMPLE_RATE, f0, seed ^ 0x5eed),
        SESSION_SAMPLE_RATE,
    )?;
    let lines: String = transcript(seconds, seed ^ 0x7e47)
        .words()
        .iter()
        .map(|w| format!("{:.3}\t{:.3}\t{}\n", w.start, w.end, w.text))
        .collect();
    fs::write(&tsv, lines).map_err(|e| Error::io(&tsv, e))?;
    let motion = gesture_motion(&skeleton, frames, seed, 1.0);
    fs::write(&bvh, write_bvh(&skeleton, &motion)?).map_err(|e| Error::io(&bvh, e))?;
    Ok((wav, tsv, bvh))
}
