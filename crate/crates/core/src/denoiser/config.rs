use std::fmt;
use std::str::FromStr;

use crate::dims;
use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Which neighbouring window the cross-local attention looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowDirection {
    /// Window `w` attends to windows `w - 1` and `w`.
    #[default]
    Preceding,
    /// Window `w` attends to windows `w` and `w + 1`.
    Following,
}

/// Where the seed gesture and the speech features enter the token sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum AblationLayout {
    /// Seed on the first `n_seed` tokens, speech on the last `n_pred`.
    #[default]
    SplitConditioning,
    /// Seed and speech both over every token.
    FullLengthSeedAndSpeech,
    /// Seed over every token, speech on the last `n_pred`.
    FullLengthSeed,
}

impl AblationLayout {
    pub const ALL: [AblationLayout; 3] = [
        AblationLayout::SplitConditioning,
        AblationLayout::FullLengthSeedAndSpeech,
        AblationLayout::FullLengthSeed,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AblationLayout::SplitConditioning => "split",
            AblationLayout::FullLengthSeedAndSpeech => "full-seed-speech",
            AblationLayout::FullLengthSeed => "full-seed",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AblationLayout::SplitConditioning => "split seed / speech (default)",
            AblationLayout::FullLengthSeedAndSpeech => "+ full-length seed + speech",
            AblationLayout::FullLengthSeed => "+ full-length seed",
        }
    }

    pub fn seed_full_length(self) -> bool {
        self != AblationLayout::SplitConditioning
    }

    pub fn speech_full_length(self) -> bool {
        self == AblationLayout::FullLengthSeedAndSpeech
    }
}

impl fmt::Display for AblationLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AblationLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationLayout::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown layout '{s}' (split, full-seed-speech, full-seed)")))
    }
}

impl FromStr for WindowDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "preceding" => Ok(WindowDirection::Preceding),
            "following" => Ok(WindowDirection::Following),
            _ => Err(Error::Invalid(format!("unknown window direction '{s}'"))),
        }
    }
}

impl fmt::Display for WindowDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowDirection::Preceding => "preceding",
            WindowDirection::Following => "following",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub gesture_width: usize,
    pub audio_width: usize,
    pub text_width: usize,
    pub speakers: usize,
    pub latent_dim: usize,
    pub local_heads: usize,
    pub local_head_dim: usize,
    pub window: usize,
    pub direction: WindowDirection,
    pub self_layers: usize,
    pub self_heads: usize,
    pub ff_dim: usize,
    /// Self-attention offsets beyond this radius share the outermost bias.
    pub max_relative: usize,
    pub dropout: f64,
    pub n_seed: usize,
    pub n_pred: usize,
    pub layout: AblationLayout,
}

impl DenoiserConfig {
    /// Training scale: 512 latent, 8 x 6 local channels, 8 layers of 8 heads.
    pub fn full() -> Self {
        DenoiserConfig {
            gesture_width: dims::GESTURE_WIDTH,
            audio_width: dims::AUDIO_WIDTH,
            text_width: dims::TEXT_WIDTH,
            speakers: dims::SPEAKERS,
            latent_dim: 512,
            local_heads: 8,
            local_head_dim: 6,
            window: 15,
            direction: WindowDirection::Preceding,
            self_layers: 8,
            self_heads: 8,
            ff_dim: 1024,
            max_relative: dims::CLIP_FRAMES,
            dropout: 0.1,
            n_seed: dims::N_SEED,
            n_pred: dims::N_PRED,
            layout: AblationLayout::SplitConditioning,
        }
    }

    /// Full feature widths, small network. Trains on one CPU core.
    pub fn desk() -> Self {
        DenoiserConfig {
            latent_dim: 64,
            self_layers: 2,
            self_heads: 4,
            ff_dim: 128,
            ..DenoiserConfig::full()
        }
    }

    /// Reduced widths and lengths for exhaustive gradient checks.
    pub fn tiny() -> Self {
        DenoiserConfig {
            gesture_width: 12,
            audio_width: 5,
            text_width: 3,
            speakers: 4,
            latent_dim: 16,
            local_heads: 2,
            local_head_dim: 4,
            window: 4,
            direction: WindowDirection::Preceding,
            self_layers: 1,
            self_heads: 2,
            ff_dim: 24,
            max_relative: 24,
            dropout: 0.0,
            n_seed: 8,
            n_pred: 16,
            layout: AblationLayout::SplitConditioning,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(DenoiserConfig::full()),
            "desk" => Ok(DenoiserConfig::desk()),
            "tiny" => Ok(DenoiserConfig::tiny()),
            _ => Err(Error::Invalid(format!("unknown preset '{name}' (full, desk, tiny)"))),
        }
    }

    pub fn speech_width(&self) -> usize {
        self.audio_width + self.text_width
    }

    pub fn clip_frames(&self) -> usize {
        self.n_seed + self.n_pred
    }

    pub fn local_channels(&self) -> usize {
        self.local_heads * self.local_head_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gesture_width", self.gesture_width),
            ("audio_width", self.audio_width),
            ("text_width", self.text_width),
            ("speakers", self.speakers),
            ("latent_dim", self.latent_dim),
            ("local_heads", self.local_heads),
            ("local_head_dim", self.local_head_dim),
            ("window", self.window),
            ("self_heads", self.self_heads),
            ("ff_dim", self.ff_dim),
            ("n_seed", self.n_seed),
            ("n_pred", self.n_pred),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if !self.latent_dim.is_multiple_of(2) {
            return Err(Error::Invalid("latent_dim must be even".into()));
        }
        if !self.latent_dim.is_multiple_of(self.self_heads) {
            return Err(Error::Invalid(format!(
                "latent_dim {} is not divisible by self_heads {}",
                self.latent_dim, self.self_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    const KEYS: [&'static str; 17] = [
        "gesture_width",
        "audio_width",
        "text_width",
        "speakers",
        "latent_dim",
        "local_heads",
        "local_head_dim",
        "window",
        "direction",
        "self_layers",
        "self_heads",
        "ff_dim",
        "max_relative",
        "dropout",
        "n_seed",
        "n_pred",
        "layout",
    ];

    pub fn known_keys() -> &'static [&'static str] {
        &Self::KEYS
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("gesture_width", self.gesture_width);
        kv.set("audio_width", self.audio_width);
        kv.set("text_width", self.text_width);
        kv.set("speakers", self.speakers);
        kv.set("latent_dim", self.latent_dim);
        kv.set("local_heads", self.local_heads);
        kv.set("local_head_dim", self.local_head_dim);
        kv.set("window", self.window);
        kv.set("direction", self.direction);
        kv.set("self_layers", self.self_layers);
        kv.set("self_heads", self.self_heads);
        kv.set("ff_dim", self.ff_dim);
        kv.set("max_relative", self.max_relative);
        kv.set("dropout", self.dropout);
        kv.set("n_seed", self.n_seed);
        kv.set("n_pred", self.n_pred);
        kv.set("layout", self.layout);
        kv
    }

    /// Applies any config keys present in `kv` on top of `self`.
    pub fn apply_kv(mut self, kv: &KeyValues) -> Result<Self> {
        kv.read_into("gesture_width", &mut self.gesture_width)?;
        kv.read_into("audio_width", &mut self.audio_width)?;
        kv.read_into("text_width", &mut self.text_width)?;
        kv.read_into("speakers", &mut self.speakers)?;
        kv.read_into("latent_dim", &mut self.latent_dim)?;
        kv.read_into("local_heads", &mut self.local_heads)?;
        kv.read_into("local_head_dim", &mut self.local_head_dim)?;
        kv.read_into("window", &mut self.window)?;
        kv.read_into("direction", &mut self.direction)?;
        kv.read_into("self_layers", &mut self.self_layers)?;
        kv.read_into("self_heads", &mut self.self_heads)?;
        kv.read_into("ff_dim", &mut self.ff_dim)?;
        kv.read_into("max_relative", &mut self.max_relative)?;
        kv.read_into("dropout", &mut self.dropout)?;
        kv.read_into("n_seed", &mut self.n_seed)?;
        kv.read_into("n_pred", &mut self.n_pred)?;
        kv.read_into("layout", &mut self.layout)?;
        self.validate()?;
        Ok(self)
    }
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::desk()
    }
}
