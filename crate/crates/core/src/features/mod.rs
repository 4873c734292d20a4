//! Gesture representation and the speech conditioning streams.

pub mod audio;
pub mod gesture;
pub mod speaker;
pub mod text;

pub use audio::{align_to_frames, extract_audio_features, AudioFeatureSeq};
pub use gesture::{
    extract_motion_features, extract_motion_features_with, features_to_motion, FeatureJoints, GestureFeatureSeq,
    Standardizer,
};
pub use speaker::{speaker_onehot, SpeakerId};
pub use text::{frame_align_text, Lexicon, TextFeatureSeq, Transcript, Word};
