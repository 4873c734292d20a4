//! Fixed dimensions of the conditioning and gesture representations.

/// Frames per second of gestures and all aligned conditioning streams.
pub const FPS: u32 = 30;
/// Seed-gesture frames at the start of each clip.
pub const N_SEED: usize = 30;
/// Predicted frames per clip.
pub const N_PRED: usize = 120;
pub const CLIP_FRAMES: usize = N_SEED + N_PRED;

pub const FEATURE_JOINTS: usize = 62;
/// Local rotation matrix (9) + global position (3).
pub const PER_JOINT: usize = 12;
/// Value, velocity and acceleration blocks.
pub const DERIVATIVE_BLOCKS: usize = 3;
pub const GESTURE_WIDTH: usize = FEATURE_JOINTS * PER_JOINT * DERIVATIVE_BLOCKS;

pub const MFCC: usize = 40;
pub const MEL: usize = 64;
pub const PITCH: usize = 2;
pub const ENERGY: usize = 2;
pub const EMBEDDING: usize = 1024;
pub const ONSET: usize = 1;
pub const AUDIO_WIDTH: usize = MFCC + MEL + PITCH + ENERGY + EMBEDDING + ONSET;

pub const WORD_EMBEDDING: usize = 300;
/// Word vector, laugh bit, constant-zero bit.
pub const TEXT_WIDTH: usize = WORD_EMBEDDING + 2;

pub const SPEAKERS: usize = 17;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths() {
        assert_eq!(GESTURE_WIDTH, 2232);
        assert_eq!(AUDIO_WIDTH, 1133);
        assert_eq!(TEXT_WIDTH, 302);
        assert_eq!(CLIP_FRAMES, 150);
    }
}
