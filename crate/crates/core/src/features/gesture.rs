//! The per-frame gesture representation and dataset standardization.
//!
//! Each frame holds three blocks (value, velocity, acceleration). Inside a
//! block, feature joint `j` occupies 12 columns: its local rotation matrix
//! (row-major, 9) followed by its global FK position (3). Derivatives are
//! finite differences in units per second: central in the interior,
//! one-sided at the two boundary frames.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::dims::{DERIVATIVE_BLOCKS, PER_JOINT};
use crate::error::{Error, Result};
use crate::io;
use crate::motion::kinematics::pose_frame;
use crate::motion::{orthonormalize, rotmat_to_euler, MotionSequence, Skeleton};

/// A T x (J * 36) gesture feature matrix; J = 62 gives the 2232-wide layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GestureFeatureSeq {
    pub fps: u32,
    pub frames: Array2<f64>,
}

impl GestureFeatureSeq {
    pub fn new(fps: u32, frames: Array2<f64>) -> Result<Self> {
        if !frames.ncols().is_multiple_of(PER_JOINT * DERIVATIVE_BLOCKS) {
            return Err(Error::Shape(format!(
                "gesture width {} is not a multiple of {}",
                frames.ncols(),
                PER_JOINT * DERIVATIVE_BLOCKS
            )));
        }
        Ok(GestureFeatureSeq { fps, frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn width(&self) -> usize {
        self.frames.ncols()
    }

    pub fn num_joints(&self) -> usize {
        self.width() / (PER_JOINT * DERIVATIVE_BLOCKS)
    }

    /// The value block (no derivatives).
    pub fn values(&self) -> ArrayView2<'_, f64> {
        let w = self.width() / DERIVATIVE_BLOCKS;
        self.frames.slice(s![.., ..w])
    }

    /// The first `n` rows; for a 150-frame clip and n = 30 this is the seed.
    pub fn head(&self, n: usize) -> Array2<f64> {
        self.frames.slice(s![..n, ..]).to_owned()
    }
}

/// Which skeleton joints feed the gesture features, in feature order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureJoints {
    indices: Vec<usize>,
}

impl FeatureJoints {
    /// Every skeleton joint (end sites are never joints).
    pub fn all(skeleton: &Skeleton) -> Self {
        FeatureJoints {
            indices: (0..skeleton.num_joints()).collect(),
        }
    }

    /// Joints selected by name. The root must be among them so that root
    /// translation can be recovered.
    pub fn from_names<S: AsRef<str>>(skeleton: &Skeleton, names: &[S]) -> Result<Self> {
        let mut indices = Vec::with_capacity(names.len());
        for n in names {
            let n = n.as_ref();
            let idx = skeleton
                .joint_index(n)
                .ok_or_else(|| Error::Invalid(format!("unknown feature joint '{n}'")))?;
            if indices.contains(&idx) {
                return Err(Error::Invalid(format!("feature joint '{n}' listed twice")));
            }
            indices.push(idx);
        }
        if !indices.contains(&0) {
            return Err(Error::Invalid("feature joints must include the root".into()));
        }
        Ok(FeatureJoints { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.len() * PER_JOINT * DERIVATIVE_BLOCKS
    }
}

/// Per-second finite differences along time. `order` is 1 or 2.
pub(crate) fn time_derivative(values: ArrayView2<'_, f64>, fps: f64, order: u8) -> Array2<f64> {
    let t = values.nrows();
    let mut out = Array2::zeros(values.raw_dim());
    let row = |i: usize| values.row(i);
    for i in 0..t {
        let mut dst = out.row_mut(i);
        match order {
            1 => {
                let (a, b, scale) = if i == 0 {
                    (0, 1, fps)
                } else if i == t - 1 {
                    (t - 2, t - 1, fps)
                } else {
                    (i - 1, i + 1, 0.5 * fps)
                };
                dst.assign(&((&row(b) - &row(a)) * scale));
            }
            _ => {
                let c = i.clamp(1, t - 2);
                let d = &row(c + 1) - &(&row(c) * 2.0) + row(c - 1);
                dst.assign(&(d * (fps * fps)));
            }
        }
    }
    out
}

pub fn extract_motion_features(skeleton: &Skeleton, motion: &MotionSequence) -> Result<GestureFeatureSeq> {
    extract_motion_features_with(skeleton, motion, &FeatureJoints::all(skeleton))
}

pub fn extract_motion_features_with(
    skeleton: &Skeleton,
    motion: &MotionSequence,
    joints: &FeatureJoints,
) -> Result<GestureFeatureSeq> {
    motion.check_against(skeleton)?;
    let t = motion.num_frames();
    if t < 3 {
        return Err(Error::Invalid(format!(
            "need at least 3 frames for derivatives, got {t}"
        )));
    }
    let block = joints.len() * PER_JOINT;
    let mut values = Array2::zeros((t, block));
    for (i, row) in motion.frames.rows().into_iter().enumerate() {
        let pose = pose_frame(skeleton, row.as_slice().expect("standard layout"));
        let mut dst = values.row_mut(i);
        for (k, &j) in joints.indices().iter().enumerate() {
            let base = k * PER_JOINT;
            for (c, v) in pose.local[j].to_row_major().into_iter().enumerate() {
                dst[base + c] = v;
            }
            for c in 0..3 {
                dst[base + 9 + c] = pose.positions[j][c];
            }
        }
    }
    let fps = motion.fps as f64;
    let vel = time_derivative(values.view(), fps, 1);
    let acc = time_derivative(values.view(), fps, 2);
    let frames = ndarray::concatenate(Axis(1), &[values.view(), vel.view(), acc.view()]).expect("equal row counts");
    GestureFeatureSeq::new(motion.fps, frames)
}

/// Rebuilds BVH channels from (de-standardized) features. Rotation blocks
/// are projected onto the nearest rotation; derivative blocks are ignored.
/// Joints outside the feature set get zero rotation.
pub fn features_to_motion(
    features: &GestureFeatureSeq,
    skeleton: &Skeleton,
    joints: &FeatureJoints,
) -> Result<MotionSequence> {
    if features.width() != joints.width() {
        return Err(Error::Shape(format!(
            "features are {} wide, joint set needs {}",
            features.width(),
            joints.width()
        )));
    }
    if features.frames.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gesture features".into()));
    }
    let t = features.num_frames();
    let mut frames = Array2::zeros((t, skeleton.channel_count()));
    for (i, row) in features.frames.rows().into_iter().enumerate() {
        for (k, &j) in joints.indices().iter().enumerate() {
            let base = k * PER_JOINT;
            let mut m = [0.0; 9];
            for (c, slot) in m.iter_mut().enumerate() {
                *slot = row[base + c];
            }
            let rot = orthonormalize(&m).map_err(|e| Error::Numeric(format!("frame {i}, joint {j}: {e}")))?;
            let euler = rotmat_to_euler(&rot, skeleton.rotation_order(j))?;
            for (col, v) in skeleton.rotation_columns(j).into_iter().zip(euler) {
                frames[[i, col]] = v;
            }
            if j == 0 {
                for (c, col) in skeleton.root_position_columns().into_iter().enumerate() {
                    frames[[i, col]] = row[base + 9 + c];
                }
            }
        }
    }
    MotionSequence::new(features.fps, frames)
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-dimension zero-mean, unit-variance normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    /// Population statistics over every frame of every sequence.
    pub fn fit<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Array2<f64>>,
    {
        let mut count = 0usize;
        let mut sum: Option<Array1<f64>> = None;
        let mut seqs = Vec::new();
        for m in corpus {
            if let Some(s) = &sum {
                if s.len() != m.ncols() {
                    return Err(Error::Shape("corpus sequences differ in width".into()));
                }
            }
            let s = sum.get_or_insert_with(|| Array1::zeros(m.ncols()));
            *s += &m.sum_axis(Axis(0));
            count += m.nrows();
            seqs.push(m);
        }
        let sum = sum.ok_or_else(|| Error::Invalid("cannot fit a standardizer on an empty corpus".into()))?;
        if count == 0 {
            return Err(Error::Invalid("corpus has no frames".into()));
        }
        let mean = sum / count as f64;
        let mut sq = Array1::<f64>::zeros(mean.len());
        for m in seqs {
            for row in m.rows() {
                let d = &row - &mean;
                sq += &(&d * &d);
            }
        }
        let std = (sq / count as f64).mapv(|v| v.sqrt().max(STD_FLOOR));
        Ok(Standardizer { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn invert(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.std + &self.mean
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_vector_pair(io::STATS_MAGIC, path, &self.mean, &self.std)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mean, std) = io::read_vector_pair(io::STATS_MAGIC, path)?;
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::format(path, "standard deviations must be positive"));
        }
        Ok(Standardizer { mean, std })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;

    fn random_motion(frames: usize, seed: u64) -> (Skeleton, MotionSequence) {
        let sk = synth::humanoid_skeleton();
        let mo = synth::gesture_motion(&sk, frames, seed, 1.0);
        (sk, mo)
    }

    #[test]
    fn humanoid_width_is_2232() {
        let (sk, mo) = random_motion(10, 1);
        let f = extract_motion_features(&sk, &mo).unwrap();
        assert_eq!(f.width(), crate::dims::GESTURE_WIDTH);
        assert_eq!(f.num_frames(), 10);
    }

    #[test]
    fn static_pose_has_zero_derivatives() {
        let (sk, mo) = random_motion(5, 2);
        let first = mo.frames.row(0).to_owned();
        let mut frames = mo.frames.clone();
        for mut r in frames.rows_mut() {
            r.assign(&first);
        }
        let still = MotionSequence::new(30, frames).unwrap();
        let f = extract_motion_features(&sk, &still).unwrap();
        let w = f.width() / 3;
        assert!(f.frames.slice(s![.., w..]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_root_translation() {
        let (sk, mo) = random_motion(6, 3);
        let mut frames = Array2::zeros(mo.frames.raw_dim());
        for i in 0..6 {
            frames[[i, sk.root_position_columns()[0]]] = i as f64;
        }
        let f = extract_motion_features(&sk, &MotionSequence::new(30, frames).unwrap()).unwrap();
        let w = f.width() / 3;
        for i in 0..6 {
            // root x-position velocity and acceleration
            assert!((f.frames[[i, w + 9]] - 30.0).abs() < 1e-9);
            assert!(f.frames[[i, 2 * w + 9]].abs() < 1e-9);
        }
    }

    #[test]
    fn too_short_motion_is_rejected() {
        let (sk, mo) = random_motion(2, 4);
        assert!(extract_motion_features(&sk, &mo).is_err());
    }

    #[test]
    fn derivative_blocks_match_value_differences() {
        let (sk, mo) = random_motion(8, 5);
        let f = extract_motion_features(&sk, &mo).unwrap();
        let w = f.width() / 3;
        let v = f.frames.slice(s![.., ..w]);
        for i in 1..7 {
            for c in (0..w).step_by(37) {
                let vel = (v[[i + 1, c]] - v[[i - 1, c]]) * 15.0;
                let acc = (v[[i + 1, c]] - 2.0 * v[[i, c]] + v[[i - 1, c]]) * 900.0;
                assert!((f.frames[[i, w + c]] - vel).abs() < 1e-6);
                assert!((f.frames[[i, 2 * w + c]] - acc).abs() < 1e-6);
            }
        }
        assert!((f.frames[[0, w]] - (v[[1, 0]] - v[[0, 0]]) * 30.0).abs() < 1e-6);
    }

    #[test]
    fn identity_rotations_and_zero_root_reconstruct_zero_channels() {
        let sk = synth::humanoid_skeleton();
        let joints = FeatureJoints::all(&sk);
        let mut frames = Array2::zeros((3, joints.width()));
        for k in 0..joints.len() {
            for d in [0, 4, 8] {
                frames.column_mut(k * PER_JOINT + d).fill(1.0);
            }
        }
        let f = GestureFeatureSeq::new(30, frames).unwrap();
        let mo = features_to_motion(&f, &sk, &joints).unwrap();
        assert!(mo.frames.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let sk = synth::humanoid_skeleton();
        let joints = FeatureJoints::all(&sk);
        let mut frames = Array2::zeros((3, joints.width()));
        frames[[1, 1]] = f64::NAN;
        let f = GestureFeatureSeq::new(30, frames).unwrap();
        assert!(features_to_motion(&f, &sk, &joints).is_err());
    }

    #[test]
    fn extract_reconstruct_round_trip() {
        let (sk, mo) = random_motion(12, 6);
        let joints = FeatureJoints::all(&sk);
        let f = extract_motion_features(&sk, &mo).unwrap();
        let back = features_to_motion(&f, &sk, &joints).unwrap();
        let err = (&back.frames - &mo.frames)
            .mapv(f64::abs)
            .fold(0.0f64, |a, &b| a.max(b));
        assert!(err < 1e-3, "max channel error {err}");
    }

    #[test]
    fn perturbed_rotations_still_reconstruct() {
        let (sk, mo) = random_motion(4, 7);
        let joints = FeatureJoints::all(&sk);
        let mut f = extract_motion_features(&sk, &mo).unwrap();
        let mut state = 12345u64;
        for v in f.frames.iter_mut() {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            *v += ((state >> 33) as f64 / (1u64 << 31) as f64 - 0.5) * 2e-3;
        }
        let back = features_to_motion(&f, &sk, &joints).unwrap();
        assert!(back.frames.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn joint_selection_requires_root_and_known_names() {
        let sk = synth::humanoid_skeleton();
        assert!(FeatureJoints::from_names(&sk, &["Spine"]).is_err());
        assert!(FeatureJoints::from_names(&sk, &["Hips", "Nope"]).is_err());
        assert!(FeatureJoints::from_names(&sk, &["Hips", "Hips"]).is_err());
        let sel = FeatureJoints::from_names(&sk, &["Hips", "Spine"]).unwrap();
        assert_eq!(sel.width(), 72);
    }

    #[test]
    fn constant_dimension_is_floored() {
        let a = ndarray::array![[1.0, 5.0], [3.0, 5.0]];
        let st = Standardizer::fit([&a]).unwrap();
        assert_eq!(st.std[1], STD_FLOOR);
        let z = st.apply(&a);
        assert!(z.column(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(Standardizer::fit(std::iter::empty::<&Array2<f64>>()).is_err());
    }

    #[test]
    fn fitted_corpus_is_standardized() {
        let (sk, mo) = random_motion(40, 8);
        let a = extract_motion_features(&sk, &mo).unwrap().frames;
        let (sk, mo) = (sk.clone(), synth::gesture_motion(&sk, 25, 9, 1.0));
        let b = extract_motion_features(&sk, &mo).unwrap().frames;
        let st = Standardizer::fit([&a, &b]).unwrap();
        let all = ndarray::concatenate(Axis(0), &[st.apply(&a).view(), st.apply(&b).view()]).unwrap();
        let mean = all.mean_axis(Axis(0)).unwrap();
        let std = all.std_axis(Axis(0), 0.0);
        for (d, (&m, &s)) in mean.iter().zip(std.iter()).enumerate() {
            assert!(m.abs() < 1e-6, "dim {d} mean {m}");
            if st.std[d] > STD_FLOOR {
                assert!((s - 1.0).abs() < 1e-6, "dim {d} std {s}");
            }
        }
    }

    #[test]
    fn sidecar_round_trip() {
        let st = Standardizer {
            mean: ndarray::array![1.0, -2.5],
            std: ndarray::array![0.5, 3.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.gds");
        st.save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"GDS1");
        assert_eq!(Standardizer::load(&p).unwrap(), st);
    }

    proptest! {
        #[test]
        fn apply_invert_round_trip(
            vals in proptest::collection::vec(-100.0..100.0f64, 12),
            mean in proptest::collection::vec(-10.0..10.0f64, 3),
            std in proptest::collection::vec(0.01..10.0f64, 3),
        ) {
            let st = Standardizer { mean: Array1::from(mean), std: Array1::from(std) };
            let x = Array2::from_shape_vec((4, 3), vals).unwrap();
            let back = st.apply(&st.invert(&x));
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
