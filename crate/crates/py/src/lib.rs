//! Python bindings. Matrices cross the boundary as lists of rows.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use gesturediff::denoiser::AblationLayout;
use gesturediff::diffusion::{self, NoiseSchedule};
use gesturediff::features::{Lexicon, Standardizer};
use gesturediff::fgd;
use gesturediff::generator::SamplerOptions;
use gesturediff::motion::{self, MotionSequence, Skeleton};
use gesturediff::pipeline::{self, TrainedModel};
use gesturediff::trainer::{self, RunConfig};
use gesturediff::Error;

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Numeric(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Cosine noise schedule with `steps` diffusion steps.
#[pyclass(name = "Schedule", frozen)]
struct PySchedule(NoiseSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    fn new(steps: usize) -> PyResult<Self> {
        if steps == 0 {
            return Err(PyValueError::new_err("steps must be positive"));
        }
        Ok(PySchedule(diffusion::cosine_schedule(steps)))
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.check(t)?;
        Ok(self.0.alpha_bar(t))
    }

    fn beta(&self, t: usize) -> PyResult<f64> {
        if t == 0 {
            return Err(PyValueError::new_err("beta is defined for t >= 1"));
        }
        self.check(t)?;
        Ok(self.0.beta(t))
    }

    /// Noised sample x_t of `x0` with the given Gaussian noise.
    fn q_sample(&self, x0: Vec<Vec<f64>>, t: usize, eps: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        self.check(t)?;
        let out = diffusion::q_sample(&from_rows(x0)?, t, &from_rows(eps)?, &self.0).map_err(to_py)?;
        Ok(to_rows(&out))
    }

    fn __repr__(&self) -> String {
        format!("Schedule(steps={})", self.0.steps())
    }
}

impl PySchedule {
    fn check(&self, t: usize) -> PyResult<()> {
        if t > self.0.steps() {
            return Err(PyValueError::new_err(format!(
                "t = {t} exceeds {} steps",
                self.0.steps()
            )));
        }
        Ok(())
    }
}

#[pyfunction]
#[pyo3(signature = (error, delta = 1.0))]
fn huber(error: f64, delta: f64) -> f64 {
    diffusion::huber(error, delta)
}

/// Fréchet distance between Gaussians fitted to two sets of row vectors.
#[pyfunction]
fn frechet_distance(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    let a = fgd::fit_gaussian(from_rows(a)?.view()).map_err(to_py)?;
    let b = fgd::fit_gaussian(from_rows(b)?.view()).map_err(to_py)?;
    fgd::frechet_distance(&a, &b).map_err(to_py)
}

/// A parsed BVH file.
#[pyclass(name = "Motion")]
struct PyMotion {
    skeleton: Skeleton,
    motion: MotionSequence,
}

#[pymethods]
impl PyMotion {
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        let (skeleton, motion) = motion::parse_bvh(text).map_err(to_py)?;
        Ok(PyMotion { skeleton, motion })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let (skeleton, motion) = pipeline::read_bvh(&path).map_err(to_py)?;
        Ok(PyMotion { skeleton, motion })
    }

    #[getter]
    fn fps(&self) -> u32 {
        self.motion.fps
    }

    #[getter]
    fn num_frames(&self) -> usize {
        self.motion.num_frames()
    }

    #[getter]
    fn joint_names(&self) -> Vec<String> {
        self.skeleton.joints().iter().map(|j| j.name.clone()).collect()
    }

    /// Channel values per frame, in file order.
    fn channels(&self) -> Vec<Vec<f64>> {
        to_rows(&self.motion.frames)
    }

    /// World positions of every joint, one list of (x, y, z) per frame.
    fn joint_positions(&self) -> PyResult<Vec<Vec<[f64; 3]>>> {
        let poses = motion::forward_kinematics(&self.skeleton, &self.motion).map_err(to_py)?;
        Ok(poses
            .iter()
            .map(|p| p.positions.iter().map(|v| [v.x, v.y, v.z]).collect())
            .collect())
    }

    fn to_bvh(&self) -> PyResult<String> {
        motion::write_bvh(&self.skeleton, &self.motion).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Motion(joints={}, frames={}, fps={})",
            self.skeleton.num_joints(),
            self.motion.num_frames(),
            self.motion.fps
        )
    }
}

/// Per-frame gesture, audio and text features of one recording.
#[pyfunction]
fn extract_features(py: Python<'_>, wav: PathBuf, tsv: PathBuf, bvh: PathBuf, speaker: usize) -> PyResult<Py<PyAny>> {
    let session =
        pipeline::extract_session("session", &wav, &tsv, &bvh, speaker, &Lexicon::default()).map_err(to_py)?;
    let out = pyo3::types::PyDict::new(py);
    out.set_item("gesture", to_rows(&session.gesture))?;
    out.set_item("audio", to_rows(&session.audio))?;
    out.set_item("text", to_rows(&session.text))?;
    out.set_item("speaker", session.speaker)?;
    Ok(out.into_any().unbind())
}

/// Extracts a recording into a session directory usable by `train`.
#[pyfunction]
fn extract_session(wav: PathBuf, tsv: PathBuf, bvh: PathBuf, speaker: usize, out_dir: PathBuf) -> PyResult<()> {
    let name = out_dir
        .file_name()
        .map_or("session".into(), |n| n.to_string_lossy().into_owned());
    let session = pipeline::extract_session(&name, &wav, &tsv, &bvh, speaker, &Lexicon::default()).map_err(to_py)?;
    pipeline::save_session(&session, &out_dir).map_err(to_py)
}

/// A trained denoiser with its schedule and feature standardizer.
#[pyclass(name = "Model")]
struct PyModel(TrainedModel);

#[pymethods]
impl PyModel {
    /// Trains on every session under `data_dir` with the small preset.
    #[staticmethod]
    #[pyo3(signature = (data_dir, steps = 100, layout = "split", seed = 0, lr = None))]
    fn train(
        py: Python<'_>,
        data_dir: PathBuf,
        steps: usize,
        layout: &str,
        seed: u64,
        lr: Option<f64>,
    ) -> PyResult<(Self, Vec<f64>)> {
        let mut run = RunConfig::desk();
        run.model.layout = layout.parse::<AblationLayout>().map_err(to_py)?;
        run.train.steps = steps;
        run.train.seed = seed;
        if let Some(lr) = lr {
            run.train.lr = lr;
        }
        run.validate().map_err(to_py)?;
        py.detach(|| {
            let sessions = pipeline::load_sessions(&data_dir)?;
            let standardizer = Standardizer::fit(sessions.iter().map(|s| &s.gesture))?;
            let clips = trainer::window_dataset(
                &sessions,
                &standardizer,
                run.model.n_seed,
                run.model.n_pred,
                run.train.stride,
            )?;
            if clips.is_empty() {
                return Err(Error::Invalid("no session is long enough for one clip".into()));
            }
            let outcome = trainer::train(&clips, &run)?;
            let model = TrainedModel {
                model: outcome.model,
                schedule: outcome.schedule,
                standardizer,
            };
            Ok((PyModel(model), outcome.losses))
        })
        .map_err(to_py)
    }

    #[staticmethod]
    fn load(checkpoint: PathBuf) -> PyResult<Self> {
        TrainedModel::load(&checkpoint).map(PyModel).map_err(to_py)
    }

    fn save(&self, checkpoint: PathBuf) -> PyResult<()> {
        self.0.save(&checkpoint).map_err(to_py)
    }

    #[getter]
    fn layout(&self) -> String {
        self.0.model.config().layout.to_string()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.0.model.params().iter().map(|(_, v)| v.len()).sum()
    }

    /// Gesture motion for a recording, returned as BVH text.
    #[pyo3(signature = (wav, tsv, speaker, seed_bvh = None, gamma = 0.0, rng_seed = 0, blend_frames = 0))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        py: Python<'_>,
        wav: PathBuf,
        tsv: PathBuf,
        speaker: usize,
        seed_bvh: Option<PathBuf>,
        gamma: f64,
        rng_seed: u64,
        blend_frames: usize,
    ) -> PyResult<String> {
        py.detach(|| {
            let (audio, text) = pipeline::speech_features(&wav, &tsv, &Lexicon::default(), None)?;
            let seed = seed_bvh.map(|p| pipeline::bvh_features(&p)).transpose()?;
            let options = SamplerOptions {
                gamma,
                zero_noise: false,
            };
            let seed_ref = seed.as_ref().map(|(sk, g)| (sk, g));
            let (_, out) = self
                .0
                .generate(audio, text, speaker, seed_ref, options, rng_seed, blend_frames)?;
            Ok(out.bvh)
        })
        .map_err(to_py)
    }
}

/// Writes a synthetic talk (WAV, transcript, BVH) and returns the three paths.
#[pyfunction]
#[pyo3(signature = (dir, name, frames, speaker = 0, seed = 0))]
fn write_synthetic_recording(
    dir: PathBuf,
    name: &str,
    frames: usize,
    speaker: usize,
    seed: u64,
) -> PyResult<(PathBuf, PathBuf, PathBuf)> {
    gesturediff::synth::write_recording(&dir, name, frames, speaker, seed).map_err(to_py)
}

#[pymodule]
fn gesturediff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyMotion>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(huber, m)?)?;
    m.add_function(wrap_pyfunction!(frechet_distance, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(extract_session, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_recording, m)?)?;
    m.add("GESTURE_WIDTH", gesturediff::dims::GESTURE_WIDTH)?;
    m.add("AUDIO_WIDTH", gesturediff::dims::AUDIO_WIDTH)?;
    m.add("TEXT_WIDTH", gesturediff::dims::TEXT_WIDTH)?;
    Ok(())
}
