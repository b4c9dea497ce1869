//! Python bindings for the gazeseq pipeline.

use std::path::PathBuf;

use gazeseq::checkpoint::Checkpoint;
use gazeseq::dataset::{self, build_dataset, manifest_hash, Dataset, GenerationParams, SequenceKey};
use gazeseq::evaluation;
use gazeseq::models::{count_parameters, GazeModel, ModelConfig, ModelKind, ModelVariant};
use gazeseq::oculomotor::{generate_stimulus, simulate_scanpath, AngleRange, FrameLabel, OculomotorParams};
use gazeseq::render::{self, Side};
use gazeseq::{geometry, metrics, stats, GazeAngles};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: gazeseq::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn angles(pairs: &[(f64, f64)]) -> Vec<GazeAngles> {
    pairs.iter().map(|&(y, p)| GazeAngles::new(y, p)).collect()
}

fn parse_labels(labels: &[String]) -> PyResult<Vec<FrameLabel>> {
    labels.iter().map(|l| l.parse::<FrameLabel>().map_err(err)).collect()
}

/// Unit gaze vector `(x, y, z)` for yaw and pitch in degrees.
#[pyfunction]
fn angles_to_vector(yaw_deg: f64, pitch_deg: f64) -> (f64, f64, f64) {
    let [x, y, z] = geometry::angles_to_vector(GazeAngles::new(yaw_deg, pitch_deg));
    (x, y, z)
}

#[pyfunction]
fn vector_to_angles(x: f64, y: f64, z: f64) -> PyResult<(f64, f64)> {
    let a = geometry::vector_to_angles([x, y, z]).map_err(err)?;
    Ok((a.yaw_deg, a.pitch_deg))
}

#[pyfunction]
fn mirror_angles(yaw_deg: f64, pitch_deg: f64) -> (f64, f64) {
    let a = geometry::mirror_angles(GazeAngles::new(yaw_deg, pitch_deg));
    (a.yaw_deg, a.pitch_deg)
}

/// `(mae_yaw, mae_pitch, mae_mean)` over paired `(yaw, pitch)` lists.
#[pyfunction]
fn mae(preds: Vec<(f64, f64)>, gts: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let s = metrics::mae(&angles(&preds), &angles(&gts)).map_err(err)?;
    Ok((s.mae_yaw, s.mae_pitch, s.mae_mean))
}

/// Percentage reduction from `base` to `other`.
#[pyfunction]
fn relative_improvement(base: f64, other: f64) -> PyResult<f64> {
    metrics::relative_improvement(base, other).map_err(err)
}

/// Paired two-sided Wilcoxon signed-rank test: `(statistic, p, n)`.
#[pyfunction]
fn wilcoxon_signed_rank(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let t = stats::wilcoxon_signed_rank(&a, &b).map_err(err)?;
    Ok((t.statistic, t.p_value, t.n))
}

/// Two-sided two-sample Kolmogorov-Smirnov test: `(D, p, n)`.
#[pyfunction]
fn ks_two_sample(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let t = stats::ks_two_sample(&a, &b).map_err(err)?;
    Ok((t.statistic, t.p_value, t.n))
}

#[pyfunction]
fn common_subset(length: usize, s_max: usize) -> PyResult<Vec<usize>> {
    evaluation::common_subset(length, s_max).map_err(err)
}

/// I-VT labels (`"FIX"`/`"SAC"`) for a 100 Hz `(yaw, pitch)` trace.
#[pyfunction]
#[pyo3(signature = (trace, threshold_deg_s = evaluation::DEFAULT_VELOCITY_THRESHOLD))]
fn annotate_frames(trace: Vec<(f64, f64)>, threshold_deg_s: f64) -> PyResult<Vec<&'static str>> {
    let labels = evaluation::annotate_frames(&angles(&trace), threshold_deg_s).map_err(err)?;
    Ok(labels.iter().map(|l| l.as_str()).collect())
}

#[pyfunction]
fn label_window(labels: Vec<String>) -> PyResult<&'static str> {
    Ok(evaluation::label_window(&parse_labels(&labels)?).as_str())
}

/// Simulated 100 Hz scanpath: list of `(t_ms, yaw, pitch, label)`.
#[pyfunction]
#[pyo3(signature = (seed, fixations = 12, half_range_deg = 20.0))]
fn simulate(seed: u64, fixations: usize, half_range_deg: f64) -> PyResult<Vec<(u64, f64, f64, &'static str)>> {
    let r = AngleRange::symmetric(half_range_deg);
    let script = generate_stimulus(seed, fixations, r, r).map_err(err)?;
    let path = simulate_scanpath(&script, &OculomotorParams::default(), seed).map_err(err)?;
    Ok(path
        .iter()
        .map(|f| (f.t_ms, f.gaze.yaw_deg, f.gaze.pitch_deg, f.label.as_str()))
        .collect())
}

/// One 100x160 8-bit eye image (row-major bytes) of a sampled subject.
#[pyfunction]
#[pyo3(signature = (yaw_deg, pitch_deg, subject_id = 0, seed = 0, noise_sigma = 0.0, side = "L", frame_seed = 0))]
#[allow(clippy::too_many_arguments)]
fn render_eye<'py>(
    py: Python<'py>,
    yaw_deg: f64,
    pitch_deg: f64,
    subject_id: u32,
    seed: u64,
    noise_sigma: f64,
    side: &str,
    frame_seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    let side: Side = side.parse().map_err(err)?;
    let app = render::sample_subject(subject_id, seed);
    let frame = render::render_eye(GazeAngles::new(yaw_deg, pitch_deg), &app, noise_sigma, frame_seed, side).map_err(err)?;
    Ok(PyBytes::new(py, &frame.pixels))
}

/// Builds a dataset on disk; returns the total frame count.
#[pyfunction]
fn synthesize(subjects: usize, seed: u64, out: PathBuf) -> PyResult<usize> {
    let m = build_dataset(subjects, seed, &out, &GenerationParams::default()).map_err(err)?;
    Ok(m.total_frames)
}

/// Exact trainable parameter count of a full-size variant.
#[pyfunction]
#[pyo3(signature = (kind, window = 1))]
fn parameter_count(kind: &str, window: usize) -> PyResult<usize> {
    let kind: ModelKind = kind.parse().map_err(err)?;
    let v = ModelVariant { kind, window };
    count_parameters(v, &ModelConfig::default()).map_err(err)
}

/// An opened dataset root.
#[pyclass(name = "Dataset", module = "gazeseq_py")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(root: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Dataset::open(root).map_err(err)?,
        })
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.inner.manifest.n_subjects
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.manifest.seed
    }

    fn manifest_sha256(&self) -> PyResult<String> {
        manifest_hash(&self.inner.root).map_err(err)
    }

    /// Subject ids in `"TRAIN"`, `"VAL"`, or `"TEST"`.
    fn subjects(&self, split: &str) -> PyResult<Vec<u32>> {
        let split = match split {
            "TRAIN" => dataset::Split::Train,
            "VAL" => dataset::Split::Val,
            "TEST" => dataset::Split::Test,
            _ => return Err(PyValueError::new_err(format!("unknown split {split:?}"))),
        };
        Ok(self.inner.manifest.subjects_in(split))
    }

    /// `(frames, gaze, labels)` of one stored sequence; frames are bytes.
    #[pyo3(signature = (subject_id, side, sequence, normalized = false))]
    #[allow(clippy::type_complexity)]
    fn sequence<'py>(
        &self,
        py: Python<'py>,
        subject_id: u32,
        side: &str,
        sequence: usize,
        normalized: bool,
    ) -> PyResult<(Vec<Bound<'py, PyBytes>>, Vec<(f64, f64)>, Vec<&'static str>)> {
        let key = SequenceKey {
            subject_id,
            side: side.parse().map_err(err)?,
            sequence,
        };
        let mut seq = dataset::load_sequence(&self.inner.root, key).map_err(err)?;
        if normalized {
            seq = seq.normalize_side();
        }
        let frames = (0..seq.len()).map(|i| PyBytes::new(py, seq.frame(i))).collect();
        let gaze = seq.gaze.iter().map(|g| (g.yaw_deg, g.pitch_deg)).collect();
        let labels = seq.labels.iter().map(|l| l.as_str()).collect();
        Ok((frames, gaze, labels))
    }
}

/// A trained model loaded from a run directory.
#[pyclass(name = "Model", module = "gazeseq_py")]
struct PyModel {
    inner: GazeModel<f32>,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(run_dir: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&run_dir).map_err(err)?;
        Ok(Self {
            inner: ck.to_model().map_err(err)?,
        })
    }

    /// Untrained model; `kind` is `STATIC1`, `STATIC2`, or `S1_LSTM`.
    #[staticmethod]
    #[pyo3(signature = (kind, window = 1, seed = 0))]
    fn init(kind: &str, window: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = kind.parse().map_err(err)?;
        let v = ModelVariant { kind, window };
        Ok(Self {
            inner: gazeseq::models::init_parameters(v, &ModelConfig::default(), seed).map_err(err)?,
        })
    }

    #[getter]
    fn label(&self) -> String {
        self.inner.variant.label()
    }

    #[getter]
    fn window(&self) -> usize {
        self.inner.variant.window
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        use gazeseq::nn::Module;
        self.inner.param_count()
    }

    /// Estimates for each frame of a contiguous run (left-eye convention);
    /// `None` until a full window is available.
    fn predict(&mut self, frames: Vec<Vec<u8>>) -> PyResult<Vec<Option<(f64, f64)>>> {
        let refs: Vec<&[u8]> = frames.iter().map(|f| f.as_slice()).collect();
        let out = self.inner.predict_frames(&refs).map_err(err)?;
        Ok(out.into_iter().map(|p| p.map(|[y, p]| (y, p))).collect())
    }
}

#[pymodule]
fn gazeseq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(angles_to_vector, m)?)?;
    m.add_function(wrap_pyfunction!(vector_to_angles, m)?)?;
    m.add_function(wrap_pyfunction!(mirror_angles, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(relative_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_signed_rank, m)?)?;
    m.add_function(wrap_pyfunction!(ks_two_sample, m)?)?;
    m.add_function(wrap_pyfunction!(common_subset, m)?)?;
    m.add_function(wrap_pyfunction!(annotate_frames, m)?)?;
    m.add_function(wrap_pyfunction!(label_window, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(render_eye, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add("FRAME_HEIGHT", render::FRAME_HEIGHT)?;
    m.add("FRAME_WIDTH", render::FRAME_WIDTH)?;
    Ok(())
}
