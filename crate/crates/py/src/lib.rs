//! Python bindings for the `coopfuse` crate.
//!
//! Tensors cross the boundary as flat lists plus a shape; reports come back
//! as JSON text or plain dicts.

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use coopfuse::cache::CoopTensor;
use coopfuse::channel::{self, ChannelStreams, FadingModel, LinkBudget, PathLossModel};
use coopfuse::config::ScenarioConfig;
use coopfuse::dualsa::{self, AttentionMode, FlopShape};
use coopfuse::fusion::{FusionDims, FusionParams};
use coopfuse::harness::{self, PipelineMode};
use coopfuse::{io, losses, ugf, ConvMode, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Format { .. } => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Dense row-major float64 tensor.
#[pyclass(name = "Tensor", module = "coopfuse", skip_from_py_object)]
#[derive(Clone)]
struct PyTensor {
    inner: coopfuse::Tensor,
}

fn wrap(t: coopfuse::Tensor) -> PyTensor {
    PyTensor { inner: t }
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        coopfuse::Tensor::new(shape, data).map(wrap).map_err(to_py)
    }

    #[staticmethod]
    fn full(shape: Vec<usize>, value: f64) -> Self {
        wrap(coopfuse::Tensor::full(&shape, value))
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    /// Flat row-major values.
    fn tolist(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, shape: Vec<usize>) -> PyResult<Self> {
        self.inner.reshape(&shape).map(wrap).map_err(to_py)
    }

    fn permute(&self, perm: Vec<usize>) -> PyResult<Self> {
        self.inner.permute(&perm).map(wrap).map_err(to_py)
    }

    fn matmul(&self, other: &PyTensor) -> PyResult<Self> {
        self.inner.matmul(&other.inner).map(wrap).map_err(to_py)
    }

    fn add(&self, other: &PyTensor) -> PyResult<Self> {
        self.inner.add(&other.inner).map(wrap).map_err(to_py)
    }

    fn sub(&self, other: &PyTensor) -> PyResult<Self> {
        self.inner.sub(&other.inner).map(wrap).map_err(to_py)
    }

    fn mul(&self, other: &PyTensor) -> PyResult<Self> {
        self.inner.mul(&other.inner).map(wrap).map_err(to_py)
    }

    fn scale(&self, k: f64) -> Self {
        wrap(self.inner.scale(k))
    }

    fn softmax(&self, axis: usize) -> PyResult<Self> {
        self.inner.softmax(axis).map(wrap).map_err(to_py)
    }

    #[pyo3(signature = (gamma, beta, eps = 1e-5))]
    fn layer_norm(&self, gamma: &PyTensor, beta: &PyTensor, eps: f64) -> PyResult<Self> {
        self.inner.layer_norm(&gamma.inner, &beta.inner, eps).map(wrap).map_err(to_py)
    }

    /// `mode` is one of `pointwise`, `depthwise`, `dense`.
    #[pyo3(signature = (kernel, mode = "dense"))]
    fn conv2d(&self, kernel: &PyTensor, mode: &str) -> PyResult<Self> {
        let mode = match mode {
            "pointwise" => ConvMode::Pointwise,
            "depthwise" => ConvMode::Depthwise,
            "dense" => ConvMode::Dense,
            _ => return Err(PyValueError::new_err(format!("unknown conv mode {mode:?}"))),
        };
        self.inner.conv2d(&kernel.inner, mode).map(wrap).map_err(to_py)
    }

    fn sum(&self) -> f64 {
        self.inner.sum()
    }

    fn mean(&self) -> f64 {
        self.inner.mean()
    }

    fn __len__(&self) -> usize {
        self.inner.shape()[0]
    }

    fn __eq__(&self, other: &PyTensor) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyfunction]
fn save_tensor(path: &str, t: &PyTensor) -> PyResult<()> {
    io::save_tensor(path, &t.inner).map_err(to_py)
}

#[pyfunction]
fn load_tensor(path: &str) -> PyResult<PyTensor> {
    io::load_tensor(path).map(wrap).map_err(to_py)
}

#[pyfunction]
fn fspl_db(d: f64, fc_hz: f64) -> PyResult<f64> {
    channel::path_loss_db(&PathLossModel::Fspl, d, fc_hz).map_err(to_py)
}

/// Log-distance loss with the default parameters at `fc_hz`, no shadowing.
#[pyfunction]
fn winner_ii_db(d: f64, fc_hz: f64) -> PyResult<f64> {
    channel::path_loss_db(&PathLossModel::winner_ii_default(fc_hz), d, fc_hz).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (n0_dbm_hz = -174.0, bandwidth_hz = 10e6, nf_db = 6.0))]
fn noise_power_dbm(n0_dbm_hz: f64, bandwidth_hz: f64, nf_db: f64) -> f64 {
    let lb = LinkBudget { n0_dbm_hz, bandwidth_hz, nf_db, ..LinkBudget::vehicle_default() };
    channel::noise_power_dbm(&lb)
}

fn fading_model(name: &str, k_db: f64) -> PyResult<FadingModel> {
    match name {
        "rayleigh" => Ok(FadingModel::Rayleigh),
        "rician" => Ok(FadingModel::rician_db(k_db)),
        "none" => Ok(FadingModel::Rician { k: f64::INFINITY }),
        _ => Err(PyValueError::new_err(format!("unknown fading model {name:?}"))),
    }
}

/// `n` fading magnitudes from the stream of `(seed, agent, timestep)`.
#[pyfunction]
#[pyo3(signature = (model, n, seed = 0, k_db = 6.0))]
fn sample_fading(model: &str, n: usize, seed: u64, k_db: f64) -> PyResult<Vec<f64>> {
    let m = fading_model(model, k_db)?;
    let mut streams = ChannelStreams::for_frame(seed, 0, 0, true);
    Ok((0..n).map(|_| channel::sample_fading(&m, &mut streams.fading)).collect())
}

/// Returns the corrupted tensor and a dict of the channel draw.
#[pyfunction]
#[pyo3(signature = (feature, snr_db, fading = "rayleigh", k_db = 6.0, seed = 0, agent = 1, timestep = 0))]
#[allow(clippy::too_many_arguments)]
fn corrupt_at_fixed_snr<'py>(
    py: Python<'py>,
    feature: &PyTensor,
    snr_db: f64,
    fading: &str,
    k_db: f64,
    seed: u64,
    agent: u64,
    timestep: u64,
) -> PyResult<(PyTensor, Bound<'py, PyDict>)> {
    let m = fading_model(fading, k_db)?;
    let mut streams = ChannelStreams::for_frame(seed, agent, timestep, true);
    let (out, draw) = channel::corrupt_at_fixed_snr(&feature.inner, snr_db, &m, &mut streams).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("snr_db", draw.snr_db)?;
    d.set_item("h_mag", draw.h_mag)?;
    d.set_item("g_rel", draw.g_rel)?;
    d.set_item("sigma2", draw.sigma2)?;
    d.set_item("p_s", draw.p_s)?;
    Ok((wrap(out), d))
}

#[pyfunction]
fn empirical_snr_db(clean: &PyTensor, noisy: &PyTensor) -> PyResult<f64> {
    channel::empirical_snr_db(&clean.inner, &noisy.inner).map_err(to_py)
}

#[pyfunction]
fn bce(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    losses::bce(&pred.inner, &target.inner).map_err(to_py)
}

#[pyfunction]
fn smooth_l1(pred: &PyTensor, target: &PyTensor) -> PyResult<f64> {
    losses::smooth_l1(&pred.inner, &target.inner).map_err(to_py)
}

/// `mode` is `distribution` or `softmax`.
#[pyfunction]
#[pyo3(signature = (teacher, student, mode = "distribution"))]
fn kl_div(teacher: &PyTensor, student: &PyTensor, mode: &str) -> PyResult<f64> {
    let mode = match mode {
        "distribution" => losses::KlMode::Distribution,
        "softmax" => losses::KlMode::ChannelSoftmax,
        _ => return Err(PyValueError::new_err(format!("unknown KL mode {mode:?}"))),
    };
    losses::kl_div(&teacher.inner, &student.inner, mode).map_err(to_py)
}

/// Detection loss for one agent: `alpha * bce(cls) + beta * smooth_l1(reg)`.
#[pyfunction]
#[pyo3(signature = (cls, reg, cls_target, reg_target, alpha = 1.0, beta = 2.0))]
fn teacher_loss(
    cls: &PyTensor,
    reg: &PyTensor,
    cls_target: &PyTensor,
    reg_target: &PyTensor,
    alpha: f64,
    beta: f64,
) -> PyResult<f64> {
    let p = losses::PredictionMaps::new(cls.inner.clone(), reg.inner.clone()).map_err(to_py)?;
    let t = losses::PredictionMaps::new(cls_target.inner.clone(), reg_target.inner.clone()).map_err(to_py)?;
    let w = losses::LossWeights { alpha, beta, ..Default::default() };
    losses::teacher_loss(&[p], &[t], &w).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (kd, det, gamma = 10_000.0))]
fn student_loss(kd: f64, det: f64, gamma: f64) -> f64 {
    losses::student_loss(kd, det, gamma)
}

#[pyfunction]
fn entropy_map(p: &PyTensor) -> PyResult<PyTensor> {
    ugf::entropy_map(&p.inner).map(wrap).map_err(to_py)
}

#[pyfunction]
fn importance_map(entropy: &PyTensor) -> PyResult<PyTensor> {
    ugf::importance_map(&entropy.inner).map(wrap).map_err(to_py)
}

#[pyfunction]
fn cross_branch_weights(w_width: &PyTensor, w_height: &PyTensor, channels: usize) -> PyResult<(PyTensor, PyTensor)> {
    let (a, b) = ugf::cross_branch_weights(&w_width.inner, &w_height.inner, channels).map_err(to_py)?;
    Ok((wrap(a), wrap(b)))
}

/// `mode` is `full2d` or `dualsa`.
#[pyfunction]
fn count_attention_flops(h: u64, w: u64, c_inner: u64, mode: &str) -> PyResult<u64> {
    let mode = match mode {
        "full2d" => AttentionMode::Full2d,
        "dualsa" => AttentionMode::DualSa,
        _ => return Err(PyValueError::new_err(format!("unknown attention mode {mode:?}"))),
    };
    Ok(dualsa::count_attention_flops(h, w, c_inner, mode))
}

#[pyfunction]
#[pyo3(signature = (height, width, channels, heads = 4))]
fn flop_report<'py>(py: Python<'py>, height: u64, width: u64, channels: u64, heads: u64) -> PyResult<Bound<'py, PyDict>> {
    if heads == 0 || channels == 0 {
        return Err(PyValueError::new_err("heads and channels must be positive"));
    }
    let r = dualsa::flop_report(FlopShape {
        height,
        width,
        channels,
        heads,
        head_dim: (channels / heads).max(1),
        gdfn_hidden: 2 * channels,
    });
    let d = PyDict::new(py);
    d.set_item("full2d_flops", r.full2d_flops)?;
    d.set_item("dualsa_flops", r.dualsa_flops)?;
    d.set_item("ratio", r.ratio)?;
    d.set_item("full_module_flops", r.full_module_flops)?;
    d.set_item("dualsa_module_flops", r.dualsa_module_flops)?;
    d.set_item("module_reduction", r.module_reduction)?;
    Ok(d)
}

/// Complete fusion stack with deterministic initialization.
#[pyclass(name = "FusionModel", module = "coopfuse")]
struct PyFusionModel {
    params: FusionParams,
}

#[pymethods]
impl PyFusionModel {
    #[new]
    #[pyo3(signature = (channels, seed = 0, tau = 1.0))]
    fn new(channels: usize, seed: u64, tau: f64) -> PyResult<Self> {
        let dims = FusionDims { tau, ..FusionDims::for_channels(channels) };
        FusionParams::init(&dims, seed).map(|params| Self { params }).map_err(to_py)
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        let entries = io::load_checkpoint(dir).map_err(to_py)?;
        FusionParams::from_named(entries).map(|params| Self { params }).map_err(to_py)
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        io::save_checkpoint(dir, &self.params.to_named()).map_err(to_py)
    }

    /// Fuses an `N x T x H x W x C` cooperative tensor into `H x W x C`.
    #[pyo3(signature = (coop, ego_index = 0))]
    fn forward(&self, coop: &PyTensor, ego_index: usize) -> PyResult<PyTensor> {
        let coop = CoopTensor { data: coop.inner.clone(), ego_index };
        let out = self.params.forward(&coop).map_err(to_py)?;
        Ok(wrap(out.ugf.fused))
    }
}

fn parse_config(text: &str, seed: Option<u64>) -> PyResult<ScenarioConfig> {
    let mut cfg = ScenarioConfig::parse(text).map_err(to_py)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Runs a sweep on a `key = value` scenario and returns the JSON report.
#[pyfunction]
#[pyo3(signature = (config = "", seed = None))]
fn sweep_json(config: &str, seed: Option<u64>) -> PyResult<String> {
    let cfg = parse_config(config, seed)?;
    let report = harness::sweep(&cfg).map_err(to_py)?;
    harness::report_json(&report).map_err(to_py)
}

/// One pipeline run. Returns the fused tensor and the report row as JSON.
#[pyfunction]
#[pyo3(signature = (config = "", mode = "ideal", snr_db = None, seed = None))]
fn run_pipeline(config: &str, mode: &str, snr_db: Option<f64>, seed: Option<u64>) -> PyResult<(PyTensor, String)> {
    let cfg = parse_config(config, seed)?;
    let mode = match (mode, snr_db) {
        ("ideal", _) => PipelineMode::Ideal,
        ("impaired", _) => PipelineMode::Impaired,
        ("fixed-snr", Some(v)) => PipelineMode::FixedSnr(v),
        ("fixed-snr", None) => return Err(PyValueError::new_err("fixed-snr mode needs snr_db")),
        _ => return Err(PyValueError::new_err(format!("unknown mode {mode:?}"))),
    };
    let (fused, row) = harness::run_pipeline(&cfg, mode).map_err(to_py)?;
    let json = serde_json::to_string(&row).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((wrap(fused), json))
}

#[pymodule]
#[pyo3(name = "coopfuse")]
fn coopfuse_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyFusionModel>()?;
    m.add_function(wrap_pyfunction!(save_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(load_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(fspl_db, m)?)?;
    m.add_function(wrap_pyfunction!(winner_ii_db, m)?)?;
    m.add_function(wrap_pyfunction!(noise_power_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(sample_fading, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt_at_fixed_snr, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_snr_db, m)?)?;
    m.add_function(wrap_pyfunction!(bce, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_l1, m)?)?;
    m.add_function(wrap_pyfunction!(kl_div, m)?)?;
    m.add_function(wrap_pyfunction!(teacher_loss, m)?)?;
    m.add_function(wrap_pyfunction!(student_loss, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_map, m)?)?;
    m.add_function(wrap_pyfunction!(importance_map, m)?)?;
    m.add_function(wrap_pyfunction!(cross_branch_weights, m)?)?;
    m.add_function(wrap_pyfunction!(count_attention_flops, m)?)?;
    m.add_function(wrap_pyfunction!(flop_report, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_json, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
