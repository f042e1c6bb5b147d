//! Python bindings. Quaternions are `(w, x, y, z)` tuples and tensors are
//! flat row-major lists with an explicit `(B, H, T, d_h)` shape.

use hqmq::budget::BitMode;
use hqmq::codec::{CodecConfig, TensorShape};
use hqmq::outlier::OutlierPolicy;
use hqmq::packing::{self, check_distinctness};
use hqmq::{kvpack, HqmqError, Quaternion, Role};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

type Quat = (f64, f64, f64, f64);

fn err(e: HqmqError) -> PyErr {
    match e {
        HqmqError::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn quat((w, x, y, z): Quat) -> Quaternion {
    Quaternion::new(w, x, y, z)
}

fn tuple(q: Quaternion) -> Quat {
    (q.w, q.x, q.y, q.z)
}

fn role(s: &str) -> PyResult<Role> {
    s.parse().map_err(err)
}

/// Hamilton product of two quaternions.
#[pyfunction]
fn hamilton(a: Quat, b: Quat) -> Quat {
    tuple(hqmq::hamilton(quat(a), quat(b)))
}

/// Joint codebook `{p · s}` for one (seed, layer, head, role).
#[pyclass(name = "JointCodebook", frozen)]
struct PyJointCodebook {
    inner: hqmq::JointCodebook,
}

#[pymethods]
impl PyJointCodebook {
    #[new]
    #[pyo3(signature = (seed, secondary_size, layer = 0, head = 0, role = "K"))]
    fn new(seed: u64, secondary_size: usize, layer: u32, head: u32, role: &str) -> PyResult<Self> {
        let inner = hqmq::JointCodebook::seeded(seed, layer, head, self::role(role)?, secondary_size).map_err(err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn secondary_size(&self) -> usize {
        self.inner.secondary_size()
    }

    fn codeword(&self, index: usize) -> PyResult<Quat> {
        self.inner
            .codeword(index)
            .map(tuple)
            .ok_or_else(|| PyValueError::new_err(format!("index {index} out of range")))
    }

    /// `(index, cosine)` of the nearest codeword to a unit quaternion.
    fn nearest(&self, u: Quat) -> PyResult<(usize, f64)> {
        let n = self.inner.nearest(quat(u)).map_err(err)?;
        Ok((n.index, n.cosine))
    }

    /// Number of codewords separated by at least 1e-6 rad.
    fn distinct_count(&self) -> usize {
        check_distinctness(&self.inner).0
    }
}

/// Packed tensor produced by [`encode`].
#[pyclass(name = "QuantizedTensor", frozen)]
struct PyQuantizedTensor {
    inner: hqmq::QuantizedTensor,
}

#[pymethods]
impl PyQuantizedTensor {
    #[getter]
    fn shape(&self) -> (usize, usize, usize, usize) {
        let s = self.inner.shape;
        (s.batch, s.heads, s.tokens, s.head_dim)
    }

    #[getter]
    fn outlier_fraction(&self) -> f64 {
        self.inner.outlier_fraction()
    }

    #[getter]
    fn payload_bits(&self) -> u64 {
        self.inner.payload_bits()
    }

    /// Flat joint-codebook indices of the coded chunks.
    fn indices(&self) -> Vec<u32> {
        self.inner.codes.iter().map(|c| c.index).collect()
    }

    fn decode(&self) -> PyResult<Vec<f64>> {
        hqmq::decode_tensor(&self.inner).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = kvpack::to_bytes(&self.inner).map_err(err)?;
        Ok(PyBytes::new(py, &bytes))
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(Self { inner: kvpack::from_bytes(data).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        let (b, h, t, d) = self.shape();
        format!(
            "QuantizedTensor(shape=({b}, {h}, {t}, {d}), S={}, b_r={}, outliers={})",
            self.inner.config.secondary_size,
            self.inner.config.radius_bits,
            self.inner.payloads.len()
        )
    }
}

/// Encodes a flat row-major tensor.
#[pyfunction]
#[pyo3(signature = (data, shape, secondary_size = 96, radius_bits = 4, seed = 0, outlier_c = None, role = "K", layer = 0, head = 0))]
#[allow(clippy::too_many_arguments)]
fn encode(
    data: Vec<f64>,
    shape: (usize, usize, usize, usize),
    secondary_size: usize,
    radius_bits: u8,
    seed: u64,
    outlier_c: Option<f64>,
    role: &str,
    layer: u32,
    head: u32,
) -> PyResult<PyQuantizedTensor> {
    let shape = TensorShape::new(shape.0, shape.1, shape.2, shape.3).map_err(err)?;
    let mut cfg = CodecConfig::new(secondary_size, radius_bits, seed)
        .with_role(self::role(role)?)
        .with_layer(layer)
        .with_head_offset(head);
    if let Some(c) = outlier_c {
        cfg = cfg.with_outlier(OutlierPolicy::new(c).map_err(err)?);
    }
    let inner = hqmq::encode_tensor(&data, shape, cfg).map_err(err)?;
    Ok(PyQuantizedTensor { inner })
}

#[pyfunction]
fn decode(qt: &PyQuantizedTensor) -> PyResult<Vec<f64>> {
    qt.decode()
}

/// Bit accounting for an `S`, `b_r`, `d_h` configuration.
#[pyfunction]
#[pyo3(signature = (secondary_size, radius_bits, head_dim = 128, mode = "fractional"))]
fn budget<'py>(
    py: Python<'py>,
    secondary_size: usize,
    radius_bits: u8,
    head_dim: usize,
    mode: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let mode = match mode {
        "fractional" => BitMode::Fractional,
        "ceiled" => BitMode::Ceiled,
        other => return Err(PyValueError::new_err(format!("mode must be fractional or ceiled, got {other:?}"))),
    };
    let b = hqmq::budget(secondary_size, radius_bits, head_dim, mode).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mode", b.mode.to_string())?;
    d.set_item("index_bits", b.index_bits())?;
    d.set_item("per_chunk_bits", b.per_chunk_bits)?;
    d.set_item("per_element_bits", b.per_element_bits)?;
    d.set_item("per_element_with_scale", b.per_element_with_scale)?;
    d.set_item("compression_ratio", b.compression_ratio)?;
    Ok(d)
}

/// `(1 - p) b + 16 p + 1 / d_chunk`.
#[pyfunction]
#[pyo3(signature = (b_hqmq, p, d_chunk = 4.0))]
fn effective_bits(b_hqmq: f64, p: f64, d_chunk: f64) -> f64 {
    hqmq::effective_bits(b_hqmq, p, d_chunk)
}

#[pyfunction]
fn verify_group(py: Python<'_>) -> PyResult<Bound<'_, PyDict>> {
    let r = hqmq::verify_group(&hqmq::build_2t());
    let d = PyDict::new(py);
    d.set_item("ok", r.is_ok())?;
    d.set_item("closure", r.closure)?;
    d.set_item("inverses", r.all_inverses())?;
    d.set_item("min_angle_deg", r.min_angle_deg)?;
    d.set_item("angle_histogram", r.angle_histogram.clone())?;
    Ok(d)
}

/// Monte-Carlo covering radius and mean angular error, in radians.
#[pyfunction]
#[pyo3(signature = (secondary_size, seed = 0, n_probes = 100_000, probe_seed = 1))]
fn estimate_covering(
    py: Python<'_>,
    secondary_size: usize,
    seed: u64,
    n_probes: usize,
    probe_seed: u64,
) -> PyResult<Bound<'_, PyDict>> {
    let jc = hqmq::JointCodebook::seeded(seed, 0, 0, Role::Key, secondary_size).map_err(err)?;
    let e = py.detach(|| packing::estimate_covering(&jc, n_probes, probe_seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("codebook_size", e.codebook_size)?;
    d.set_item("n_probes", e.n_probes)?;
    d.set_item("rho_hat", e.rho_hat)?;
    d.set_item("mean_angular_error", e.mean_angular_error)?;
    Ok(d)
}

#[pymodule]
fn hqmq_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyJointCodebook>()?;
    m.add_class::<PyQuantizedTensor>()?;
    m.add_function(wrap_pyfunction!(hamilton, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(budget, m)?)?;
    m.add_function(wrap_pyfunction!(effective_bits, m)?)?;
    m.add_function(wrap_pyfunction!(verify_group, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_covering, m)?)?;
    Ok(())
}
