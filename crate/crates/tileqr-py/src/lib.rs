//! Python extension module exposing the main types and operations: matrices,
//! the tiled factorization, Q application, flop models and DAG queries.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tileqr::dense::DenseMatrix;
use tileqr::driver::{tiled_qr_parallel_opts, tiled_qr_sequential, FactorSet};
use tileqr::kernels::KernelKind;
use tileqr::reference::QrFactorization;
use tileqr::storage::TiledMatrix;

fn to_py_err(e: tileqr::Error) -> PyErr {
    match e {
        tileqr::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A dense matrix of float64 values.
#[pyclass(name = "Matrix")]
struct PyMatrix {
    inner: DenseMatrix,
}

#[pymethods]
impl PyMatrix {
    /// Builds a matrix from a list of rows.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(PyValueError::new_err("matrix must be nonempty"));
        }
        let (m, n) = (rows.len(), rows[0].len());
        if rows.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("all rows must have the same length"));
        }
        Ok(Self {
            inner: DenseMatrix::from_fn(m, n, |r, c| rows[r][c]),
        })
    }

    #[staticmethod]
    fn zeros(rows: usize, cols: usize) -> PyResult<Self> {
        if rows == 0 || cols == 0 {
            return Err(PyValueError::new_err("matrix must be nonempty"));
        }
        Ok(Self {
            inner: DenseMatrix::zeros(rows, cols),
        })
    }

    #[staticmethod]
    fn identity(n: usize) -> PyResult<Self> {
        if n == 0 {
            return Err(PyValueError::new_err("matrix must be nonempty"));
        }
        Ok(Self {
            inner: DenseMatrix::identity(n),
        })
    }

    /// Entries uniform in [-1, 1) from the pinned ChaCha8 stream.
    #[staticmethod]
    fn random(rows: usize, cols: usize, seed: u64) -> PyResult<Self> {
        if rows == 0 || cols == 0 {
            return Err(PyValueError::new_err("matrix must be nonempty"));
        }
        Ok(Self {
            inner: DenseMatrix::random_uniform(rows, cols, seed),
        })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols()
    }

    fn get(&self, r: usize, c: usize) -> PyResult<f64> {
        if r >= self.inner.rows() || c >= self.inner.cols() {
            return Err(PyValueError::new_err(format!(
                "index ({r},{c}) out of range"
            )));
        }
        Ok(self.inner.get(r, c))
    }

    /// The matrix as a list of rows.
    fn to_list(&self) -> Vec<Vec<f64>> {
        (0..self.inner.rows())
            .map(|r| {
                (0..self.inner.cols())
                    .map(|c| self.inner.get(r, c))
                    .collect()
            })
            .collect()
    }

    fn frob_norm(&self) -> f64 {
        self.inner.frob_norm()
    }

    fn matmul(&self, other: &PyMatrix) -> PyResult<Self> {
        if self.inner.cols() != other.inner.rows() {
            return Err(PyValueError::new_err("dimension mismatch"));
        }
        Ok(Self {
            inner: self.inner.matmul(&other.inner),
        })
    }

    fn transpose(&self) -> Self {
        Self {
            inner: self.inner.transpose(),
        }
    }

    fn __repr__(&self) -> String {
        format!("Matrix({}x{})", self.inner.rows(), self.inner.cols())
    }
}

/// A tiled QR factorization holding R, the reflector blocks and the T grid.
#[pyclass(name = "Factorization")]
struct PyFactorization {
    inner: FactorSet,
}

#[pymethods]
impl PyFactorization {
    #[getter]
    fn block_size(&self) -> usize {
        self.inner.block_size()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.nrows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.ncols()
    }

    /// Executed kernel counts as {"GEQT2": .., "LARFB": .., "TSQT2": ..,
    /// "SSRFB": ..}.
    fn kernel_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        let counts = self.inner.kernel_counts();
        for kind in KernelKind::ALL {
            d.set_item(kind_name(kind), counts[kind.index()])?;
        }
        Ok(d)
    }

    /// Modeled flop total of the executed kernels.
    fn modeled_flops(&self) -> f64 {
        self.inner.modeled_flop_thirds() as f64 / 3.0
    }

    /// The upper-triangular factor as a full matrix.
    fn r(&self) -> PyMatrix {
        PyMatrix {
            inner: self.inner.r_matrix(),
        }
    }

    /// The explicit orthogonal factor (Q applied to the identity).
    fn q(&self) -> PyResult<PyMatrix> {
        let id = DenseMatrix::identity(self.inner.nrows());
        Ok(PyMatrix {
            inner: self.inner.apply_q(&id).map_err(to_py_err)?,
        })
    }

    fn apply_q(&self, b: &PyMatrix) -> PyResult<PyMatrix> {
        Ok(PyMatrix {
            inner: self.inner.apply_q(&b.inner).map_err(to_py_err)?,
        })
    }

    fn apply_q_transpose(&self, b: &PyMatrix) -> PyResult<PyMatrix> {
        Ok(PyMatrix {
            inner: self.inner.apply_q_transpose(&b.inner).map_err(to_py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Factorization({}x{}, b={})",
            self.inner.nrows(),
            self.inner.ncols(),
            self.inner.block_size()
        )
    }
}

fn kind_name(kind: KernelKind) -> &'static str {
    match kind {
        KernelKind::Geqt2 => "GEQT2",
        KernelKind::Larfb => "LARFB",
        KernelKind::Tsqt2 => "TSQT2",
        KernelKind::Ssrfb => "SSRFB",
    }
}

fn parse_kind(name: &str) -> PyResult<KernelKind> {
    match name.to_ascii_uppercase().as_str() {
        "GEQT2" | "G" => Ok(KernelKind::Geqt2),
        "LARFB" | "L" => Ok(KernelKind::Larfb),
        "TSQT2" | "T" => Ok(KernelKind::Tsqt2),
        "SSRFB" | "S" => Ok(KernelKind::Ssrfb),
        other => Err(PyValueError::new_err(format!(
            "unknown kernel kind '{other}'"
        ))),
    }
}

/// Factors a matrix with the tile algorithm.
///
/// `workers=None` uses the hardware parallelism; `sequential=True` runs the
/// plain loop order. The result is bitwise identical either way.
#[pyfunction]
#[pyo3(signature = (a, block, workers=None, sequential=false))]
fn factor(
    a: &PyMatrix,
    block: usize,
    workers: Option<usize>,
    sequential: bool,
) -> PyResult<PyFactorization> {
    let t = TiledMatrix::from_col_major(&a.inner, block).map_err(to_py_err)?;
    let inner = if sequential {
        tiled_qr_sequential(t)
    } else {
        let w = workers.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(usize::from)
                .unwrap_or(1)
        });
        tiled_qr_parallel_opts(t, w, false).map_err(to_py_err)?.0
    };
    Ok(PyFactorization { inner })
}

/// Factors with tracing and returns (factorization, summary dict).
#[pyfunction]
#[pyo3(signature = (a, block, workers))]
fn factor_traced<'py>(
    py: Python<'py>,
    a: &PyMatrix,
    block: usize,
    workers: usize,
) -> PyResult<(PyFactorization, Bound<'py, PyDict>)> {
    let t = TiledMatrix::from_col_major(&a.inner, block).map_err(to_py_err)?;
    let (inner, trace) = tiled_qr_parallel_opts(t, workers, true).map_err(to_py_err)?;
    let s = trace.summary();
    let d = PyDict::new(py);
    d.set_item("tasks", trace.records.len())?;
    d.set_item("workers", trace.workers)?;
    d.set_item("makespan_ns", s.makespan_ns)?;
    d.set_item("busy_fraction", s.busy_fraction)?;
    d.set_item("idle_fraction", s.idle_fraction)?;
    Ok((PyFactorization { inner }, d))
}

/// ||A - Q R||_F / ||A||_F for a factorization of `a`.
#[pyfunction]
fn backward_error(a: &PyMatrix, f: &PyFactorization) -> PyResult<f64> {
    if a.inner.rows() != f.inner.nrows() || a.inner.cols() != f.inner.ncols() {
        return Err(PyValueError::new_err(
            "matrix shape does not match factorization",
        ));
    }
    Ok(tileqr::reference::backward_error(&a.inner, &f.inner))
}

/// ||Q^T Q - I||_inf of a factorization's Q.
#[pyfunction]
fn orthogonality_error(f: &PyFactorization) -> f64 {
    tileqr::reference::orthogonality_error(&f.inner)
}

/// Exact tiled operation count for a p x q grid of b-sized tiles.
#[pyfunction]
fn model_flops_tiled(p: usize, q: usize, b: usize) -> PyResult<f64> {
    tileqr::model_flops_tiled(p, q, b).map_err(to_py_err)
}

/// Standard QR operation count 2 n^2 (m - n/3).
#[pyfunction]
fn model_flops_blocked(m: usize, n: usize) -> PyResult<f64> {
    tileqr::model_flops_blocked(m, n).map_err(to_py_err)
}

/// Modeled flops of one kernel call; kind is GEQT2/LARFB/TSQT2/SSRFB.
#[pyfunction]
fn kernel_flops(kind: &str, b: usize) -> PyResult<f64> {
    Ok(tileqr::kernel_flops(parse_kind(kind)?, b))
}

/// Number of tasks in the dependency graph of a p x q grid.
#[pyfunction]
fn dag_node_count(p: usize, q: usize) -> PyResult<usize> {
    Ok(tileqr::build_dag(p, q).map_err(to_py_err)?.node_count())
}

/// The dependency edges of a p x q grid as (from, to) task-name pairs.
#[pyfunction]
fn dag_edges(p: usize, q: usize) -> PyResult<Vec<(String, String)>> {
    let g = tileqr::build_dag(p, q).map_err(to_py_err)?;
    Ok(g.edges()
        .map(|(f, t)| (f.to_string(), t.to_string()))
        .collect())
}

#[pymodule]
#[pyo3(name = "tileqr")]
fn tileqr_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMatrix>()?;
    m.add_class::<PyFactorization>()?;
    m.add_function(wrap_pyfunction!(factor, m)?)?;
    m.add_function(wrap_pyfunction!(factor_traced, m)?)?;
    m.add_function(wrap_pyfunction!(backward_error, m)?)?;
    m.add_function(wrap_pyfunction!(orthogonality_error, m)?)?;
    m.add_function(wrap_pyfunction!(model_flops_tiled, m)?)?;
    m.add_function(wrap_pyfunction!(model_flops_blocked, m)?)?;
    m.add_function(wrap_pyfunction!(kernel_flops, m)?)?;
    m.add_function(wrap_pyfunction!(dag_node_count, m)?)?;
    m.add_function(wrap_pyfunction!(dag_edges, m)?)?;
    Ok(())
}
