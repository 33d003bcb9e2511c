//! Python module `sloppy_lab`: spectra statistics, PAC-Bayes primitives
//! and the teacher-student generator.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use sloppy_core::data::Dataset;
use sloppy_core::linalg::{sym_eigvals, SymMatrix};
use sloppy_core::pipeline::{make_teacher_student, TeacherStudentConfig};
use sloppy_core::{pacbayes, sloppy, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Binary KL divergence `kl(q || p)` in nats.
#[pyfunction]
fn bernoulli_kl(q: f64, p: f64) -> f64 {
    pacbayes::bernoulli_kl(q, p)
}

/// Largest `p` with `kl(q || p) <= budget`.
#[pyfunction]
fn kl_inv(q: f64, budget: f64) -> f64 {
    pacbayes::kl_inv(q, budget)
}

#[pyfunction]
fn effective_dim(eigvals: Vec<f64>, n: usize, eps: f64) -> PyResult<usize> {
    sloppy::effective_dim(&eigvals, n, eps).map_err(to_py)
}

#[pyfunction]
fn strength(eigvals: Vec<f64>, n: usize, eps: f64) -> PyResult<f64> {
    sloppy::strength(&eigvals, n, eps).map_err(to_py)
}

/// Sloppy factor at the 1-based index `r`; `inf` when unconstrained.
#[pyfunction]
fn sloppy_factor(eigvals: Vec<f64>, r: usize) -> PyResult<f64> {
    Ok(sloppy::sloppy_factor(&eigvals, r).map_err(to_py)?.value())
}

/// Descending eigenvalues of a symmetric matrix given as a list of rows.
#[pyfunction]
fn sym_eigenvalues(rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let a = Array2::from_shape_vec((n, n), flat).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let m = SymMatrix::from_upper(a).map_err(to_py)?;
    Ok(sym_eigvals(&m).map_err(to_py)?.to_vec())
}

type Split = (Vec<Vec<f64>>, Vec<usize>);

fn split(d: &Dataset) -> Split {
    (d.inputs().rows().into_iter().map(|r| r.to_vec()).collect(), d.labels().to_vec())
}

/// Teacher-student dataset as `((x_train, y_train), (x_val, y_val))`.
#[pyfunction]
#[pyo3(signature = (d, c, n_train, n_val, teacher_hidden, seed=0, ratio=50.0, classes=10))]
#[allow(clippy::too_many_arguments)]
fn teacher_student(
    d: usize,
    c: f64,
    n_train: usize,
    n_val: usize,
    teacher_hidden: usize,
    seed: u64,
    ratio: f64,
    classes: usize,
) -> PyResult<(Split, Split)> {
    let ts = make_teacher_student(&TeacherStudentConfig { d, c, ratio, n_train, n_val, teacher_hidden, classes, seed })
        .map_err(to_py)?;
    Ok((split(&ts.train), split(&ts.val)))
}

#[pymodule]
fn sloppy_lab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(bernoulli_kl, m)?)?;
    m.add_function(wrap_pyfunction!(kl_inv, m)?)?;
    m.add_function(wrap_pyfunction!(effective_dim, m)?)?;
    m.add_function(wrap_pyfunction!(strength, m)?)?;
    m.add_function(wrap_pyfunction!(sloppy_factor, m)?)?;
    m.add_function(wrap_pyfunction!(sym_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(teacher_student, m)?)?;
    Ok(())
}
