//! Labelled datasets: synthetic Gaussian inputs with a decaying covariance
//! ladder, teacher labelling, IDX ingestion and a CSV exchange format.

mod csv;
mod idx;

pub use self::csv::{dataset_csv_string, parse_dataset_csv, read_dataset_csv, write_dataset_csv};
pub use idx::{binarize_labels, load_idx, parse_idx, write_idx, IdxTensor};

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::net::{argmax, Mlp};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::input("dataset is empty"));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::input(format!(
                "{} input rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::input(format!("label {bad} not below class count {classes}")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite input value"));
        }
        Ok(Dataset { inputs, labels, classes })
    }

    pub fn inputs(&self) -> &Array2<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn d(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let inputs = self.inputs.select(ndarray::Axis(0), idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(inputs, labels, self.classes)
    }

    /// First `n` samples and the rest.
    pub fn split_at(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n == 0 || n >= self.n() {
            return Err(Error::input(format!("split point {n} outside 1..{}", self.n())));
        }
        let a = Dataset::new(self.inputs.slice(s![..n, ..]).to_owned(), self.labels[..n].to_vec(), self.classes)?;
        let b = Dataset::new(self.inputs.slice(s![n.., ..]).to_owned(), self.labels[n..].to_vec(), self.classes)?;
        Ok((a, b))
    }

    /// `(1/n) XᵀX`.
    pub fn input_correlation(&self) -> Result<crate::linalg::SymMatrix> {
        crate::linalg::SymMatrix::gram(self.inputs.view(), 1.0 / self.n() as f64)
    }
}

/// Parameters of the diagonal input covariance `λ_i = b·exp(-c·i)`,
/// `i = 1..=d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SloppySpec {
    pub d: usize,
    pub b: f64,
    pub c: f64,
    pub seed: u64,
}

impl SloppySpec {
    /// Scale chosen so that `b/c` equals `ratio`; `c = 0` falls back to
    /// `b = ratio`.
    pub fn with_ratio(d: usize, c: f64, ratio: f64, seed: u64) -> Self {
        let b = if c > 0.0 { ratio * c } else { ratio };
        SloppySpec { d, b, c, seed }
    }

    pub fn variances(&self) -> Vec<f64> {
        (1..=self.d).map(|i| self.b * (-self.c * i as f64).exp()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::input("dimension must be positive"));
        }
        if !(self.b > 0.0) {
            return Err(Error::input(format!("scale b must be positive, got {}", self.b)));
        }
        if !(self.c >= 0.0) {
            return Err(Error::input(format!("decay c must be nonnegative, got {}", self.c)));
        }
        Ok(())
    }
}

/// `n` i.i.d. rows from `N(0, diag(λ))`.
pub fn gen_sloppy_inputs(spec: &SloppySpec, n: usize) -> Result<Array2<f64>> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::input("sample count must be positive"));
    }
    let sd: Vec<f64> = spec.variances().iter().map(|v| v.sqrt()).collect();
    let mut r = rng::rng(spec.seed);
    let mut x = Array2::zeros((n, spec.d));
    for mut row in x.rows_mut() {
        for (v, s) in row.iter_mut().zip(&sd) {
            *v = s * rng::normal(&mut r);
        }
    }
    Ok(x)
}

/// Labels from the teacher's argmax, ties toward the smaller class.
pub fn teacher_label(inputs: ArrayView2<'_, f64>, teacher: &Mlp) -> Result<Vec<usize>> {
    let z = teacher.logits(inputs)?;
    Ok(z.rows().into_iter().map(argmax).collect())
}
