//! Dataset CSV: a `# n,d,m` header line carrying the three counts, then one
//! row per sample with `d` floats followed by the integer label.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::error::{Error, Result};

pub fn dataset_csv_string(data: &Dataset) -> String {
    let mut s = String::with_capacity(data.n() * (data.d() + 1) * 20);
    writeln!(s, "# {},{},{}", data.n(), data.d(), data.classes()).unwrap();
    for (row, y) in data.inputs().rows().into_iter().zip(data.labels()) {
        for v in row {
            write!(s, "{v:?},").unwrap();
        }
        writeln!(s, "{y}").unwrap();
    }
    s
}

pub fn write_dataset_csv(data: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_csv_string(data))?;
    Ok(())
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let mut offset = 0;
    let mut lines = text.split_inclusive('\n');
    let head = lines.next().ok_or_else(|| Error::format(0, "empty file"))?;
    let counts: Vec<usize> = head
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::format(0, "missing '# n,d,m' header"))?
        .split(',')
        .map(|t| t.trim().parse().map_err(|_| Error::format(0, format!("bad header field '{t}'"))))
        .collect::<Result<_>>()?;
    let [n, d, m] = counts[..] else {
        return Err(Error::format(0, "header needs exactly n,d,m"));
    };
    offset += head.len();
    let mut inputs = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::format(offset, format!("expected {n} rows, found {i}")))?;
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != d + 1 {
            return Err(Error::format(offset, format!("expected {} fields, found {}", d + 1, fields.len())));
        }
        for (j, t) in fields[..d].iter().enumerate() {
            inputs[[i, j]] = t.parse().map_err(|_| Error::format(offset, format!("bad number '{t}'")))?;
        }
        labels.push(fields[d].parse().map_err(|_| Error::format(offset, format!("bad label '{}'", fields[d])))?);
        offset += line.len();
    }
    Dataset::new(inputs, labels, m)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    parse_dataset_csv(&std::fs::read_to_string(path)?)
}
