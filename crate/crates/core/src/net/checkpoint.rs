//! Plain-text weight dump.
//!
//! ```text
//! # sloppy-lab checkpoint v1
//! activation relu
//! widths 3 4 2
//! layer 0 4 3
//! <4 lines of 3 space-separated floats>
//! layer 1 2 4
//! <2 lines of 4 floats>
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a written
//! checkpoint reproduces the weights bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use super::{Activation, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "# sloppy-lab checkpoint v1";

pub fn checkpoint_string(mlp: &Mlp) -> String {
    let mut s = String::new();
    writeln!(s, "{CHECKPOINT_HEADER}").unwrap();
    writeln!(s, "activation {}", mlp.activation().name()).unwrap();
    let widths: Vec<String> = mlp.widths().iter().map(|w| w.to_string()).collect();
    writeln!(s, "widths {}", widths.join(" ")).unwrap();
    for (k, w) in mlp.weights().iter().enumerate() {
        writeln!(s, "layer {k} {} {}", w.nrows(), w.ncols()).unwrap();
        for row in w.rows() {
            let vals: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(s, "{}", vals.join(" ")).unwrap();
        }
    }
    s
}

pub fn write_checkpoint(mlp: &Mlp, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_string(mlp))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Mlp> {
    parse_checkpoint(&std::fs::read_to_string(path)?)
}

struct Lines<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        if self.pos >= self.text.len() {
            return Err(Error::format(self.pos, "unexpected end of checkpoint"));
        }
        let start = self.pos;
        let rest = &self.text[start..];
        let end = rest.find('\n').map_or(rest.len(), |i| i);
        self.pos = start + end + 1;
        Ok((start, rest[..end].trim_end_matches('\r')))
    }
}

fn keyword<'a>(line: (usize, &'a str), key: &str) -> Result<(usize, &'a str)> {
    let (off, text) = line;
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .map(|r| (off, r))
        .ok_or_else(|| Error::format(off, format!("expected '{key}' line")))
}

fn parse_usizes(off: usize, s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(off, format!("bad integer '{t}'"))))
        .collect()
}

pub fn parse_checkpoint(text: &str) -> Result<Mlp> {
    let mut lines = Lines { text, pos: 0 };
    let (off, head) = lines.next()?;
    if head != CHECKPOINT_HEADER {
        return Err(Error::format(off, "missing checkpoint header"));
    }
    let (off, act) = keyword(lines.next()?, "activation")?;
    let activation = Activation::parse(act).map_err(|e| Error::format(off, e.to_string()))?;
    let (off, w) = keyword(lines.next()?, "widths")?;
    let widths = parse_usizes(off, w)?;
    if widths.len() < 2 {
        return Err(Error::format(off, "need at least two widths"));
    }
    let mut weights = Vec::with_capacity(widths.len() - 1);
    for k in 0..widths.len() - 1 {
        let (off, spec) = keyword(lines.next()?, "layer")?;
        let dims = parse_usizes(off, spec)?;
        if dims != [k, widths[k + 1], widths[k]] {
            return Err(Error::format(off, format!("layer {k} header does not match widths")));
        }
        let (rows, cols) = (widths[k + 1], widths[k]);
        let mut m = Array2::zeros((rows, cols));
        for i in 0..rows {
            let (off, line) = lines.next()?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::format(off, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != cols {
                return Err(Error::format(off, format!("expected {cols} values, found {}", vals.len())));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        weights.push(m);
    }
    Mlp::new(weights, activation)
}
