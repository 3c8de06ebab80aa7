//! Text checkpoint of a client model.
//!
//! ```text
//! CHFL-CHECKPOINT 1
//! scalar f64
//! mu 3e-1
//! common 16 512 256 128 7
//! unique 8 512 256 128 7
//! common.W1 512 16
//! <512 lines of 16 values>
//! common.b1 1 512
//! <1 line of 512 values>
//! ...
//! unique.W1 ...
//! ...
//! lateral.U2 256 512
//! ...
//! ```
//!
//! Values use shortest round-trip exponent notation, so reading a checkpoint
//! back reproduces every parameter bit for bit.

use std::io::{BufRead, Write};

use ndarray::{Array1, Array2};

use super::{ChflClientModel, LateralSet};
use crate::error::{Error, Result};
use crate::nn::{DenseLayerParams, MlpParams};
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &str = "CHFL-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar, W: Write>(model: &ChflClientModel<T>, mut out: W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(out, "scalar {}", T::NAME)?;
    writeln!(out, "mu {:e}", model.lateral.mu())?;
    write_dims(&mut out, "common", &model.common.dims())?;
    write_dims(&mut out, "unique", &model.unique.dims())?;
    for (name, column) in [("common", &model.common), ("unique", &model.unique)] {
        for (i, layer) in column.layers().iter().enumerate() {
            write_block(
                &mut out,
                &format!("{name}.W{}", i + 1),
                layer.weights.nrows(),
                layer.weights.ncols(),
                layer.weights.iter(),
            )?;
            write_block(
                &mut out,
                &format!("{name}.b{}", i + 1),
                1,
                layer.biases.len(),
                layer.biases.iter(),
            )?;
        }
    }
    for (j, m) in model.lateral.matrices().iter().enumerate() {
        write_block(
            &mut out,
            &format!("lateral.U{}", j + 2),
            m.nrows(),
            m.ncols(),
            m.iter(),
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_dims<W: Write>(out: &mut W, name: &str, dims: &[usize]) -> Result<()> {
    let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    writeln!(out, "{name} {}", dims.join(" "))?;
    Ok(())
}

fn write_block<'a, T: Scalar, W: Write>(
    out: &mut W,
    name: &str,
    rows: usize,
    cols: usize,
    values: impl Iterator<Item = &'a T>,
) -> Result<()> {
    writeln!(out, "{name} {rows} {cols}")?;
    let values: Vec<&T> = values.collect();
    for row in values.chunks(cols.max(1)) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    if cols == 0 {
        for _ in 0..rows {
            writeln!(out)?;
        }
    }
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.line_no += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => Err(Error::Checkpoint(format!(
                "unexpected end of file at line {}",
                self.line_no
            ))),
        }
    }

    fn expect_key(&mut self, key: &str) -> Result<Vec<String>> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some(k) if k == key => Ok(parts.map(str::to_owned).collect()),
            other => Err(Error::Checkpoint(format!(
                "line {}: expected `{key}`, found `{}`",
                self.line_no,
                other.unwrap_or("")
            ))),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint(format!("line {}: {}", self.line_no, msg.into()))
    }

    fn parse_usize(&self, s: &str) -> Result<usize> {
        s.parse()
            .map_err(|_| self.err(format!("`{s}` is not a count")))
    }

    fn parse_value<T: Scalar>(&self, s: &str) -> Result<T> {
        s.parse()
            .map_err(|_| self.err(format!("`{s}` is not a number")))
    }

    fn read_dims(&mut self, key: &str) -> Result<Vec<usize>> {
        let parts = self.expect_key(key)?;
        parts.iter().map(|p| self.parse_usize(p)).collect()
    }

    fn read_block<T: Scalar>(&mut self, name: &str, rows: usize, cols: usize) -> Result<Vec<T>> {
        let header = self.expect_key(name)?;
        if header.len() != 2
            || self.parse_usize(&header[0])? != rows
            || self.parse_usize(&header[1])? != cols
        {
            return Err(self.err(format!("block {name} should be {rows} x {cols}")));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = self.next_line()?;
            let before = values.len();
            for tok in line.split_whitespace() {
                values.push(self.parse_value(tok)?);
            }
            if values.len() - before != cols {
                return Err(self.err(format!("block {name}: expected {cols} values per row")));
            }
        }
        Ok(values)
    }
}

fn read_column<T: Scalar, R: BufRead>(
    lines: &mut Lines<R>,
    name: &str,
    dims: &[usize],
) -> Result<MlpParams<T>> {
    let mut layers = Vec::with_capacity(dims.len().saturating_sub(1));
    for (i, w) in dims.windows(2).enumerate() {
        let weights = lines.read_block(&format!("{name}.W{}", i + 1), w[1], w[0])?;
        let biases = lines.read_block(&format!("{name}.b{}", i + 1), 1, w[1])?;
        layers.push(DenseLayerParams {
            weights: Array2::from_shape_vec((w[1], w[0]), weights).expect("sized above"),
            biases: Array1::from_vec(biases),
        });
    }
    MlpParams::from_layers(layers)
}

pub fn read_checkpoint<T: Scalar, R: BufRead>(input: R) -> Result<ChflClientModel<T>> {
    let mut lines = Lines {
        inner: input.lines(),
        line_no: 0,
    };
    let magic = lines.expect_key(CHECKPOINT_MAGIC)?;
    if magic.len() != 1 || magic[0] != CHECKPOINT_VERSION.to_string() {
        return Err(lines.err(format!("unsupported checkpoint version {magic:?}")));
    }
    let scalar = lines.expect_key("scalar")?;
    if scalar.first().map(String::as_str) != Some(T::NAME) {
        return Err(lines.err(format!(
            "checkpoint holds {scalar:?}, reader expects {}",
            T::NAME
        )));
    }
    let mu_tok = lines.expect_key("mu")?;
    let mu: T = lines.parse_value(mu_tok.first().map(String::as_str).unwrap_or(""))?;
    let common_dims = lines.read_dims("common")?;
    let unique_dims = lines.read_dims("unique")?;
    if common_dims.len() < 2 || common_dims.len() != unique_dims.len() {
        return Err(lines.err("column dimension lists are inconsistent"));
    }
    let common = read_column(&mut lines, "common", &common_dims)?;
    let unique = read_column(&mut lines, "unique", &unique_dims)?;
    let mut matrices = Vec::new();
    for i in 2..common_dims.len() {
        let (rows, cols) = (unique_dims[i], common_dims[i - 1]);
        let values = lines.read_block(&format!("lateral.U{i}"), rows, cols)?;
        matrices.push(Array2::from_shape_vec((rows, cols), values).expect("sized above"));
    }
    ChflClientModel::new(common, unique, LateralSet::new(matrices, mu)?)
}
