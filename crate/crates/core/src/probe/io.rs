//! Probe model binary format and probability export.
//!
//! Layout, little-endian: magic `PRB1`, classes `u32`, dim `u32`, l2 `f64`,
//! weights `f64` row-major (`classes x dim`), bias `f64` (`classes`).

use std::io::{Read, Write};

use super::ProbeModel;
use crate::numfmt::format_sig6;
use crate::{Error, Matrix, Result};

pub const PROBE_MAGIC: [u8; 4] = *b"PRB1";

pub fn write_probe<W: Write>(model: &ProbeModel, mut out: W) -> Result<()> {
    out.write_all(&PROBE_MAGIC)?;
    out.write_all(&(model.classes() as u32).to_le_bytes())?;
    out.write_all(&(model.dim() as u32).to_le_bytes())?;
    out.write_all(&model.l2().to_le_bytes())?;
    let mut buf = Vec::with_capacity(8 * (model.weights().len() + model.classes()));
    for v in model.weights().iter().chain(model.bias()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated probe model".into()),
        _ => Error::Io(e),
    })
}

pub fn read_probe<R: Read>(mut input: R) -> Result<ProbeModel> {
    let mut head = [0u8; 20];
    read_exact(&mut input, &mut head)?;
    if head[..4] != PROBE_MAGIC {
        return Err(Error::Format(format!("bad probe magic {:?}", &head[..4])));
    }
    let classes = u32::from_le_bytes(head[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(head[8..12].try_into().unwrap()) as usize;
    let l2 = f64::from_le_bytes(head[12..20].try_into().unwrap());
    let count = classes
        .checked_mul(dim)
        .and_then(|w| w.checked_add(classes))
        .filter(|&c| c < (1 << 34))
        .ok_or_else(|| Error::Format(format!("implausible probe size {classes}x{dim}")))?;
    let mut body = vec![0u8; count * 8];
    read_exact(&mut input, &mut body)?;
    let mut values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let bias = values.split_off(classes * dim);
    let mut extra = [0u8; 1];
    if input.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after probe model".into()));
    }
    ProbeModel::new(classes, dim, values, bias, l2)
}

/// One row per example, header of class names, six significant digits.
pub fn write_proba_csv<W: Write>(proba: &Matrix<f64>, class_names: &[String], mut out: W) -> Result<()> {
    if class_names.len() != proba.cols() {
        return Err(Error::DimensionMismatch { expected: proba.cols(), actual: class_names.len() });
    }
    writeln!(out, "{}", class_names.join(","))?;
    for i in 0..proba.rows() {
        let row: Vec<String> = proba.row(i).iter().map(|&v| format_sig6(v)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
