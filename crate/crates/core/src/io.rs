//! File formats.
//!
//! `TNSR` stores one cubic tensor:
//!
//! ```text
//! "TNSR" | u32 version = 1 | u32 order | u32 dim | dim^order f64
//! ```
//!
//! all little-endian, entries row-major. A `TNSC` container holds named
//! sections, each an embedded `TNSR` record:
//!
//! ```text
//! "TNSC" | u32 version = 1 | u32 count | count x section
//! section = u32 name_len | name (UTF-8) | u8 kind | [u32 rows | u32 cols] | u64 len | TNSR record
//! ```
//!
//! Kind 0 is a plain tensor. Kind 1 is a `rows x cols` matrix stored as an
//! order-2 record of dim `max(rows, cols)`, zero padded. Feature matrices can
//! also come from CSV with one feature vector per line.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::descriptors::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::heads::HeadWeights;
use crate::pipeline::{EpisodeBatch, RoiBox};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
pub const CONTAINER_MAGIC: &[u8; 4] = b"TNSC";
pub const FORMAT_VERSION: u32 = 1;

const KIND_TENSOR: u8 = 0;
const KIND_MATRIX: u8 = 1;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], base: usize) -> Self {
        Self { bytes, pos: 0, base }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse { offset: self.offset(), message: message.into() })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.fail(format!(
                "truncated {what}: need {n} bytes, {} remain",
                self.bytes.len() - self.pos
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, "magic")?;
        if got != expected {
            return Err(Error::Parse {
                offset: at,
                message: format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(got), String::from_utf8_lossy(expected)),
            });
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let at = self.offset();
        let v = self.u32("version")?;
        if v != FORMAT_VERSION {
            return Err(Error::Parse { offset: at, message: format!("unsupported version {v}") });
        }
        Ok(())
    }
}

pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    encode_raw(t.order(), t.dim(), t.data())
}

fn encode_raw(order: usize, dim: usize, data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(order as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Header plus payload; `strict` applies the tensor capacity limits.
fn decode_raw(c: &mut Cursor<'_>, strict: bool) -> Result<(usize, usize, Vec<f64>)> {
    c.magic(TENSOR_MAGIC)?;
    c.version()?;
    let order_at = c.offset();
    let order = c.u32("order")? as usize;
    let dim_at = c.offset();
    let dim = c.u32("dim")? as usize;
    if order == 0 || order > crate::tensor::MAX_ORDER {
        return Err(Error::Parse { offset: order_at, message: format!("order {order} outside 1..=4") });
    }
    if strict && dim > crate::tensor::max_dim(order) {
        return Err(Error::Parse {
            offset: dim_at,
            message: format!("dim {dim} exceeds capacity {} for order {order}", crate::tensor::max_dim(order)),
        });
    }
    let len = (dim as u64)
        .checked_pow(order as u32)
        .filter(|&n| n <= ((c.bytes.len() - c.pos) / 8) as u64)
        .ok_or_else(|| Error::Parse {
            offset: c.offset(),
            message: format!("payload of {dim}^{order} f64 exceeds the {} remaining bytes", c.bytes.len() - c.pos),
        })? as usize;
    let raw = c.take(8 * len, "payload")?;
    let data: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse { offset: c.offset() - 8 * (len - i), message: "non-finite entry".into() });
    }
    Ok((order, dim, data))
}

pub fn decode_tensor(bytes: &[u8]) -> Result<DenseTensor> {
    let mut c = Cursor::new(bytes, 0);
    let (order, dim, data) = decode_raw(&mut c, true)?;
    if c.pos != bytes.len() {
        return c.fail(format!("{} trailing bytes", bytes.len() - c.pos));
    }
    DenseTensor::from_vec(order, dim, data)
}

pub fn write_tensor<W: Write>(mut w: W, t: &DenseTensor) -> Result<()> {
    w.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<DenseTensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_tensor(&bytes)
}

pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    decode_tensor(&fs::read(path)?)
}

#[derive(Clone, Debug, PartialEq)]
pub enum SectionValue {
    Tensor(DenseTensor),
    Matrix(DMatrix<f64>),
}

/// Named sections in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub sections: Vec<(String, SectionValue)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: DenseTensor) {
        self.sections.push((name.into(), SectionValue::Tensor(t)));
    }

    pub fn push_matrix(&mut self, name: impl Into<String>, m: DMatrix<f64>) {
        self.sections.push((name.into(), SectionValue::Matrix(m)));
    }

    pub fn get(&self, name: &str) -> Option<&SectionValue> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn matrix(&self, name: &str) -> Result<&DMatrix<f64>> {
        match self.get(name) {
            Some(SectionValue::Matrix(m)) => Ok(m),
            Some(SectionValue::Tensor(_)) => invalid(format!("section {name:?} is a tensor, expected a matrix")),
            None => invalid(format!("missing section {name:?}")),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&DenseTensor> {
        match self.get(name) {
            Some(SectionValue::Tensor(t)) => Ok(t),
            Some(SectionValue::Matrix(_)) => invalid(format!("section {name:?} is a matrix, expected a tensor")),
            None => invalid(format!("missing section {name:?}")),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CONTAINER_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, value) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let record = match value {
                SectionValue::Tensor(t) => {
                    out.push(KIND_TENSOR);
                    encode_tensor(t)
                }
                SectionValue::Matrix(m) => {
                    out.push(KIND_MATRIX);
                    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
                    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
                    let dim = m.nrows().max(m.ncols());
                    let mut data = vec![0.0; dim * dim];
                    for i in 0..m.nrows() {
                        for j in 0..m.ncols() {
                            data[i * dim + j] = m[(i, j)];
                        }
                    }
                    encode_raw(2, dim, &data)
                }
            };
            out.extend_from_slice(&(record.len() as u64).to_le_bytes());
            out.extend_from_slice(&record);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes, 0);
        c.magic(CONTAINER_MAGIC)?;
        c.version()?;
        let count = c.u32("section count")?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let name_len = c.u32("name length")? as usize;
            let name_at = c.offset();
            let name = std::str::from_utf8(c.take(name_len, "section name")?)
                .map_err(|_| Error::Parse { offset: name_at, message: "section name is not UTF-8".into() })?
                .to_string();
            let kind_at = c.offset();
            let kind = c.u8("section kind")?;
            let shape = match kind {
                KIND_TENSOR => None,
                KIND_MATRIX => Some((c.u32("rows")? as usize, c.u32("cols")? as usize)),
                other => return Err(Error::Parse { offset: kind_at, message: format!("unknown section kind {other}") }),
            };
            let len_at = c.offset();
            let len = c.u64("record length")?;
            if len > (bytes.len() - c.pos) as u64 {
                return Err(Error::Parse { offset: len_at, message: format!("record length {len} runs past end of input") });
            }
            let start = c.offset();
            let record = c.take(len as usize, "record")?;
            let mut inner = Cursor::new(record, start);
            let value = match shape {
                None => {
                    let (order, dim, data) = decode_raw(&mut inner, true)?;
                    SectionValue::Tensor(DenseTensor::from_vec(order, dim, data)?)
                }
                Some((rows, cols)) => {
                    let (order, dim, data) = decode_raw(&mut inner, false)?;
                    if order != 2 || dim != rows.max(cols) {
                        return Err(Error::Parse {
                            offset: start,
                            message: format!("matrix section {name:?} holds order {order} dim {dim}, expected order 2 dim {}", rows.max(cols)),
                        });
                    }
                    SectionValue::Matrix(DMatrix::from_fn(rows, cols, |i, j| data[i * dim + j]))
                }
            };
            if inner.pos != record.len() {
                return inner.fail("record has trailing bytes");
            }
            sections.push((name, value));
        }
        if c.pos != bytes.len() {
            return c.fail(format!("{} trailing bytes", bytes.len() - c.pos));
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

pub fn head_weights_to_container(w: &HeadWeights) -> Container {
    let mut c = Container::new();
    for (name, m) in w.named() {
        c.push_matrix(name, m.clone());
    }
    c
}

pub fn head_weights_from_container(c: &Container) -> Result<HeadWeights> {
    HeadWeights::new(
        c.matrix("w_q")?.clone(),
        c.matrix("w_k")?.clone(),
        c.matrix("w_v")?.clone(),
        c.matrix("w_p")?.clone(),
        c.matrix("w_g")?.clone(),
        c.matrix("w_u")?.clone(),
    )
}

fn labels_row(labels: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(1, labels.len(), |_, j| labels[j] as f64)
}

fn labels_from<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Vec<usize>> {
    values
        .into_iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < u32::MAX as f64 {
                Ok(v as usize)
            } else {
                invalid(format!("{v} is not a valid index"))
            }
        })
        .collect()
}

pub fn episode_to_container(e: &EpisodeBatch) -> Container {
    let mut c = Container::new();
    for (i, s) in e.supports.iter().enumerate() {
        c.push_matrix(format!("support/{i}"), s.clone());
    }
    c.push_matrix("support_labels", labels_row(&e.support_labels));
    c.push_matrix("query", e.query.clone());
    c.push_matrix("grid", labels_row(&[e.grid.0, e.grid.1]));
    c.push_matrix(
        "boxes",
        DMatrix::from_fn(e.boxes.len(), 4, |i, j| {
            let b = e.boxes[i];
            [b.row, b.col, b.height, b.width][j] as f64
        }),
    );
    c.push_matrix("roi_labels", labels_row(&e.roi_labels));
    c
}

pub fn episode_from_container(c: &Container) -> Result<EpisodeBatch> {
    let mut supports = Vec::new();
    while let Ok(m) = c.matrix(&format!("support/{}", supports.len())) {
        supports.push(m.clone());
    }
    let grid = labels_from(c.matrix("grid")?)?;
    if grid.len() != 2 {
        return invalid("grid section must hold two entries");
    }
    let boxes_m = c.matrix("boxes")?;
    if boxes_m.ncols() != 4 {
        return invalid("boxes section must have 4 columns");
    }
    let boxes = (0..boxes_m.nrows())
        .map(|i| {
            let v = labels_from(boxes_m.row(i).iter())?;
            Ok(RoiBox { row: v[0], col: v[1], height: v[2], width: v[3] })
        })
        .collect::<Result<Vec<_>>>()?;
    let e = EpisodeBatch {
        supports,
        support_labels: labels_from(c.matrix("support_labels")?)?,
        query: c.matrix("query")?.clone(),
        grid: (grid[0], grid[1]),
        boxes,
        roi_labels: labels_from(c.matrix("roi_labels")?)?,
    };
    e.validate()?;
    Ok(e)
}

/// One feature vector per line, comma-separated.
pub fn read_features_csv<R: Read>(r: R) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut columns = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let col = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("line {}: {field:?} is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        columns.push(col);
    }
    FeatureMatrix::from_columns(&columns)
}

/// `TNSR` (order 2, `d x d`) or CSV, chosen by the leading magic bytes.
pub fn load_features(path: &Path) -> Result<FeatureMatrix> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let t = decode_tensor(&bytes)?;
        if t.order() != 2 {
            return invalid(format!("feature tensor must be order 2, got {}", t.order()));
        }
        FeatureMatrix::new(t.to_matrix()?)
    } else {
        read_features_csv(bytes.as_slice())
    }
}
