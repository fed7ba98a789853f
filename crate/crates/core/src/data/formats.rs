use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

const IDX_U8_LABELS: u32 = 0x0000_0801;
const IDX_U8_HW: u32 = 0x0000_0803;
const IDX_U8_CHW: u32 = 0x0000_0804;

const RAW_MAGIC: &[u8; 4] = b"NCHW";
const RAW_HEADER: usize = 32;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok(())
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(b[at..at + 4].try_into().unwrap())
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Parses the magic and dimension list, returning `(dims, payload offset)`.
fn idx_header(path: &Path, bytes: &[u8], accept: &[u32], expected: &str) -> Result<(Vec<usize>, usize)> {
    need(path, bytes, 4)?;
    let magic = be_u32(bytes, 0);
    if !accept.contains(&magic) {
        return Err(Error::BadMagic {
            path: path.into(),
            found: magic,
            expected: expected.into(),
        });
    }
    let ndims = (magic & 0xff) as usize;
    let header = 4 + 4 * ndims;
    need(path, bytes, header)?;
    let dims = (0..ndims).map(|i| be_u32(bytes, 4 + 4 * i) as usize).collect();
    Ok((dims, header))
}

fn exact_payload(path: &Path, bytes: &[u8], header: usize, payload: usize) -> Result<()> {
    need(path, bytes, header + payload)?;
    if bytes.len() > header + payload {
        return Err(Error::format(
            path,
            format!(
                "{} trailing bytes after payload ending at byte {}",
                bytes.len() - header - payload,
                header + payload
            ),
        ));
    }
    Ok(())
}

/// Unsigned-byte IDX images, scaled by 1/255.
pub fn read_idx_images(path: &Path) -> Result<Tensor> {
    let bytes = read(path)?;
    let (dims, header) = idx_header(path, &bytes, &[IDX_U8_HW, IDX_U8_CHW], "0x00000803 or 0x00000804")?;
    let shape = match dims[..] {
        [n, h, w] => Shape4::new(n, 1, h, w),
        [n, c, h, w] => Shape4::new(n, c, h, w),
        _ => unreachable!(),
    }
    .map_err(|e| Error::format(path, e.to_string()))?;
    exact_payload(path, &bytes, header, shape.len())?;
    let data = bytes[header..].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(shape, data)
}

pub fn read_idx_labels(path: &Path, class_count: usize) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    let (dims, header) = idx_header(path, &bytes, &[IDX_U8_LABELS], "0x00000801")?;
    exact_payload(path, &bytes, header, dims[0])?;
    bytes[header..]
        .iter()
        .enumerate()
        .map(|(i, &b)| check_label(path, b as u64, class_count, (header + i) as u64))
        .collect()
}

fn check_label(path: &Path, label: u64, classes: usize, offset: u64) -> Result<usize> {
    if label >= classes as u64 {
        return Err(Error::LabelRange {
            path: path.into(),
            label,
            classes,
            offset,
        });
    }
    Ok(label as usize)
}

pub(super) fn read_csv(path: &Path, sample: [usize; 3], class_count: usize) -> Result<(Tensor, Vec<usize>)> {
    let bytes = read(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::format(path, e.to_string()))?;
    let per = sample.iter().product::<usize>();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    let mut offset = 0u64;
    for (i, line) in text.split_inclusive('\n').enumerate() {
        let row_start = offset;
        offset += line.len() as u64;
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            msg,
        };
        let mut fields = line.split(',').map(str::trim);
        let label: u64 = fields
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|e| parse_err(format!("label: {e}")))?;
        labels.push(check_label(path, label, class_count, row_start)?);
        let before = data.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|e| parse_err(format!("pixel {f:?}: {e}")))?;
            if !(0.0..=255.0).contains(&v) {
                return Err(parse_err(format!("pixel {v} outside 0..=255")));
            }
            data.push(v / 255.0);
        }
        if data.len() - before != per {
            return Err(parse_err(format!("{} pixels, expected {per}", data.len() - before)));
        }
    }
    if labels.is_empty() {
        return Err(Error::format(path, "no rows"));
    }
    let shape = Shape4::new(labels.len(), sample[0], sample[1], sample[2])?;
    Ok((Tensor::from_vec(shape, data)?, labels))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDtype {
    F32 = 1,
    F64 = 2,
}

impl RawDtype {
    fn width(self) -> usize {
        match self {
            RawDtype::F32 => 4,
            RawDtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub dims: [usize; 4],
    pub dtype: RawDtype,
    pub values: Vec<f64>,
}

/// 32-byte header: `NCHW`, four little-endian `u32` dims, a `u32` dtype
/// code, eight zero bytes. The little-endian payload follows.
pub fn write_raw_nchw(path: &Path, dims: [usize; 4], values: &[f64], dtype: RawDtype) -> Result<()> {
    if dims.iter().product::<usize>() != values.len() {
        return Err(Error::Shape(format!("{} values for dims {dims:?}", values.len())));
    }
    let mut out = Vec::with_capacity(RAW_HEADER + values.len() * dtype.width());
    out.extend_from_slice(RAW_MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(dtype as u32).to_le_bytes());
    out.extend_from_slice(&[0; 8]);
    for &v in values {
        match dtype {
            RawDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            RawDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raw_nchw(path: &Path) -> Result<RawArray> {
    let bytes = read(path)?;
    need(path, &bytes, 4)?;
    if &bytes[..4] != RAW_MAGIC {
        return Err(Error::BadMagic {
            path: path.into(),
            found: be_u32(&bytes, 0),
            expected: "\"NCHW\"".into(),
        });
    }
    need(path, &bytes, RAW_HEADER)?;
    let dims = [0, 1, 2, 3].map(|i| le_u32(&bytes, 4 + 4 * i) as usize);
    let dtype = match le_u32(&bytes, 20) {
        1 => RawDtype::F32,
        2 => RawDtype::F64,
        code => return Err(Error::format(path, format!("unknown dtype code {code} at byte 20"))),
    };
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(dtype.width()))
        .ok_or_else(|| Error::format(path, "dimension product overflows"))?;
    exact_payload(path, &bytes, RAW_HEADER, count)?;
    let payload = &bytes[RAW_HEADER..];
    let values = match dtype {
        RawDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        RawDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(RawArray { dims, dtype, values })
}

pub fn write_raw_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(labels.len() * 4);
    for &l in labels {
        let l = u32::try_from(l).map_err(|_| Error::Param(format!("label {l} exceeds u32")))?;
        out.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_raw_labels(path: &Path, class_count: usize) -> Result<Vec<usize>> {
    let bytes = read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: (bytes.len() / 4 * 4 + 4) as u64,
            actual: bytes.len() as u64,
        });
    }
    (0..bytes.len() / 4)
        .map(|i| check_label(path, le_u32(&bytes, 4 * i) as u64, class_count, 4 * i as u64))
        .collect()
}
