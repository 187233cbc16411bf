//! Minimal NPY reader/writer for little-endian `f32` C-order arrays.
//!
//! Writes format version 1.0 byte-for-byte as `numpy.save` does for `<f4`
//! arrays: growth padding after the dict, then spaces up to a 64-byte
//! boundary and a trailing newline. Reads versions
//! 1.0 to 3.0 but only accepts `descr '<f4'` and `fortran_order False`.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
/// Spare header room numpy reserves so the leading axis can grow in place.
const GROWTH_AXIS_MAX_DIGITS: usize = 21;

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("not an NPY file (bad magic)")]
    BadMagic,
    #[error("unsupported NPY version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed NPY header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}, expected '<f4'")]
    UnsupportedDType(String),
    #[error("fortran-ordered arrays are not supported")]
    FortranOrder,
    #[error("payload holds {got} bytes, shape needs {expected}")]
    Truncated { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A decoded `<f4` array.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NpyArray {
    pub fn element_count(shape: &[usize]) -> usize {
        shape.iter().product()
    }
}

fn header_dict(shape: &[usize]) -> String {
    let dims = match shape {
        [one] => format!("({one},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}")
}

/// Serializes `data` with the given shape into NPY v1.0 bytes.
///
/// # Panics
/// If `data.len()` disagrees with `shape`.
pub fn encode(shape: &[usize], data: &[f32]) -> Vec<u8> {
    assert_eq!(
        NpyArray::element_count(shape),
        data.len(),
        "shape/data mismatch"
    );
    let mut header = header_dict(shape);
    if let Some(first) = shape.first() {
        let digits = first.to_string().len();
        header.extend(std::iter::repeat_n(
            ' ',
            GROWTH_AXIS_MAX_DIGITS.saturating_sub(digits),
        ));
    }
    // magic(6) + version(2) + len(2) + header + '\n'; numpy pads a full
    // block when already aligned.
    let pad = ALIGN - (MAGIC.len() + 4 + header.len() + 1) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write(path: &Path, shape: &[usize], data: &[f32]) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(shape, data))?;
    f.flush()
}

pub fn read(path: &Path) -> Result<NpyArray, NpyError> {
    decode(&fs::read(path)?)
}

pub fn decode(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, start) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(NpyError::BadHeader("truncated header length".into()));
            }
            let n = u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
            (n as usize, 12)
        }
        _ => return Err(NpyError::UnsupportedVersion(major, minor)),
    };
    let end = start + header_len;
    if bytes.len() < end {
        return Err(NpyError::BadHeader("header runs past end of file".into()));
    }
    let header = std::str::from_utf8(&bytes[start..end])
        .map_err(|_| NpyError::BadHeader("header is not text".into()))?;
    let meta = parse_header(header)?;
    if meta.descr != "<f4" {
        return Err(NpyError::UnsupportedDType(meta.descr));
    }
    if meta.fortran_order {
        return Err(NpyError::FortranOrder);
    }

    let payload = &bytes[end..];
    let expected = NpyArray::element_count(&meta.shape) * 4;
    if payload.len() != expected {
        return Err(NpyError::Truncated {
            expected,
            got: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(NpyArray {
        shape: meta.shape,
        data,
    })
}

struct HeaderMeta {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal, e.g.
/// `{'descr': '<f4', 'fortran_order': False, 'shape': (3, 4), }`.
fn parse_header(text: &str) -> Result<HeaderMeta, NpyError> {
    let bad = |m: &str| NpyError::BadHeader(m.to_string());
    let body = text.trim();
    let body = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| bad("header is not a dict"))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = body.trim_start();
    while !rest.is_empty() {
        let (key, after) = take_quoted(rest).ok_or_else(|| bad("expected quoted key"))?;
        let after = after
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| bad("expected ':'"))?
            .trim_start();
        let remaining = match key {
            "descr" => {
                let (v, r) = take_quoted(after).ok_or_else(|| bad("descr must be a string"))?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else if let Some(r) = after.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else {
                    return Err(bad("fortran_order must be True or False"));
                }
            }
            "shape" => {
                let inner = after
                    .strip_prefix('(')
                    .ok_or_else(|| bad("shape must be a tuple"))?;
                let close = inner.find(')').ok_or_else(|| bad("unterminated shape"))?;
                let dims = inner[..close]
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| bad("bad shape entry")))
                    .collect::<Result<Vec<_>, _>>()?;
                shape = Some(dims);
                &inner[close + 1..]
            }
            other => return Err(NpyError::BadHeader(format!("unexpected key {other:?}"))),
        };
        rest = remaining.trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }

    Ok(HeaderMeta {
        descr: descr.ok_or_else(|| bad("missing descr"))?,
        fortran_order: fortran.ok_or_else(|| bad("missing fortran_order"))?,
        shape: shape.ok_or_else(|| bad("missing shape"))?,
    })
}

fn take_quoted(s: &str) -> Option<(&str, &str)> {
    let q = s.chars().next().filter(|c| *c == '\'' || *c == '"')?;
    let inner = &s[1..];
    let end = inner.find(q)?;
    Some((&inner[..end], &inner[end + 1..]))
}
