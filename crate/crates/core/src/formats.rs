//! Grid file formats.
//!
//! * `DFT1`: the magic bytes `DFT1`, then `height`, `width`, `channels` as
//!   little-endian `u32`, then `height * width * channels` little-endian `f32`
//!   values in row-major `(y, x, c)` order.
//! * NPY v1.0 restricted to dtype `<f4`, C order, 3-D shape `(h, w, c)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::GridTensor;

pub const DFT_MAGIC: &[u8; 4] = b"DFT1";
const NPY_MAGIC: &[u8; 6] = b"\x93NUMPY";

/// Largest accepted grid: 2048 x 2048 x 256.
pub const MAX_SIDE: usize = 2048;
pub const MAX_CHANNELS: usize = 256;

fn check_limits(format: &'static str, h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::format(format, format!("empty shape {h}x{w}x{c}")));
    }
    if h > MAX_SIDE || w > MAX_SIDE || c > MAX_CHANNELS {
        return Err(Error::format(
            format,
            format!("shape {h}x{w}x{c} exceeds the {MAX_SIDE}x{MAX_SIDE}x{MAX_CHANNELS} limit"),
        ));
    }
    Ok(())
}

pub fn encode_dft(grid: &GridTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.data().len() * 4);
    out.extend_from_slice(DFT_MAGIC);
    for dim in [grid.height(), grid.width(), grid.channels()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_dft(bytes: &[u8]) -> Result<GridTensor> {
    const FMT: &str = "DFT1";
    if bytes.len() < 16 || &bytes[..4] != DFT_MAGIC {
        return Err(Error::format(FMT, "missing DFT1 header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    check_limits(FMT, h, w, c)?;
    let n = h * w * c;
    let body = &bytes[16..];
    if body.len() != n * 4 {
        return Err(Error::format(
            FMT,
            format!("expected {} payload bytes for {h}x{w}x{c}, got {}", n * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    GridTensor::new(h, w, c, data)
}

pub fn encode_npy(grid: &GridTensor) -> Vec<u8> {
    let mut header = format!(
        "{{'descr': '<f4', 'fortran_order': False, 'shape': ({}, {}, {}), }}",
        grid.height(),
        grid.width(),
        grid.channels()
    );
    // magic(6) + version(2) + len(2) + header, padded to a multiple of 64 with '\n' last
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + grid.data().len() * 4);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in grid.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_npy(bytes: &[u8]) -> Result<GridTensor> {
    const FMT: &str = "NPY";
    if bytes.len() < 10 || &bytes[..6] != NPY_MAGIC {
        return Err(Error::format(FMT, "missing NPY magic"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::format(
            FMT,
            format!("only version 1.0 is supported, got {}.{}", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let header = bytes
        .get(10..10 + header_len)
        .ok_or_else(|| Error::format(FMT, "truncated header"))?;
    let header =
        std::str::from_utf8(header).map_err(|_| Error::format(FMT, "header is not ASCII"))?;
    let descr = header_value(header, "descr").ok_or_else(|| Error::format(FMT, "no descr"))?;
    if descr.trim_matches(|c| c == '\'' || c == '"') != "<f4" {
        return Err(Error::format(FMT, format!("dtype {descr} is not '<f4'")));
    }
    let order = header_value(header, "fortran_order")
        .ok_or_else(|| Error::format(FMT, "no fortran_order"))?;
    if order != "False" {
        return Err(Error::format(FMT, "only C-order arrays are supported"));
    }
    let shape = header_value(header, "shape").ok_or_else(|| Error::format(FMT, "no shape"))?;
    let dims: Vec<usize> = shape
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::format(FMT, format!("bad shape {shape}")))?;
    let [h, w, c] = dims[..] else {
        return Err(Error::format(
            FMT,
            format!("expected a 3-D array, got shape {shape}"),
        ));
    };
    check_limits(FMT, h, w, c)?;
    let body = &bytes[10 + header_len..];
    let n = h * w * c;
    if body.len() != n * 4 {
        return Err(Error::format(
            FMT,
            format!("expected {} payload bytes, got {}", n * 4, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    GridTensor::new(h, w, c, data)
}

/// Value text for `'key': value` in a python-literal dict header.
fn header_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let quoted_single = format!("'{key}'");
    let quoted_double = format!("\"{key}\"");
    let start = header
        .find(&quoted_single)
        .map(|i| i + quoted_single.len())
        .or_else(|| header.find(&quoted_double).map(|i| i + quoted_double.len()))?;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')')? + 1
    } else {
        rest.find(',').or_else(|| rest.find('}'))?
    };
    Some(rest[..end].trim())
}

/// Decodes either format, chosen by magic bytes.
pub fn decode_grid(bytes: &[u8]) -> Result<GridTensor> {
    if bytes.starts_with(DFT_MAGIC) {
        decode_dft(bytes)
    } else if bytes.starts_with(NPY_MAGIC) {
        decode_npy(bytes)
    } else {
        Err(Error::format("grid", "unrecognised magic (expected DFT1 or NPY)"))
    }
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_grid(&bytes)
}

pub fn write_bytes(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
