//! Reader and writer for the NPY container (version 1.0 on write; 1.0, 2.0
//! and 3.0 accepted on read).
//!
//! Only C-ordered real tensors of rank 1 to 3 are supported. Payloads stored
//! as `f8` or `f2` are converted to `f32` on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::tensor::{Tensor, TensorError};

const MAGIC: &[u8; 6] = b"\x93NUMPY";

#[derive(Debug, Error)]
pub enum NpyError {
    #[error("malformed header at byte {offset}: {reason}")]
    MalformedHeader { offset: usize, reason: String },
    #[error("unsupported element type {descr:?} at byte {offset}")]
    UnsupportedElementType { offset: usize, descr: String },
    #[error("payload truncated at byte {offset}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        offset: usize,
        expected: usize,
        found: usize,
    },
    #[error("invalid tensor: {0}")]
    Tensor(#[from] TensorError),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Element {
    F16,
    F32,
    F64,
}

impl Element {
    fn size(self) -> usize {
        match self {
            Element::F16 => 2,
            Element::F32 => 4,
            Element::F64 => 8,
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor, NpyError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| NpyError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<(), NpyError> {
    let path = path.as_ref();
    let io = |source| NpyError::IoFailure {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&encode(t)).map_err(io)?;
    Ok(())
}

/// Serializes a tensor as an NPY v1.0 byte buffer with a `<f4` payload.
pub fn encode(t: &Tensor) -> Vec<u8> {
    let shape = match t.dims() {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    // magic + version + u16 length + header + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
    header.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + t.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor, NpyError> {
    if bytes.len() < 8 || &bytes[..6] != MAGIC {
        return Err(malformed(0, "missing NPY magic"));
    }
    let (header_start, header_len) = match bytes[6] {
        1 => {
            if bytes.len() < 10 {
                return Err(malformed(8, "header length field cut short"));
            }
            (10, u16::from_le_bytes([bytes[8], bytes[9]]) as usize)
        }
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(malformed(8, "header length field cut short"));
            }
            (
                12,
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            )
        }
        v => return Err(malformed(6, &format!("unsupported version {v}"))),
    };
    let header_end = header_start + header_len;
    if bytes.len() < header_end {
        return Err(malformed(bytes.len(), "header extends past end of file"));
    }
    let header = std::str::from_utf8(&bytes[header_start..header_end])
        .map_err(|e| malformed(header_start + e.valid_up_to(), "header is not valid text"))?;
    let parsed = parse_header(header, header_start)?;

    let count: usize = parsed.shape.iter().product();
    let expected = count * parsed.element.size();
    let payload = &bytes[header_end..];
    if payload.len() < expected {
        return Err(NpyError::TruncatedPayload {
            offset: header_end + payload.len(),
            expected,
            found: payload.len(),
        });
    }
    let data = payload[..expected]
        .chunks_exact(parsed.element.size())
        .map(|c| read_element(c, parsed.element, parsed.little_endian))
        .collect();
    Ok(Tensor::new(parsed.shape, data)?)
}

struct Header {
    element: Element,
    little_endian: bool,
    shape: Vec<usize>,
}

fn malformed(offset: usize, reason: &str) -> NpyError {
    NpyError::MalformedHeader {
        offset,
        reason: reason.to_string(),
    }
}

fn parse_header(header: &str, base: usize) -> Result<Header, NpyError> {
    let value_of = |key: &str| -> Result<(usize, &str), NpyError> {
        let needle = format!("'{key}'");
        let at = header
            .find(&needle)
            .ok_or_else(|| malformed(base, &format!("missing key {key}")))?;
        let rest = &header[at + needle.len()..];
        let colon = rest
            .find(':')
            .ok_or_else(|| malformed(base + at, &format!("no ':' after key {key}")))?;
        let start = at + needle.len() + colon + 1;
        Ok((base + start, header[start..].trim_start()))
    };

    let (descr_at, descr_rest) = value_of("descr")?;
    let descr = quoted(descr_rest).ok_or_else(|| malformed(descr_at, "descr is not a string"))?;
    let (little_endian, element) = match descr {
        "<f4" | "=f4" => (true, Element::F32),
        ">f4" => (false, Element::F32),
        "<f8" | "=f8" => (true, Element::F64),
        ">f8" => (false, Element::F64),
        "<f2" | "=f2" => (true, Element::F16),
        ">f2" => (false, Element::F16),
        other => {
            return Err(NpyError::UnsupportedElementType {
                offset: descr_at,
                descr: other.to_string(),
            })
        }
    };

    let (order_at, order_rest) = value_of("fortran_order")?;
    if order_rest.starts_with("True") {
        return Err(malformed(
            order_at,
            "Fortran-ordered payloads are not supported",
        ));
    } else if !order_rest.starts_with("False") {
        return Err(malformed(order_at, "fortran_order is not a boolean"));
    }

    let (shape_at, shape_rest) = value_of("shape")?;
    let inner = shape_rest
        .strip_prefix('(')
        .and_then(|s| s.find(')').map(|end| &s[..end]))
        .ok_or_else(|| malformed(shape_at, "shape is not a tuple"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| malformed(shape_at, &format!("bad extent {s:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if shape.is_empty() || shape.len() > 3 {
        return Err(malformed(
            shape_at,
            &format!("rank {} not supported", shape.len()),
        ));
    }
    Ok(Header {
        element,
        little_endian,
        shape,
    })
}

fn quoted(s: &str) -> Option<&str> {
    let q = s.chars().next().filter(|&c| c == '\'' || c == '"')?;
    let body = &s[1..];
    body.find(q).map(|end| &body[..end])
}

fn read_element(b: &[u8], element: Element, le: bool) -> f32 {
    match element {
        Element::F32 => {
            let a = [b[0], b[1], b[2], b[3]];
            if le {
                f32::from_le_bytes(a)
            } else {
                f32::from_be_bytes(a)
            }
        }
        Element::F64 => {
            let a = [b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]];
            (if le {
                f64::from_le_bytes(a)
            } else {
                f64::from_be_bytes(a)
            }) as f32
        }
        Element::F16 => {
            let bits = if le {
                u16::from_le_bytes([b[0], b[1]])
            } else {
                u16::from_be_bytes([b[0], b[1]])
            };
            half_to_f32(bits)
        }
    }
}

fn half_to_f32(h: u16) -> f32 {
    let sign = if h & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((h >> 10) & 0x1f) as i32;
    let frac = f32::from(h & 0x3ff);
    match exp {
        0 => sign * frac * 2f32.powi(-24),
        31 if frac == 0.0 => sign * f32::INFINITY,
        31 => f32::NAN,
        e => sign * (1.0 + frac / 1024.0) * 2f32.powi(e - 15),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npy_bytes(descr: &str, shape: &str, payload: &[u8]) -> Vec<u8> {
        let header =
            format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape}, }}\n");
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[1, 0]);
        b.extend_from_slice(&(header.len() as u16).to_le_bytes());
        b.extend_from_slice(header.as_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn reads_two_by_two() {
        let payload: Vec<u8> = [1f32, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let t = decode(&npy_bytes("<f4", "(2, 2)", &payload)).unwrap();
        assert_eq!(t.dims(), &[2, 2]);
        assert_eq!(t.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reads_f8_and_big_endian() {
        let payload: Vec<u8> = [0.5f64, -2.0]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let t = decode(&npy_bytes("<f8", "(2,)", &payload)).unwrap();
        assert_eq!(t.data(), &[0.5, -2.0]);

        let payload: Vec<u8> = [7.25f32].iter().flat_map(|v| v.to_be_bytes()).collect();
        let t = decode(&npy_bytes(">f4", "(1,)", &payload)).unwrap();
        assert_eq!(t.data(), &[7.25]);
    }

    #[test]
    fn reads_f2() {
        // 1.0, -2.0, 0.5 in IEEE half
        let payload: Vec<u8> = [0x3c00u16, 0xc000, 0x3800]
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let t = decode(&npy_bytes("<f2", "(3,)", &payload)).unwrap();
        assert_eq!(t.data(), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn header_is_64_byte_aligned() {
        let t = Tensor::new(vec![3], vec![0.0; 3]).unwrap();
        let b = encode(&t);
        assert_eq!((b.len() - 12) % 64, 0);
        assert_eq!(b[10 + u16::from_le_bytes([b[8], b[9]]) as usize - 1], b'\n');
        assert_eq!(decode(&b).unwrap(), t);
    }

    #[test]
    fn truncated_payload_names_offset() {
        let b = npy_bytes("<f4", "(2, 2)", &[0u8; 10]);
        match decode(&b) {
            Err(NpyError::TruncatedPayload {
                offset,
                expected,
                found,
            }) => {
                assert_eq!(expected, 16);
                assert_eq!(found, 10);
                assert_eq!(offset, b.len());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_integer_payload() {
        let b = npy_bytes("<i4", "(1,)", &[0u8; 4]);
        match decode(&b) {
            Err(NpyError::UnsupportedElementType { offset, descr }) => {
                assert_eq!(descr, "<i4");
                assert!(offset > 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_fortran() {
        assert!(matches!(
            decode(b"NOTNUMPYxxxx"),
            Err(NpyError::MalformedHeader { offset: 0, .. })
        ));
        let b = npy_bytes("<f4", "(1,)", &[0u8; 4]);
        assert!(matches!(
            decode(&flip_fortran(&b)),
            Err(NpyError::MalformedHeader { .. })
        ));
        assert!(matches!(
            decode(&npy_bytes("<f4", "(1, 1, 1, 1)", &[0u8; 4])),
            Err(NpyError::MalformedHeader { .. })
        ));
    }

    fn flip_fortran(b: &[u8]) -> Vec<u8> {
        let text = b"False";
        let pos = b.windows(5).position(|w| w == text).unwrap();
        let mut out = b.to_vec();
        out[pos..pos + 5].copy_from_slice(b"True ");
        out
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let t = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(matches!(
            write_tensor(&t, "/nonexistent-dir/x.npy"),
            Err(NpyError::IoFailure { .. })
        ));
    }
}
