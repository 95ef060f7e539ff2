//! Binary array formats: NPY, PFM and Middlebury `.flo`.

use super::IngestError;

pub const NPY_MAGIC: &[u8] = b"\x93NUMPY";
pub const FLO_MAGIC: &[u8] = b"PIEH";

/// A dense row-major array of `f64` with its shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn corrupt(msg: impl Into<String>) -> IngestError {
    IngestError::CorruptFile(msg.into())
}

fn truncated(expected: usize, got: usize) -> IngestError {
    IngestError::TruncatedFile { expected, got }
}

/// Value of `'key':` in a NPY header dict, as raw text up to the next
/// top-level comma or closing brace.
fn header_field<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let start = header.find(&format!("'{key}'"))? + key.len() + 2;
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    let mut depth = 0i32;
    for (i, c) in rest.char_indices() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&rest[..=i]);
                }
            }
            ',' | '}' if depth == 0 => return Some(rest[..i].trim()),
            _ => {}
        }
    }
    None
}

#[derive(Clone, Copy)]
enum Dtype {
    F4 { big: bool },
    F8 { big: bool },
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 { .. } => 4,
            Dtype::F8 { .. } => 8,
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Dtype::F4 { big } => {
                let a: [u8; 4] = b.try_into().expect("4 bytes");
                f64::from(if big {
                    f32::from_be_bytes(a)
                } else {
                    f32::from_le_bytes(a)
                })
            }
            Dtype::F8 { big } => {
                let a: [u8; 8] = b.try_into().expect("8 bytes");
                if big {
                    f64::from_be_bytes(a)
                } else {
                    f64::from_le_bytes(a)
                }
            }
        }
    }
}

/// Decode an NPY (v1, v2 or v3) file holding a C-ordered float32 or float64
/// array.
pub fn decode_npy(bytes: &[u8]) -> Result<Array, IngestError> {
    if !bytes.starts_with(NPY_MAGIC) {
        return Err(IngestError::BadMagic("NPY".into()));
    }
    if bytes.len() < 10 {
        return Err(truncated(10, bytes.len()));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (usize::from(u16::from_le_bytes([bytes[8], bytes[9]])), 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(truncated(12, bytes.len()));
            }
            let n = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
            (n as usize, 12)
        }
        v => return Err(IngestError::UnsupportedFormat(format!("NPY version {v}"))),
    };
    let data_start = offset + header_len;
    if bytes.len() < data_start {
        return Err(truncated(data_start, bytes.len()));
    }
    let header = std::str::from_utf8(&bytes[offset..data_start])
        .map_err(|_| corrupt("NPY header is not text"))?;

    let descr = header_field(header, "descr").ok_or_else(|| corrupt("NPY header lacks descr"))?;
    let dtype = match descr.trim_matches(|c| c == '\'' || c == '"') {
        "<f4" | "=f4" => Dtype::F4 { big: false },
        ">f4" => Dtype::F4 { big: true },
        "<f8" | "=f8" => Dtype::F8 { big: false },
        ">f8" => Dtype::F8 { big: true },
        other => return Err(IngestError::UnsupportedFormat(format!("NPY dtype {other}"))),
    };
    match header_field(header, "fortran_order") {
        Some("False") => {}
        Some("True") => return Err(IngestError::UnsupportedFormat("Fortran-ordered NPY".into())),
        _ => return Err(corrupt("NPY header lacks fortran_order")),
    }
    let shape_text =
        header_field(header, "shape").ok_or_else(|| corrupt("NPY header lacks shape"))?;
    let shape = shape_text
        .trim_start_matches('(')
        .trim_end_matches(')')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| corrupt(format!("bad NPY shape {shape_text}")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| corrupt("NPY shape overflows"))?;
    let need = count
        .checked_mul(dtype.size())
        .and_then(|n| n.checked_add(data_start))
        .ok_or_else(|| corrupt("NPY shape overflows"))?;
    if bytes.len() < need {
        return Err(truncated(need, bytes.len()));
    }
    let data = bytes[data_start..need]
        .chunks_exact(dtype.size())
        .map(|b| dtype.decode(b))
        .collect();
    Ok(Array { shape, data })
}

/// Encode a little-endian float32 NPY v1.0 file.
pub fn encode_npy_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    // Pad so the data starts on a 64-byte boundary, ending with a newline.
    let unpadded = NPY_MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + data.len() * 4);
    out.extend_from_slice(NPY_MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn pfm_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str, IngestError> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(corrupt("PFM header ends early"));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| corrupt("PFM header is not text"))
}

/// Decode a single-channel PFM (`Pf`). Rows are stored bottom-up on disk and
/// returned top-down.
pub fn decode_pfm(bytes: &[u8]) -> Result<Array, IngestError> {
    let mut pos = 0;
    match pfm_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(IngestError::UnsupportedFormat("three-channel PFM".into())),
        _ => return Err(IngestError::BadMagic("PFM".into())),
    }
    let parse_dim = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| corrupt(format!("bad PFM size {t}")))
    };
    let width = parse_dim(pfm_token(bytes, &mut pos)?)?;
    let height = parse_dim(pfm_token(bytes, &mut pos)?)?;
    let scale: f64 = pfm_token(bytes, &mut pos)?
        .parse()
        .map_err(|_| corrupt("bad PFM scale"))?;
    // Exactly one whitespace byte separates the header from the data.
    pos += 1;
    let big = scale > 0.0;
    let count = width
        .checked_mul(height)
        .ok_or_else(|| corrupt("PFM size overflows"))?;
    let need = count
        .checked_mul(4)
        .and_then(|n| n.checked_add(pos))
        .ok_or_else(|| corrupt("PFM size overflows"))?;
    if bytes.len() < need {
        return Err(truncated(need, bytes.len()));
    }
    let rows: Vec<f64> = bytes[pos..need]
        .chunks_exact(4)
        .map(|b| Dtype::F4 { big }.decode(b))
        .collect();
    let mut data = Vec::with_capacity(count);
    for r in (0..height).rev() {
        data.extend_from_slice(&rows[r * width..(r + 1) * width]);
    }
    Ok(Array {
        shape: vec![height, width],
        data,
    })
}

/// Encode a little-endian single-channel PFM from top-down rows.
pub fn encode_pfm(width: usize, height: usize, data: &[f32]) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for r in (0..height).rev() {
        for v in &data[r * width..(r + 1) * width] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Decoded `.flo` payload: `u` and `v` planes, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloData {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

/// Decode Middlebury `.flo`: magic `PIEH`, `i32` width and height, then
/// interleaved little-endian `f32` pairs.
pub fn decode_flo(bytes: &[u8]) -> Result<FloData, IngestError> {
    if !bytes.starts_with(FLO_MAGIC) {
        return Err(IngestError::BadMagic("PIEH".into()));
    }
    if bytes.len() < 12 {
        return Err(truncated(12, bytes.len()));
    }
    let w = i32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    let h = i32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if w <= 0 || h <= 0 {
        return Err(corrupt(format!("bad .flo size {w}x{h}")));
    }
    let (width, height) = (w as usize, h as usize);
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| corrupt(".flo size overflows"))?;
    if bytes.len() < need {
        return Err(truncated(need, bytes.len()));
    }
    if bytes.len() > need {
        return Err(corrupt(format!(
            "{} trailing bytes after .flo payload",
            bytes.len() - need
        )));
    }
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for pair in bytes[12..].chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[..4].try_into().expect("4 bytes")));
        v.push(f32::from_le_bytes(pair[4..].try_into().expect("4 bytes")));
    }
    Ok(FloData {
        width,
        height,
        u,
        v,
    })
}

pub fn encode_flo(flo: &FloData) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flo.u.len() * 8);
    out.extend_from_slice(FLO_MAGIC);
    out.extend_from_slice(&(flo.width as i32).to_le_bytes());
    out.extend_from_slice(&(flo.height as i32).to_le_bytes());
    for (u, v) in flo.u.iter().zip(&flo.v) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
