//! Feature maps and label masks, and their `.npy` (format version 1.0) encoding.
//!
//! Only two dtypes are accepted: `<f4` for feature maps (2-D or 3-D, laid out
//! height × width × channels) and `|u1` for label masks (strictly 2-D). Files are
//! always row-major and little-endian. Headers are padded with spaces so that the
//! payload starts on a 64-byte boundary, which makes output byte-reproducible.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const HEADER_ALIGN: usize = 64;
const SUPPORTED: &str = "<f4 (feature map), |u1 (label mask)";

/// Default "unlabeled" class index in label masks.
pub const DEFAULT_IGNORE: u8 = 255;

/// Dense per-pixel features, row-major `height × width × channels`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape(format!(
                "feature map dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::new(
            height,
            width,
            channels,
            vec![0.0; height * width * channels],
        )
        .expect("positive dimensions")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// All channels of pixel `(y, x)`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

/// Per-pixel class indices with an ignore sentinel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
    ignore_value: u8,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "label mask dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "label mask {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            ignore_value: DEFAULT_IGNORE,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self::new(height, width, vec![value; height * width]).expect("positive dimensions")
    }

    pub fn with_ignore(mut self, ignore_value: u8) -> Self {
        self.ignore_value = ignore_value;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn ignore_value(&self) -> u8 {
        self.ignore_value
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Checks every labeled pixel is a valid class index.
    pub fn validate_classes(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .position(|&v| v != self.ignore_value && usize::from(v) >= num_classes)
        {
            Some(pos) => Err(Error::Data(format!(
                "mask value {} at flat index {pos} is not a class in 0..{num_classes} nor the ignore value {}",
                self.data[pos], self.ignore_value
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tensor {
    Features(FeatureMap),
    Mask(LabelMask),
}

impl Tensor {
    pub fn into_features(self) -> Result<FeatureMap> {
        match self {
            Tensor::Features(f) => Ok(f),
            Tensor::Mask(_) => Err(Error::UnsupportedDtype {
                found: "|u1".into(),
                supported: "<f4 (feature map expected)",
            }),
        }
    }

    pub fn into_mask(self) -> Result<LabelMask> {
        match self {
            Tensor::Mask(m) => Ok(m),
            Tensor::Features(_) => Err(Error::UnsupportedDtype {
                found: "<f4".into(),
                supported: "|u1 (label mask expected)",
            }),
        }
    }
}

impl From<FeatureMap> for Tensor {
    fn from(f: FeatureMap) -> Self {
        Tensor::Features(f)
    }
}

impl From<LabelMask> for Tensor {
    fn from(m: LabelMask) -> Self {
        Tensor::Mask(m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::U8 => "|u1",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

/// The complete file image (preamble, padded header, payload) for `tensor`.
pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let (dtype, shape, payload_len): (Dtype, Vec<usize>, usize) = match tensor {
        Tensor::Features(f) => (
            Dtype::F32,
            vec![f.height, f.width, f.channels],
            f.data.len() * 4,
        ),
        Tensor::Mask(m) => (Dtype::U8, vec![m.height, m.width], m.data.len()),
    };
    let header = header_bytes(dtype, &shape);
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(&header);
    match tensor {
        Tensor::Features(f) => {
            for v in &f.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Mask(m) => out.extend_from_slice(&m.data),
    }
    out
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let dims = match shape {
        [single] => format!("({single},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {dims}, }}",
        dtype.descr()
    )
    .into_bytes();
    // pad so that preamble + header (including the trailing newline) is 64-byte aligned
    let unpadded = PREAMBLE_LEN + header.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(b' ', padding));
    header.push(b'\n');
    header
}

/// Writes `tensor` to `path` as a version 1.0 `.npy` file.
pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(tensor))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_features(f: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&Tensor::Features(f.clone()), path)
}

pub fn write_mask(m: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&Tensor::Mask(m.clone()), path)
}

/// Reads a `.npy` file.
///
/// The payload is read only after the header has been validated and the file
/// length checked against the declared shape, so a corrupt header can never
/// trigger an allocation larger than the file itself.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();

    let mut preamble = [0u8; PREAMBLE_LEN];
    read_exact_or_format(&mut file, &mut preamble, path, "preamble")?;
    let header_len = parse_preamble(&preamble)?;
    let mut header = vec![0u8; header_len];
    read_exact_or_format(&mut file, &mut header, path, "header")?;
    let parsed = parse_header(&header)?;

    let payload_len = parsed.payload_len()?;
    let expected = (PREAMBLE_LEN + header_len) as u64 + payload_len as u64;
    if file_len != expected {
        return Err(Error::Format(format!(
            "{}: header declares {payload_len} payload bytes but the file has {} after the header",
            path.display(),
            file_len.saturating_sub((PREAMBLE_LEN + header_len) as u64)
        )));
    }
    let mut payload = vec![0u8; payload_len];
    read_exact_or_format(&mut file, &mut payload, path, "payload")?;
    parsed.into_tensor(payload)
}

/// Decodes an in-memory `.npy` image with the same rules as [`read_tensor`].
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::Format(format!(
            "truncated preamble: {} of {PREAMBLE_LEN} bytes",
            bytes.len()
        )));
    }
    let header_len = parse_preamble(bytes[..PREAMBLE_LEN].try_into().unwrap())?;
    let header_end = PREAMBLE_LEN + header_len;
    if bytes.len() < header_end {
        return Err(Error::Format("truncated header".into()));
    }
    let parsed = parse_header(&bytes[PREAMBLE_LEN..header_end])?;
    let payload_len = parsed.payload_len()?;
    if bytes.len() - header_end != payload_len {
        return Err(Error::Format(format!(
            "header declares {payload_len} payload bytes, found {}",
            bytes.len() - header_end
        )));
    }
    parsed.into_tensor(bytes[header_end..].to_vec())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    read_tensor(path)?.into_features()
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<LabelMask> {
    read_tensor(path)?.into_mask()
}

fn read_exact_or_format(file: &mut File, buf: &mut [u8], path: &Path, what: &str) -> Result<()> {
    file.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("{}: truncated {what}", path.display()))
        } else {
            Error::io(path, e)
        }
    })
}

fn parse_preamble(preamble: &[u8; PREAMBLE_LEN]) -> Result<usize> {
    if &preamble[..6] != MAGIC {
        return Err(Error::Format("missing \\x93NUMPY magic".into()));
    }
    if preamble[6] != 1 {
        return Err(Error::Format(format!(
            "unsupported format version {}.{} (only 1.0)",
            preamble[6], preamble[7]
        )));
    }
    Ok(u16::from_le_bytes([preamble[8], preamble[9]]) as usize)
}

struct ParsedHeader {
    dtype: Dtype,
    shape: Vec<usize>,
}

impl ParsedHeader {
    fn payload_len(&self) -> Result<usize> {
        self.shape
            .iter()
            .try_fold(self.dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("shape {:?} overflows", self.shape)))
    }

    fn into_tensor(self, payload: Vec<u8>) -> Result<Tensor> {
        match (self.dtype, self.shape.as_slice()) {
            (Dtype::F32, &[h, w]) => {
                Ok(Tensor::Features(FeatureMap::new(h, w, 1, f32s(&payload))?))
            }
            (Dtype::F32, &[h, w, c]) => {
                Ok(Tensor::Features(FeatureMap::new(h, w, c, f32s(&payload))?))
            }
            (Dtype::U8, &[h, w]) => Ok(Tensor::Mask(LabelMask::new(h, w, payload)?)),
            (Dtype::F32, shape) => Err(Error::Shape(format!(
                "feature maps must be 2-D or 3-D, header declares {}-D shape {shape:?}",
                shape.len()
            ))),
            (Dtype::U8, shape) => Err(Error::Shape(format!(
                "label masks must be 2-D, header declares {}-D shape {shape:?}",
                shape.len()
            ))),
        }
    }
}

fn f32s(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

fn parse_header(raw: &[u8]) -> Result<ParsedHeader> {
    let text = std::str::from_utf8(raw)
        .ok()
        .filter(|t| t.is_ascii())
        .ok_or_else(|| Error::Format("header is not ASCII".into()))?;
    if !text.ends_with('\n') {
        return Err(Error::Format("header is not newline-terminated".into()));
    }
    let body = text.trim_end();
    let inner = body
        .strip_prefix('{')
        .and_then(|b| b.strip_suffix('}'))
        .ok_or_else(|| Error::Format(format!("header is not a dict: {body:?}")))?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    let mut rest = inner.trim_start();
    while !rest.is_empty() {
        let (key, after_key) = take_quoted(rest)?;
        let after_colon = after_key
            .trim_start()
            .strip_prefix(':')
            .ok_or_else(|| Error::Format(format!("expected ':' after key '{key}'")))?
            .trim_start();
        let after_value = match key {
            "descr" => {
                let (v, r) = take_quoted(after_colon)?;
                descr = Some(v.to_string());
                r
            }
            "fortran_order" => {
                if let Some(r) = after_colon.strip_prefix("False") {
                    fortran = Some(false);
                    r
                } else if let Some(r) = after_colon.strip_prefix("True") {
                    fortran = Some(true);
                    r
                } else {
                    return Err(Error::Format("fortran_order must be True or False".into()));
                }
            }
            "shape" => {
                let (dims, r) = take_shape(after_colon)?;
                shape = Some(dims);
                r
            }
            other => return Err(Error::Format(format!("unexpected header key '{other}'"))),
        };
        let after_value = after_value.trim_start();
        rest = match after_value.strip_prefix(',') {
            Some(r) => r.trim_start(),
            None if after_value.is_empty() => after_value,
            None => return Err(Error::Format("expected ',' between header entries".into())),
        };
    }

    let descr = descr.ok_or_else(|| Error::Format("header lacks 'descr'".into()))?;
    let fortran = fortran.ok_or_else(|| Error::Format("header lacks 'fortran_order'".into()))?;
    let shape = shape.ok_or_else(|| Error::Format("header lacks 'shape'".into()))?;
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F32,
        "|u1" => Dtype::U8,
        _ => {
            return Err(Error::UnsupportedDtype {
                found: descr,
                supported: SUPPORTED,
            })
        }
    };
    if fortran {
        return Err(Error::Format(
            "column-major (fortran_order: True) arrays are not supported".into(),
        ));
    }
    Ok(ParsedHeader { dtype, shape })
}

fn take_quoted(s: &str) -> Result<(&str, &str)> {
    let quote = s
        .chars()
        .next()
        .filter(|c| *c == '\'' || *c == '"')
        .ok_or_else(|| Error::Format(format!("expected quoted string at {s:?}")))?;
    let body = &s[1..];
    let end = body
        .find(quote)
        .ok_or_else(|| Error::Format("unterminated string in header".into()))?;
    Ok((&body[..end], &body[end + 1..]))
}

fn take_shape(s: &str) -> Result<(Vec<usize>, &str)> {
    let body = s
        .strip_prefix('(')
        .ok_or_else(|| Error::Format("shape must be a tuple".into()))?;
    let end = body
        .find(')')
        .ok_or_else(|| Error::Format("unterminated shape tuple".into()))?;
    let dims = body[..end]
        .split(',')
        .map(str::trim)
        .filter(|d| !d.is_empty())
        .map(|d| {
            d.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape dimension {d:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dims, &body[end + 1..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_of(bytes: &[u8]) -> &str {
        let len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        std::str::from_utf8(&bytes[10..10 + len]).unwrap()
    }

    #[test]
    fn header_is_aligned_and_canonical() {
        let f = FeatureMap::zeros(2, 2, 1);
        let bytes = encode(&f.into());
        let header = header_of(&bytes);
        assert_eq!((10 + header.len()) % 64, 0);
        assert!(
            header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2, 1), }")
        );
        assert!(header.ends_with(" \n"));
    }

    #[test]
    fn zero_feature_map_payload() {
        let bytes = encode(&FeatureMap::zeros(2, 2, 1).into());
        let payload = &bytes[bytes.len() - 16..];
        assert_eq!(bytes.len(), 128 + 16);
        assert!(payload.iter().all(|&b| b == 0));
    }

    #[test]
    fn single_ignore_pixel_payload() {
        let bytes = encode(&LabelMask::filled(1, 1, 255).into());
        assert_eq!(bytes.len(), 129);
        assert_eq!(bytes[128], 0xFF);
        assert!(header_of(&bytes).contains("'descr': '|u1'"));
        assert!(header_of(&bytes).contains("'shape': (1, 1)"));
    }

    #[test]
    fn payload_is_little_endian() {
        let f = FeatureMap::new(1, 1, 1, vec![1.0]).unwrap();
        let bytes = encode(&f.into());
        assert_eq!(&bytes[128..], &[0x00, 0x00, 0x80, 0x3f]);
    }

    #[test]
    fn two_dimensional_float_is_single_channel() {
        let mut bytes = Vec::new();
        let header = header_bytes(Dtype::F32, &[2, 3]);
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(&header);
        bytes.extend(std::iter::repeat_n(0u8, 24));
        let f = decode(&bytes).unwrap().into_features().unwrap();
        assert_eq!((f.height(), f.width(), f.channels()), (2, 3, 1));
    }

    #[test]
    fn rejects_non_finite() {
        let mut bytes = encode(&FeatureMap::zeros(1, 1, 1).into());
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Data(_))));
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::Data(_))));
    }

    #[test]
    fn rejects_truncation() {
        let bytes = encode(&FeatureMap::zeros(3, 3, 2).into());
        assert!(matches!(decode(&bytes[..4]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..40]), Err(Error::Format(_))));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn huge_declared_shape_is_rejected_before_allocating() {
        let header = header_bytes(Dtype::F32, &[1 << 20, 1 << 20, 1 << 10]);
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(&header);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let header = header_bytes(Dtype::F32, &[usize::MAX, 2, 2]);
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(&header);
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn mask_class_validation() {
        let m = LabelMask::new(1, 3, vec![0, 4, 255]).unwrap();
        assert!(m.validate_classes(5).is_ok());
        assert!(matches!(m.validate_classes(4), Err(Error::Data(_))));
    }

    #[test]
    fn wrong_kind_is_reported() {
        let t: Tensor = LabelMask::filled(2, 2, 0).into();
        assert!(matches!(
            t.into_features(),
            Err(Error::UnsupportedDtype { .. })
        ));
    }
}
