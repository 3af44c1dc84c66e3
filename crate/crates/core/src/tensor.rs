//! Dense row-major tensors and the CTSB binary container.
//!
//! A CTSB record is laid out as
//!
//! ```text
//! magic   5 bytes  "CTSB1"
//! dtype   1 byte   0 = f32, 1 = f64
//! ndim    1 byte
//! dims    ndim x u64 little-endian
//! payload product(dims) values, row-major, little-endian
//! ```
//!
//! Several records may be concatenated in one file (checkpoints do this).
//! Values are always held as `f64` in memory; `f32` is an I/O option only.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CTSB1";
const HEADER_FIXED: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::F32),
            1 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor by evaluating `f` at every multi-index in row-major order.
    pub fn from_fn3(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape[0] * shape[1] * shape[2]);
        for a in 0..shape[0] {
            for b in 0..shape[1] {
                for c in 0..shape[2] {
                    data.push(f(a, b, c));
                }
            }
        }
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at2(&self, a: usize, b: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[a * self.shape[1] + b]
    }

    #[inline]
    pub fn at3(&self, a: usize, b: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        self.data[(a * self.shape[1] + b) * self.shape[2] + c]
    }

    /// Contiguous slice of the innermost axis of a rank-3 tensor.
    #[inline]
    pub fn row3(&self, a: usize, b: usize) -> &[f64] {
        let w = self.shape[2];
        let start = (a * self.shape[1] + b) * w;
        &self.data[start..start + w]
    }

    /// Leading-axis slice `[start, end)` of a tensor of any rank >= 1.
    pub fn slice_leading(&self, start: usize, end: usize) -> Result<Self> {
        if self.shape.is_empty() || start > end || end > self.shape[0] {
            return Err(Error::dim(format!(
                "cannot slice [{start}, {end}) from shape {:?}",
                self.shape
            )));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Ok(Self {
            shape,
            data: self.data[start * inner..end * inner].to_vec(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Serializes one tensor as a CTSB record.
pub fn encode(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(HEADER_FIXED + 8 * tensor.ndim() + dtype.size() * tensor.len());
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(tensor.ndim() as u8);
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F32 => {
            for &v in tensor.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        DType::F64 => {
            for &v in tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Decodes one CTSB record starting at `bytes[0]`. `base` is the absolute
/// offset of `bytes[0]` within the file and is only used in error reports.
/// Returns the tensor, its on-disk dtype and the number of bytes consumed.
pub fn decode_at(bytes: &[u8], base: u64) -> Result<(Tensor, DType, usize)> {
    let fail = |at: usize, reason: String| Error::Format {
        offset: base + at as u64,
        reason,
    };
    if bytes.len() < MAGIC.len() {
        return Err(fail(0, "truncated magic".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail(0, "bad magic, expected \"CTSB1\"".into()));
    }
    if bytes.len() < HEADER_FIXED {
        return Err(fail(bytes.len(), "truncated header".into()));
    }
    let dtype = DType::from_code(bytes[5])
        .ok_or_else(|| fail(5, format!("unknown dtype byte {}", bytes[5])))?;
    let ndim = bytes[6] as usize;
    let mut pos = HEADER_FIXED;
    let mut shape = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for _ in 0..ndim {
        let Some(chunk) = bytes.get(pos..pos + 8) else {
            return Err(fail(bytes.len(), "truncated dims".into()));
        };
        let d = u64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        let d = usize::try_from(d).map_err(|_| fail(pos, format!("dim {d} too large")))?;
        count = count
            .checked_mul(d)
            .ok_or_else(|| fail(pos, "element count overflows".into()))?;
        shape.push(d);
        pos += 8;
    }
    let payload = count
        .checked_mul(dtype.size())
        .ok_or_else(|| fail(pos, "payload size overflows".into()))?;
    let Some(body) = bytes.get(pos..pos + payload) else {
        return Err(fail(
            bytes.len(),
            format!(
                "truncated payload: need {payload} bytes, have {}",
                bytes.len() - pos
            ),
        ));
    };
    let data: Vec<f64> = match dtype {
        DType::F32 => body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect(),
        DType::F64 => body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    };
    Ok((Tensor { shape, data }, dtype, pos + payload))
}

/// Decodes a buffer that must hold exactly one record.
pub fn decode(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let (t, dtype, used) = decode_at(bytes, 0)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used as u64,
            reason: format!("{} trailing bytes", bytes.len() - used),
        });
    }
    Ok((t, dtype))
}

/// Decodes a buffer of back-to-back records.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let (t, _, used) = decode_at(&bytes[pos..], pos as u64)?;
        out.push(t);
        pos += used;
    }
    Ok(out)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(tensor, dtype)).map_err(|e| Error::io(path, e))
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[&Tensor], dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for t in tensors {
        buf.extend_from_slice(&encode(t, dtype));
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_tensor_with_dtype(path).map(|(t, _)| t)
}

pub fn read_tensor_with_dtype(path: impl AsRef<Path>) -> Result<(Tensor, DType)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_all(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_small_matrix() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (back, dtype) = decode(&encode(&t, DType::F64)).unwrap();
        assert_eq!(back, t);
        assert_eq!(dtype, DType::F64);
    }

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let bytes = encode(&t, DType::F32);
        assert_eq!(&bytes[..5], b"CTSB1");
        assert_eq!(bytes[5], 0);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..15], &3u64.to_le_bytes());
        assert_eq!(&bytes[15..19], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 15 + 12);
    }

    #[test]
    fn bad_magic_rejected() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut bytes = encode(&t, DType::F64);
        bytes[..5].copy_from_slice(b"XXXXX");
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_dtype_rejected_with_offset() {
        let t = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut bytes = encode(&t, DType::F64);
        bytes[5] = 7;
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_rejected() {
        let t = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = encode(&t, DType::F64);
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(Error::Format { offset, reason }) => {
                assert_eq!(offset as usize, cut.len());
                assert!(reason.contains("truncated payload"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn concatenated_records_decode_in_order() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![3.0, 4.0, 5.0]).unwrap();
        let mut buf = encode(&a, DType::F64);
        buf.extend(encode(&b, DType::F64));
        assert_eq!(decode_all(&buf).unwrap(), vec![a, b]);
    }

    #[test]
    fn second_record_error_reports_absolute_offset() {
        let a = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut buf = encode(&a, DType::F64);
        let first = buf.len();
        buf.extend_from_slice(b"CTSB1\x09\x00");
        match decode_all(&buf) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, first + 5),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn slice_leading_axis() {
        let t = Tensor::from_fn3([4, 2, 1], |a, b, _| (a * 10 + b) as f64);
        let s = t.slice_leading(1, 3).unwrap();
        assert_eq!(s.shape(), &[2, 2, 1]);
        assert_eq!(s.data(), &[10.0, 11.0, 20.0, 21.0]);
        assert!(t.slice_leading(3, 5).is_err());
    }
}
