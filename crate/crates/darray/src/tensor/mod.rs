//! Local dense n-dimensional arrays.
//!
//! [`LocalTensor`] is the rank-local payload of a distributed array: a
//! row-major buffer with one of four element types. It carries the full
//! indexing, elementwise and reduction surface that the distributed layer
//! composes, and it doubles as the serial oracle the test suites compare
//! cluster results against.

mod index;
mod ops;

pub use index::{Fetched, Key, SetValue, SliceSpec};
pub use ops::{BinaryOp, ReduceOp, UnaryOp};

pub(crate) use index::{normalize_index, normalize_slice, NormSlice};

use std::fmt;
use std::fs::File;
use std::io::{Read, Write as IoWrite};
use std::path::Path;

pub use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::transport::Wire;

/// Element type of a tensor. The set is closed; mixed-type operations follow
/// the promotion order `bool < int64 < float64 < complex128`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum DType {
    Bool,
    Int64,
    Float64,
    Complex128,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Bool => 0,
            DType::Int64 => 1,
            DType::Float64 => 2,
            DType::Complex128 => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => DType::Bool,
            1 => DType::Int64,
            2 => DType::Float64,
            3 => DType::Complex128,
            other => return Err(Error::Format(format!("unknown dtype code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Bool => "bool",
            DType::Int64 => "int64",
            DType::Float64 => "float64",
            DType::Complex128 => "complex128",
        }
    }

    /// Common type of a binary operation between `a` and `b`.
    pub fn promote(a: DType, b: DType) -> DType {
        if a.code() >= b.code() {
            a
        } else {
            b
        }
    }

    /// Bytes per element in the dump format.
    pub fn element_size(self) -> usize {
        match self {
            DType::Bool => 1,
            DType::Int64 | DType::Float64 => 8,
            DType::Complex128 => 16,
        }
    }
}

impl fmt::Display for DType {
    fmt_name_display!();
}

macro_rules! fmt_name_display {
    () => {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str(self.name())
        }
    };
}
use fmt_name_display;

/// A single element of any supported dtype.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scalar {
    Bool(bool),
    Int64(i64),
    Float64(f64),
    Complex128(Complex64),
}

impl Scalar {
    pub fn dtype(&self) -> DType {
        match self {
            Scalar::Bool(_) => DType::Bool,
            Scalar::Int64(_) => DType::Int64,
            Scalar::Float64(_) => DType::Float64,
            Scalar::Complex128(_) => DType::Complex128,
        }
    }

    pub fn zero(dtype: DType) -> Scalar {
        match dtype {
            DType::Bool => Scalar::Bool(false),
            DType::Int64 => Scalar::Int64(0),
            DType::Float64 => Scalar::Float64(0.0),
            DType::Complex128 => Scalar::Complex128(Complex64::new(0.0, 0.0)),
        }
    }

    /// Converts to `dtype`. Float to int truncates toward zero; any complex
    /// value refuses to narrow to a real type.
    pub fn cast(&self, dtype: DType) -> Result<Scalar> {
        let narrow = || Error::Cast {
            from: self.dtype().name(),
            to: dtype.name(),
        };
        Ok(match (self, dtype) {
            (s, d) if s.dtype() == d => *s,
            (Scalar::Bool(v), DType::Int64) => Scalar::Int64(*v as i64),
            (Scalar::Bool(v), DType::Float64) => Scalar::Float64(*v as u8 as f64),
            (Scalar::Bool(v), DType::Complex128) => {
                Scalar::Complex128(Complex64::new(*v as u8 as f64, 0.0))
            }
            (Scalar::Int64(v), DType::Bool) => Scalar::Bool(*v != 0),
            (Scalar::Int64(v), DType::Float64) => Scalar::Float64(*v as f64),
            (Scalar::Int64(v), DType::Complex128) => {
                Scalar::Complex128(Complex64::new(*v as f64, 0.0))
            }
            (Scalar::Float64(v), DType::Bool) => Scalar::Bool(*v != 0.0),
            (Scalar::Float64(v), DType::Int64) => Scalar::Int64(*v as i64),
            (Scalar::Float64(v), DType::Complex128) => {
                Scalar::Complex128(Complex64::new(*v, 0.0))
            }
            (Scalar::Complex128(_), _) => return Err(narrow()),
            _ => unreachable!("all dtype pairs covered"),
        })
    }

    pub fn as_bool(&self) -> Result<bool> {
        match self {
            Scalar::Bool(v) => Ok(*v),
            _ => Err(Error::DTypeMismatch(format!("expected bool, got {}", self.dtype()))),
        }
    }

    pub fn as_i64(&self) -> Result<i64> {
        match self {
            Scalar::Int64(v) => Ok(*v),
            _ => Err(Error::DTypeMismatch(format!("expected int64, got {}", self.dtype()))),
        }
    }

    pub fn as_f64(&self) -> Result<f64> {
        match self {
            Scalar::Float64(v) => Ok(*v),
            _ => Err(Error::DTypeMismatch(format!("expected float64, got {}", self.dtype()))),
        }
    }

    pub fn as_complex(&self) -> Result<Complex64> {
        match self {
            Scalar::Complex128(v) => Ok(*v),
            _ => Err(Error::DTypeMismatch(format!(
                "expected complex128, got {}",
                self.dtype()
            ))),
        }
    }
}

impl From<bool> for Scalar {
    fn from(v: bool) -> Self {
        Scalar::Bool(v)
    }
}
impl From<i64> for Scalar {
    fn from(v: i64) -> Self {
        Scalar::Int64(v)
    }
}
impl From<f64> for Scalar {
    fn from(v: f64) -> Self {
        Scalar::Float64(v)
    }
}
impl From<Complex64> for Scalar {
    fn from(v: Complex64) -> Self {
        Scalar::Complex128(v)
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Bool(v) => write!(f, "{v}"),
            Scalar::Int64(v) => write!(f, "{v}"),
            Scalar::Float64(v) => write!(f, "{v}"),
            Scalar::Complex128(v) => write!(f, "{}+{}j", v.re, v.im),
        }
    }
}

impl Wire for Scalar {
    fn encode(&self, out: &mut Vec<u8>) {
        out.push(self.dtype().code());
        match self {
            Scalar::Bool(v) => v.encode(out),
            Scalar::Int64(v) => v.encode(out),
            Scalar::Float64(v) => v.encode(out),
            Scalar::Complex128(v) => v.encode(out),
        }
    }
    fn decode(input: &mut &[u8]) -> Result<Self> {
        let dtype = DType::from_code(u8::decode(input)?)?;
        Ok(match dtype {
            DType::Bool => Scalar::Bool(bool::decode(input)?),
            DType::Int64 => Scalar::Int64(i64::decode(input)?),
            DType::Float64 => Scalar::Float64(f64::decode(input)?),
            DType::Complex128 => Scalar::Complex128(Complex64::decode(input)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Buffer {
    Bool(Vec<bool>),
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Complex128(Vec<Complex64>),
}

impl Buffer {
    fn len(&self) -> usize {
        match self {
            Buffer::Bool(v) => v.len(),
            Buffer::Int64(v) => v.len(),
            Buffer::Float64(v) => v.len(),
            Buffer::Complex128(v) => v.len(),
        }
    }

    fn dtype(&self) -> DType {
        match self {
            Buffer::Bool(_) => DType::Bool,
            Buffer::Int64(_) => DType::Int64,
            Buffer::Float64(_) => DType::Float64,
            Buffer::Complex128(_) => DType::Complex128,
        }
    }

    fn zeros(dtype: DType, len: usize) -> Buffer {
        match dtype {
            DType::Bool => Buffer::Bool(vec![false; len]),
            DType::Int64 => Buffer::Int64(vec![0; len]),
            DType::Float64 => Buffer::Float64(vec![0.0; len]),
            DType::Complex128 => Buffer::Complex128(vec![Complex64::new(0.0, 0.0); len]),
        }
    }
}

/// Dense row-major n-dimensional array with a typed element buffer.
///
/// Zero-length axes are permitted; an empty shard of a distributed array is
/// just a tensor whose first axis has length zero. `LocalTensor` is a value
/// type: it moves freely between rank contexts but is never shared.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTensor {
    shape: Vec<usize>,
    buffer: Buffer,
}

pub(crate) const DUMP_MAGIC: &[u8; 4] = b"D2OT";

impl LocalTensor {
    pub fn zeros(dtype: DType, shape: &[usize]) -> LocalTensor {
        LocalTensor {
            shape: shape.to_vec(),
            buffer: Buffer::zeros(dtype, shape.iter().product()),
        }
    }

    pub fn filled(dtype: DType, shape: &[usize], fill: Scalar) -> Result<LocalTensor> {
        let fill = fill.cast(dtype)?;
        let len = shape.iter().product();
        let buffer = match fill {
            Scalar::Bool(v) => Buffer::Bool(vec![v; len]),
            Scalar::Int64(v) => Buffer::Int64(vec![v; len]),
            Scalar::Float64(v) => Buffer::Float64(vec![v; len]),
            Scalar::Complex128(v) => Buffer::Complex128(vec![v; len]),
        };
        Ok(LocalTensor {
            shape: shape.to_vec(),
            buffer,
        })
    }

    fn from_parts(shape: &[usize], buffer: Buffer) -> Result<LocalTensor> {
        let expected: usize = shape.iter().product();
        if buffer.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "buffer holds {} elements but shape {:?} requires {}",
                buffer.len(),
                shape,
                expected
            )));
        }
        Ok(LocalTensor {
            shape: shape.to_vec(),
            buffer,
        })
    }

    pub fn from_bool(shape: &[usize], values: Vec<bool>) -> Result<LocalTensor> {
        Self::from_parts(shape, Buffer::Bool(values))
    }

    pub fn from_i64(shape: &[usize], values: Vec<i64>) -> Result<LocalTensor> {
        Self::from_parts(shape, Buffer::Int64(values))
    }

    pub fn from_f64(shape: &[usize], values: Vec<f64>) -> Result<LocalTensor> {
        Self::from_parts(shape, Buffer::Float64(values))
    }

    pub fn from_complex(shape: &[usize], values: Vec<Complex64>) -> Result<LocalTensor> {
        Self::from_parts(shape, Buffer::Complex128(values))
    }

    pub fn from_scalars(dtype: DType, shape: &[usize], values: &[Scalar]) -> Result<LocalTensor> {
        let mut out = LocalTensor::zeros(dtype, shape);
        if out.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for shape {:?}",
                values.len(),
                shape
            )));
        }
        for (i, v) in values.iter().enumerate() {
            out.write_scalar(i, v.cast(dtype)?);
        }
        Ok(out)
    }

    /// The 1-d integer sequence `0, 1, ..., n-1`.
    pub fn arange(n: i64) -> LocalTensor {
        LocalTensor {
            shape: vec![n.max(0) as usize],
            buffer: Buffer::Int64((0..n.max(0)).collect()),
        }
    }

    pub fn dtype(&self) -> DType {
        self.buffer.dtype()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one axis-0 row: the product of the trailing dimensions.
    pub fn row_size(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    /// Address of the element storage; stable under in-place mutation.
    pub fn storage_id(&self) -> usize {
        match &self.buffer {
            Buffer::Bool(v) => v.as_ptr() as usize,
            Buffer::Int64(v) => v.as_ptr() as usize,
            Buffer::Float64(v) => v.as_ptr() as usize,
            Buffer::Complex128(v) => v.as_ptr() as usize,
        }
    }

    pub(crate) fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    pub(crate) fn read_scalar(&self, flat: usize) -> Scalar {
        match &self.buffer {
            Buffer::Bool(v) => Scalar::Bool(v[flat]),
            Buffer::Int64(v) => Scalar::Int64(v[flat]),
            Buffer::Float64(v) => Scalar::Float64(v[flat]),
            Buffer::Complex128(v) => Scalar::Complex128(v[flat]),
        }
    }

    /// Writes a scalar that already has this tensor's dtype.
    pub(crate) fn write_scalar(&mut self, flat: usize, value: Scalar) {
        match (&mut self.buffer, value) {
            (Buffer::Bool(v), Scalar::Bool(x)) => v[flat] = x,
            (Buffer::Int64(v), Scalar::Int64(x)) => v[flat] = x,
            (Buffer::Float64(v), Scalar::Float64(x)) => v[flat] = x,
            (Buffer::Complex128(v), Scalar::Complex128(x)) => v[flat] = x,
            _ => unreachable!("scalar dtype must match tensor dtype"),
        }
    }

    /// Copies the elements at `flats` (in order) into a fresh tensor of the
    /// given shape.
    pub(crate) fn gather(&self, flats: &[usize], shape: &[usize]) -> LocalTensor {
        let buffer = match &self.buffer {
            Buffer::Bool(v) => Buffer::Bool(flats.iter().map(|&i| v[i]).collect()),
            Buffer::Int64(v) => Buffer::Int64(flats.iter().map(|&i| v[i]).collect()),
            Buffer::Float64(v) => Buffer::Float64(flats.iter().map(|&i| v[i]).collect()),
            Buffer::Complex128(v) => Buffer::Complex128(flats.iter().map(|&i| v[i]).collect()),
        };
        LocalTensor {
            shape: shape.to_vec(),
            buffer,
        }
    }

    /// Writes `values` (already cast to this dtype) at `flats`, in order.
    pub(crate) fn scatter(&mut self, flats: &[usize], values: &LocalTensor) {
        debug_assert_eq!(values.len(), flats.len());
        debug_assert_eq!(values.dtype(), self.dtype());
        match (&mut self.buffer, &values.buffer) {
            (Buffer::Bool(dst), Buffer::Bool(src)) => {
                for (&i, &x) in flats.iter().zip(src) {
                    dst[i] = x;
                }
            }
            (Buffer::Int64(dst), Buffer::Int64(src)) => {
                for (&i, &x) in flats.iter().zip(src) {
                    dst[i] = x;
                }
            }
            (Buffer::Float64(dst), Buffer::Float64(src)) => {
                for (&i, &x) in flats.iter().zip(src) {
                    dst[i] = x;
                }
            }
            (Buffer::Complex128(dst), Buffer::Complex128(src)) => {
                for (&i, &x) in flats.iter().zip(src) {
                    dst[i] = x;
                }
            }
            _ => unreachable!("scatter dtype must match"),
        }
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<LocalTensor> {
        let expected: usize = new_shape.iter().product();
        if expected != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {} elements into {:?}",
                self.len(),
                new_shape
            )));
        }
        Ok(LocalTensor {
            shape: new_shape.to_vec(),
            buffer: self.buffer.clone(),
        })
    }

    /// Converts to `dtype`, copying. Float to int truncates toward zero;
    /// complex refuses to narrow to any real type.
    pub fn cast(&self, dtype: DType) -> Result<LocalTensor> {
        if dtype == self.dtype() {
            return Ok(self.clone());
        }
        let narrow = || Error::Cast {
            from: self.dtype().name(),
            to: dtype.name(),
        };
        let buffer = match (&self.buffer, dtype) {
            (Buffer::Bool(v), DType::Int64) => Buffer::Int64(v.iter().map(|&x| x as i64).collect()),
            (Buffer::Bool(v), DType::Float64) => {
                Buffer::Float64(v.iter().map(|&x| x as u8 as f64).collect())
            }
            (Buffer::Bool(v), DType::Complex128) => Buffer::Complex128(
                v.iter()
                    .map(|&x| Complex64::new(x as u8 as f64, 0.0))
                    .collect(),
            ),
            (Buffer::Int64(v), DType::Bool) => Buffer::Bool(v.iter().map(|&x| x != 0).collect()),
            (Buffer::Int64(v), DType::Float64) => {
                Buffer::Float64(v.iter().map(|&x| x as f64).collect())
            }
            (Buffer::Int64(v), DType::Complex128) => Buffer::Complex128(
                v.iter().map(|&x| Complex64::new(x as f64, 0.0)).collect(),
            ),
            (Buffer::Float64(v), DType::Bool) => Buffer::Bool(v.iter().map(|&x| x != 0.0).collect()),
            (Buffer::Float64(v), DType::Int64) => {
                Buffer::Int64(v.iter().map(|&x| x as i64).collect())
            }
            (Buffer::Float64(v), DType::Complex128) => {
                Buffer::Complex128(v.iter().map(|&x| Complex64::new(x, 0.0)).collect())
            }
            (Buffer::Complex128(_), _) => return Err(narrow()),
            _ => unreachable!("identity handled above"),
        };
        Ok(LocalTensor {
            shape: self.shape.clone(),
            buffer,
        })
    }

    /// Stacks tensors along axis 0. All parts must share dtype and trailing
    /// dimensions; zero-row parts are fine.
    pub fn concat_axis0(parts: &[LocalTensor]) -> Result<LocalTensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_axis0 of zero tensors".into()))?;
        if first.ndim() == 0 {
            return Err(Error::ShapeMismatch("cannot concatenate 0-d tensors".into()));
        }
        let trailing = &first.shape[1..];
        let dtype = first.dtype();
        let mut rows = 0usize;
        for part in parts {
            if part.dtype() != dtype {
                return Err(Error::DTypeMismatch(format!(
                    "concat of {} with {}",
                    dtype,
                    part.dtype()
                )));
            }
            if part.ndim() == 0 || &part.shape[1..] != trailing {
                return Err(Error::ShapeMismatch(format!(
                    "concat of shape {:?} with trailing dims {:?}",
                    part.shape, trailing
                )));
            }
            rows += part.shape[0];
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(trailing);
        let mut out = LocalTensor::zeros(dtype, &shape);
        let mut offset = 0usize;
        for part in parts {
            match (&mut out.buffer, &part.buffer) {
                (Buffer::Bool(dst), Buffer::Bool(src)) => {
                    dst[offset..offset + src.len()].copy_from_slice(src)
                }
                (Buffer::Int64(dst), Buffer::Int64(src)) => {
                    dst[offset..offset + src.len()].copy_from_slice(src)
                }
                (Buffer::Float64(dst), Buffer::Float64(src)) => {
                    dst[offset..offset + src.len()].copy_from_slice(src)
                }
                (Buffer::Complex128(dst), Buffer::Complex128(src)) => {
                    dst[offset..offset + src.len()].copy_from_slice(src)
                }
                _ => unreachable!("dtype checked above"),
            }
            offset += part.len();
        }
        Ok(out)
    }

    /// The contiguous axis-0 block `[row0, row1)`, copied.
    pub fn rows(&self, row0: usize, row1: usize) -> Result<LocalTensor> {
        if self.ndim() == 0 {
            return Err(Error::ShapeMismatch("0-d tensor has no rows".into()));
        }
        if row0 > row1 || row1 > self.shape[0] {
            return Err(Error::ShapeMismatch(format!(
                "row range {row0}..{row1} outside axis of length {}",
                self.shape[0]
            )));
        }
        let rs = self.row_size();
        let mut shape = self.shape.clone();
        shape[0] = row1 - row0;
        let slice_range = row0 * rs..row1 * rs;
        let buffer = match &self.buffer {
            Buffer::Bool(v) => Buffer::Bool(v[slice_range].to_vec()),
            Buffer::Int64(v) => Buffer::Int64(v[slice_range].to_vec()),
            Buffer::Float64(v) => Buffer::Float64(v[slice_range].to_vec()),
            Buffer::Complex128(v) => Buffer::Complex128(v[slice_range].to_vec()),
        };
        Ok(LocalTensor { shape, buffer })
    }

    pub fn to_vec_i64(&self) -> Result<Vec<i64>> {
        match &self.buffer {
            Buffer::Int64(v) => Ok(v.clone()),
            _ => Err(Error::DTypeMismatch(format!("expected int64, got {}", self.dtype()))),
        }
    }

    pub fn to_vec_f64(&self) -> Result<Vec<f64>> {
        match &self.buffer {
            Buffer::Float64(v) => Ok(v.clone()),
            _ => Err(Error::DTypeMismatch(format!("expected float64, got {}", self.dtype()))),
        }
    }

    pub fn to_vec_bool(&self) -> Result<Vec<bool>> {
        match &self.buffer {
            Buffer::Bool(v) => Ok(v.clone()),
            _ => Err(Error::DTypeMismatch(format!("expected bool, got {}", self.dtype()))),
        }
    }

    pub fn to_scalars(&self) -> Vec<Scalar> {
        (0..self.len()).map(|i| self.read_scalar(i)).collect()
    }

    /// Serializes in the dump format: magic `D2OT`, one dtype-code byte, one
    /// ndim byte, `ndim` little-endian u64 axis lengths, then the row-major
    /// little-endian payload (bool as one byte, complex as re then im).
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 8 * self.ndim() + self.len() * self.dtype().element_size());
        out.extend_from_slice(DUMP_MAGIC);
        out.push(self.dtype().code());
        out.push(self.ndim() as u8);
        for &dim in &self.shape {
            out.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        match &self.buffer {
            Buffer::Bool(v) => out.extend(v.iter().map(|&b| b as u8)),
            Buffer::Int64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Buffer::Float64(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Buffer::Complex128(v) => {
                for x in v {
                    out.extend_from_slice(&x.re.to_le_bytes());
                    out.extend_from_slice(&x.im.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<LocalTensor> {
        let mut input = bytes;
        let tensor = Self::decode(&mut input)?;
        if !input.is_empty() {
            return Err(Error::Format("trailing bytes after tensor payload".into()));
        }
        Ok(tensor)
    }

    pub fn write_to<W: IoWrite>(&self, writer: &mut W) -> Result<()> {
        writer.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: &mut R) -> Result<LocalTensor> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = File::create(path)?;
        self.write_to(&mut file)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<LocalTensor> {
        let mut file = File::open(path)?;
        Self::read_from(&mut file)
    }
}

impl Wire for LocalTensor {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_bytes());
    }

    fn decode(input: &mut &[u8]) -> Result<Self> {
        use crate::transport::Wire as _;
        let magic = crate::transport::take_bytes(input, 4)?;
        if magic != DUMP_MAGIC {
            return Err(Error::Format("bad magic, expected D2OT".into()));
        }
        let dtype = DType::from_code(u8::decode(input)?)?;
        let ndim = u8::decode(input)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::decode(input)? as usize);
        }
        let len: usize = shape.iter().product();
        let buffer = match dtype {
            DType::Bool => {
                let raw = crate::transport::take_bytes(input, len)?;
                let mut v = Vec::with_capacity(len);
                for &b in raw {
                    match b {
                        0 => v.push(false),
                        1 => v.push(true),
                        other => {
                            return Err(Error::Format(format!("invalid bool byte {other}")))
                        }
                    }
                }
                Buffer::Bool(v)
            }
            DType::Int64 => {
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(i64::decode(input)?);
                }
                Buffer::Int64(v)
            }
            DType::Float64 => {
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(f64::decode(input)?);
                }
                Buffer::Float64(v)
            }
            DType::Complex128 => {
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(Complex64::decode(input)?);
                }
                Buffer::Complex128(v)
            }
        };
        LocalTensor::from_parts(&shape, buffer)
    }
}

impl fmt::Display for LocalTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn walk(
            t: &LocalTensor,
            f: &mut fmt::Formatter<'_>,
            axis: usize,
            offset: usize,
            strides: &[usize],
        ) -> fmt::Result {
            if axis == t.ndim() {
                return write!(f, "{}", t.read_scalar(offset));
            }
            f.write_str("[")?;
            for i in 0..t.shape[axis] {
                if i > 0 {
                    f.write_str(", ")?;
                }
                walk(t, f, axis + 1, offset + i * strides[axis], strides)?;
            }
            f.write_str("]")
        }
        if self.ndim() == 0 {
            return write!(f, "{}", self.read_scalar(0));
        }
        walk(self, f, 0, 0, &self.strides())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arange_reshape_matches_expected_rows() {
        // the 3x4 array 0..11
        let a = LocalTensor::arange(12).reshape(&[3, 4]).unwrap();
        assert_eq!(a.dtype(), DType::Int64);
        assert_eq!(a.shape(), &[3, 4]);
        assert_eq!(a.to_vec_i64().unwrap(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn reshape_roundtrip_is_identity() {
        let a = LocalTensor::arange(16);
        let b = a.reshape(&[4, 4]).unwrap().reshape(&[16]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn concat_of_three_4x4_shards() {
        let parts: Vec<LocalTensor> = (0..3)
            .map(|r| {
                let vals = (0..16).map(|x| x + r).collect();
                LocalTensor::from_i64(&[4, 4], vals).unwrap()
            })
            .collect();
        let whole = LocalTensor::concat_axis0(&parts).unwrap();
        assert_eq!(whole.shape(), &[12, 4]);
    }

    #[test]
    fn concat_accepts_empty_rows() {
        let a = LocalTensor::arange(8).reshape(&[2, 4]).unwrap();
        let empty = LocalTensor::zeros(DType::Int64, &[0, 4]);
        let whole = LocalTensor::concat_axis0(&[a.clone(), empty, a.clone()]).unwrap();
        assert_eq!(whole.shape(), &[4, 4]);
    }

    #[test]
    fn cast_truncates_toward_zero() {
        let a = LocalTensor::from_f64(&[4], vec![1.9, -1.9, 0.2, -0.2]).unwrap();
        assert_eq!(
            a.cast(DType::Int64).unwrap().to_vec_i64().unwrap(),
            vec![1, -1, 0, 0]
        );
    }

    #[test]
    fn complex_refuses_to_narrow() {
        let a = LocalTensor::from_complex(&[1], vec![Complex64::new(1.0, 2.0)]).unwrap();
        assert!(matches!(a.cast(DType::Float64), Err(Error::Cast { .. })));
        assert!(a.cast(DType::Complex128).is_ok());
    }

    #[test]
    fn dump_format_golden_bytes() {
        let t = LocalTensor::from_i64(&[1, 2], vec![1, -1]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[0..4], b"D2OT");
        assert_eq!(bytes[4], 1); // int64 code
        assert_eq!(bytes[5], 2); // ndim
        assert_eq!(&bytes[6..14], &1u64.to_le_bytes());
        assert_eq!(&bytes[14..22], &2u64.to_le_bytes());
        assert_eq!(&bytes[22..30], &1i64.to_le_bytes());
        assert_eq!(&bytes[30..38], &(-1i64).to_le_bytes());
        assert_eq!(bytes.len(), 38);
    }

    #[test]
    fn dump_roundtrip_all_dtypes() {
        let tensors = vec![
            LocalTensor::from_bool(&[3], vec![true, false, true]).unwrap(),
            LocalTensor::arange(6).reshape(&[2, 3]).unwrap(),
            LocalTensor::from_f64(&[2], vec![1.5, -0.0]).unwrap(),
            LocalTensor::from_complex(&[1], vec![Complex64::new(1.0, -2.0)]).unwrap(),
            LocalTensor::zeros(DType::Float64, &[0, 2]),
        ];
        for t in tensors {
            assert_eq!(LocalTensor::from_bytes(&t.to_bytes()).unwrap(), t);
        }
    }

    #[test]
    fn display_is_nested_rows() {
        let a = LocalTensor::arange(4).reshape(&[2, 2]).unwrap();
        assert_eq!(a.to_string(), "[[0, 1], [2, 3]]");
    }
}
