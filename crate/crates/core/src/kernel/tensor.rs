//! Dense row-major tensors with a switchable value precision.
//!
//! Values are stored as `f64` but every op output is rounded through
//! `f32` when the thread is in [`Precision::Single`] mode. Training runs
//! single precision; gradient checks switch to [`Precision::Double`] so
//! central differences stay tight.

use std::cell::Cell;
use std::fmt;

/// Value precision for all kernel arithmetic on the current thread.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Round every op output through `f32` (training default).
    Single,
    /// Full `f64` arithmetic (gradient checks).
    Double,
}

thread_local! {
    static PRECISION: Cell<Precision> = const { Cell::new(Precision::Single) };
    static FINITE_CHECKS: Cell<bool> = const { Cell::new(true) };
}

pub fn precision() -> Precision {
    PRECISION.with(|p| p.get())
}

pub fn set_precision(p: Precision) {
    PRECISION.with(|c| c.set(p));
}

/// Runs `f` with the given precision, restoring the previous mode after.
pub fn with_precision<T>(p: Precision, f: impl FnOnce() -> T) -> T {
    let prev = precision();
    set_precision(p);
    let out = f();
    set_precision(prev);
    out
}

/// NaN/Inf detection after each op. On by default; benchmarks switch it off.
pub fn finite_checks() -> bool {
    FINITE_CHECKS.with(|c| c.get())
}

pub fn set_finite_checks(on: bool) {
    FINITE_CHECKS.with(|c| c.set(on));
}

#[inline]
pub(crate) fn quantize(v: f64) -> f64 {
    match precision() {
        Precision::Single => v as f32 as f64,
        Precision::Double => v,
    }
}

/// Errors raised by kernel operations.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelError {
    /// Operand shapes are incompatible for the op.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An operand has the wrong rank or an otherwise invalid shape.
    BadShape { op: &'static str, detail: String },
    /// A row/column index fell outside its bound.
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    /// An op produced NaN or Inf while finite checks were enabled.
    NonFinite { op: &'static str },
    /// A contract of the op was violated (e.g. backward on a non-scalar).
    Contract(String),
    /// Invalid sparse matrix construction.
    InvalidSparse(String),
}

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch {lhs:?} vs {rhs:?}")
            }
            Self::BadShape { op, detail } => write!(f, "{op}: {detail}"),
            Self::IndexOutOfRange { op, index, bound } => {
                write!(f, "{op}: index {index} out of range (bound {bound})")
            }
            Self::NonFinite { op } => write!(f, "{op}: produced a non-finite value"),
            Self::Contract(detail) => write!(f, "contract violation: {detail}"),
            Self::InvalidSparse(detail) => write!(f, "invalid sparse matrix: {detail}"),
        }
    }
}

impl std::error::Error for KernelError {}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![quantize(v); n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, KernelError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(KernelError::BadShape {
                op: "from_vec",
                detail: format!("shape {shape:?} wants {n} values, got {}", data.len()),
            });
        }
        let mut t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.quantize_in_place();
        Ok(t)
    }

    /// Rank-0 scalar.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![quantize(v)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar(), "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    /// Number of rows when the tensor is viewed as 2-D `[rows, last_dim]`.
    pub fn rows_flat(&self) -> usize {
        let last = self.last_dim();
        if last == 0 {
            0
        } else {
            self.numel() / last
        }
    }

    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn at3(&self, n: usize, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 3);
        self.data[(n * self.shape[1] + r) * self.shape[2] + c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn quantize_in_place(&mut self) {
        if precision() == Precision::Single {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Reinterprets the flat data with a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, KernelError> {
        let n: usize = shape.iter().product();
        if n != self.numel() {
            return Err(KernelError::BadShape {
                op: "reshape",
                detail: format!("cannot view {:?} as {shape:?}", self.shape),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0]).is_err());
        let t = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.at2(1, 0), 3.0);
    }

    #[test]
    fn scalar_is_rank_zero() {
        let s = Tensor::scalar(2.5);
        assert!(s.is_scalar());
        assert_eq!(s.rank(), 0);
        assert_eq!(s.item(), 2.5);
    }

    #[test]
    fn single_precision_rounds_through_f32() {
        with_precision(Precision::Single, || {
            let v = 0.1f64 + 1e-12;
            let t = Tensor::from_vec(&[1], vec![v]).unwrap();
            assert_eq!(t.data()[0], v as f32 as f64);
        });
        with_precision(Precision::Double, || {
            let v = 0.1f64 + 1e-12;
            let t = Tensor::from_vec(&[1], vec![v]).unwrap();
            assert_eq!(t.data()[0], v);
        });
    }

    #[test]
    fn with_precision_restores_mode() {
        let before = precision();
        with_precision(Precision::Double, || {
            assert_eq!(precision(), Precision::Double);
        });
        assert_eq!(precision(), before);
    }
}
