//! Forward kernels shared by the tape and the plain (non-recording) API.

use std::cell::Cell;

use crate::error::{Error, Result};

use super::Matrix;

pub const LEAKY_SLOPE: f64 = 0.2;

thread_local! {
    static SOFTMAX_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with a deliberately broken softmax on the current thread.
///
/// Used to verify that the self-check reports a failing property.
#[doc(hidden)]
pub fn with_softmax_fault<R>(f: impl FnOnce() -> R) -> R {
    struct Reset(bool);
    impl Drop for Reset {
        fn drop(&mut self) {
            SOFTMAX_FAULT.with(|c| c.set(self.0));
        }
    }
    let _reset = Reset(SOFTMAX_FAULT.with(|c| c.replace(true)));
    f()
}

fn check_inner(op: &'static str, a: &Matrix, b_rows: usize, b_desc: (usize, usize)) -> Result<()> {
    if a.cols() != b_rows {
        return Err(Error::shape(
            op,
            format!("{}x{} incompatible with {}x{}", a.rows(), a.cols(), b_desc.0, b_desc.1),
        ));
    }
    Ok(())
}

/// `A · B`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_inner("matmul", a, b.rows(), b.shape())?;
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    let bd = b.data();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `A · Bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape(
            "matmul_nt",
            format!("{}x{} incompatible with ({}x{})ᵀ", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let (n, m) = (a.rows(), b.rows());
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        let arow = a.row(i);
        for j in 0..m {
            let dot: f64 = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            out.set(i, j, dot);
        }
    }
    Ok(out)
}

/// `Aᵀ · B`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "matmul_tn",
            format!("({}x{})ᵀ incompatible with {}x{}", a.rows(), a.cols(), b.rows(), b.cols()),
        ));
    }
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = out.row_mut(i);
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Softmax over each row, computed with max subtraction.
pub fn row_softmax(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let fault = SOFTMAX_FAULT.with(Cell::get);
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        softmax_in_place(row);
        if fault {
            for v in row.iter_mut() {
                *v *= 1.01;
            }
        }
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[inline]
pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
pub(crate) fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = v.max(0.0);
    }
    out
}

/// Adds a `1 × c` bias row to every row of `x`.
pub fn add_bias(x: &Matrix, bias: &Matrix) -> Result<Matrix> {
    if bias.rows() != 1 || bias.cols() != x.cols() {
        return Err(Error::shape(
            "add_bias",
            format!("bias {}x{} for input with {} columns", bias.rows(), bias.cols(), x.cols()),
        ));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        for (o, b) in out.row_mut(i).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Validates cross-entropy inputs and returns the per-point weights
/// (all ones without class weights).
pub(crate) fn cross_entropy_point_weights(
    logits: &Matrix,
    targets: &[usize],
    class_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if targets.len() != logits.rows() {
        return Err(Error::LengthMismatch {
            expected: logits.rows(),
            actual: targets.len(),
        });
    }
    if let Some(w) = class_weights {
        if w.len() != logits.cols() {
            return Err(Error::LengthMismatch {
                expected: logits.cols(),
                actual: w.len(),
            });
        }
    }
    targets
        .iter()
        .map(|&t| {
            if t >= logits.cols() {
                Err(Error::LabelOutOfRange {
                    label: t,
                    num_classes: logits.cols(),
                })
            } else {
                Ok(class_weights.map_or(1.0, |w| w[t]))
            }
        })
        .collect()
}

/// Weighted mean of `-log softmax(logits)[target]` and the softmax itself.
pub(crate) fn cross_entropy_forward(logits: &Matrix, targets: &[usize], weights: &[f64]) -> (f64, Matrix) {
    let mut probs = logits.clone();
    let mut loss = 0.0;
    let mut total_weight = 0.0;
    for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        let row = probs.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += w * (lse - row[t]);
        total_weight += w;
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    let loss = if total_weight > 0.0 { loss / total_weight } else { 0.0 };
    (loss, probs)
}
