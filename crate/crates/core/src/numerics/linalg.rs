//! Dense symmetric matrices and the log-determinant of PSD matrices.

use super::ExtReal;
use crate::{Error, Result};
use rayon::prelude::*;

/// Dense symmetric matrix in full row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from row-major data; fails if the data is not square and symmetric.
    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Invalid(format!("expected {} entries, got {}", n * n, data.len())));
        }
        for i in 0..n {
            for j in 0..i {
                let (a, b) = (data[i * n + j], data[j * n + i]);
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    /// Build from a function of (i, j); only i >= j is evaluated.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64 + Sync) -> Self {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n.max(1)).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j <= i { f(i, j) } else { f(j, i) };
            }
        });
        SymMatrix { n, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, eps: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += eps;
        }
    }
}

const BLOCK: usize = 96;

/// Outcome of a Cholesky attempt.
enum Factor {
    Done(Vec<f64>),
    /// Pivot indistinguishable from zero.
    Singular,
}

fn cholesky_lower(m: &SymMatrix) -> Result<Factor> {
    let n = m.n;
    let mut a = m.data.clone();
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let zero_tol = 64.0 * n as f64 * f64::EPSILON * max_diag.max(f64::MIN_POSITIVE);
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        // factor the diagonal block
        for j in k0..k0 + kb {
            let mut p = a[j * n + j];
            for t in k0..j {
                p -= a[j * n + t] * a[j * n + t];
            }
            if p < -zero_tol {
                return Err(Error::Numeric(format!("matrix is not positive semidefinite: pivot {j} is {p:.3e}")));
            }
            if p <= zero_tol {
                return Ok(Factor::Singular);
            }
            let l = p.sqrt();
            a[j * n + j] = l;
            for i in j + 1..k0 + kb {
                let mut s = a[i * n + j];
                for t in k0..j {
                    s -= a[i * n + t] * a[j * n + t];
                }
                a[i * n + j] = s / l;
            }
        }
        let below = k0 + kb;
        if below < n {
            // panel solve: rows below the block, columns k0..k0+kb
            let (head, tail) = a.split_at_mut(below * n);
            let diag = &head[..];
            tail.par_chunks_mut(n).for_each(|row| {
                for j in k0..k0 + kb {
                    let mut s = row[j];
                    for t in k0..j {
                        s -= row[t] * diag[j * n + t];
                    }
                    row[j] = s / diag[j * n + j];
                }
            });
            // trailing update A22 -= L21 L21^T
            let m22 = n - below;
            let mut panel = vec![0.0; m22 * kb];
            for i in 0..m22 {
                panel[i * kb..(i + 1) * kb].copy_from_slice(&a[(below + i) * n + k0..(below + i) * n + k0 + kb]);
            }
            // SAFETY: pointers and strides describe the disjoint buffers above.
            unsafe {
                matrixmultiply::dgemm(
                    m22,
                    kb,
                    m22,
                    -1.0,
                    panel.as_ptr(),
                    kb as isize,
                    1,
                    panel.as_ptr(),
                    1,
                    kb as isize,
                    1.0,
                    a.as_mut_ptr().add(below * n + below),
                    n as isize,
                    1,
                );
            }
        }
        k0 += kb;
    }
    Ok(Factor::Done(a))
}

/// log det of a symmetric PSD matrix after adding `jitter` to the diagonal.
///
/// Returns `NegInfinity` when a pivot is numerically zero, and a numeric error
/// naming the pivot when the matrix is clearly indefinite.
pub fn log_det_psd(m: &SymMatrix, jitter: f64) -> Result<ExtReal> {
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(Error::Invalid(format!("jitter {jitter} must be finite and >= 0")));
    }
    if m.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("matrix has non-finite entries".into()));
    }
    if m.n == 0 {
        return Ok(ExtReal::Finite(0.0));
    }
    let mut work = m.clone();
    if jitter > 0.0 {
        work.add_diagonal(jitter);
    }
    match cholesky_lower(&work)? {
        Factor::Singular => Ok(ExtReal::NegInfinity),
        Factor::Done(l) => {
            let n = m.n;
            let s: f64 = (0..n).map(|i| l[i * n + i].ln()).sum();
            Ok(ExtReal::Finite(2.0 * s))
        }
    }
}
