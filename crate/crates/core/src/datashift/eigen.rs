//! Cyclic Jacobi eigensolver for dense symmetric matrices.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const MAX_SWEEPS: usize = 100;
/// Off-diagonal Frobenius norm, relative to the full norm, that counts as converged.
const REL_TOL: f64 = 1e-13;
const EARLY_SWEEPS: usize = 3;

/// Eigenvalues in ascending order, eigenvectors as the matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
    pub sweeps: usize,
}

fn off_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            s += 2.0 * a[i * n + j] * a[i * n + j];
        }
    }
    libm::sqrt(s)
}

pub fn symmetric_eigen(m: &Tensor) -> Result<SymmetricEigen> {
    let n = m.rows();
    if m.cols() != n {
        return Err(invalid!("eigensolver needs a square matrix, got {}", m.shape()));
    }
    for i in 0..n {
        for j in 0..i {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 * (1.0 + m.get(i, j).abs()) {
                return Err(invalid!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    if !m.is_finite() {
        return Err(invalid!("matrix has non-finite entries"));
    }
    let mut a = m.data().to_vec();
    // eigenvectors are accumulated as rows so every rotation touches contiguous memory
    let mut vt = alloc::vec![0.0; n * n];
    for i in 0..n {
        vt[i * n + i] = 1.0;
    }
    let norm = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>());
    let tol = REL_TOL * norm;
    let mut row_p = alloc::vec![0.0; n];
    let mut row_q = alloc::vec![0.0; n];

    let mut sweeps = 0;
    loop {
        let off = off_norm(&a, n);
        if off <= tol {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual: off });
        }
        sweeps += 1;
        // early sweeps only rotate entries well above the typical off-diagonal size
        let skip = if sweeps <= EARLY_SWEEPS {
            0.2 * off / n as f64
        } else {
            tol / n as f64
        };
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let sign = if theta < 0.0 { -1.0 } else { 1.0 };
                let t = sign / (theta.abs() + libm::hypot(theta, 1.0));
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    row_p[k] = c * apk - s * aqk;
                    row_q[k] = s * apk + c * aqk;
                }
                row_p[p] = app - t * apq;
                row_q[q] = aqq + t * apq;
                row_p[q] = 0.0;
                row_q[p] = 0.0;
                a[p * n..(p + 1) * n].copy_from_slice(&row_p);
                a[q * n..(q + 1) * n].copy_from_slice(&row_q);
                for k in 0..n {
                    a[k * n + p] = row_p[k];
                    a[k * n + q] = row_q[k];
                }
                let (head, tail) = vt.split_at_mut(q * n);
                let vp = &mut head[p * n..(p + 1) * n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = Tensor::from_fn(n, n, |r, c| vt[order[c] * n + r]);
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}
