//! Sparse matrix helpers and a Jacobi-preconditioned conjugate gradient.

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};

pub type SparseMatrix = CsMat<f64>;

pub fn from_triplets(rows: usize, cols: usize, entries: &[(usize, usize, f64)]) -> SparseMatrix {
    let mut tri = TriMat::new((rows, cols));
    for &(r, c, v) in entries {
        tri.add_triplet(r, c, v);
    }
    tri.to_csr()
}

pub fn matvec(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    if a.is_csr() {
        for (r, row) in a.outer_iterator().enumerate() {
            y[r] = row.iter().map(|(c, v)| v * x[c]).sum();
        }
    } else {
        for (c, col) in a.outer_iterator().enumerate() {
            for (r, v) in col.iter() {
                y[r] += v * x[c];
            }
        }
    }
    y
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn quadratic_form(a: &SparseMatrix, x: &[f64]) -> f64 {
    dot(&matvec(a, x), x)
}

pub fn diagonal(a: &SparseMatrix) -> Vec<f64> {
    (0..a.rows()).map(|i| a.get(i, i).copied().unwrap_or(0.0)).collect()
}

#[derive(Clone, Debug)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned CG for symmetric positive semi-definite systems with
/// a consistent right-hand side. Zero rows are left untouched.
pub fn pcg(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    let diag = diagonal(a);
    let inv: Vec<f64> = diag.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 0.0 }).collect();
    let bnorm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((x, CgReport { iterations: 0, relative_residual: 0.0 }));
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        let ap = matvec(a, &p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(Error::NonFinite("conjugate gradient".into()));
        }
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel <= tol {
            return Ok((x, CgReport { iterations: it, relative_residual: rel }));
        }
        for i in 0..n {
            z[i] = r[i] * inv[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    // recompute the true residual before giving up
    let ax = matvec(a, &x);
    let res: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let rel = dot(&res, &res).sqrt() / bnorm;
    if rel <= tol {
        Ok((x, CgReport { iterations: max_iter, relative_residual: rel }))
    } else {
        Err(Error::NotConverged(format!("conjugate gradient stalled at relative residual {rel:.3e}")))
    }
}
