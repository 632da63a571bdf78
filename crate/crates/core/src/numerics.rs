//! Scalar and vector primitives shared by every other module.
//!
//! Everything here is a pure function over 64-bit floats. Embeddings are
//! stored on disk as 32-bit floats but all arithmetic widens to f64 so that
//! gradient checks have headroom.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Norms below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// Dense vector of finite 64-bit floats, dim >= 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector {
    values: Vec<f64>,
}

impl Vector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("vector entry".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// Row-major matrix of finite 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::EmptyInput);
        }
        if values.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: rows * cols,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyInput);
        }
        let cols = rows[0].len();
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimMismatch {
                    left: cols,
                    right: r.len(),
                });
            }
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Scale `v` to unit Euclidean norm.
pub fn l2_normalize(v: &Vector) -> Result<Vector> {
    let n = v.norm();
    if n < ZERO_NORM_EPS {
        return Err(Error::ZeroNorm);
    }
    Ok(Vector {
        values: v.as_slice().iter().map(|x| x / n).collect(),
    })
}

/// Cosine similarity, clamped to [-1, 1] so downstream log terms never see
/// out-of-range values from rounding.
pub fn cosine(u: &Vector, v: &Vector) -> Result<f64> {
    cosine_slices(u.as_slice(), v.as_slice())
}

pub(crate) fn cosine_slices(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu < ZERO_NORM_EPS || nv < ZERO_NORM_EPS {
        return Err(Error::ZeroNorm);
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// log(1 / (1 + e^{-x})) via the branch-stable form; never overflows for
/// |x| <= 1e6.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Logistic sigmoid, computed on the stable branch.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax; entries positive, sum 1.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    assert!(!xs.is_empty(), "softmax over empty input");
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

/// Arithmetic mean across all rows of `m`.
pub fn mean_pool(m: &Matrix) -> Result<Vector> {
    if m.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    mean_of_rows(m, &(0..m.rows()).collect::<Vec<_>>())
}

/// Arithmetic mean across the selected rows of `m`.
pub fn mean_of_rows(m: &Matrix, indices: &[usize]) -> Result<Vector> {
    if indices.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = vec![0.0; m.cols()];
    for &i in indices {
        for (a, x) in acc.iter_mut().zip(m.row(i)) {
            *a += x;
        }
    }
    let n = indices.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(Vector { values: acc })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec2(a: f64, b: f64) -> Vector {
        Vector::new(vec![a, b]).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(&vec2(3.0, 4.0)).unwrap();
        assert_eq!(v.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn normalize_identity_case() {
        let v = l2_normalize(&Vector::new(vec![1.0, 0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(v.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector_errors() {
        assert!(matches!(l2_normalize(&vec2(0.0, 0.0)), Err(Error::ZeroNorm)));
    }

    #[test]
    fn normalize_idempotent() {
        let v = Vector::new(vec![0.3, -1.7, 2.2, 0.01]).unwrap();
        let once = l2_normalize(&v).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_orthogonal_colinear_diagonal() {
        assert_eq!(cosine(&vec2(1.0, 0.0), &vec2(0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(cosine(&vec2(2.0, 0.0), &vec2(5.0, 0.0)).unwrap(), 1.0);
        let c = cosine(&vec2(1.0, 1.0), &vec2(1.0, 0.0)).unwrap();
        assert!((c - 0.7071067811865475).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine(&vec2(0.0, 0.0), &vec2(1.0, 0.0)),
            Err(Error::ZeroNorm)
        ));
        assert!(matches!(
            cosine(&vec2(1.0, 0.0), &Vector::new(vec![1.0, 0.0, 0.0]).unwrap()),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn cosine_symmetry_and_scale_invariance() {
        let u = Vector::new(vec![0.4, -0.2, 1.3]).unwrap();
        let v = Vector::new(vec![-1.0, 0.5, 0.7]).unwrap();
        assert_eq!(cosine(&u, &v).unwrap(), cosine(&v, &u).unwrap());
        let cu = Vector::new(u.as_slice().iter().map(|x| 4.0 * x).collect()).unwrap();
        assert!((cosine(&cu, &v).unwrap() - cosine(&u, &v).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn log_sigmoid_closed_forms() {
        assert!((log_sigmoid(0.0) - (-0.6931471805599453)).abs() < 1e-15);
        assert!((log_sigmoid(1.0) - (-0.31326168751822286)).abs() < 1e-15);
        assert!((log_sigmoid(-1000.0) - (-1000.0)).abs() < 1e-9);
        assert!(log_sigmoid(1e6).is_finite());
        assert!(log_sigmoid(-1e6).is_finite());
    }

    #[test]
    fn log_sigmoid_softplus_identity() {
        // log_sigmoid(x) - log_sigmoid(-x) = x
        let mut x = -30.0;
        while x <= 30.0 {
            let lhs = log_sigmoid(x) - log_sigmoid(-x);
            assert!((lhs - x).abs() < 1e-10, "x={x} lhs={lhs}");
            x += 0.37;
        }
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1.0, 0.0]);
        assert!((p[0] - 0.7310585786300049).abs() < 1e-15);
        assert!((p[1] - 0.2689414213699951).abs() < 1e-15);
        let q = softmax(&[1000.0, 0.0]);
        assert!(q[0].is_finite() && (q[0] - 1.0).abs() < 1e-12);
        assert!(q.iter().sum::<f64>().is_finite());
    }

    #[test]
    fn softmax_shift_invariance_and_sum() {
        let xs = [0.3, -1.2, 4.4, 0.0];
        let shifted: Vec<f64> = xs.iter().map(|x| x + 123.5).collect();
        let a = softmax(&xs);
        let b = softmax(&shifted);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_pool_cases() {
        let m = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(mean_pool(&m).unwrap().as_slice(), &[0.5, 0.5]);
        let single = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        assert_eq!(mean_pool(&single).unwrap().as_slice(), &[2.0, 3.0]);
        let three =
            Matrix::from_rows(&[vec![1.0, 1.0], vec![3.0, 3.0], vec![5.0, 5.0]]).unwrap();
        assert_eq!(mean_pool(&three).unwrap().as_slice(), &[3.0, 3.0]);
        assert!(matches!(
            mean_pool(&Matrix::zeros(0, 2)),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn matrix_rejects_non_finite_and_bad_len() {
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
