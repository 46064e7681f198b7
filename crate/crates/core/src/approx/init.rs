use alloc::vec::Vec;

use rand::Rng;

use super::TensorBuf;
use crate::math;
use crate::rng::standard_normal;

/// Orthogonal `rows x cols` matrix scaled by `gain`: orthonormal columns when
/// `rows >= cols`, orthonormal rows otherwise.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> TensorBuf {
    let (n_vec, dim) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n_vec);
    while vecs.len() < n_vec {
        let mut v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
        // modified Gram-Schmidt, twice for stability
        for _ in 0..2 {
            for u in &vecs {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= d * b;
                }
            }
        }
        let n = math::norm(&v);
        if n < 1e-10 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        vecs.push(v);
    }
    let mut data = alloc::vec![0.0; rows * cols];
    for (k, v) in vecs.iter().enumerate() {
        for (t, &x) in v.iter().enumerate() {
            let (i, j) = if rows >= cols { (t, k) } else { (k, t) };
            data[i * cols + j] = gain * x;
        }
    }
    TensorBuf::matrix(rows, cols, data)
}

/// `rows` vectors drawn uniformly from the unit sphere in `R^dim`.
pub fn unit_sphere_rows<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> TensorBuf {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        loop {
            let v: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let n = math::norm(&v);
            if n > 1e-10 {
                data.extend(v.iter().map(|x| x / n));
                break;
            }
        }
    }
    TensorBuf::matrix(rows, dim, data)
}
