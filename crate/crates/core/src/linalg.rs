//! Small dense kernels: Cholesky on packed row-major storage, triangular
//! solves and a fixed-order pairwise sum.

use crate::error::{Error, Result};

/// Lower Cholesky factor of the symmetric `n x n` row-major matrix `a`.
///
/// Pivots at or below `rel_tol * max(diag)` are reported as failures with
/// their index so callers can distinguish rank problems from bad input.
pub fn cholesky(a: &[f64], n: usize, rel_tol: f64) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > rel_tol * scale) {
            return Err(Error::Cholesky { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[j * n + j] = djj;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L x = b` in place.
pub fn forward_substitute(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..i * n + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(a, x)| a * x).sum();
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// Solves `L^T x = b` in place.
pub fn backward_substitute_transposed(l: &[f64], n: usize, b: &mut [f64]) {
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// Computes `y = L x` for lower-triangular `L`.
pub fn lower_mul(l: &[f64], n: usize, x: &[f64], y: &mut [f64]) {
    for i in 0..n {
        let row = &l[i * n..=i * n + i];
        y[i] = row.iter().zip(&x[..=i]).map(|(a, b)| a * b).sum();
    }
}

/// Pairwise summation with a fixed split pattern, so the result depends only
/// on the order of `xs` and never on thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_reconstructs_spd_matrix() {
        let a = [4.0, 2.0, 0.4, 2.0, 5.0, 1.0, 0.4, 1.0, 3.0];
        let l = cholesky(&a, 3, 1e-14).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((s - a[i * 3 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_reports_failing_pivot() {
        let a = [1.0, 1.0, 1.0, 1.0];
        match cholesky(&a, 2, 1e-12) {
            Err(Error::Cholesky { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected pivot failure, got {other:?}"),
        }
    }

    #[test]
    fn triangular_solves_invert_products() {
        let a = [9.0, 3.0, 1.0, 3.0, 5.0, 2.0, 1.0, 2.0, 6.0];
        let l = cholesky(&a, 3, 1e-14).unwrap();
        let x = [0.5, -1.25, 2.0];
        let mut y = [0.0; 3];
        lower_mul(&l, 3, &x, &mut y);
        forward_substitute(&l, 3, &mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut b = [1.0, 2.0, 3.0];
        forward_substitute(&l, 3, &mut b);
        backward_substitute_transposed(&l, 3, &mut b);
        for i in 0..3 {
            let s: f64 = (0..3).map(|j| a[i * 3 + j] * b[j]).sum();
            assert!((s - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 49_995_000.0);
    }
}
