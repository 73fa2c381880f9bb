//! Axis-by-axis contraction of row-major tensors with dense matrices.
//!
//! Every transform between a tensor-product frequency grid and a tensor-product set of
//! spatial points (lattice samples, quadrature nodes) factorizes over axes, so an
//! `n^d × m^d` kernel never needs to be formed.

use num_complex::Complex64;
use rayon::prelude::*;

/// Dense row-major matrix of shape `rows × cols`.
#[derive(Clone, Debug)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl Matrix {
    pub fn from_fn<F: Fn(usize, usize) -> Complex64 + Sync>(rows: usize, cols: usize, f: F) -> Self {
        let data = (0..rows * cols).into_par_iter().map(|k| f(k / cols, k % cols)).collect();
        Self { rows, cols, data }
    }
}

/// Replaces axis `axis` of `data` (shape `shape`) by `matrix · data` along that axis.
pub fn contract_axis(data: &[Complex64], shape: &[usize], axis: usize, matrix: &Matrix) -> (Vec<Complex64>, Vec<usize>) {
    assert_eq!(shape[axis], matrix.cols, "matrix does not match axis length");
    let pre: usize = shape[..axis].iter().product();
    let post: usize = shape[axis + 1..].iter().product();
    let n_in = shape[axis];
    let n_out = matrix.rows;
    let out: Vec<Complex64> = (0..pre * n_out * post)
        .into_par_iter()
        .map(|flat| {
            let p = flat / (n_out * post);
            let rem = flat % (n_out * post);
            let r = rem / post;
            let q = rem % post;
            let row = &matrix.data[r * n_in..(r + 1) * n_in];
            let base = p * n_in * post + q;
            let mut acc = Complex64::new(0.0, 0.0);
            for (i, m) in row.iter().enumerate() {
                acc += m * data[base + i * post];
            }
            acc
        })
        .collect();
    let mut new_shape = shape.to_vec();
    new_shape[axis] = n_out;
    (out, new_shape)
}

/// Applies one matrix per axis in turn.
pub fn contract_all(data: Vec<Complex64>, shape: &[usize], matrices: &[Matrix]) -> (Vec<Complex64>, Vec<usize>) {
    let mut cur = data;
    let mut cur_shape = shape.to_vec();
    for (axis, m) in matrices.iter().enumerate() {
        let (next, next_shape) = contract_axis(&cur, &cur_shape, axis, m);
        cur = next;
        cur_shape = next_shape;
    }
    (cur, cur_shape)
}

/// Decomposes a row-major flat index.
#[inline]
pub fn unflatten(mut flat: usize, shape: &[usize], out: &mut [usize]) {
    for axis in (0..shape.len()).rev() {
        out[axis] = flat % shape[axis];
        flat /= shape[axis];
    }
}

#[inline]
pub fn flatten(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_contraction_matches_direct_sum() {
        let shape = [3usize, 4];
        let data: Vec<Complex64> = (0..12).map(|k| Complex64::new(k as f64, -(k as f64) / 3.0)).collect();
        let a = Matrix::from_fn(2, 3, |r, c| Complex64::new((r + 1) as f64, c as f64));
        let b = Matrix::from_fn(5, 4, |r, c| Complex64::new(1.0 / (r + c + 1) as f64, 0.5));
        let (out, out_shape) = contract_all(data.clone(), &shape, &[a.clone(), b.clone()]);
        assert_eq!(out_shape, vec![2, 5]);
        for r0 in 0..2 {
            for r1 in 0..5 {
                let mut direct = Complex64::new(0.0, 0.0);
                for i in 0..3 {
                    for j in 0..4 {
                        direct += a.data[r0 * 3 + i] * b.data[r1 * 4 + j] * data[i * 4 + j];
                    }
                }
                assert!((out[r0 * 5 + r1] - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn flatten_round_trip() {
        let shape = [3, 5, 2];
        let mut idx = [0; 3];
        for flat in 0..30 {
            unflatten(flat, &shape, &mut idx);
            assert_eq!(flatten(&idx, &shape), flat);
        }
    }
}
