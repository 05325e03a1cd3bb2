//! Raw slice kernels shared by forward and backward passes.
//!
//! All matrices are row-major. Every output element is accumulated in a fixed
//! order (ascending inner index), independent of how rows are split across
//! worker threads.

use rayon::prelude::*;

use super::Element;

/// Work (multiply-adds) above which row-parallel execution kicks in.
const PAR_THRESHOLD: usize = 1 << 17;

/// `c[n,p] += a[n,k] · b[k,p]`
pub fn gemm_nn<T: Element>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), k * p);
    debug_assert_eq!(c.len(), n * p);
    let row = |(i, c_row): (usize, &mut [T])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &a_ik) in a_row.iter().enumerate() {
            if a_ik == T::zero() {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (c_ij, &b_kj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ik * b_kj;
            }
        }
    };
    if n * k * p >= PAR_THRESHOLD && n > 1 {
        c.par_chunks_mut(p).enumerate().for_each(row);
    } else {
        c.chunks_mut(p).enumerate().for_each(row);
    }
}

/// `c[n,p] += a[n,k] · b[p,k]ᵀ`
pub fn gemm_nt<T: Element>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, p: usize) {
    debug_assert_eq!(b.len(), p * k);
    let bt = transpose(b, p, k);
    gemm_nn(a, &bt, c, n, k, p);
}

/// `c[k,p] += a[n,k]ᵀ · b[n,p]`
pub fn gemm_tn<T: Element>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, p: usize) {
    debug_assert_eq!(a.len(), n * k);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(c.len(), k * p);
    let at = transpose(a, n, k);
    gemm_nn(&at, b, c, k, n, p);
}

/// Transposes a row-major `[rows, cols]` matrix.
pub fn transpose<T: Element>(m: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m[i * cols + j];
        }
    }
    out
}

/// In-place numerically stable softmax over each contiguous row of length `n`.
pub fn softmax_rows<T: Element>(x: &mut [T], n: usize) {
    for row in x.chunks_mut(n) {
        softmax_in_place(row);
    }
}

pub fn softmax_in_place<T: Element>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// `ln Σ exp(row)` with max subtraction.
pub fn log_sum_exp<T: Element>(row: &[T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Index of the maximum; ties resolve to the lowest index.
pub fn argmax<T: Element>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}
