//! Parameter initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::tensor::{ParamStore, Tensor};

/// Uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, values)
}

pub fn uniform(rows: usize, cols: usize, limit: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let values = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, values)
}

pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let dist = Normal::new(0.0, std).expect("finite std");
    let values = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, values)
}

/// `blocks` stacked `n x n` orthogonal matrices (shape `[blocks * n, n]`),
/// each from Gram-Schmidt on a Gaussian matrix.
pub fn stacked_orthogonal(blocks: usize, n: usize, rng: &mut impl Rng) -> Result<Tensor> {
    let mut values = Vec::with_capacity(blocks * n * n);
    for _ in 0..blocks {
        values.extend(orthogonal_rows(n, rng));
    }
    Tensor::matrix(blocks * n, n, values)
}

fn orthogonal_rows(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        // Degenerate draws are vanishingly rare; redraw instead of dividing by ~0.
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            rows.push(v);
        }
    }
    rows.concat()
}

pub fn zeros(len: usize) -> Result<Tensor> {
    Tensor::vector(vec![0.0; len])
}

/// Overwrites every parameter entry with a draw from `U(-limit, limit)`.
pub fn randomize_params(store: &mut ParamStore, limit: f64, rng: &mut impl Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).values_mut() {
            *v = rng.random_range(-limit..limit);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_for, Stream};

    #[test]
    fn orthogonal_blocks_are_orthonormal() {
        let mut rng = rng_for(1, Stream::Test, 0);
        let t = stacked_orthogonal(2, 5, &mut rng).unwrap();
        let v = t.values();
        for b in 0..2 {
            for i in 0..5 {
                for j in 0..5 {
                    let d: f64 = (0..5)
                        .map(|k| v[(b * 5 + i) * 5 + k] * v[(b * 5 + j) * 5 + k])
                        .sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((d - want).abs() < 1e-12);
                }
            }
        }
    }
}
