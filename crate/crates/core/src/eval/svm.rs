//! L2-regularized linear max-margin classifier.
//!
//! Binary problems are solved in the dual by coordinate descent over the
//! hinge-loss multipliers, with the bias folded in as a constant feature.
//! Multi-class problems are one-vs-rest. Coordinates are visited in a fixed
//! pseudo-random order drawn from the caller's generator, so training is
//! deterministic.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Per-column centering and scaling fitted on training rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Self {
        let d = x.cols();
        let n = rows.len().max(1) as f64;
        let mut mean = alloc::vec![0.0; d];
        for &r in rows {
            for (m, v) in mean.iter_mut().zip(x.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; d];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = libm::sqrt(s / n);
                if sd > 1e-12 { 1.0 / sd } else { 1.0 }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, x: &Matrix, rows: &[usize]) -> Matrix {
        let mut out = x.select_rows(rows);
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

/// Dual coordinate descent stops when the spread of projected gradients
/// falls below this, or after [`MAX_EPOCHS`] sweeps.
pub const TOLERANCE: f64 = 1e-3;
pub const MAX_EPOCHS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSvm {
    /// One row of weights per class (a single row for two classes), with the
    /// bias in the last column.
    weights: Matrix,
    classes: usize,
}

impl LinearSvm {
    pub fn fit<R: rand::Rng + ?Sized>(x: &Matrix, y: &[usize], c: f64, rng: &mut R) -> Result<Self> {
        if x.rows() != y.len() || y.is_empty() {
            return Err(Error::InvalidArgument("svm: one label per row required".into()));
        }
        if !(c > 0.0) {
            return Err(Error::InvalidArgument(alloc::format!("svm: C must be positive, got {c}")));
        }
        let classes = super::class_count(y);
        if classes < 2 {
            return Err(Error::InvalidArgument("svm: need at least two classes".into()));
        }
        let aug = augment(x);
        let heads = if classes == 2 { 1 } else { classes };
        let mut weights = Matrix::zeros(heads, aug.cols());
        for h in 0..heads {
            let positive = if classes == 2 { 1 } else { h };
            let signs: Vec<f64> = y.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect();
            let w = solve_dual(&aug, &signs, c, rng);
            weights.row_mut(h).copy_from_slice(&w);
        }
        Ok(LinearSvm { weights, classes })
    }

    /// Decision values, one column per head.
    pub fn decision(&self, x: &Matrix) -> Matrix {
        let aug = augment(x);
        let mut out = Matrix::zeros(x.rows(), self.weights.rows());
        for r in 0..x.rows() {
            for h in 0..self.weights.rows() {
                out.set(r, h, dot(aug.row(r), self.weights.row(h)));
            }
        }
        out
    }

    pub fn predict(&self, x: &Matrix) -> Vec<usize> {
        let d = self.decision(x);
        if self.classes == 2 {
            (0..d.rows()).map(|r| usize::from(d.get(r, 0) > 0.0)).collect()
        } else {
            super::argmax_rows(&d)
        }
    }
}

fn augment(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols() + 1);
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        row[..x.cols()].copy_from_slice(x.row(r));
        row[x.cols()] = 1.0;
    }
    out
}

fn solve_dual<R: rand::Rng + ?Sized>(x: &Matrix, y: &[f64], c: f64, rng: &mut R) -> Vec<f64> {
    let n = x.rows();
    let mut w = alloc::vec![0.0; x.cols()];
    let mut alpha = alloc::vec![0.0; n];
    let q: Vec<f64> = (0..n).map(|i| dot(x.row(i), x.row(i))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..MAX_EPOCHS {
        order.shuffle(rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            if q[i] <= 0.0 {
                continue;
            }
            let g = y[i] * dot(&w, x.row(i)) - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, c);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(x.row(i)) {
                    *wj += delta * xj;
                }
            }
        }
        if pg_max - pg_min < TOLERANCE {
            break;
        }
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, RunSeed};

    #[test]
    fn separates_two_points_per_class() {
        let x = Matrix::from_rows(&[[2.0, 0.0], [3.0, 1.0], [-2.0, 0.5], [-3.0, -1.0]]);
        let y = [1, 1, 0, 0];
        let mut rng = RunSeed(0).rng(Purpose::Classifier(0));
        let svm = LinearSvm::fit(&x, &y, 10.0, &mut rng).unwrap();
        assert_eq!(svm.predict(&x), y);
    }

    #[test]
    fn one_vs_rest_three_classes() {
        let x = Matrix::from_rows(&[[5.0, 0.0], [6.0, 0.5], [0.0, 5.0], [0.5, 6.0], [-5.0, -5.0], [-6.0, -5.5]]);
        let y = [0, 0, 1, 1, 2, 2];
        let mut rng = RunSeed(0).rng(Purpose::Classifier(0));
        let svm = LinearSvm::fit(&x, &y, 100.0, &mut rng).unwrap();
        assert_eq!(svm.predict(&x), y);
    }

    #[test]
    fn standardizer_uses_training_rows() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [100.0, 0.0]]);
        let s = Standardizer::fit(&x, &[0, 1]);
        let z = s.apply(&x, &[0, 1, 2]);
        assert_eq!(z.row(0), [-1.0, 0.0]);
        assert_eq!(z.row(1), [1.0, 0.0]);
        assert_eq!(z.get(2, 0), 98.0);
    }
}
