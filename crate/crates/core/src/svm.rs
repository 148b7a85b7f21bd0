//! Linear SVM probe: hinge loss, dual coordinate descent, z-scored features,
//! optional Platt scaling to turn margins into probabilities.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmOptions {
    pub c: f64,
    pub max_epochs: usize,
    /// Stop when the projected-gradient spread of an epoch falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SvmOptions {
    fn default() -> Self {
        Self { c: 1.0, max_epochs: 1000, tol: 1e-4, seed: 0 }
    }
}

/// Feature-wise z-scoring fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Standard deviations; constant features keep scale 1 and center to 0.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::contract("cannot standardize an empty feature matrix"));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let std = x.std_axis(Axis(0), 0.0);
        let spread = std.iter().fold(0.0f64, |m, &s| m.max(s));
        if !(spread > 1e-12 * (1.0 + mean.iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
            return Err(Error::Degenerate("every embedding dimension is constant across the training set".into()));
        }
        let scale = std.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect();
        Ok(Self { mean: mean.to_vec(), scale })
    }

    pub fn transform(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.axis_iter_mut(Axis(0)) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / s;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Platt sigmoid `1 / (1 + exp(a * f + b))` over decision values.
    pub platt: Option<(f64, f64)>,
}

impl LinearSvm {
    /// Fit on features `x` (rows) and labels in {0, 1}.
    pub fn fit(x: ArrayView2<f64>, labels: &[u8], opts: &SvmOptions) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::contract(format!("{} rows but {} labels", x.nrows(), labels.len())));
        }
        let positives = labels.iter().filter(|&&y| y == 1).count();
        if positives == 0 || positives == labels.len() {
            return Err(Error::Degenerate("training labels hold a single class".into()));
        }
        let standardizer = Standardizer::fit(x)?;
        let z = standardizer.transform(x);
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let (weights, bias) = dual_coordinate_descent(z.view(), &y, opts);
        Ok(Self { standardizer, weights, bias, platt: None })
    }

    /// Fit, then calibrate probabilities on the training margins.
    pub fn fit_calibrated(x: ArrayView2<f64>, labels: &[u8], opts: &SvmOptions) -> Result<Self> {
        let mut svm = Self::fit(x, labels, opts)?;
        let f = svm.decision_function(x);
        svm.platt = Some(platt_fit(f.view(), labels));
        Ok(svm)
    }

    pub fn decision_function(&self, x: ArrayView2<f64>) -> Array1<f64> {
        let z = self.standardizer.transform(x);
        z.dot(&ArrayView1::from(&self.weights[..])) + self.bias
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<u8> {
        self.decision_function(x).iter().map(|&f| u8::from(f > 0.0)).collect()
    }

    /// Calibrated probability of the positive class; falls back to a logistic
    /// of the raw margin when uncalibrated.
    pub fn probability(&self, x: ArrayView2<f64>) -> Vec<f64> {
        let (a, b) = self.platt.unwrap_or((-1.0, 0.0));
        self.decision_function(x).iter().map(|&f| platt_eval(a, b, f)).collect()
    }

    pub fn accuracy(&self, x: ArrayView2<f64>, labels: &[u8]) -> f64 {
        let pred = self.predict(x);
        let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
        correct as f64 / labels.len().max(1) as f64
    }
}

/// Dual coordinate descent for the L1-loss SVM with the bias handled as an
/// extra constant feature of value 1.
fn dual_coordinate_descent(x: ArrayView2<f64>, y: &[f64], opts: &SvmOptions) -> (Vec<f64>, f64) {
    let (n, d) = x.dim();
    let mut w = vec![0.0; d + 1];
    let mut alpha = vec![0.0; n];
    let q: Vec<f64> = x.axis_iter(Axis(0)).map(|r| r.dot(&r) + 1.0).collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::substream(opts.seed, "svm/order");
    for _ in 0..opts.max_epochs {
        order.shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        for &i in &order {
            let row = x.row(i);
            let margin = row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + w[d];
            let g = y[i] * margin - 1.0;
            let pg = if alpha[i] == 0.0 {
                g.min(0.0)
            } else if alpha[i] == opts.c {
                g.max(0.0)
            } else {
                g
            };
            pg_max = pg_max.max(pg);
            pg_min = pg_min.min(pg);
            if pg.abs() > 1e-12 {
                let old = alpha[i];
                alpha[i] = (old - g / q[i]).clamp(0.0, opts.c);
                let delta = (alpha[i] - old) * y[i];
                for (wj, xj) in w.iter_mut().zip(row.iter()) {
                    *wj += delta * xj;
                }
                w[d] += delta;
            }
        }
        if pg_max - pg_min < opts.tol {
            break;
        }
    }
    let bias = w.pop().expect("bias slot");
    (w, bias)
}

fn platt_eval(a: f64, b: f64, f: f64) -> f64 {
    let t = a * f + b;
    if t >= 0.0 {
        (-t).exp() / (1.0 + (-t).exp())
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// Platt's sigmoid fit with regularized targets, solved by Newton's method
/// with backtracking.
fn platt_fit(f: ArrayView1<f64>, labels: &[u8]) -> (f64, f64) {
    let prior1 = labels.iter().filter(|&&y| y == 1).count() as f64;
    let prior0 = labels.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = labels.iter().map(|&y| if y == 1 { hi } else { lo }).collect();
    let objective = |a: f64, b: f64| -> f64 {
        f.iter()
            .zip(&t)
            .map(|(&fi, &ti)| {
                let z = a * fi + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let (mut a, mut b) = (0.0, ((prior0 + 1.0) / (prior1 + 1.0)).ln());
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&fi, &ti) in f.iter().zip(&t) {
            let p = platt_eval(a, b, fi);
            let d2 = p * (1.0 - p);
            h11 += fi * fi * d2;
            h22 += d2;
            h21 += fi * d2;
            let d1 = ti - p;
            g1 += fi * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut improved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                improved = true;
                break;
            }
            step /= 2.0;
        }
        if !improved {
            break;
        }
    }
    (a, b)
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
