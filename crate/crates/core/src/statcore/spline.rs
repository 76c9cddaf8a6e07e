//! Equally spaced B-spline bases and difference penalties (P-splines).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// B-spline basis on `[lo, hi]` with `n_knots` equally spaced knots
/// (boundaries included). Evaluation clamps `x` into the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub lo: f64,
    pub hi: f64,
    pub n_knots: usize,
    pub degree: usize,
}

impl BSplineBasis {
    pub fn new(lo: f64, hi: f64, n_knots: usize, degree: usize) -> Result<Self> {
        if n_knots < degree + 2 {
            return Err(Error::Config(format!(
                "B-spline basis of degree {degree} needs at least {} knots, got {n_knots}",
                degree + 2
            )));
        }
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::Config("B-spline domain must be finite".into()));
        }
        // a degenerate domain still gets a usable (flat) basis
        let hi = if hi > lo { hi } else { lo + 1.0 };
        Ok(Self { lo, hi, n_knots, degree })
    }

    /// Basis with `n_basis` functions: `n_knots = n_basis - degree + 1`.
    pub fn with_basis_count(lo: f64, hi: f64, n_basis: usize, degree: usize) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::Config(format!("need at least {} basis functions", degree + 1)));
        }
        Self::new(lo, hi, n_basis + 1 - degree, degree)
    }

    pub fn n_basis(&self) -> usize {
        self.n_knots - 1 + self.degree
    }

    fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n_knots - 1) as f64
    }

    /// Dense basis row at `x`.
    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut row = vec![0.0; self.n_basis()];
        let (first, vals) = self.eval_local(x);
        for (k, v) in vals.iter().enumerate() {
            row[first + k] = *v;
        }
        row
    }

    /// Index of the first non-zero basis function and the `degree + 1`
    /// non-zero values at `x`.
    pub fn eval_local(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let h = self.spacing();
        let intervals = self.n_knots - 1;
        let xc = if x.is_nan() { self.lo } else { x.clamp(self.lo, self.hi) };
        let mut span = ((xc - self.lo) / h).floor() as isize;
        span = span.clamp(0, intervals as isize - 1);
        let span = span as usize;
        // extended knot k sits at lo + (k - p) h; the active interval is
        // [knot(span + p), knot(span + p + 1))
        let knot = |k: usize| self.lo + (k as f64 - p as f64) * h;
        let i = span + p;
        // de Boor / Cox recursion for the p+1 non-zero functions
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = xc - knot(i + 1 - j);
            right[j] = knot(i + j) - xc;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span, n)
    }
}

/// `D^T D` for the `diff_order`-th difference matrix on `n_basis` coefficients.
pub fn pspline_penalty(n_basis: usize, diff_order: usize) -> Result<DMatrix<f64>> {
    if diff_order >= n_basis {
        return Err(Error::Config(format!(
            "difference order {diff_order} needs more than {diff_order} coefficients, got {n_basis}"
        )));
    }
    let mut d = DMatrix::<f64>::identity(n_basis, n_basis);
    for _ in 0..diff_order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::<f64>::zeros(rows, n_basis);
        for r in 0..rows {
            for c in 0..n_basis {
                next[(r, c)] = d[(r + 1, c)] - d[(r, c)];
            }
        }
        d = next;
    }
    Ok(d.transpose() * d)
}
