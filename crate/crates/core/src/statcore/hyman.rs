//! Monotone piecewise-cubic Hermite interpolation: cubic-spline slopes
//! followed by Hyman's filter, which caps each slope so that every interval
//! stays monotone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

pub fn hyman_monotone_spline(xs: &[f64], ys: &[f64]) -> Result<MonotoneSpline> {
    MonotoneSpline::new(xs, ys)
}

impl MonotoneSpline {
    pub fn new(xs: &[f64], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Input("knot abscissae and values differ in length".into()));
        }
        if xs.len() < 2 {
            return Err(Error::Input("monotone spline needs at least two knots".into()));
        }
        if xs.iter().chain(ys).any(|v| !v.is_finite()) {
            return Err(Error::Input("monotone spline knots must be finite".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("knot abscissae must be strictly increasing".into()));
        }
        if ys.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Precondition(
                "knot values must be non-decreasing; rearrange before interpolating".into(),
            ));
        }
        let mut slopes = natural_spline_slopes(xs, ys);
        hyman_filter(xs, ys, &mut slopes);
        Ok(Self {
            xs: xs.to_vec(),
            ys: ys.to_vec(),
            slopes,
        })
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Interpolated value; constant extrapolation outside the knot range.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let k = self.xs.partition_point(|v| *v <= x) - 1;
        self.eval_segment(k, x)
    }

    fn eval_segment(&self, k: usize, x: f64) -> f64 {
        let h = self.xs[k + 1] - self.xs[k];
        let t = (x - self.xs[k]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[k] + h10 * h * self.slopes[k] + h01 * self.ys[k + 1] + h11 * h * self.slopes[k + 1]
    }
}

/// First derivatives of the natural cubic interpolating spline.
fn natural_spline_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    // tridiagonal system for second derivatives m[1..n-1], m[0] = m[n-1] = 0
    let m_len = n - 2;
    let mut diag = vec![0.0; m_len];
    let mut upper = vec![0.0; m_len];
    let mut rhs = vec![0.0; m_len];
    for i in 0..m_len {
        diag[i] = 2.0 * (h[i] + h[i + 1]);
        upper[i] = h[i + 1];
        rhs[i] = 6.0 * (delta[i + 1] - delta[i]);
    }
    // Thomas algorithm (symmetric: lower[i] == upper[i-1])
    for i in 1..m_len {
        let w = upper[i - 1] / diag[i - 1];
        diag[i] -= w * upper[i - 1];
        rhs[i] -= w * rhs[i - 1];
    }
    let mut m = vec![0.0; n];
    for i in (0..m_len).rev() {
        let next = if i + 1 < m_len { m[i + 2] } else { 0.0 };
        m[i + 1] = (rhs[i] - upper[i] * next) / diag[i];
    }
    let mut d = vec![0.0; n];
    for i in 0..n - 1 {
        d[i] = delta[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0;
    }
    d[n - 1] = delta[n - 2] + h[n - 2] * (m[n - 2] + 2.0 * m[n - 1]) / 6.0;
    d
}

fn hyman_filter(xs: &[f64], ys: &[f64], slopes: &mut [f64]) {
    let n = xs.len();
    let secant: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i])).collect();
    for i in 0..n {
        let s0 = if i == 0 { secant[0] } else { secant[i - 1] };
        let s1 = if i == n - 1 { secant[n - 2] } else { secant[i] };
        let cap = 3.0 * s0.abs().min(s1.abs());
        let sign = if s0 * s1 > 0.0 { s1 } else { slopes[i] };
        slopes[i] = if sign >= 0.0 {
            slopes[i].max(0.0).min(cap)
        } else {
            slopes[i].min(0.0).max(-cap)
        };
    }
}

/// Smooth monotone CDF on a bounded support: 0 at and below the first knot,
/// 1 at and above the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneCdf {
    spline: MonotoneSpline,
}

impl MonotoneCdf {
    pub fn new(xs: &[f64], probs: &[f64]) -> Result<Self> {
        let spline = MonotoneSpline::new(xs, probs)?;
        if probs[0] != 0.0 || probs[probs.len() - 1] != 1.0 {
            return Err(Error::Input("CDF knots must start at probability 0 and end at 1".into()));
        }
        Ok(Self { spline })
    }

    pub fn support(&self) -> (f64, f64) {
        let xs = &self.spline.xs;
        (xs[0], xs[xs.len() - 1])
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        self.spline.knots()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let (lo, hi) = self.support();
        if x <= lo {
            0.0
        } else if x >= hi {
            1.0
        } else {
            self.spline.eval(x).clamp(0.0, 1.0)
        }
    }

    /// Generalised inverse by bisection on the bracketing segment.
    pub fn inverse(&self, p: f64) -> f64 {
        let (lo, hi) = self.support();
        if p <= 0.0 {
            return lo;
        }
        if p >= 1.0 {
            return hi;
        }
        let ys = &self.spline.ys;
        let xs = &self.spline.xs;
        // first knot with value >= p
        let upper = ys.partition_point(|v| *v < p).max(1);
        let k = upper - 1;
        let (mut a, mut b) = (xs[k], xs[upper]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if self.spline.eval_segment(k, mid) < p {
                a = mid;
            } else {
                b = mid;
            }
            if b - a <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (a + b)
    }
}
