//! Penalized maximum likelihood for the SD-parameterized t with a linear
//! location model and a log-ident scale model containing two P-spline
//! smooths, fitted by block coordinate ascent.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::designmatrix::{standardize, FeatureMatrix, Standardization, INTERCEPT};
use crate::error::{Error, Result};
use crate::statcore::linalg::{inverse_spd, solve_spd, weighted_gram};
use crate::statcore::{link_g2, link_g2_inverse, link_g3, link_g3_inverse, pspline_penalty, BSplineBasis};

pub const MIN_OBS: usize = 200;
pub const NU_MIN: f64 = 2.05;
pub const NU_MAX: f64 = 100.0;
const N_BASIS: usize = 20;
const MAX_OUTER: usize = 200;
/// Outer iterations during which smoothing parameters are re-selected.
const GCV_ITERS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TGamVariant {
    /// μ ≡ 0, σ from an intercept only.
    ConstSigma,
    /// Linear μ, σ from an intercept only.
    MuOnly,
    /// μ ≡ 0, full σ model.
    SigmaOnly,
    MuAndSigma,
}

impl TGamVariant {
    pub fn models_mu(self) -> bool {
        matches!(self, TGamVariant::MuOnly | TGamVariant::MuAndSigma)
    }

    pub fn models_sigma(self) -> bool {
        matches!(self, TGamVariant::SigmaOnly | TGamVariant::MuAndSigma)
    }
}

/// Training data for the t model: rows with α = 1 only.
#[derive(Debug, Clone)]
pub struct TGamData {
    /// Lagged differences (n × 3), no intercept.
    pub mu_x: DMatrix<f64>,
    /// Raw σ regressors (n × 17) including the intercept column.
    pub sigma_x: FeatureMatrix,
    /// `(P_{t-1}, t)` per row.
    pub spline_inputs: Vec<[f64; 2]>,
    pub y: Vec<f64>,
}

impl TGamData {
    /// Response only; enough for the constant-σ variant.
    pub fn response_only(y: Vec<f64>) -> Self {
        let n = y.len();
        Self {
            mu_x: DMatrix::zeros(n, 3),
            sigma_x: FeatureMatrix {
                data: DMatrix::from_element(n, 1, 1.0),
                names: vec![INTERCEPT.to_string()],
                standardization: None,
            },
            spline_inputs: vec![[0.0, 0.0]; n],
            y,
        }
    }
}

/// One P-spline smooth with a sum-to-zero constraint over the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothTerm {
    pub basis: BSplineBasis,
    /// Maps the constrained coefficients (19) to basis coefficients (20).
    pub constraint: DMatrix<f64>,
    pub coefs: Vec<f64>,
    pub basis_coefs: Vec<f64>,
    pub lambda: f64,
    pub edf: f64,
}

impl SmoothTerm {
    pub fn eval(&self, x: f64) -> f64 {
        let (first, vals) = self.basis.eval_local(x);
        vals.iter().enumerate().map(|(k, v)| v * self.basis_coefs[first + k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TGamFit {
    pub variant: TGamVariant,
    pub mu_coefs: [f64; 3],
    pub mu_se: [f64; 3],
    pub sigma_names: Vec<String>,
    /// σ linear coefficients on the standardized scale (g2 scale).
    pub sigma_linear: Vec<f64>,
    pub sigma_se: Vec<f64>,
    pub sigma_standardization: Standardization,
    pub h_price: Option<SmoothTerm>,
    pub h_step: Option<SmoothTerm>,
    pub nu: f64,
    /// log(ν − 2).
    pub nu_intercept: f64,
    pub nu_at_bound: bool,
    pub iterations: usize,
    pub converged: bool,
    pub deviance: f64,
    /// Penalized log-likelihood after each outer iteration.
    pub trace: Vec<f64>,
    pub n_obs: usize,
}

impl TGamFit {
    pub fn mu(&self, lags: &[f64; 3]) -> f64 {
        self.mu_coefs.iter().zip(lags).map(|(b, x)| b * x).sum()
    }

    /// σ for a raw σ-regressor row and spline inputs `(P_{t-1}, t)`.
    pub fn sigma(&self, raw: &[f64], spline_inputs: [f64; 2]) -> f64 {
        link_g2_inverse(self.sigma_eta(raw, spline_inputs))
    }

    pub fn sigma_eta(&self, raw: &[f64], spline_inputs: [f64; 2]) -> f64 {
        let s = &self.sigma_standardization;
        let mut eta = 0.0;
        for (j, b) in self.sigma_linear.iter().enumerate() {
            if *b != 0.0 {
                let x = if s.scaled[j] { (raw[j] - s.means[j]) / s.sds[j] } else { raw[j] };
                eta += b * x;
            }
        }
        if let Some(h) = &self.h_price {
            eta += h.eval(spline_inputs[0]);
        }
        if let Some(h) = &self.h_step {
            eta += h.eval(spline_inputs[1]);
        }
        eta
    }
}

/// Log density of the SD-parameterized t, summed over observations.
fn log_lik(y: &[f64], mu: &DVector<f64>, sigma: &DVector<f64>, nu: f64) -> f64 {
    let c = ((nu - 2.0) / nu).sqrt();
    let k = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    let mut ll = 0.0;
    for i in 0..y.len() {
        let s = sigma[i] * c;
        let r = (y[i] - mu[i]) / s;
        ll += k - s.ln() - 0.5 * (nu + 1.0) * (r * r / nu).ln_1p();
    }
    ll
}

/// Householder basis for the null space of `cᵀ`: a `k × (k-1)` matrix with
/// orthonormal columns orthogonal to `c`.
fn sum_to_zero_constraint(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = if vv > 0.0 {
        DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv)
    } else {
        DMatrix::identity(k, k)
    };
    h.columns(1, k - 1).into_owned()
}

struct SmoothSetup {
    basis: BSplineBasis,
    constraint: DMatrix<f64>,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

fn smooth_setup(x: &[f64]) -> Result<SmoothSetup> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let basis = BSplineBasis::with_basis_count(lo, hi, N_BASIS, 3)?;
    let n = x.len();
    let mut raw = DMatrix::zeros(n, N_BASIS);
    for (i, xi) in x.iter().enumerate() {
        let (first, vals) = basis.eval_local(*xi);
        for (k, v) in vals.iter().enumerate() {
            raw[(i, first + k)] = *v;
        }
    }
    let colsum = DVector::from_fn(N_BASIS, |j, _| raw.column(j).sum());
    let constraint = sum_to_zero_constraint(&colsum);
    let design = &raw * &constraint;
    let penalty = constraint.transpose() * pspline_penalty(N_BASIS, 2)? * &constraint;
    Ok(SmoothSetup {
        basis,
        constraint,
        design,
        penalty,
    })
}

/// Score and Fisher information of the log-likelihood with respect to the
/// σ predictor, per observation.
fn sigma_working(y: &[f64], mu: &DVector<f64>, eta: &DVector<f64>, nu: f64) -> (DVector<f64>, DVector<f64>) {
    let c2 = (nu - 2.0) / nu;
    let n = y.len();
    let mut z = DVector::zeros(n);
    let mut w = DVector::zeros(n);
    for i in 0..n {
        let sigma = link_g2_inverse(eta[i]);
        let dsig = crate::statcore::links::link_g2_inverse_deriv(eta[i]);
        let r = y[i] - mu[i];
        let u = r * r / (sigma * sigma * c2);
        let g = dsig / sigma;
        let score = (-1.0 + (nu + 1.0) * u / (nu + u)) * g;
        let info = 2.0 * nu / (nu + 3.0) * g * g;
        w[i] = info;
        z[i] = eta[i] + score / info;
    }
    (z, w)
}

struct SigmaBlock {
    design: DMatrix<f64>,
    /// Column ranges (start, len) of the price and step smooths.
    smooths: Vec<(usize, usize, DMatrix<f64>)>,
    lambdas: Vec<f64>,
}

impl SigmaBlock {
    fn penalty(&self) -> DMatrix<f64> {
        let p = self.design.ncols();
        let mut s = DMatrix::zeros(p, p);
        for ((start, len, pen), lam) in self.smooths.iter().zip(&self.lambdas) {
            s.view_mut((*start, *start), (*len, *len)).copy_from(&(pen * *lam));
        }
        s
    }

    fn penalty_value(&self, gamma: &DVector<f64>) -> f64 {
        self.smooths
            .iter()
            .zip(&self.lambdas)
            .map(|((start, len, pen), lam)| {
                let g = gamma.rows(*start, *len);
                0.5 * lam * (g.transpose() * pen * g)[(0, 0)]
            })
            .sum()
    }
}

/// GCV score of a penalized weighted fit with Gram `g`, rhs `b = BᵀWz`.
fn gcv(g: &DMatrix<f64>, b: &DVector<f64>, s: &DMatrix<f64>, ztwz: f64, n: f64) -> Result<(f64, DVector<f64>)> {
    let inv = inverse_spd(&(g + s))?;
    let gamma = &inv * b;
    // weighted RSS = zᵀWz − 2γᵀb + γᵀGγ
    let rss = (ztwz - 2.0 * gamma.dot(b) + gamma.dot(&(g * &gamma))).max(0.0);
    let edf = (&inv * g).trace();
    let denom = (n - edf).max(1.0);
    Ok((n * rss / (denom * denom), gamma))
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc > fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub fn fit_t_gamlss(data: &TGamData, variant: TGamVariant) -> Result<TGamFit> {
    let y = &data.y;
    let n = y.len();
    if n < MIN_OBS {
        return Err(Error::Estimation(format!("t model needs at least {MIN_OBS} observations, got {n}")));
    }
    if data.mu_x.nrows() != n || data.sigma_x.nrows() != n || data.spline_inputs.len() != n {
        return Err(Error::Input("t model inputs differ in row count".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite response".into()));
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 1e-12 * (1.0 + mean.abs())) {
        return Err(Error::Estimation("response has zero variance".into()));
    }
    if data.sigma_x.names.first().map(String::as_str) != Some(INTERCEPT) {
        return Err(Error::Input("σ design must start with the intercept column".into()));
    }
    let nf = n as f64;

    let (sx, stats) = standardize(&data.sigma_x, None)?;
    let p_lin = sx.ncols();
    // σ design: intercept only, or linear columns (constant ones dropped)
    // followed by the two constrained smooths
    let lin_cols: Vec<usize> = if variant.models_sigma() {
        (0..p_lin).filter(|j| *j == 0 || stats.scaled[*j]).collect()
    } else {
        vec![0]
    };
    let mut smooth_setups = Vec::new();
    let mut block = {
        let mut cols: Vec<DMatrix<f64>> = vec![sx.data.select_columns(&lin_cols)];
        let mut smooths = Vec::new();
        let mut start = lin_cols.len();
        if variant.models_sigma() {
            for k in 0..2 {
                let x: Vec<f64> = data.spline_inputs.iter().map(|r| r[k]).collect();
                let s = smooth_setup(&x)?;
                smooths.push((start, s.design.ncols(), s.penalty.clone()));
                start += s.design.ncols();
                cols.push(s.design.clone());
                smooth_setups.push(s);
            }
        }
        let total: usize = cols.iter().map(|c| c.ncols()).sum();
        let mut design = DMatrix::zeros(n, total);
        let mut off = 0;
        for c in &cols {
            design.columns_mut(off, c.ncols()).copy_from(c);
            off += c.ncols();
        }
        SigmaBlock {
            design,
            lambdas: vec![1.0; smooths.len()],
            smooths,
        }
    };
    let p_sig = block.design.ncols();

    let mut beta_mu = DVector::zeros(3);
    let mut mu = DVector::zeros(n);
    let mut gamma = DVector::zeros(p_sig);
    gamma[0] = link_g2(sd)?;
    let mut eta = &block.design * &gamma;
    let mut sigma = eta.map(link_g2_inverse);
    let mut nu: f64 = 5.0;

    let pll = |mu: &DVector<f64>, sigma: &DVector<f64>, nu: f64, block: &SigmaBlock, gamma: &DVector<f64>| {
        log_lik(y, mu, sigma, nu) - block.penalty_value(gamma)
    };
    let mut current = pll(&mu, &sigma, nu, &block, &gamma);
    if !current.is_finite() {
        return Err(Error::Estimation("non-finite initial likelihood".into()));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let lambda_grid: Vec<f64> = (0..=16).map(|k| 10f64.powf(-3.0 + 0.5 * k as f64)).collect();

    for iter in 1..=MAX_OUTER {
        iterations = iter;
        let before = current;

        // location: one EM step of t-weighted least squares
        if variant.models_mu() {
            let c2 = (nu - 2.0) / nu;
            let w = DVector::from_fn(n, |i, _| {
                let s2 = sigma[i] * sigma[i] * c2;
                let r = y[i] - mu[i];
                (nu + 1.0) / (nu + r * r / s2) / s2
            });
            let g = weighted_gram(&data.mu_x, &w);
            let rhs = data.mu_x.transpose() * DVector::from_fn(n, |i, _| w[i] * y[i]);
            let (b, _) = solve_spd(&g, &rhs)?;
            let new_mu = &data.mu_x * &b;
            let cand = pll(&new_mu, &sigma, nu, &block, &gamma);
            if cand >= current {
                beta_mu = b;
                mu = new_mu;
                current = cand;
            }
        }

        // scale: Fisher scoring step of penalized weighted least squares
        {
            let (z, w) = sigma_working(y, &mu, &eta, nu);
            let g = weighted_gram(&block.design, &w);
            let wz = w.component_mul(&z);
            let b = block.design.transpose() * &wz;
            if iter <= GCV_ITERS && !block.smooths.is_empty() {
                let ztwz = z.dot(&wz);
                for k in 0..block.smooths.len() {
                    let mut best = (f64::INFINITY, block.lambdas[k]);
                    for &lam in &lambda_grid {
                        block.lambdas[k] = lam;
                        let (score, _) = gcv(&g, &b, &block.penalty(), ztwz, nf)?;
                        if score < best.0 {
                            best = (score, lam);
                        }
                    }
                    block.lambdas[k] = best.1;
                }
                // objective changes with λ; restart the monotonicity baseline
                current = pll(&mu, &sigma, nu, &block, &gamma);
            }
            let (target, _) = solve_spd(&(&g + block.penalty()), &b)?;
            let mut step = 1.0;
            loop {
                let cand_gamma = &gamma + (&target - &gamma) * step;
                let cand_eta = &block.design * &cand_gamma;
                let cand_sigma = cand_eta.map(link_g2_inverse);
                let cand = pll(&mu, &cand_sigma, nu, &block, &cand_gamma);
                if cand.is_finite() && cand >= current {
                    gamma = cand_gamma;
                    eta = cand_eta;
                    sigma = cand_sigma;
                    current = cand;
                    break;
                }
                step *= 0.5;
                if step < 1e-6 {
                    break;
                }
            }
        }

        // shape: golden-section search for log(ν − 2). With a constant σ the
        // search holds the t scale fixed and moves σ along with ν; holding σ
        // fixed instead crawls along the ridge where ν → 2 and σ grows.
        if variant.models_sigma() {
            let f = |theta: f64| log_lik(y, &mu, &sigma, link_g3_inverse(theta));
            let (theta, _) = golden_max(f, (NU_MIN - 2.0).ln(), (NU_MAX - 2.0).ln(), 1e-7);
            let cand_nu = link_g3_inverse(theta);
            let cand = pll(&mu, &sigma, cand_nu, &block, &gamma);
            if cand >= current {
                nu = cand_nu;
                current = cand;
            }
        } else {
            let scale = sigma[0] * ((nu - 2.0) / nu).sqrt();
            let sigma_at = |v: f64| DVector::from_element(n, scale * (v / (v - 2.0)).sqrt());
            let f = |theta: f64| {
                let v = link_g3_inverse(theta);
                log_lik(y, &mu, &sigma_at(v), v)
            };
            let (theta, _) = golden_max(f, (NU_MIN - 2.0).ln(), (NU_MAX - 2.0).ln(), 1e-7);
            let cand_nu = link_g3_inverse(theta);
            let mut cand_gamma = gamma.clone();
            cand_gamma[0] = link_g2(sigma_at(cand_nu)[0])?;
            let cand_eta = &block.design * &cand_gamma;
            let cand_sigma = cand_eta.map(link_g2_inverse);
            let cand = pll(&mu, &cand_sigma, cand_nu, &block, &cand_gamma);
            if cand >= current {
                nu = cand_nu;
                gamma = cand_gamma;
                eta = cand_eta;
                sigma = cand_sigma;
                current = cand;
            }
        }

        if !current.is_finite() {
            return Err(Error::Estimation("penalized likelihood became non-finite".into()));
        }
        trace.push(current);
        if iter > GCV_ITERS && 2.0 * (current - before).abs() < 1e-6 {
            converged = true;
            break;
        }
    }
    if !converged {
        warn!("t model did not converge in {MAX_OUTER} iterations");
    }
    let nu_at_bound = nu < NU_MIN + 1e-3 || nu > NU_MAX - 1e-2;
    if nu_at_bound {
        warn!("t model: ν = {nu:.4} at the search boundary");
    }

    // standard errors from the weighted least-squares covariances
    let c2 = (nu - 2.0) / nu;
    let mut mu_se = [0.0; 3];
    if variant.models_mu() {
        let w = DVector::from_fn(n, |i, _| (nu + 1.0) / ((nu + 3.0) * sigma[i] * sigma[i] * c2));
        let cov = inverse_spd(&weighted_gram(&data.mu_x, &w))?;
        for j in 0..3 {
            mu_se[j] = cov[(j, j)].sqrt();
        }
    }
    let (_, w) = sigma_working(y, &mu, &eta, nu);
    let cov = inverse_spd(&(weighted_gram(&block.design, &w) + block.penalty()))?;
    let mut sigma_linear = vec![0.0; p_lin];
    let mut sigma_se = vec![0.0; p_lin];
    for (k, &j) in lin_cols.iter().enumerate() {
        sigma_linear[j] = gamma[k];
        sigma_se[j] = cov[(k, k)].sqrt();
    }
    let g_full = weighted_gram(&block.design, &w);
    let hat = &cov * &g_full;
    let mut terms = Vec::new();
    for ((start, len, _), (setup, lam)) in block.smooths.iter().zip(smooth_setups.into_iter().zip(&block.lambdas)) {
        let coefs = gamma.rows(*start, *len).into_owned();
        let basis_coefs = &setup.constraint * &coefs;
        let edf = (0..*len).map(|k| hat[(start + k, start + k)]).sum();
        terms.push(SmoothTerm {
            basis: setup.basis,
            constraint: setup.constraint,
            coefs: coefs.iter().copied().collect(),
            basis_coefs: basis_coefs.iter().copied().collect(),
            lambda: *lam,
            edf,
        });
    }
    let mut terms = terms.into_iter();
    let h_price = terms.next();
    let h_step = terms.next();
    let deviance = -2.0 * log_lik(y, &mu, &sigma, nu);
    debug!("t model {variant:?}: ν={nu:.3}, {iterations} iterations, deviance {deviance:.4}");
    let mut mu_coefs = [0.0; 3];
    for j in 0..3 {
        mu_coefs[j] = beta_mu[j];
    }
    Ok(TGamFit {
        variant,
        mu_coefs,
        mu_se,
        sigma_names: data.sigma_x.names.clone(),
        sigma_linear,
        sigma_se,
        sigma_standardization: stats,
        h_price,
        h_step,
        nu,
        nu_intercept: link_g3(nu)?,
        nu_at_bound,
        iterations,
        converged,
        deviance,
        trace,
        n_obs: n,
    })
}

/// Convenience: constant-σ fit to a plain sample.
pub fn fit_t_const(y: &[f64]) -> Result<TGamFit> {
    fit_t_gamlss(&TGamData::response_only(y.to_vec()), TGamVariant::ConstSigma)
}
