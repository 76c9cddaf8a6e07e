//! Location / standard-deviation / shape parameterisation of Student's t and
//! the zero-inflated mixture built on top of it.
//!
//! `X = mu + sigma * sqrt((nu - 2) / nu) * T_nu`, so `SD(X) = sigma`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::{beta, erf, gamma};

use crate::error::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    -SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Student t with mean `mu`, standard deviation `sigma` and `nu > 2` degrees
/// of freedom.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TDist {
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl TDist {
    pub fn new(mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::Domain(format!("t location must be finite, got {mu}")));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain(format!("t standard deviation must be > 0, got {sigma}")));
        }
        if !(nu > 2.0) {
            return Err(Error::Domain(format!("t degrees of freedom must exceed 2, got {nu}")));
        }
        Ok(Self { mu, sigma, nu })
    }

    /// Scale of the underlying standard t.
    pub fn scale(&self) -> f64 {
        self.sigma * ((self.nu - 2.0) / self.nu).sqrt()
    }

    pub fn ln_density(&self, x: f64) -> f64 {
        ln_density(x, self.mu, self.scale(), self.nu)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.ln_density(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        std_t_cdf((x - self.mu) / self.scale(), self.nu)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.scale() * std_t_quantile(p, self.nu)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.mu + self.scale() * sample_std_t(self.nu, rng)
    }
}

/// Log density of `mu + scale * T_nu`.
pub fn ln_density(x: f64, mu: f64, scale: f64, nu: f64) -> f64 {
    let z = (x - mu) / scale;
    gamma::ln_gamma(0.5 * (nu + 1.0))
        - gamma::ln_gamma(0.5 * nu)
        - 0.5 * (std::f64::consts::PI * nu).ln()
        - scale.ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

pub fn std_t_cdf(z: f64, nu: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z == 0.0 {
        return 0.5;
    }
    let z2 = z * z;
    // Pick the incomplete-beta argument that stays away from 1 for accuracy.
    let tail = if z2 < nu {
        let x = z2 / (nu + z2);
        0.5 * (1.0 - beta::beta_reg(0.5, 0.5 * nu, x))
    } else {
        let x = nu / (nu + z2);
        0.5 * beta::beta_reg(0.5 * nu, 0.5, x)
    };
    if z > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn std_t_quantile(p: f64, nu: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p == 0.5 {
        return 0.0;
    }
    let lower = p.min(1.0 - p);
    let w = beta::inv_beta_reg(0.5 * nu, 0.5, 2.0 * lower);
    let mut z = (nu * (1.0 - w) / w).sqrt();
    // polish against the cdf; the incomplete beta inverse loses digits for
    // very large nu
    for _ in 0..3 {
        let f = std_t_cdf(-z, nu) - lower;
        let dens = ln_density(-z, 0.0, 1.0, nu).exp();
        if dens <= 0.0 || !f.is_finite() {
            break;
        }
        let step = f / dens;
        z += step;
        if step.abs() < 1e-14 * (1.0 + z.abs()) {
            break;
        }
    }
    if p < 0.5 {
        -z
    } else {
        z
    }
}

pub fn sample_std_t<R: Rng + ?Sized>(nu: f64, rng: &mut R) -> f64 {
    match StudentT::new(nu) {
        Ok(d) => d.sample(rng),
        Err(_) => StandardNormal.sample(rng),
    }
}

/// Parameters of the zero-inflated t: no trade (zero change) with probability
/// `1 - pi`, a t draw otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeroInflatedTParams {
    pub pi: f64,
    pub mu: f64,
    pub sigma: f64,
    pub nu: f64,
}

impl ZeroInflatedTParams {
    pub fn new(pi: f64, mu: f64, sigma: f64, nu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&pi) {
            return Err(Error::Domain(format!("mixing probability must lie in [0,1], got {pi}")));
        }
        TDist::new(mu, sigma, nu)?;
        Ok(Self { pi, mu, sigma, nu })
    }

    pub fn t(&self) -> TDist {
        TDist {
            mu: self.mu,
            sigma: self.sigma,
            nu: self.nu,
        }
    }
}

/// Draws `(alpha, diff)`; `alpha == false` always comes with a zero change.
pub fn zit_sample<R: Rng + ?Sized>(params: &ZeroInflatedTParams, rng: &mut R) -> (bool, f64) {
    let u: f64 = rng.random();
    if u < params.pi {
        (true, params.t().sample(rng))
    } else {
        (false, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statcore::rng::rng_from_seed;

    #[test]
    fn cdf_symmetry_and_median() {
        let d = TDist::new(1.5, 2.0, 4.0).unwrap();
        assert_eq!(d.cdf(1.5), 0.5);
        assert_eq!(d.quantile(0.5), 1.5);
        for &x in &[-3.0, -0.4, 0.2, 5.0] {
            assert!((d.cdf(1.5 + x) + d.cdf(1.5 - x) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &nu in &[2.1, 3.0, 5.0, 30.0, 1e4] {
            let d = TDist::new(-0.3, 1.7, nu).unwrap();
            for &p in &[1e-6, 0.01, 0.2, 0.5, 0.77, 0.99, 0.999_999] {
                let x = d.quantile(p);
                assert!((d.cdf(x) - p).abs() < 1e-10 * (1.0 + 1.0 / p.min(1.0 - p)).min(1e4), "nu={nu} p={p}");
            }
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let d = TDist::new(0.0, 1.0, 3.5).unwrap();
        // trapezoid on a wide grid, tails contribute < 1e-4
        let h = 1e-3;
        let mut acc = 0.0;
        let mut x = -200.0;
        while x < 200.0 {
            acc += 0.5 * h * (d.density(x) + d.density(x + h));
            x += h;
        }
        assert!((acc - 1.0).abs() < 1e-4, "{acc}");
    }

    #[test]
    fn cdf_matches_integrated_density() {
        let d = TDist::new(0.5, 2.0, 5.0).unwrap();
        let mut acc = d.cdf(-3.0);
        let h = 1e-4;
        let mut x = -3.0;
        while x < 2.0 - 1e-12 {
            acc += 0.5 * h * (d.density(x) + d.density(x + h));
            x += h;
        }
        assert!((acc - d.cdf(2.0)).abs() < 1e-8);
    }

    #[test]
    fn large_nu_matches_normal() {
        let d = TDist::new(0.0, 1.0, 1e6).unwrap();
        let mut worst: f64 = 0.0;
        for i in -400..=400 {
            let x = i as f64 * 0.01;
            worst = worst.max((d.cdf(x) - std_normal_cdf(x)).abs());
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn sample_variance_equals_sigma_squared() {
        let d = TDist::new(0.0, 2.0, 6.0).unwrap();
        let mut rng = rng_from_seed(11);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = d.sample(&mut rng);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        // Var of the sample variance for t6: mu4 = 3 sigma^4 (nu-2)/(nu-4)
        let mu4 = 3.0 * 16.0 * 4.0 / 2.0;
        let se = ((mu4 - 16.0) / n as f64).sqrt();
        assert!((var - 4.0).abs() < 4.0 * se, "var={var} se={se}");
    }

    #[test]
    fn zit_degenerate_cases() {
        let mut rng = rng_from_seed(3);
        let never = ZeroInflatedTParams::new(0.0, 0.0, 1.0, 5.0).unwrap();
        let always = ZeroInflatedTParams::new(1.0, 0.0, 1.0, 5.0).unwrap();
        for _ in 0..10_000 {
            assert_eq!(zit_sample(&never, &mut rng), (false, 0.0));
            assert!(zit_sample(&always, &mut rng).0);
        }
    }

    #[test]
    fn zit_trade_frequency() {
        let mut rng = rng_from_seed(4);
        let p = ZeroInflatedTParams::new(0.3, 0.0, 1.0, 5.0).unwrap();
        let n = 100_000;
        let hits = (0..n).filter(|_| zit_sample(&p, &mut rng).0).count();
        let rate = hits as f64 / n as f64;
        let tol = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((rate - 0.3).abs() < tol, "{rate}");
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(TDist::new(0.0, 0.0, 5.0).is_err());
        assert!(TDist::new(0.0, 1.0, 2.0).is_err());
        assert!(ZeroInflatedTParams::new(1.2, 0.0, 1.0, 5.0).is_err());
    }
}
