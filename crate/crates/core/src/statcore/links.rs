//! Link functions for the scale and shape parameters. The location uses the
//! identity link.

use crate::error::{Error, Result};

/// "Logident" link: logarithm below one, shifted identity above.
pub fn link_g2(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("g2 requires sigma > 0, got {sigma}")));
    }
    Ok(if sigma <= 1.0 { sigma.ln() } else { sigma - 1.0 })
}

pub fn link_g2_inverse(eta: f64) -> f64 {
    if eta <= 0.0 {
        eta.exp()
    } else {
        eta + 1.0
    }
}

/// d sigma / d eta for the logident link.
pub fn link_g2_inverse_deriv(eta: f64) -> f64 {
    if eta <= 0.0 {
        eta.exp()
    } else {
        1.0
    }
}

pub fn link_g3(nu: f64) -> Result<f64> {
    if !(nu > 2.0) || nu.is_nan() {
        return Err(Error::Domain(format!("g3 requires nu > 2, got {nu}")));
    }
    Ok((nu - 2.0).ln())
}

pub fn link_g3_inverse(eta: f64) -> f64 {
    eta.exp() + 2.0
}
