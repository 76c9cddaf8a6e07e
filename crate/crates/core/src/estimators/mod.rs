//! Fitting of every statistical component: the lasso logit for trade
//! probabilities, the t location/scale/shape model with P-spline smooths,
//! linear quantile regression, and multivariate normal/t laws.

pub mod gamlss;
pub mod logit;
pub mod lqr;
pub mod mv;

pub use gamlss::{fit_t_const, fit_t_gamlss, SmoothTerm, TGamData, TGamFit, TGamVariant};
pub use logit::{fit_logit_lasso, predict_pi, LogitLassoFit};
pub use lqr::{build_marginal_cdf, fit_lqr, quantile_levels, LqrFit, DEFAULT_MIN_DAYS};
pub use mv::{fit_mv, MvFamily, MvFit};
