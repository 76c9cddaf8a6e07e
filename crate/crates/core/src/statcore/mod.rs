//! Distribution kernel and numerical building blocks shared by the estimators
//! and simulators.

pub mod copula;
pub mod hyman;
pub mod linalg;
pub mod links;
pub mod rng;
pub mod spline;
pub mod stats;
pub mod tdist;

pub use copula::{copula_uniforms, reorder_to_copula, CopulaKind};
pub use hyman::{hyman_monotone_spline, MonotoneCdf, MonotoneSpline};
pub use links::{link_g2, link_g2_inverse, link_g3, link_g3_inverse};
pub use rng::{rng_from_seed, substream_seed, SimRng};
pub use spline::{pspline_penalty, BSplineBasis};
pub use tdist::{zit_sample, TDist, ZeroInflatedTParams};
