//! Golden-rule transfer rates for a two-state system coupled to a harmonic
//! bath, with regularized, disorder-averaged and fluctuation-averaged
//! variants, plus Monte Carlo tools to validate them.
//!
//! Units: ħ = ω_c = 1, temperatures via θ = βħω_c.

// `!(x > 0.0)` is used deliberately so that NaN inputs fail validation;
// quadrature nodes are kept at their published precision.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bath;
pub mod error;
pub mod quad;
pub mod rates;
pub mod stochastic;

pub use bath::{BathModel, Lineshape, LineshapeMethod, LongTimeLimit};
pub use error::{Error, Result};
pub use quad::{integrate_oscillatory, IntegralResult, IntegralStatus, OscIntegralSpec, QuadTolerances};
pub use rates::{
    kappa_normalize, DisorderModel, FluctuationModel, RateEngine, RateResult, RateSpec, RateVariant, VariantKind,
};
