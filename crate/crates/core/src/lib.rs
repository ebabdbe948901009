//! Learn a material's BRDF from forward random walks on explicit
//! microgeometry.
//!
//! The BRDF is factored as `f(wi, wo) = rho(wo | wi) * alpha(wi)`: a flow
//! matching model learns the normalized exit-direction density `rho` on the
//! projected disk, and a small network learns the directional albedo `alpha`
//! from walk acceptance ratios.

pub mod albedo;
pub mod dataset;
pub mod error;
pub mod flow;
pub mod geom;
pub mod material;
pub mod microgeo;
pub mod nn;
pub mod validate;

pub use error::{Error, Result};
