//! Micro-BRDF and phase-function importance sampling.
//!
//! Every routine works in a local frame with the surface normal along +z and
//! returns the sampling weight `f·|cos|/p`, which the walk uses as a Russian
//! roulette survival probability.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{sample_cosine_hemisphere, sample_uniform_sphere, Frame, Rng, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MicroBrdf {
    Lambertian { albedo: [f64; 3] },
    Mirror { reflectance: [f64; 3] },
    /// GGX microfacets with a Schlick Fresnel term whose normal-incidence
    /// reflectance is `reflectance`.
    RoughConductor { roughness: f64, reflectance: [f64; 3] },
    /// GGX microfacet interface between vacuum (above) and a medium of index
    /// `ior` (below).
    RoughDielectric { roughness: f64, ior: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase {
    Isotropic,
    HenyeyGreenstein { g: f64 },
}

fn check_unit_rgb(path: &str, c: &[f64; 3]) -> Result<()> {
    if c.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::schema(path, format!("components must lie in [0, 1], got {c:?}")))
    }
}

fn check_roughness(path: &str, r: f64) -> Result<()> {
    if r > 0.0 && r <= 1.0 {
        Ok(())
    } else {
        Err(Error::schema(path, format!("roughness must lie in (0, 1], got {r}")))
    }
}

impl MicroBrdf {
    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            MicroBrdf::Lambertian { albedo } => check_unit_rgb(&format!("{path}.albedo"), albedo),
            MicroBrdf::Mirror { reflectance } => {
                check_unit_rgb(&format!("{path}.reflectance"), reflectance)
            }
            MicroBrdf::RoughConductor { roughness, reflectance } => {
                check_roughness(&format!("{path}.roughness"), *roughness)?;
                check_unit_rgb(&format!("{path}.reflectance"), reflectance)
            }
            MicroBrdf::RoughDielectric { roughness, ior } => {
                check_roughness(&format!("{path}.roughness"), *roughness)?;
                if !(ior.is_finite() && *ior > 0.0) {
                    return Err(Error::schema(format!("{path}.ior"), "must be positive"));
                }
                Ok(())
            }
        }
    }

    /// True when every sampling weight is identically one.
    pub fn is_lossless(&self) -> bool {
        match self {
            MicroBrdf::Lambertian { albedo } => albedo.iter().all(|&a| a == 1.0),
            MicroBrdf::Mirror { reflectance } => reflectance.iter().all(|&a| a == 1.0),
            _ => false,
        }
    }
}

impl Phase {
    pub fn validate(&self, path: &str) -> Result<()> {
        match self {
            Phase::Isotropic => Ok(()),
            Phase::HenyeyGreenstein { g } if g.abs() < 1.0 => Ok(()),
            Phase::HenyeyGreenstein { g } => {
                Err(Error::schema(format!("{path}.g"), format!("|g| must be < 1, got {g}")))
            }
        }
    }

    /// Samples a new propagation direction given the current one.
    pub fn sample(&self, dir: Vec3, rng: &mut Rng) -> Vec3 {
        match *self {
            Phase::Isotropic => sample_uniform_sphere(rng),
            Phase::HenyeyGreenstein { g } => {
                let u = rng.uniform();
                let cos = if g.abs() < 1e-3 {
                    1.0 - 2.0 * u
                } else {
                    let s = (1.0 - g * g) / (1.0 + g - 2.0 * g * u);
                    ((1.0 + g * g - s * s) / (2.0 * g)).clamp(-1.0, 1.0)
                };
                let sin = (1.0 - cos * cos).max(0.0).sqrt();
                let phi = 2.0 * PI * rng.uniform();
                Frame::from_normal(dir).to_world(Vec3::new(sin * phi.cos(), sin * phi.sin(), cos))
            }
        }
    }

    pub fn eval(&self, cos: f64) -> f64 {
        match *self {
            Phase::Isotropic => 0.25 / PI,
            Phase::HenyeyGreenstein { g } => {
                let d = 1.0 + g * g - 2.0 * g * cos;
                0.25 / PI * (1.0 - g * g) / (d * d.sqrt())
            }
        }
    }
}

/// Russian-roulette survival weights must not exceed one; larger weights are
/// clamped, which makes the microstructure marginally less energy conserving.
pub fn clamp_weight(w: f64) -> f64 {
    if w.is_nan() {
        0.0
    } else {
        w.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MicroSample {
    pub wo: Vec3,
    pub weight: f64,
}

/// Importance-samples `brdf` for the incident direction `wi` (pointing away
/// from the surface). `channel` selects the scalar slice of rgb parameters.
pub fn micro_sample(brdf: &MicroBrdf, wi: Vec3, channel: usize, rng: &mut Rng) -> MicroSample {
    let s = match brdf {
        MicroBrdf::Lambertian { albedo } => {
            let d = sample_cosine_hemisphere(rng).vec();
            let wo = if wi.z < 0.0 { -d } else { d };
            MicroSample { wo, weight: albedo[channel] }
        }
        MicroBrdf::Mirror { reflectance } => MicroSample {
            wo: Vec3::new(-wi.x, -wi.y, wi.z),
            weight: reflectance[channel],
        },
        MicroBrdf::RoughConductor { roughness, reflectance } => {
            sample_conductor(*roughness, reflectance[channel], wi, rng)
        }
        MicroBrdf::RoughDielectric { roughness, ior } => sample_dielectric(*roughness, *ior, wi, rng),
    };
    MicroSample {
        wo: s.wo,
        weight: clamp_weight(s.weight),
    }
}

/// GGX Smith auxiliary function.
fn ggx_lambda(alpha: f64, w: Vec3) -> f64 {
    let cos2 = w.z * w.z;
    if cos2 <= 0.0 {
        return f64::INFINITY;
    }
    let tan2 = ((1.0 - cos2) / cos2).max(0.0);
    0.5 * (-1.0 + (1.0 + alpha * alpha * tan2).sqrt())
}

pub(crate) fn ggx_g1(alpha: f64, w: Vec3) -> f64 {
    1.0 / (1.0 + ggx_lambda(alpha, w))
}

/// Visible-normal sampling of the GGX distribution for `wi` with `wi.z > 0`.
pub(crate) fn sample_ggx_vndf(alpha: f64, wi: Vec3, u1: f64, u2: f64) -> Vec3 {
    let vh = Vec3::new(alpha * wi.x, alpha * wi.y, wi.z).normalize();
    let lensq = vh.x * vh.x + vh.y * vh.y;
    let t1 = if lensq > 0.0 {
        Vec3::new(-vh.y, vh.x, 0.0) / lensq.sqrt()
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let t2 = vh.cross(t1);
    let r = u1.sqrt();
    let phi = 2.0 * PI * u2;
    let p1 = r * phi.cos();
    let mut p2 = r * phi.sin();
    let s = 0.5 * (1.0 + vh.z);
    p2 = (1.0 - s) * (1.0 - p1 * p1).max(0.0).sqrt() + s * p2;
    let nh = t1 * p1 + t2 * p2 + vh * (1.0 - p1 * p1 - p2 * p2).max(0.0).sqrt();
    Vec3::new(alpha * nh.x, alpha * nh.y, nh.z.max(1e-9)).normalize()
}

fn schlick(f0: f64, cos: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - cos.clamp(0.0, 1.0)).powi(5)
}

fn sample_conductor(alpha: f64, f0: f64, wi: Vec3, rng: &mut Rng) -> MicroSample {
    if wi.z <= 0.0 {
        return MicroSample { wo: wi, weight: 0.0 };
    }
    let m = sample_ggx_vndf(alpha, wi, rng.uniform(), rng.uniform());
    let cos = wi.dot(m);
    let wo = m * (2.0 * cos) - wi;
    if wo.z <= 0.0 {
        return MicroSample { wo, weight: 0.0 };
    }
    MicroSample {
        wo,
        weight: schlick(f0, cos) * ggx_g1(alpha, wo),
    }
}

/// Unpolarized Fresnel reflectance; `eta` = incident index / transmitted index.
pub(crate) fn fresnel_dielectric(cos_i: f64, eta: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
    if sin2_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin2_t).sqrt();
    let rs = (eta * cos_i - cos_t) / (eta * cos_i + cos_t);
    let rp = (cos_i - eta * cos_t) / (cos_i + eta * cos_t);
    0.5 * (rs * rs + rp * rp)
}

fn sample_dielectric(alpha: f64, ior: f64, wi: Vec3, rng: &mut Rng) -> MicroSample {
    let entering = wi.z > 0.0;
    let eta = if entering { 1.0 / ior } else { ior };
    let wi_up = if entering { wi } else { -wi };
    let m = sample_ggx_vndf(alpha, wi_up, rng.uniform(), rng.uniform());
    let cos_i = wi_up.dot(m);
    let fresnel = fresnel_dielectric(cos_i, eta);
    let flip = |v: Vec3| if entering { v } else { -v };
    if rng.uniform() < fresnel {
        let wo = m * (2.0 * cos_i) - wi_up;
        let weight = if wo.z > 0.0 { ggx_g1(alpha, wo) } else { 0.0 };
        MicroSample { wo: flip(wo), weight }
    } else {
        let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
        let cos_t = (1.0 - sin2_t).max(0.0).sqrt();
        let wo = m * (eta * cos_i - cos_t) - wi_up * eta;
        let weight = if wo.z < 0.0 { ggx_g1(alpha, -wo) } else { 0.0 };
        MicroSample { wo: flip(wo), weight }
    }
}
