//! Declarative microgeometry scenes and the forward particle tracer.
//!
//! A walk enters the microgeometry from the incident direction, importance
//! samples the micro-BRDF (or phase function) at every event and plays
//! Russian roulette with the sampling weight as survival probability, so the
//! throughput of a surviving particle is always exactly one. The fraction of
//! walks that exit is therefore an unbiased estimate of the directional
//! albedo, and the exit directions of survivors follow the normalized BRDF.

mod bsdf;
mod heightfield;
mod spheres;

pub use bsdf::{clamp_weight, micro_sample, MicroBrdf, MicroSample, Phase};
pub use heightfield::{beckmann_heights, Heightfield};
pub use spheres::{poisson_centers, Sphere, SphereField, GROUND_MATERIAL, SPHERE_MATERIAL};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{Direction, Frame, Rng, Vec3};
use heightfield::HfTrace;
use spheres::SfTrace;

pub const DEFAULT_MAX_EVENTS: u32 = 256;

fn default_max_events() -> u32 {
    DEFAULT_MAX_EVENTS
}

fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TraceHit {
    pub p: Vec3,
    /// Geometric normal on the side the ray arrived from.
    pub n: Vec3,
    pub material: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeckmannSpec {
    pub roughness: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonSpec {
    pub radius: f64,
    pub min_distance: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DielectricInterface {
    pub roughness: f64,
    pub ior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductorInterface {
    pub roughness: f64,
    pub reflectance: [f64; 3],
}

/// JSON form of a scene. Field names are the on-disk schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum VariantDesc {
    Flat {
        brdf: MicroBrdf,
    },
    Heightfield {
        size: [usize; 2],
        #[serde(default = "default_one")]
        cell: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        beckmann: Option<BeckmannSpec>,
        brdfs: Vec<MicroBrdf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        brdf_map: Option<Vec<u16>>,
    },
    SphereField {
        tile: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        spheres: Option<Vec<Sphere>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        poisson: Option<PoissonSpec>,
        sphere_brdf: MicroBrdf,
        base_brdf: MicroBrdf,
    },
    LayeredSlab {
        top: DielectricInterface,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bottom: Option<ConductorInterface>,
        #[serde(default = "default_one")]
        thickness: f64,
        sigma_t: [f64; 3],
        albedo: [f64; 3],
        phase: Phase,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDesc {
    #[serde(flatten)]
    pub variant: VariantDesc,
    #[serde(default = "default_max_events")]
    pub max_events: u32,
    #[serde(default)]
    pub sv: bool,
}

#[derive(Clone, Debug)]
pub struct LayeredSlab {
    pub top: MicroBrdf,
    pub bottom: Option<MicroBrdf>,
    pub thickness: f64,
    pub sigma_t: [f64; 3],
    pub albedo: [f64; 3],
    pub phase: Phase,
}

#[derive(Clone, Debug)]
pub enum Microgeometry {
    Flat(MicroBrdf),
    Heightfield {
        field: Heightfield,
        brdfs: Vec<MicroBrdf>,
        brdf_map: Option<Vec<u16>>,
    },
    SphereField {
        field: SphereField,
        sphere_brdf: MicroBrdf,
        base_brdf: MicroBrdf,
    },
    LayeredSlab(LayeredSlab),
}

/// Validated, immutable scene ready for tracing.
#[derive(Clone, Debug)]
pub struct MicrogeometryScene {
    pub geometry: Microgeometry,
    pub max_events: u32,
    pub sv: bool,
    desc: SceneDesc,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WalkStatus {
    Exited(Direction),
    Absorbed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WalkOutcome {
    pub status: WalkStatus,
    pub events: u32,
    /// Absorbed because the event budget ran out or the ray left the
    /// geometry through a numerical gap.
    pub trapped: bool,
}

impl WalkOutcome {
    fn absorbed(events: u32) -> Self {
        WalkOutcome { status: WalkStatus::Absorbed, events, trapped: false }
    }

    fn trapped(events: u32) -> Self {
        WalkOutcome { status: WalkStatus::Absorbed, events, trapped: true }
    }

    fn exited(d: Vec3, events: u32) -> Self {
        match Direction::from_vec(d) {
            Ok(d) => WalkOutcome { status: WalkStatus::Exited(d), events, trapped: false },
            Err(_) => WalkOutcome::absorbed(events),
        }
    }

    pub fn exit_direction(&self) -> Option<Direction> {
        match self.status {
            WalkStatus::Exited(d) => Some(d),
            WalkStatus::Absorbed => None,
        }
    }
}

fn check_nonneg_rgb(path: &str, c: &[f64; 3]) -> Result<()> {
    if c.iter().all(|v| v.is_finite() && *v >= 0.0) {
        Ok(())
    } else {
        Err(Error::schema(path, format!("components must be finite and >= 0, got {c:?}")))
    }
}

pub fn scene_from_json(text: &str) -> Result<MicrogeometryScene> {
    let desc: SceneDesc =
        serde_json::from_str(text).map_err(|e| Error::schema("<root>", e.to_string()))?;
    MicrogeometryScene::from_desc(desc)
}

impl MicrogeometryScene {
    pub fn from_desc(desc: SceneDesc) -> Result<Self> {
        if desc.max_events < 1 {
            return Err(Error::schema("max_events", "must be >= 1"));
        }
        let geometry = match &desc.variant {
            VariantDesc::Flat { brdf } => {
                brdf.validate("brdf")?;
                Microgeometry::Flat(brdf.clone())
            }
            VariantDesc::Heightfield { size, cell, heights, beckmann, brdfs, brdf_map } => {
                let [nx, ny] = *size;
                if nx == 0 || ny == 0 {
                    return Err(Error::schema("size", "heightfield needs at least one cell"));
                }
                if !(cell.is_finite() && *cell > 0.0) {
                    return Err(Error::schema("cell", "must be positive"));
                }
                let heights = match (heights, beckmann) {
                    (Some(h), None) => {
                        if h.len() != nx * ny {
                            return Err(Error::schema(
                                "heights",
                                format!("expected {} values, got {}", nx * ny, h.len()),
                            ));
                        }
                        if let Some(i) = h.iter().position(|v| !v.is_finite()) {
                            return Err(Error::schema(format!("heights[{i}]"), "not finite"));
                        }
                        h.clone()
                    }
                    (None, Some(b)) => {
                        if nx != ny {
                            return Err(Error::schema("size", "procedural heightfields must be square"));
                        }
                        if !(b.roughness > 0.0 && b.roughness.is_finite()) {
                            return Err(Error::schema("beckmann.roughness", "must be positive"));
                        }
                        beckmann_heights(nx, *cell, b.roughness, b.seed)
                    }
                    _ => {
                        return Err(Error::schema(
                            "heights",
                            "give exactly one of `heights` or `beckmann`",
                        ))
                    }
                };
                if brdfs.is_empty() {
                    return Err(Error::schema("brdfs", "at least one micro-BRDF required"));
                }
                for (i, b) in brdfs.iter().enumerate() {
                    b.validate(&format!("brdfs[{i}]"))?;
                }
                if let Some(map) = brdf_map {
                    if map.len() != nx * ny {
                        return Err(Error::schema("brdf_map", format!("expected {} entries", nx * ny)));
                    }
                    if let Some(i) = map.iter().position(|&k| k as usize >= brdfs.len()) {
                        return Err(Error::schema(format!("brdf_map[{i}]"), "index out of range"));
                    }
                }
                Microgeometry::Heightfield {
                    field: Heightfield::new(nx, ny, *cell, heights),
                    brdfs: brdfs.clone(),
                    brdf_map: brdf_map.clone(),
                }
            }
            VariantDesc::SphereField { tile, spheres, poisson, sphere_brdf, base_brdf } => {
                if !(tile.is_finite() && *tile > 0.0) {
                    return Err(Error::schema("tile", "must be positive"));
                }
                sphere_brdf.validate("sphere_brdf")?;
                base_brdf.validate("base_brdf")?;
                let spheres = match (spheres, poisson) {
                    (Some(s), None) => s.clone(),
                    (None, Some(p)) => {
                        if !(p.radius > 0.0) {
                            return Err(Error::schema("poisson.radius", "must be positive"));
                        }
                        if p.min_distance < 2.0 * p.radius {
                            return Err(Error::schema(
                                "poisson.min_distance",
                                "must be at least twice the radius (spheres may not overlap)",
                            ));
                        }
                        poisson_centers(*tile, p.min_distance, p.seed, usize::MAX)
                            .into_iter()
                            .map(|center| Sphere { center, radius: p.radius })
                            .collect()
                    }
                    _ => {
                        return Err(Error::schema("spheres", "give exactly one of `spheres` or `poisson`"))
                    }
                };
                if spheres.is_empty() {
                    return Err(Error::schema("spheres", "no spheres"));
                }
                for (i, s) in spheres.iter().enumerate() {
                    if !(s.radius > 0.0 && s.radius.is_finite()) {
                        return Err(Error::schema(format!("spheres[{i}].radius"), "must be positive"));
                    }
                }
                Microgeometry::SphereField {
                    field: SphereField::new(*tile, spheres),
                    sphere_brdf: sphere_brdf.clone(),
                    base_brdf: base_brdf.clone(),
                }
            }
            VariantDesc::LayeredSlab { top, bottom, thickness, sigma_t, albedo, phase } => {
                let top = MicroBrdf::RoughDielectric { roughness: top.roughness, ior: top.ior };
                top.validate("top")?;
                let bottom = bottom.as_ref().map(|b| MicroBrdf::RoughConductor {
                    roughness: b.roughness,
                    reflectance: b.reflectance,
                });
                if let Some(b) = &bottom {
                    b.validate("bottom")?;
                }
                if !(thickness.is_finite() && *thickness > 0.0) {
                    return Err(Error::schema("thickness", "must be positive"));
                }
                check_nonneg_rgb("sigma_t", sigma_t)?;
                check_nonneg_rgb("albedo", albedo)?;
                if albedo.iter().any(|&a| a > 1.0) {
                    return Err(Error::schema("albedo", "components must be <= 1"));
                }
                phase.validate("phase")?;
                Microgeometry::LayeredSlab(LayeredSlab {
                    top,
                    bottom,
                    thickness: *thickness,
                    sigma_t: *sigma_t,
                    albedo: *albedo,
                    phase: *phase,
                })
            }
        };
        Ok(MicrogeometryScene {
            geometry,
            max_events: desc.max_events,
            sv: desc.sv,
            desc,
        })
    }

    pub fn flat(brdf: MicroBrdf) -> Result<Self> {
        MicrogeometryScene::from_desc(SceneDesc {
            variant: VariantDesc::Flat { brdf },
            max_events: DEFAULT_MAX_EVENTS,
            sv: false,
        })
    }

    pub fn desc(&self) -> &SceneDesc {
        &self.desc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.desc).expect("scene descriptions serialize")
    }

    /// First 8 bytes of the SHA-256 of the canonical JSON description.
    pub fn hash(&self) -> u64 {
        let bytes = serde_json::to_vec(&self.desc).expect("scene descriptions serialize");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// True when every micro interaction has weight one, so the albedo is 1.
    pub fn is_lossless(&self) -> bool {
        match &self.geometry {
            Microgeometry::Flat(b) => b.is_lossless(),
            Microgeometry::Heightfield { brdfs, brdf_map, .. } => match brdf_map {
                Some(map) => map.iter().all(|&k| brdfs[k as usize].is_lossless()),
                None => brdfs[0].is_lossless(),
            },
            Microgeometry::SphereField { sphere_brdf, base_brdf, .. } => {
                sphere_brdf.is_lossless() && base_brdf.is_lossless()
            }
            Microgeometry::LayeredSlab(_) => false,
        }
    }

    /// Size of the material plane that uv coordinates in [0,1)^2 span.
    pub fn uv_extent(&self) -> [f64; 2] {
        match &self.geometry {
            Microgeometry::Heightfield { field, .. } => field.extent(),
            Microgeometry::SphereField { field, .. } => [field.tile, field.tile],
            _ => [1.0, 1.0],
        }
    }

    /// Micro-BRDF at material-plane coordinate `uv` for heightfield texels;
    /// `None` for other geometry.
    pub fn texel_brdf(&self, uv: [f64; 2]) -> Option<&MicroBrdf> {
        match &self.geometry {
            Microgeometry::Heightfield { field, brdfs, brdf_map } => {
                let ext = field.extent();
                let cell = field.cell_at(uv[0] * ext[0], uv[1] * ext[1]);
                Some(&brdfs[brdf_map.as_ref().map_or(0, |m| m[cell] as usize)])
            }
            _ => None,
        }
    }
}

/// Roulette against the sampling weight; survivors carry unit throughput.
fn survives(weight: f64, rng: &mut Rng) -> bool {
    weight >= 1.0 || rng.uniform() < weight
}

/// Runs one forward random walk for colour `channel`.
///
/// `uv` is required for spatially varying scenes and places the entry point
/// on the material plane; homogeneous scenes draw the entry point uniformly.
pub fn trace_walk(
    scene: &MicrogeometryScene,
    wi: Direction,
    channel: usize,
    uv: Option<[f64; 2]>,
    rng: &mut Rng,
) -> Result<WalkOutcome> {
    if channel > 2 {
        return Err(Error::Invalid(format!("channel {channel} out of range")));
    }
    if uv.is_some() != scene.sv {
        return Err(Error::Invalid(if scene.sv {
            "spatially varying scene requires uv".into()
        } else {
            "uv given for a homogeneous scene".into()
        }));
    }
    Ok(match &scene.geometry {
        Microgeometry::Flat(brdf) => {
            let s = micro_sample(brdf, wi.vec(), channel, rng);
            if survives(s.weight, rng) && s.wo.z > 0.0 {
                WalkOutcome::exited(s.wo, 1)
            } else {
                WalkOutcome::absorbed(1)
            }
        }
        Microgeometry::Heightfield { field, brdfs, brdf_map } => {
            let ext = field.extent();
            let start = entry_point(ext, field.hmax.max(0.0) + field.cell, wi, uv, rng);
            let eps = 1e-7 * field.cell;
            walk_surfaces(scene.max_events, start, ext, eps, wi, channel, rng, |o, d| match field.trace(o, d) {
                HfTrace::Hit(h) => Traced::Hit(h, &brdfs[brdf_map.as_ref().map_or(0, |m| m[h.material] as usize)]),
                HfTrace::Escaped => Traced::Escaped,
                HfTrace::Lost => Traced::Lost,
            })
        }
        Microgeometry::SphereField { field, sphere_brdf, base_brdf } => {
            let start = entry_point([field.tile; 2], field.top + 1.0, wi, uv, rng);
            let eps = 1e-7 * field.spheres.iter().map(|s| s.radius).fold(0.0, f64::max);
            walk_surfaces(scene.max_events, start, [field.tile; 2], eps, wi, channel, rng, |o, d| match field.trace(o, d) {
                SfTrace::Hit(h) => {
                    let b = if h.material == SPHERE_MATERIAL { sphere_brdf } else { base_brdf };
                    Traced::Hit(h, b)
                }
                SfTrace::Escaped => Traced::Escaped,
                SfTrace::Lost => Traced::Lost,
            })
        }
        Microgeometry::LayeredSlab(slab) => walk_slab(slab, scene.max_events, wi, channel, rng),
    })
}

/// Ray origin above the geometry whose path crosses z = 0 at the entry point.
fn entry_point(ext: [f64; 2], height: f64, wi: Direction, uv: Option<[f64; 2]>, rng: &mut Rng) -> Vec3 {
    let [u, v] = uv.unwrap_or_else(|| [rng.uniform(), rng.uniform()]);
    let base = Vec3::new(u * ext[0], v * ext[1], 0.0);
    base + wi.vec() * (height / wi.z().max(1e-9))
}

enum Traced<'a> {
    Hit(TraceHit, &'a MicroBrdf),
    Escaped,
    Lost,
}

/// Surface walk over a periodic tile of size `ext`; the origin is wrapped
/// back into the tile before every trace to keep coordinates small.
#[allow(clippy::too_many_arguments)]
fn walk_surfaces<'a>(
    max_events: u32,
    mut origin: Vec3,
    ext: [f64; 2],
    eps: f64,
    wi: Direction,
    channel: usize,
    rng: &mut Rng,
    trace: impl Fn(Vec3, Vec3) -> Traced<'a>,
) -> WalkOutcome {
    let mut dir = -wi.vec();
    let mut events = 0;
    loop {
        origin.x = origin.x.rem_euclid(ext[0]);
        origin.y = origin.y.rem_euclid(ext[1]);
        match trace(origin, dir) {
            Traced::Escaped => return WalkOutcome::exited(dir, events),
            Traced::Lost => return WalkOutcome::trapped(events),
            Traced::Hit(hit, brdf) => {
                events += 1;
                if events > max_events {
                    return WalkOutcome::trapped(max_events);
                }
                let frame = Frame::from_normal(hit.n);
                let s = micro_sample(brdf, frame.to_local(-dir), channel, rng);
                if s.wo.z <= 0.0 || !survives(s.weight, rng) {
                    return WalkOutcome::absorbed(events);
                }
                dir = frame.to_world(s.wo).normalize();
                origin = hit.p + hit.n * eps;
            }
        }
    }
}

/// Slab between z = 0 (rough dielectric) and z = -thickness (optional rough
/// conductor), filled with a homogeneous medium.
fn walk_slab(slab: &LayeredSlab, max_events: u32, wi: Direction, channel: usize, rng: &mut Rng) -> WalkOutcome {
    let sigma_t = slab.sigma_t[channel];
    let mut events = 1;
    let s = micro_sample(&slab.top, wi.vec(), channel, rng);
    if !survives(s.weight, rng) {
        return WalkOutcome::absorbed(events);
    }
    if s.wo.z > 0.0 {
        return WalkOutcome::exited(s.wo, events);
    }
    let mut dir = s.wo;
    let mut z = 0.0;
    loop {
        if events >= max_events {
            return WalkOutcome::trapped(max_events);
        }
        let to_boundary = if dir.z < 0.0 {
            (z + slab.thickness) / -dir.z
        } else if dir.z > 0.0 {
            -z / dir.z
        } else {
            f64::INFINITY
        };
        let free = if sigma_t > 0.0 {
            -(1.0 - rng.uniform()).ln() / sigma_t
        } else {
            f64::INFINITY
        };
        events += 1;
        if free < to_boundary {
            z += dir.z * free;
            if !survives(slab.albedo[channel], rng) {
                return WalkOutcome::absorbed(events);
            }
            dir = slab.phase.sample(dir, rng);
            continue;
        }
        if !to_boundary.is_finite() {
            return WalkOutcome::trapped(events);
        }
        if dir.z < 0.0 {
            z = -slab.thickness;
            let Some(bottom) = &slab.bottom else {
                return WalkOutcome::absorbed(events);
            };
            let s = micro_sample(bottom, -dir, channel, rng);
            if s.wo.z <= 0.0 || !survives(s.weight, rng) {
                return WalkOutcome::absorbed(events);
            }
            dir = s.wo;
        } else {
            z = 0.0;
            let s = micro_sample(&slab.top, -dir, channel, rng);
            if !survives(s.weight, rng) {
                return WalkOutcome::absorbed(events);
            }
            if s.wo.z > 0.0 {
                return WalkOutcome::exited(s.wo, events);
            }
            dir = s.wo;
        }
    }
}
