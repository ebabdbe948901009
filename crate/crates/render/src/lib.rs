//! A small path tracer for quads lit by point lights and a constant
//! environment, used to exercise learned materials end to end.

pub mod image;
pub mod scene;

use std::f64::consts::FRAC_1_PI;

use psample_core::geom::{sample_cosine_hemisphere, sample_uniform_hemisphere, Frame, Rng, Vec3};
use psample_core::Result;
use rayon::prelude::*;

pub use image::{read_pfm, write_pfm, write_ppm, Image};
pub use scene::{Material, RenderScene, SceneFile};

pub const TILE: usize = 16;
pub const MAX_DEPTH: usize = 16;
/// Bounces after which Russian roulette starts.
pub const RR_DEPTH: usize = 5;

const TAG_RENDER: u64 = 0x5245_4e44;
const ENV_PDF: f64 = 0.5 * FRAC_1_PI;
const T_MIN: f64 = 1e-9;

/// How the environment light is sampled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    /// Material and light sampling combined with the power heuristic.
    #[default]
    Mis,
    /// Environment reached only by material-sampled rays.
    MaterialOnly,
    /// Environment reached only by explicit light samples.
    LightOnly,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RenderOptions {
    pub seed: u64,
    pub strategy: Strategy,
    /// Overrides the scene's samples per pixel.
    pub spp: Option<usize>,
}

pub fn luminance(c: [f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

fn power_heuristic(a: f64, b: f64) -> f64 {
    let (a2, b2) = (a * a, b * b);
    if a2 + b2 > 0.0 {
        a2 / (a2 + b2)
    } else {
        0.0
    }
}

struct BsdfSample {
    wo: Vec3,
    /// Solid-angle density.
    pdf: f64,
    /// `f cos / pdf` per channel.
    weight: [f64; 3],
}

impl Material {
    fn eval(&self, wi: Vec3, wo: Vec3, uv: Option<[f64; 2]>) -> Result<[f64; 3]> {
        match self {
            Material::Lambertian { albedo } => Ok(if wi.z > 0.0 && wo.z > 0.0 { albedo.map(|a| a * FRAC_1_PI) } else { [0.0; 3] }),
            Material::Neural(m) => m.eval(wi, wo, uv),
        }
    }

    fn pdf(&self, wi: Vec3, wo: Vec3, uv: Option<[f64; 2]>) -> Result<f64> {
        match self {
            Material::Lambertian { .. } => Ok(if wi.z > 0.0 && wo.z > 0.0 { wo.z * FRAC_1_PI } else { 0.0 }),
            Material::Neural(m) => m.pdf(wi, wo, uv),
        }
    }

    fn sample(&self, wi: Vec3, uv: Option<[f64; 2]>, rng: &mut Rng) -> Result<Option<BsdfSample>> {
        match self {
            Material::Lambertian { albedo } => {
                if wi.z <= 0.0 {
                    return Ok(None);
                }
                let wo = sample_cosine_hemisphere(rng).vec();
                Ok((wo.z > 0.0).then(|| BsdfSample { wo, pdf: wo.z * FRAC_1_PI, weight: *albedo }))
            }
            Material::Neural(m) => Ok(m.sample(wi, uv, rng)?.map(|s| BsdfSample { wo: s.wo.vec(), pdf: s.pdf, weight: s.weight })),
        }
    }

    /// Neural materials with a texture always need coordinates.
    fn needs_uv(&self) -> bool {
        matches!(self, Material::Neural(m) if m.sv())
    }
}

struct Hit {
    t: f64,
    quad: usize,
    a: f64,
    b: f64,
}

fn intersect_quad(q: &scene::Quad, o: Vec3, d: Vec3) -> Option<(f64, f64, f64)> {
    let n = q.edge_u.cross(q.edge_v);
    let denom = n.dot(d);
    if denom == 0.0 {
        return None;
    }
    let t = n.dot(q.corner - o) / denom;
    if !(t > T_MIN) {
        return None;
    }
    let w = o + d * t - q.corner;
    let nn = n.dot(n);
    let a = w.cross(q.edge_v).dot(n) / nn;
    let b = q.edge_u.cross(w).dot(n) / nn;
    ((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b)).then_some((t, a, b))
}

fn intersect(s: &RenderScene, o: Vec3, d: Vec3, skip: usize) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, q) in s.quads.iter().enumerate() {
        if i == skip {
            continue;
        }
        if let Some((t, a, b)) = intersect_quad(q, o, d) {
            if best.as_ref().is_none_or(|h| t < h.t) {
                best = Some(Hit { t, quad: i, a, b });
            }
        }
    }
    best
}

fn occluded(s: &RenderScene, o: Vec3, d: Vec3, max_t: f64, skip: usize) -> bool {
    s.quads
        .iter()
        .enumerate()
        .any(|(i, q)| i != skip && intersect_quad(q, o, d).is_some_and(|(t, _, _)| t < max_t * (1.0 - 1e-9)))
}

/// Radiance arriving at `origin` from direction `-dir`.
fn radiance(s: &RenderScene, mut origin: Vec3, mut dir: Vec3, strategy: Strategy, rng: &mut Rng) -> Result<[f64; 3]> {
    let mut l = [0.0; 3];
    let mut beta = [1.0; 3];
    // Density of the material sample that produced `dir`; None for camera rays.
    let mut prev_pdf: Option<f64> = None;
    let mut skip = usize::MAX;
    for depth in 0..MAX_DEPTH {
        let Some(hit) = intersect(s, origin, dir, skip) else {
            if let Some(env) = s.environment {
                let w = match (prev_pdf, strategy) {
                    (None, _) | (Some(_), Strategy::MaterialOnly) => 1.0,
                    (Some(_), Strategy::LightOnly) => 0.0,
                    (Some(p), Strategy::Mis) => power_heuristic(p, ENV_PDF),
                };
                for c in 0..3 {
                    l[c] += beta[c] * env[c] * w;
                }
            }
            break;
        };
        let q = &s.quads[hit.quad];
        let p = origin + dir * hit.t;
        // Two-sided: shade in the frame facing the incoming ray.
        let frame = if q.frame.n.dot(dir) < 0.0 { q.frame } else { Frame { s: q.frame.s, t: -q.frame.t, n: -q.frame.n } };
        let mat = &s.materials[q.material];
        let uv = mat.needs_uv().then(|| match q.uv {
            Some(m) => [m.offset[0] + m.scale[0] * hit.a, m.offset[1] + m.scale[1] * hit.b],
            None => [hit.a, hit.b],
        });
        let wi = frame.to_local(-dir);

        for light in &s.point_lights {
            let to = light.position - p;
            let d2 = to.dot(to);
            let wl = to / d2.sqrt();
            let cos = wl.dot(frame.n);
            if cos <= 0.0 || occluded(s, p, wl, d2.sqrt(), hit.quad) {
                continue;
            }
            let f = mat.eval(wi, frame.to_local(wl), uv)?;
            for c in 0..3 {
                l[c] += beta[c] * f[c] * light.intensity[c] * cos / d2;
            }
        }

        if let (Some(env), true) = (s.environment, strategy != Strategy::MaterialOnly) {
            let wl = sample_uniform_hemisphere(rng).vec();
            let world = frame.to_world(wl);
            if !occluded(s, p, world, f64::INFINITY, hit.quad) {
                let f = mat.eval(wi, wl, uv)?;
                let w = match strategy {
                    Strategy::Mis => power_heuristic(ENV_PDF, mat.pdf(wi, wl, uv)?),
                    _ => 1.0,
                };
                for c in 0..3 {
                    l[c] += beta[c] * f[c] * wl.z * env[c] / ENV_PDF * w;
                }
            }
        }

        let Some(bs) = mat.sample(wi, uv, rng)? else {
            break;
        };
        for c in 0..3 {
            beta[c] *= bs.weight[c];
        }
        prev_pdf = Some(bs.pdf);
        origin = p;
        dir = frame.to_world(bs.wo).normalize();
        skip = hit.quad;
        if depth + 1 >= RR_DEPTH {
            let survive = luminance(beta).clamp(0.05, 0.95);
            if rng.uniform() >= survive {
                break;
            }
            beta = beta.map(|b| b / survive);
        }
    }
    Ok(l)
}

fn primary_ray(s: &RenderScene, x: usize, y: usize, rng: &mut Rng) -> Vec3 {
    let sx = (x as f64 + rng.uniform()) / s.width as f64;
    let sy = (y as f64 + rng.uniform()) / s.height as f64;
    let c = &s.camera;
    (c.forward + c.right * (2.0 * sx - 1.0) + c.up * (1.0 - 2.0 * sy)).normalize()
}

/// Renders the scene. Each (tile, sample index) pair owns a random stream,
/// so the image does not depend on the number of worker threads.
pub fn render(s: &RenderScene, opts: &RenderOptions) -> Result<Image> {
    let spp = opts.spp.unwrap_or(s.spp).max(1);
    let (tx, ty) = (s.width.div_ceil(TILE), s.height.div_ceil(TILE));
    let tiles: Vec<Result<Vec<[f64; 3]>>> = (0..tx * ty)
        .into_par_iter()
        .map(|t| {
            let (x0, y0) = ((t % tx) * TILE, (t / tx) * TILE);
            let (w, h) = (TILE.min(s.width - x0), TILE.min(s.height - y0));
            let mut acc = vec![[0.0; 3]; w * h];
            for k in 0..spp {
                let mut rng = Rng::keyed(opts.seed, &[TAG_RENDER, t as u64, k as u64]);
                for (i, a) in acc.iter_mut().enumerate() {
                    let dir = primary_ray(s, x0 + i % w, y0 + i / w, &mut rng);
                    let l = radiance(s, s.camera.origin, dir, opts.strategy, &mut rng)?;
                    for c in 0..3 {
                        a[c] += l[c];
                    }
                }
            }
            Ok(acc)
        })
        .collect();
    let mut img = Image::new(s.width, s.height);
    for (t, tile) in tiles.into_iter().enumerate() {
        let tile = tile?;
        let (x0, y0) = ((t % tx) * TILE, (t / tx) * TILE);
        let w = TILE.min(s.width - x0);
        for (i, a) in tile.iter().enumerate() {
            img.set(x0 + i % w, y0 + i / w, a.map(|v| (v / spp as f64) as f32));
        }
    }
    Ok(img)
}
