//! Vectors, hemisphere/disk parameterizations, spherical harmonics and the
//! base Gaussian shared by every other module.

use std::f64::consts::{FRAC_1_PI, PI};
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

use rand::{CryptoRng, Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the norm of a unit direction.
pub const UNIT_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalize(self) -> Vec3 {
        self / self.length()
    }

    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    pub fn max_elem(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Unit vector in the upper hemisphere of the local shading frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct Direction(Vec3);

impl Direction {
    pub const NORMAL: Direction = Direction(Vec3::Z);

    /// Accepts a unit vector with `z >= 0`.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let v = Vec3::new(x, y, z);
        if !v.is_finite() || (v.length() - 1.0).abs() > UNIT_EPS {
            return Err(Error::Invalid(format!(
                "({x}, {y}, {z}) is not a unit vector"
            )));
        }
        if z < 0.0 {
            return Err(Error::LowerHemisphere(z));
        }
        Ok(Direction(v))
    }

    /// Normalizes `v` first; still rejects the lower hemisphere.
    pub fn from_vec(v: Vec3) -> Result<Self> {
        if v.z < 0.0 {
            return Err(Error::LowerHemisphere(v.z));
        }
        let n = v.normalize();
        if !n.is_finite() {
            return Err(Error::Invalid("zero-length direction".into()));
        }
        Ok(Direction(n))
    }

    pub fn from_angles(theta: f64, phi: f64) -> Result<Self> {
        let s = theta.sin();
        Direction::from_vec(Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos()))
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }

    pub fn y(self) -> f64 {
        self.0.y
    }

    pub fn z(self) -> f64 {
        self.0.z
    }

    pub fn cos_theta(self) -> f64 {
        self.0.z
    }
}

impl TryFrom<[f64; 3]> for Direction {
    type Error = Error;
    fn try_from(a: [f64; 3]) -> Result<Self> {
        Direction::new(a[0], a[1], a[2])
    }
}

impl From<Direction> for [f64; 3] {
    fn from(d: Direction) -> Self {
        d.0.to_array()
    }
}

/// Point in the flow's 2D space. Points representing hemisphere directions
/// lie in the closed unit disk; raw flow outputs may not.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub u: f64,
    pub v: f64,
}

impl DiskPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        DiskPoint { u, v }
    }

    pub fn radius_sq(self) -> f64 {
        self.u * self.u + self.v * self.v
    }

    pub fn on_disk(self) -> bool {
        self.radius_sq() <= 1.0
    }
}

/// Orthographic projection of the upper hemisphere onto the unit disk.
pub fn dir_to_disk(d: Direction) -> DiskPoint {
    DiskPoint::new(d.x(), d.y())
}

/// Same as [`dir_to_disk`] for an arbitrary vector, rejecting `z < 0`.
pub fn vec_to_disk(v: Vec3) -> Result<DiskPoint> {
    Direction::from_vec(v).map(dir_to_disk)
}

pub fn disk_to_dir(p: DiskPoint) -> Result<Direction> {
    let r2 = p.radius_sq();
    if !(r2 <= 1.0) {
        return Err(Error::OffManifold(p.u, p.v));
    }
    Ok(Direction(Vec3::new(p.u, p.v, (1.0 - r2).max(0.0).sqrt())))
}

/// Density per projected solid angle to density per solid angle.
pub fn pdf_projected_to_solid(rho_proj: f64, d: Direction) -> f64 {
    rho_proj * d.cos_theta().max(0.0)
}

/// Reproducible random stream: a ChaCha8 generator keyed by `(seed, stream)`.
///
/// Distinct stream ids address disjoint keystreams of the same seed, so
/// parallel workers can be handed independent streams up front.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    /// Stream keyed by several integers (e.g. tile index and sample index).
    pub fn keyed(seed: u64, keys: &[u64]) -> Self {
        Rng::new(seed, stream_id(keys))
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn uniform_f32(&mut self) -> f32 {
        self.inner.gen::<f32>()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

impl CryptoRng for Rng {}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key tuple into one 64-bit stream id.
pub fn stream_id(keys: &[u64]) -> u64 {
    keys.iter()
        .fold(0x5053_414d_504c_4521, |h, &k| splitmix64(h ^ splitmix64(k)))
}

pub fn sample_uniform_hemisphere(rng: &mut Rng) -> Direction {
    let z = rng.uniform();
    let phi = 2.0 * PI * rng.uniform();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Direction(Vec3::new(r * phi.cos(), r * phi.sin(), z))
}

pub fn sample_cosine_hemisphere(rng: &mut Rng) -> Direction {
    let p = sample_uniform_disk(rng);
    Direction(Vec3::new(p.u, p.v, (1.0 - p.radius_sq()).max(0.0).sqrt()))
}

pub fn sample_uniform_disk(rng: &mut Rng) -> DiskPoint {
    let r = rng.uniform().sqrt();
    let phi = 2.0 * PI * rng.uniform();
    DiskPoint::new(r * phi.cos(), r * phi.sin())
}

pub fn sample_uniform_sphere(rng: &mut Rng) -> Vec3 {
    let z = 1.0 - 2.0 * rng.uniform();
    let phi = 2.0 * PI * rng.uniform();
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

pub fn gaussian2d_sample(rng: &mut Rng) -> DiskPoint {
    DiskPoint::new(rng.normal(), rng.normal())
}

/// Standard bivariate normal density.
pub fn gaussian2d_pdf(p: DiskPoint) -> f64 {
    (-0.5 * p.radius_sq()).exp() * 0.5 * FRAC_1_PI
}

pub fn gaussian2d_log_pdf(p: DiskPoint) -> f64 {
    -0.5 * p.radius_sq() - (2.0 * PI).ln()
}

/// Number of real spherical harmonic coefficients for degrees 0..=4.
pub const SH_COEFFS: usize = 25;

/// Real spherical harmonics of degrees 0..=4, ordered by degree then by
/// order m = -l..=l.
pub fn sh_encode(d: Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let ip = FRAC_1_PI;
    let c1 = (0.75 * ip).sqrt();
    let c2 = 0.5 * (15.0 * ip).sqrt();
    let c20 = 0.25 * (5.0 * ip).sqrt();
    let c22 = 0.25 * (15.0 * ip).sqrt();
    let c33 = 0.25 * (17.5 * ip).sqrt();
    let c32n = 0.5 * (105.0 * ip).sqrt();
    let c31 = 0.25 * (10.5 * ip).sqrt();
    let c30 = 0.25 * (7.0 * ip).sqrt();
    let c32 = 0.25 * (105.0 * ip).sqrt();
    let c44 = 0.75 * (35.0 * ip).sqrt();
    let c43 = 0.75 * (17.5 * ip).sqrt();
    let c42 = 0.75 * (5.0 * ip).sqrt();
    let c41 = 0.75 * (2.5 * ip).sqrt();
    let c40 = 3.0 / 16.0 * ip.sqrt();
    let c42p = 3.0 / 8.0 * (5.0 * ip).sqrt();
    let c44p = 3.0 / 16.0 * (35.0 * ip).sqrt();
    [
        0.5 * ip.sqrt(),
        c1 * y,
        c1 * z,
        c1 * x,
        c2 * x * y,
        c2 * y * z,
        c20 * (3.0 * z2 - 1.0),
        c2 * x * z,
        c22 * (x2 - y2),
        c33 * y * (3.0 * x2 - y2),
        c32n * x * y * z,
        c31 * y * (5.0 * z2 - 1.0),
        c30 * z * (5.0 * z2 - 3.0),
        c31 * x * (5.0 * z2 - 1.0),
        c32 * z * (x2 - y2),
        c33 * x * (x2 - 3.0 * y2),
        c44 * x * y * (x2 - y2),
        c43 * y * z * (3.0 * x2 - y2),
        c42 * x * y * (7.0 * z2 - 1.0),
        c41 * y * z * (7.0 * z2 - 3.0),
        c40 * (35.0 * z2 * z2 - 30.0 * z2 + 3.0),
        c41 * x * z * (7.0 * z2 - 3.0),
        c42p * (x2 - y2) * (7.0 * z2 - 1.0),
        c43 * x * z * (x2 - 3.0 * y2),
        c44p * (x2 * (x2 - 3.0 * y2) - y2 * (3.0 * x2 - y2)),
    ]
}

/// Orthonormal frame around `n` (Duff et al. branchless construction).
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    pub s: Vec3,
    pub t: Vec3,
    pub n: Vec3,
}

impl Frame {
    pub fn from_normal(n: Vec3) -> Self {
        let sign = 1.0f64.copysign(n.z);
        let a = -1.0 / (sign + n.z);
        let b = n.x * n.y * a;
        let s = Vec3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
        let t = Vec3::new(b, sign + n.y * n.y * a, -n.y);
        Frame { s, t, n }
    }

    pub fn from_tangent_normal(tangent: Vec3, n: Vec3) -> Self {
        let s = (tangent - n * n.dot(tangent)).normalize();
        Frame { s, t: n.cross(s), n }
    }

    pub fn to_local(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.s), v.dot(self.t), v.dot(self.n))
    }

    pub fn to_world(&self, v: Vec3) -> Vec3 {
        self.s * v.x + self.t * v.y + self.n * v.z
    }
}

pub fn reflect(v: Vec3, n: Vec3) -> Vec3 {
    n * (2.0 * v.dot(n)) - v
}
