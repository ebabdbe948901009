//! Training data from forward walks, and the `.psmp` file format.
//!
//! Every walk is recorded, including absorbed ones, so a single file feeds
//! both the flow (accepted exit directions) and the albedo regression
//! (acceptance ratios per group of walks sharing an incident direction).
//!
//! Layout, little-endian:
//!
//! ```text
//! "PSMP" | u32 version | u8 flags (bit0 = sv) | u64 count
//! count x { f32 wi_u, f32 wi_v, u8 channel, u8 accepted, f32 wo_u, f32 wo_v [, f32 u, f32 v] }
//! optional trailer: "PSMT" | u64 scene hash | u64 seed
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{dir_to_disk, disk_to_dir, sample_uniform_hemisphere, Direction, DiskPoint, Rng};
use crate::microgeo::{trace_walk, MicrogeometryScene, WalkStatus};

pub const MAGIC: [u8; 4] = *b"PSMP";
pub const TRAILER_MAGIC: [u8; 4] = *b"PSMT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 8;
const TRAILER_LEN: usize = 4 + 8 + 8;

const TAG_HOMOGENEOUS: u64 = 0x686f_6d6f;
const TAG_SV: u64 = 0x7376;
const TAG_ALBEDO_SV: u64 = 0x616c_6276;
const SV_CHUNK: usize = 4096;

/// One recorded walk.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathSample {
    pub wi: [f32; 2],
    pub channel: u8,
    pub accepted: bool,
    /// Exit direction on the disk; zero when the walk was absorbed.
    pub wo: [f32; 2],
    pub uv: Option<[f32; 2]>,
}

impl PathSample {
    pub fn wi_disk(&self) -> DiskPoint {
        DiskPoint::new(self.wi[0] as f64, self.wi[1] as f64)
    }

    pub fn wo_disk(&self) -> DiskPoint {
        DiskPoint::new(self.wo[0] as f64, self.wo[1] as f64)
    }

    /// Incident direction; f32 rounding just outside the disk is pulled back.
    pub fn wi_dir(&self) -> Direction {
        disk_point_to_dir(self.wi_disk())
    }
}

pub(crate) fn disk_point_to_dir(p: DiskPoint) -> Direction {
    let r2 = p.radius_sq();
    let p = if r2 > 1.0 {
        let s = 1.0 / r2.sqrt();
        DiskPoint::new(p.u * s, p.v * s)
    } else {
        p
    };
    disk_to_dir(p).unwrap_or(Direction::NORMAL)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sv: bool,
    /// Hash of the generating scene; 0 when unknown.
    pub scene_hash: u64,
    pub seed: u64,
    pub records: Vec<PathSample>,
}

/// Walks sharing one incident direction (and uv), tallied per channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Group {
    pub wi: DiskPoint,
    pub uv: Option<[f32; 2]>,
    pub walks: [u32; 3],
    pub accepted: [u32; 3],
}

impl Group {
    /// Acceptance ratio per channel, `None` for channels without walks.
    pub fn ratio(&self, c: usize) -> Option<f64> {
        (self.walks[c] > 0).then(|| self.accepted[c] as f64 / self.walks[c] as f64)
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(walks, accepted)` per channel.
    pub fn counts(&self) -> [(u64, u64); 3] {
        let mut c = [(0u64, 0u64); 3];
        for r in &self.records {
            let e = &mut c[r.channel as usize];
            e.0 += 1;
            e.1 += r.accepted as u64;
        }
        c
    }

    /// Maximal runs of consecutive records with bitwise-equal `wi` and `uv`.
    pub fn groups(&self) -> Vec<Group> {
        let mut out: Vec<Group> = Vec::new();
        let mut key: Option<([f32; 2], Option<[f32; 2]>)> = None;
        for r in &self.records {
            let same = key.is_some_and(|(wi, uv)| {
                wi.map(f32::to_bits) == r.wi.map(f32::to_bits)
                    && uv.map(|a| a.map(f32::to_bits)) == r.uv.map(|a| a.map(f32::to_bits))
            });
            if !same {
                key = Some((r.wi, r.uv));
                out.push(Group {
                    wi: r.wi_disk(),
                    uv: r.uv,
                    walks: [0; 3],
                    accepted: [0; 3],
                });
            }
            let g = out.last_mut().expect("group pushed above");
            g.walks[r.channel as usize] += 1;
            g.accepted[r.channel as usize] += r.accepted as u32;
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let rec = record_len(self.sv);
        let mut buf = Vec::with_capacity(HEADER_LEN + rec * self.records.len() + TRAILER_LEN);
        buf.extend_from_slice(&MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.sv as u8);
        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for r in &self.records {
            buf.extend_from_slice(&r.wi[0].to_le_bytes());
            buf.extend_from_slice(&r.wi[1].to_le_bytes());
            buf.push(r.channel);
            buf.push(r.accepted as u8);
            buf.extend_from_slice(&r.wo[0].to_le_bytes());
            buf.extend_from_slice(&r.wo[1].to_le_bytes());
            if self.sv {
                let uv = r.uv.unwrap_or([0.0; 2]);
                buf.extend_from_slice(&uv[0].to_le_bytes());
                buf.extend_from_slice(&uv[1].to_le_bytes());
            }
        }
        buf.extend_from_slice(&TRAILER_MAGIC);
        buf.extend_from_slice(&self.scene_hash.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!("{} bytes, header needs {HEADER_LEN}", bytes.len())));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("sliced"));
        if version != VERSION {
            return Err(Error::Version { found: version, supported: VERSION });
        }
        let flags = bytes[8];
        if flags & !1 != 0 {
            return Err(Error::Malformed(format!("unknown flag bits {flags:#04x}")));
        }
        let sv = flags & 1 == 1;
        let count = u64::from_le_bytes(bytes[9..17].try_into().expect("sliced"));
        let rec = record_len(sv);
        let body = (count as u128) * rec as u128;
        let available = (bytes.len() - HEADER_LEN) as u128;
        if body > available {
            return Err(Error::Truncated(format!("header declares {count} records ({body} bytes), {available} present")));
        }
        let body = body as usize;
        let mut records = Vec::with_capacity(count as usize);
        let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().expect("sliced"));
        for k in 0..count as usize {
            let o = HEADER_LEN + k * rec;
            let channel = bytes[o + 8];
            if channel > 2 {
                return Err(Error::Malformed(format!("record {k}: channel {channel}")));
            }
            let accepted = match bytes[o + 9] {
                0 => false,
                1 => true,
                b => return Err(Error::Malformed(format!("record {k}: accepted flag {b}"))),
            };
            records.push(PathSample {
                wi: [f(o), f(o + 4)],
                channel,
                accepted,
                wo: [f(o + 10), f(o + 14)],
                uv: sv.then(|| [f(o + 18), f(o + 22)]),
            });
        }
        let rest = &bytes[HEADER_LEN + body..];
        let (scene_hash, seed) = match rest.len() {
            0 => (0, 0),
            TRAILER_LEN if rest[..4] == TRAILER_MAGIC => (
                u64::from_le_bytes(rest[4..12].try_into().expect("sliced")),
                u64::from_le_bytes(rest[12..20].try_into().expect("sliced")),
            ),
            n => return Err(Error::Malformed(format!("{n} unexpected bytes after the records"))),
        };
        Ok(Dataset { sv, scene_hash, seed, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Dataset::from_bytes(&fs::read(path)?)
    }
}

fn record_len(sv: bool) -> usize {
    if sv {
        26
    } else {
        18
    }
}

fn walk_record(
    scene: &MicrogeometryScene,
    wi: Direction,
    wi_disk: [f32; 2],
    channel: usize,
    uv: Option<[f64; 2]>,
    rng: &mut Rng,
) -> PathSample {
    let outcome = trace_walk(scene, wi, channel, uv, rng).expect("channel and uv validated by the caller");
    let (accepted, wo) = match outcome.status {
        WalkStatus::Exited(d) => {
            let p = dir_to_disk(d);
            (true, [p.u as f32, p.v as f32])
        }
        WalkStatus::Absorbed => (false, [0.0; 2]),
    };
    PathSample {
        wi: wi_disk,
        channel: channel as u8,
        accepted,
        wo,
        uv: uv.map(|[u, v]| [u as f32, v as f32]),
    }
}

/// Incident direction drawn uniformly over the hemisphere, rounded to the
/// precision it is stored with so training sees exactly the walked value.
fn draw_wi(rng: &mut Rng) -> (Direction, [f32; 2]) {
    let p = dir_to_disk(sample_uniform_hemisphere(rng));
    let stored = [p.u as f32, p.v as f32];
    let d = disk_point_to_dir(DiskPoint::new(stored[0] as f64, stored[1] as f64));
    (d, stored)
}

fn draw_uv(rng: &mut Rng) -> [f64; 2] {
    // Stored as f32; rounding up to 1.0 would leave [0, 1).
    let u = (rng.uniform() as f32).min(1.0 - f32::EPSILON / 2.0);
    let v = (rng.uniform() as f32).min(1.0 - f32::EPSILON / 2.0);
    [u as f64, v as f64]
}

fn require_sv(scene: &MicrogeometryScene, sv: bool) -> Result<()> {
    if scene.sv != sv {
        return Err(Error::Invalid(if sv {
            "this generator needs a spatially varying scene".into()
        } else {
            "this generator needs a homogeneous scene".into()
        }));
    }
    Ok(())
}

/// `n_wi` incident directions, each walked `n_per_wi` times per channel.
///
/// Records are ordered by direction, then channel. Each direction owns a
/// random stream, so the output does not depend on the thread count.
pub fn generate_homogeneous(scene: &MicrogeometryScene, n_wi: usize, n_per_wi: usize, seed: u64) -> Result<Dataset> {
    require_sv(scene, false)?;
    let per_dir = vec![n_per_wi; n_wi];
    generate_homogeneous_counts(scene, &per_dir, seed)
}

/// Exactly `total` walks per channel, split into directions of `n_per_wi`
/// walks (the last direction takes the remainder).
pub fn generate_homogeneous_total(scene: &MicrogeometryScene, total: usize, n_per_wi: usize, seed: u64) -> Result<Dataset> {
    require_sv(scene, false)?;
    if n_per_wi == 0 {
        return Err(Error::Invalid("walks per direction must be positive".into()));
    }
    let mut per_dir = vec![n_per_wi; total / n_per_wi];
    if total % n_per_wi != 0 {
        per_dir.push(total % n_per_wi);
    }
    generate_homogeneous_counts(scene, &per_dir, seed)
}

fn generate_homogeneous_counts(scene: &MicrogeometryScene, per_dir: &[usize], seed: u64) -> Result<Dataset> {
    let chunks: Vec<Vec<PathSample>> = per_dir
        .par_iter()
        .enumerate()
        .map(|(i, &n)| {
            let mut rng = Rng::keyed(seed, &[TAG_HOMOGENEOUS, i as u64]);
            let (wi, stored) = draw_wi(&mut rng);
            let mut out = Vec::with_capacity(3 * n);
            for c in 0..3 {
                for _ in 0..n {
                    out.push(walk_record(scene, wi, stored, c, None, &mut rng));
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        sv: false,
        scene_hash: scene.hash(),
        seed,
        records: chunks.concat(),
    })
}

/// `n_pairs` independent (incident direction, uv) draws on a spatially
/// varying scene, one walk per channel each.
pub fn generate_sv(scene: &MicrogeometryScene, n_pairs: usize, seed: u64) -> Result<Dataset> {
    require_sv(scene, true)?;
    let n_chunks = n_pairs.div_ceil(SV_CHUNK);
    let chunks: Vec<Vec<PathSample>> = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = Rng::keyed(seed, &[TAG_SV, k as u64]);
            let n = SV_CHUNK.min(n_pairs - k * SV_CHUNK);
            let mut out = Vec::with_capacity(3 * n);
            for _ in 0..n {
                let (wi, stored) = draw_wi(&mut rng);
                let uv = draw_uv(&mut rng);
                for c in 0..3 {
                    out.push(walk_record(scene, wi, stored, c, Some(uv), &mut rng));
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        sv: true,
        scene_hash: scene.hash(),
        seed,
        records: chunks.concat(),
    })
}

/// Albedo data for spatially varying scenes: `n_wi` groups at a random uv,
/// `n_per` walks per channel in each group.
pub fn generate_albedo_sv(scene: &MicrogeometryScene, n_wi: usize, n_per: usize, seed: u64) -> Result<Dataset> {
    require_sv(scene, true)?;
    let chunks: Vec<Vec<PathSample>> = (0..n_wi)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::keyed(seed, &[TAG_ALBEDO_SV, i as u64]);
            let (wi, stored) = draw_wi(&mut rng);
            let uv = draw_uv(&mut rng);
            let mut out = Vec::with_capacity(3 * n_per);
            for c in 0..3 {
                for _ in 0..n_per {
                    out.push(walk_record(scene, wi, stored, c, Some(uv), &mut rng));
                }
            }
            out
        })
        .collect();
    Ok(Dataset {
        sv: true,
        scene_hash: scene.hash(),
        seed,
        records: chunks.concat(),
    })
}
