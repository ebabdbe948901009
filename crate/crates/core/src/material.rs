//! The learned material: flow density times albedo, with the three queries a
//! renderer needs and a self-describing container file (`.psm`).
//!
//! Container layout: `"PSMD" | u32 header length | JSON header | f32 blobs`,
//! all little-endian. The header lists the blobs in file order with their
//! lengths and carries a SHA-256 digest of the blob bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::albedo::{albedo_eval, AlbedoModel};
use crate::error::{Error, Result};
use crate::flow::{flow_pdf_batch, flow_sample, Conds, FlowCond, FlowModel, NeuralTexture};
use crate::geom::{disk_to_dir, pdf_projected_to_solid, vec_to_disk, Direction, DiskPoint, Rng, Vec3};
use crate::nn::{DenseNet, NetLayout};

pub const CONTAINER_MAGIC: [u8; 4] = *b"PSMD";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    /// Hash of the scene the training data came from.
    pub scene_hash: u64,
    /// SHA-256 (hex) of the training configuration.
    pub config_digest: String,
    /// Pipeline stages that produced the model, in order (e.g. `flow`, `albedo`).
    #[serde(default)]
    pub stages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PureSampleMaterial {
    pub flow: FlowModel,
    pub albedo: AlbedoModel,
    pub texture: Option<NeuralTexture>,
    pub metadata: Metadata,
}

/// Result of [`PureSampleMaterial::sample`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaterialSample {
    pub wo: Direction,
    /// Density per solid angle.
    pub pdf: f64,
    /// `f * cos(theta_o) / pdf` per channel.
    pub weight: [f64; 3],
    pub channel: usize,
}

/// SHA-256 (hex) of a configuration's JSON form.
pub fn config_digest<T: Serialize>(cfg: &T) -> String {
    hex_digest(&serde_json::to_vec(cfg).expect("config serializes"))
}

/// Index of the largest entry, the lowest index on ties.
pub fn argmax_channel(a: [f64; 3]) -> usize {
    let mut k = 0;
    for c in 1..3 {
        if a[c] > a[k] {
            k = c;
        }
    }
    k
}

fn upper(v: Vec3) -> Option<Direction> {
    if v.z > 0.0 {
        Direction::from_vec(v).ok()
    } else {
        None
    }
}

impl PureSampleMaterial {
    pub fn new(flow: FlowModel, albedo: AlbedoModel, texture: Option<NeuralTexture>, metadata: Metadata) -> Result<Self> {
        if flow.sv != albedo.sv || flow.sv != texture.is_some() {
            return Err(Error::Invalid(format!(
                "sv flags disagree: flow {}, albedo {}, texture present {}",
                flow.sv,
                albedo.sv,
                texture.is_some()
            )));
        }
        Ok(PureSampleMaterial { flow, albedo, texture, metadata })
    }

    pub fn sv(&self) -> bool {
        self.flow.sv
    }

    fn feature(&self, uv: Option<[f64; 2]>) -> Result<Option<Vec<f32>>> {
        match (&self.texture, uv) {
            (Some(t), Some(uv)) => Ok(Some(t.lookup(uv))),
            (Some(_), None) => Err(Error::MissingFeature),
            (None, Some(_)) => Err(Error::Invalid("uv given for a homogeneous material".into())),
            (None, None) => Ok(None),
        }
    }

    /// Albedo at `wi` (and `uv` for spatially varying materials).
    pub fn albedo(&self, wi: Direction, uv: Option<[f64; 2]>) -> Result<[f64; 3]> {
        let f = self.feature(uv)?;
        albedo_eval(&self.albedo, wi, f.as_deref())
    }

    /// Flow conditions for the three channels at `wi` (and `uv`).
    pub fn flow_conds(&self, wi: Direction, uv: Option<[f64; 2]>) -> Result<[FlowCond; 3]> {
        let f = self.feature(uv)?;
        self.conds(wi, f.as_deref())
    }

    fn conds(&self, wi: Direction, feature: Option<&[f32]>) -> Result<[FlowCond; 3]> {
        Ok([
            FlowCond::new(wi, 0, feature)?,
            FlowCond::new(wi, 1, feature)?,
            FlowCond::new(wi, 2, feature)?,
        ])
    }

    /// BRDF value `rho(wo | wi, c) * alpha_c(wi)` per channel; zero when either
    /// direction is not strictly above the surface.
    pub fn eval(&self, wi: Vec3, wo: Vec3, uv: Option<[f64; 2]>) -> Result<[f64; 3]> {
        let feature = self.feature(uv)?;
        let (Some(wi), Some(wo)) = (upper(wi), upper(wo)) else {
            return Ok([0.0; 3]);
        };
        let a = albedo_eval(&self.albedo, wi, feature.as_deref())?;
        let conds = self.conds(wi, feature.as_deref())?;
        let p = vec_to_disk(wo.vec())?;
        let rho = flow_pdf_batch(&self.flow, Conds::PerRow(&conds), &[p, p, p])?;
        Ok([rho[0] * a[0], rho[1] * a[1], rho[2] * a[2]])
    }

    /// `eval` for many outgoing directions sharing one incident direction.
    pub fn eval_many(&self, wi: Direction, wos: &[DiskPoint], uv: Option<[f64; 2]>) -> Result<Vec<[f64; 3]>> {
        let feature = self.feature(uv)?;
        let a = albedo_eval(&self.albedo, wi, feature.as_deref())?;
        let conds = self.conds(wi, feature.as_deref())?;
        let mut out = vec![[0.0; 3]; wos.len()];
        for c in 0..3 {
            let rho = flow_pdf_batch(&self.flow, Conds::Shared(&conds[c]), wos)?;
            for (o, r) in out.iter_mut().zip(rho) {
                o[c] = r * a[c];
            }
        }
        Ok(out)
    }

    /// Importance samples an outgoing direction from the flow of the channel
    /// with the largest albedo. `None` when the density at the sample vanishes.
    pub fn sample(&self, wi: Vec3, uv: Option<[f64; 2]>, rng: &mut Rng) -> Result<Option<MaterialSample>> {
        let feature = self.feature(uv)?;
        let Some(wi) = upper(wi) else {
            return Ok(None);
        };
        let a = albedo_eval(&self.albedo, wi, feature.as_deref())?;
        let k = argmax_channel(a);
        let conds = self.conds(wi, feature.as_deref())?;
        let (p, rho_k) = flow_sample(&self.flow, &conds[k], rng)?;
        let wo = disk_to_dir(p)?;
        let pdf = pdf_projected_to_solid(rho_k, wo);
        if !(pdf > 0.0) || !pdf.is_finite() {
            return Ok(None);
        }
        let rho = flow_pdf_batch(&self.flow, Conds::PerRow(&conds), &[p, p, p])?;
        // f_c cos / pdf = rho_c alpha_c cos / (rho_k cos).
        let weight = [0, 1, 2].map(|c| if c == k { a[c] } else { rho[c] * a[c] / rho_k });
        Ok(Some(MaterialSample { wo, pdf, weight, channel: k }))
    }

    /// Solid-angle density with which [`Self::sample`] produces `wo`.
    pub fn pdf(&self, wi: Vec3, wo: Vec3, uv: Option<[f64; 2]>) -> Result<f64> {
        let feature = self.feature(uv)?;
        let (Some(wi), Some(wo)) = (upper(wi), upper(wo)) else {
            return Ok(0.0);
        };
        let a = albedo_eval(&self.albedo, wi, feature.as_deref())?;
        let cond = FlowCond::new(wi, argmax_channel(a), feature.as_deref())?;
        let rho = flow_pdf_batch(&self.flow, Conds::Shared(&cond), &[vec_to_disk(wo.vec())?])?;
        Ok(pdf_projected_to_solid(rho[0], wo))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs: Vec<(&str, &[f32])> = vec![("flow", self.flow.net.params()), ("albedo", self.albedo.net.params())];
        if let Some(t) = &self.texture {
            blobs.push(("texture", &t.data));
        }
        let mut body = Vec::new();
        for (_, b) in &blobs {
            for v in *b {
                body.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            version: CONTAINER_VERSION,
            sv: self.sv(),
            flow: NetHeader { layout: self.flow.net.layout().clone(), steps: Some(self.flow.steps) },
            albedo: NetHeader { layout: self.albedo.net.layout().clone(), steps: None },
            texture: self.texture.as_ref().map(|t| TextureHeader { width: t.width, height: t.height, dim: t.dim }),
            metadata: self.metadata.clone(),
            blobs: blobs.iter().map(|(n, b)| BlobHeader { name: n.to_string(), len: b.len() }).collect(),
            digest: hex_digest(&body),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(8 + json.len() + body.len());
        out.extend_from_slice(&CONTAINER_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated(format!("{} bytes, container header needs 8", bytes.len())));
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("length checked");
        if magic != CONTAINER_MAGIC {
            return Err(Error::BadMagic { expected: CONTAINER_MAGIC, found: magic });
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("sliced")) as usize;
        if bytes.len() < 8 + hlen {
            return Err(Error::Truncated(format!("header declares {hlen} bytes, {} present", bytes.len() - 8)));
        }
        let header: Header = serde_json::from_slice(&bytes[8..8 + hlen])
            .map_err(|e| Error::Malformed(format!("container header: {e}")))?;
        if header.version != CONTAINER_VERSION {
            return Err(Error::Version { found: header.version, supported: CONTAINER_VERSION });
        }
        let body = &bytes[8 + hlen..];
        let declared: usize = header.blobs.iter().map(|b| b.len * 4).sum();
        if body.len() != declared {
            return Err(Error::SizeMismatch(format!("header declares {declared} blob bytes, file has {}", body.len())));
        }
        let computed = hex_digest(body);
        if computed != header.digest {
            return Err(Error::Integrity { expected: header.digest, computed });
        }
        let take = |name: &str| -> Result<Vec<f32>> {
            let b = header
                .blobs
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| Error::Malformed(format!("missing blob `{name}`")))?;
            let start: usize = header.blobs.iter().take_while(|x| x.name != name).map(|x| x.len * 4).sum();
            Ok(body[start..start + b.len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunked by 4")))
                .collect())
        };
        let flow_params = take("flow")?;
        let albedo_params = take("albedo")?;
        let texture_data = if header.texture.is_some() { Some(take("texture")?) } else { None };
        let net = |h: &NetHeader, p: Vec<f32>, what: &str| -> Result<DenseNet<f32>> {
            let expected = h.layout.param_count();
            if p.len() != expected {
                return Err(Error::Shape(format!("{what} layout needs {expected} parameters, blob has {}", p.len())));
            }
            DenseNet::from_params(h.layout.clone(), p)
        };
        let flow = FlowModel::new(
            net(&header.flow, flow_params, "flow")?,
            header.flow.steps.ok_or_else(|| Error::Malformed("flow step count missing".into()))?,
            header.sv,
        )?;
        let albedo = AlbedoModel::new(net(&header.albedo, albedo_params, "albedo")?, header.sv)?;
        let texture = match (header.texture, texture_data) {
            (Some(t), Some(d)) => Some(NeuralTexture::from_data(t.width, t.height, t.dim, d)?),
            _ => None,
        };
        PureSampleMaterial::new(flow, albedo, texture, header.metadata)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        PureSampleMaterial::from_bytes(&fs::read(path)?)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetHeader {
    layout: NetLayout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steps: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TextureHeader {
    width: usize,
    height: usize,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlobHeader {
    name: String,
    /// Number of f32 values.
    len: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    sv: bool,
    flow: NetHeader,
    albedo: NetHeader,
    texture: Option<TextureHeader>,
    metadata: Metadata,
    blobs: Vec<BlobHeader>,
    digest: String,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_material(sv: bool) -> PureSampleMaterial {
        let mut rng = Rng::new(11, 0);
        let flow = FlowModel::new(DenseNet::init(FlowModel::layout(sv, &[16, 16], None), &mut rng).unwrap(), 8, sv).unwrap();
        let mut anet = DenseNet::init(AlbedoModel::layout(sv, &[8], None), &mut rng).unwrap();
        let (_, b) = anet.layer_mut(1);
        b.copy_from_slice(&[0.8, 0.5, 0.2]);
        let albedo = AlbedoModel::new(anet, sv).unwrap();
        let texture = sv.then(|| NeuralTexture::init(4, 4, &mut rng).unwrap());
        PureSampleMaterial::new(flow, albedo, texture, Metadata { scene_hash: 42, config_digest: "abc".into(), stages: vec!["flow".into()] }).unwrap()
    }

    #[test]
    fn channel_selection() {
        assert_eq!(argmax_channel([0.8, 0.5, 0.2]), 0);
        assert_eq!(argmax_channel([0.5, 0.5, 0.2]), 0);
        assert_eq!(argmax_channel([0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax_channel([0.1, 0.2, 0.3]), 2);
        for s in [0.01, 3.0, 1e6] {
            assert_eq!(argmax_channel([0.3 * s, 0.7 * s, 0.2 * s]), 1);
        }
    }

    #[test]
    fn eval_is_pdf_times_albedo() {
        let m = random_material(false);
        let mut rng = Rng::new(2, 0);
        for _ in 0..200 {
            let wi = crate::geom::sample_uniform_hemisphere(&mut rng);
            let wo = crate::geom::sample_uniform_hemisphere(&mut rng);
            let f = m.eval(wi.vec(), wo.vec(), None).unwrap();
            let a = m.albedo(wi, None).unwrap();
            for c in 0..3 {
                let rho = crate::flow::flow_pdf(&m.flow, &FlowCond::new(wi, c, None).unwrap(), vec_to_disk(wo.vec()).unwrap()).unwrap();
                assert!((f[c] - rho * a[c]).abs() <= 1e-9 * f[c].abs());
            }
            let many = m.eval_many(wi, &[vec_to_disk(wo.vec()).unwrap()], None).unwrap();
            for c in 0..3 {
                assert!((many[0][c] - f[c]).abs() <= 1e-9 * f[c].abs());
            }
        }
        assert_eq!(m.eval(Vec3::Z, Vec3::new(0.0, 0.6, -0.8), None).unwrap(), [0.0; 3]);
        assert_eq!(m.pdf(Vec3::Z, Vec3::new(1.0, 0.0, 0.0), None).unwrap(), 0.0);
    }

    #[test]
    fn sample_matches_pdf_and_eval() {
        let m = random_material(false);
        let mut rng = Rng::new(5, 0);
        let wi = Vec3::new(0.3, -0.2, 0.9327379053088815);
        for _ in 0..50 {
            let s = m.sample(wi, None, &mut rng).unwrap().unwrap();
            assert_eq!(s.channel, 0);
            let pdf = m.pdf(wi, s.wo.vec(), None).unwrap();
            assert!((pdf - s.pdf).abs() <= 1e-6 * pdf, "{pdf} vs {}", s.pdf);
            let f = m.eval(wi, s.wo.vec(), None).unwrap();
            for c in 0..3 {
                let w = f[c] * s.wo.z() / s.pdf;
                assert!((w - s.weight[c]).abs() <= 1e-9 * w.abs().max(1e-12));
            }
        }
    }

    #[test]
    fn container_round_trip() {
        for sv in [false, true] {
            let m = random_material(sv);
            let bytes = m.to_bytes();
            let back = PureSampleMaterial::from_bytes(&bytes).unwrap();
            assert_eq!(back, m);
            let uv = sv.then_some([0.3, 0.7]);
            assert_eq!(back.eval(Vec3::Z, Vec3::new(0.6, 0.0, 0.8), uv).unwrap(), m.eval(Vec3::Z, Vec3::new(0.6, 0.0, 0.8), uv).unwrap());
        }
    }

    #[test]
    fn container_errors() {
        let bytes = random_material(false).to_bytes();
        let cut = &bytes[..bytes.len() - 4];
        assert!(matches!(PureSampleMaterial::from_bytes(cut), Err(Error::SizeMismatch(_))));
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 3] ^= 0x40;
        assert!(matches!(PureSampleMaterial::from_bytes(&flipped), Err(Error::Integrity { .. })));
        let mut magic = bytes.clone();
        magic[0] = b'Q';
        assert!(matches!(PureSampleMaterial::from_bytes(&magic), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn sv_requires_uv() {
        let m = random_material(true);
        assert!(matches!(m.eval(Vec3::Z, Vec3::Z, None), Err(Error::MissingFeature)));
        assert!(m.eval(Vec3::Z, Vec3::Z, Some([0.5, 0.5])).is_ok());
        let h = random_material(false);
        assert!(h.eval(Vec3::Z, Vec3::Z, Some([0.5, 0.5])).is_err());
    }
}
