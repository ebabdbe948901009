//! Directional albedo: the brute-force acceptance-ratio estimate and a small
//! network regressing it from spherical-harmonic encoded directions.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::flow::{NeuralTexture, FEATURE_DIM};
use crate::geom::{sh_encode, Direction, Rng, SH_COEFFS};
use crate::microgeo::{trace_walk, MicrogeometryScene};
use crate::nn::{Adam, DenseNet, NetLayout};

const GRAD_CHUNK: usize = 2048;

/// Fraction of `n` walks that leave the microgeometry.
pub fn mc_albedo_estimate(
    scene: &MicrogeometryScene,
    wi: Direction,
    channel: usize,
    uv: Option<[f64; 2]>,
    n: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Invalid("albedo estimate needs at least one walk".into()));
    }
    let mut accepted = 0usize;
    for _ in 0..n {
        accepted += trace_walk(scene, wi, channel, uv, rng)?.exit_direction().is_some() as usize;
    }
    Ok(accepted as f64 / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlbedoModel {
    pub net: DenseNet<f32>,
    pub sv: bool,
}

pub fn albedo_input_dim(sv: bool) -> usize {
    SH_COEFFS + if sv { FEATURE_DIM } else { 0 }
}

fn encode(wi: Direction, feature: Option<&[f32]>, out: &mut Vec<f32>) {
    out.extend(sh_encode(wi.vec()).iter().map(|&v| v as f32));
    if let Some(f) = feature {
        out.extend_from_slice(f);
    }
}

impl AlbedoModel {
    pub fn layout(sv: bool, hidden: &[usize], residual: Option<usize>) -> NetLayout {
        let l = NetLayout::mlp(albedo_input_dim(sv), hidden, 3);
        match residual {
            Some(r) => l.with_residual(r),
            None => l,
        }
    }

    /// A model predicting `value` everywhere (zero weights, output bias only).
    pub fn constant(layout: NetLayout, sv: bool, value: [f64; 3]) -> Result<Self> {
        let mut net = DenseNet::zeros(layout)?;
        let last = net.layout().layers() - 1;
        net.layer_mut(last).1.copy_from_slice(&value.map(|v| v as f32));
        AlbedoModel::new(net, sv)
    }

    pub fn new(net: DenseNet<f32>, sv: bool) -> Result<Self> {
        if net.input_size() != albedo_input_dim(sv) || net.output_size() != 3 {
            return Err(Error::Shape(format!(
                "albedo network maps {} -> {}, expected {} -> 3",
                net.input_size(),
                net.output_size(),
                albedo_input_dim(sv)
            )));
        }
        Ok(AlbedoModel { net, sv })
    }

    /// Unclamped network output.
    pub fn raw(&self, wi: Direction, feature: Option<&[f32]>) -> Result<[f64; 3]> {
        match (self.sv, feature) {
            (true, None) => return Err(Error::MissingFeature),
            (true, Some(f)) if f.len() != FEATURE_DIM => {
                return Err(Error::Shape(format!("feature has {} values, expected {FEATURE_DIM}", f.len())))
            }
            (false, Some(_)) => return Err(Error::Invalid("feature given to a homogeneous albedo model".into())),
            _ => {}
        }
        let mut x = Vec::with_capacity(self.net.input_size());
        encode(wi, feature, &mut x);
        let y = self.net.forward(&x)?;
        Ok([y[0] as f64, y[1] as f64, y[2] as f64])
    }
}

/// Albedo per channel, clamped to `[0, 1]`.
pub fn albedo_eval(model: &AlbedoModel, wi: Direction, feature: Option<&[f32]>) -> Result<[f64; 3]> {
    Ok(model.raw(wi, feature)?.map(|v| v.clamp(0.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlbedoTrainConfig {
    pub iterations: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr * final_lr_ratio`.
    pub final_lr_ratio: f64,
    pub weight_decay: f64,
    /// Groups per step; the whole set when it is smaller.
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub residual: Option<usize>,
}

impl Default for AlbedoTrainConfig {
    fn default() -> Self {
        AlbedoTrainConfig {
            iterations: 3000,
            lr: 3e-3,
            final_lr_ratio: 0.05,
            weight_decay: 1.0,
            batch_size: 4096,
            hidden: vec![32, 32],
            residual: None,
        }
    }
}

impl AlbedoTrainConfig {
    pub fn sv_default() -> Self {
        AlbedoTrainConfig {
            hidden: vec![128; 5],
            residual: Some(2),
            ..AlbedoTrainConfig::default()
        }
    }
}

struct Example {
    input: Vec<f32>,
    target: [f32; 3],
    mask: [bool; 3],
}

/// Regresses per-group acceptance ratios with an L1 loss. Spatially varying
/// data is conditioned on the (frozen) texture feature at each group's uv.
pub fn train_albedo(
    data: &Dataset,
    texture: Option<&NeuralTexture>,
    cfg: &AlbedoTrainConfig,
    seed: u64,
) -> Result<(AlbedoModel, Vec<f64>)> {
    if data.sv != texture.is_some() {
        return Err(if data.sv {
            Error::MissingFeature
        } else {
            Error::Invalid("texture given for homogeneous data".into())
        });
    }
    let mut examples = Vec::new();
    for g in data.groups() {
        let mask = [0, 1, 2].map(|c| g.walks[c] > 0);
        if !mask.iter().any(|&m| m) {
            continue;
        }
        let target = [0, 1, 2].map(|c| g.ratio(c).unwrap_or(0.0) as f32);
        let feature = match (texture, g.uv) {
            (Some(t), Some([u, v])) => Some(t.lookup([u as f64, v as f64])),
            (Some(_), None) => return Err(Error::Invalid("spatially varying group without uv".into())),
            _ => None,
        };
        let mut input = Vec::with_capacity(albedo_input_dim(data.sv));
        encode(crate::dataset::disk_point_to_dir(g.wi), feature.as_deref(), &mut input);
        examples.push(Example { input, target, mask });
    }
    if examples.is_empty() {
        return Err(Error::EmptyGroups);
    }
    let mut rng = Rng::new(seed, 0x616c_6264);
    let net = DenseNet::init(AlbedoModel::layout(data.sv, &cfg.hidden, cfg.residual), &mut rng)?;
    let mut model = AlbedoModel::new(net, data.sv)?;
    let mut adam = Adam::new(model.net.params().len(), cfg.lr);
    adam.weight_decay = cfg.weight_decay;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let batch = cfg.batch_size.min(examples.len()).max(1);
    let mut cursor = order.len();
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let (loss, grads) = l1_step(&model.net, &examples, idx)?;
        let p = it as f64 / cfg.iterations as f64;
        adam.lr = cfg.lr * (cfg.final_lr_ratio + (1.0 - cfg.final_lr_ratio) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()));
        adam.step(model.net.params_mut(), &grads).map_err(|_| Error::NonFinite { batch: it })?;
        log.push(loss);
    }
    Ok((model, log))
}

/// Mean absolute error over the unmasked outputs of `idx` and its gradient.
fn l1_step(net: &DenseNet<f32>, examples: &[Example], idx: &[usize]) -> Result<(f64, Vec<f32>)> {
    let n_terms: usize = idx.iter().map(|&i| examples[i].mask.iter().filter(|&&m| m).count()).sum();
    let scale = 1.0 / n_terms.max(1) as f32;
    let parts: Vec<Result<(f64, Vec<f32>)>> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut x = Vec::with_capacity(chunk.len() * net.input_size());
            for &i in chunk {
                x.extend_from_slice(&examples[i].input);
            }
            let tape = net.forward_tape(&x, chunk.len())?;
            let out = tape.output();
            let mut up = vec![0.0f32; out.len()];
            let mut loss = 0.0;
            for (r, &i) in chunk.iter().enumerate() {
                let e = &examples[i];
                for c in 0..3 {
                    if e.mask[c] {
                        let d = out[3 * r + c] - e.target[c];
                        loss += d.abs() as f64;
                        up[3 * r + c] = d.signum() * (d != 0.0) as u8 as f32 * scale;
                    }
                }
            }
            let mut grads = vec![0.0f32; net.params().len()];
            net.backward_tape(&tape, &up, &mut grads, None)?;
            Ok((loss, grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut grads = vec![0.0f32; net.params().len()];
    for p in parts {
        let (l, g) = p?;
        loss += l;
        grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    let loss = loss / n_terms.max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { batch: 0 });
    }
    Ok((loss, grads))
}
