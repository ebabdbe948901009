//! Dense networks with hand-written reverse-mode gradients, forward-mode
//! input Jacobians and the Adam optimizer.
//!
//! Activations are stored row-major with one sample per row. Matrix products
//! go through `matrixmultiply`; everything else is plain loops. The network
//! is generic over the scalar so gradient checks can run in `f64` while
//! training and inference use `f32`.

use std::fmt::Debug;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Rng;

pub trait Scalar: Float + Default + Debug + Send + Sync + 'static {
    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize, k: usize, n: usize,
        alpha: Self, a: &[Self], rsa: isize, csa: isize,
        b: &[Self], rsb: isize, csb: isize,
        beta: Self, c: &mut [Self], rsc: isize, csc: isize,
    );

    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `exp` used by the activations; may trade the last ulp for speed.
    #[inline]
    fn act_exp(self) -> Self {
        self.exp()
    }

    /// In-place SiLU.
    fn silu(z: &mut [Self]) {
        for v in z {
            let s = Self::one() / (Self::one() + (-*v).act_exp());
            *v = *v * s;
        }
    }

    /// In-place SiLU, writing the derivative at each input into `slope`.
    fn silu_slope(z: &mut [Self], slope: &mut [Self]) {
        for (v, d) in z.iter_mut().zip(slope) {
            let s = Self::one() / (Self::one() + (-*v).act_exp());
            *d = s * (Self::one() + *v * (Self::one() - s));
            *v = *v * s;
        }
    }
}

/// Branch-free `exp` for f32 (Cody-Waite range reduction and a degree-6
/// polynomial), relative error around 2e-7. Written so the activation loops
/// auto-vectorize.
#[inline(always)]
fn exp_f32(x: f32) -> f32 {
    const SHIFTER: f32 = 12_582_912.0; // 1.5 * 2^23: rounds to nearest on add
    let x = x.max(-87.0).min(88.0);
    let t = x * std::f32::consts::LOG2_E + SHIFTER;
    let n = t - SHIFTER;
    let r = x - n * 0.693_145_75 - n * 1.428_606_8e-6;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (0.166_666_67 + r * (0.041_666_668 + r * (0.008_333_452 + r * 0.001_388_397_3)))));
    // The low mantissa bits of `t` hold n in two's complement.
    let bits = t.to_bits().wrapping_sub(0x4B40_0000).wrapping_add(127) << 23;
    p * f32::from_bits(bits)
}

impl Scalar for f32 {
    fn gemm(
        m: usize, k: usize, n: usize,
        alpha: f32, a: &[f32], rsa: isize, csa: isize,
        b: &[f32], rsb: isize, csb: isize,
        beta: f32, c: &mut [f32], rsc: isize, csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the strided extents.
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc,
            )
        }
    }

    fn from_f64(x: f64) -> f32 {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn act_exp(self) -> f32 {
        exp_f32(self)
    }

    fn silu(z: &mut [f32]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports the enabled features.
            return unsafe { silu_avx2(z) };
        }
        silu_f32(z)
    }

    fn silu_slope(z: &mut [f32], slope: &mut [f32]) {
        #[cfg(target_arch = "x86_64")]
        if has_avx2() {
            // SAFETY: the CPU supports the enabled features.
            return unsafe { silu_slope_avx2(z, slope) };
        }
        silu_slope_f32(z, slope)
    }
}

#[inline(always)]
fn silu_f32(z: &mut [f32]) {
    for v in z {
        let s = 1.0 / (1.0 + exp_f32(-*v));
        *v *= s;
    }
}

#[inline(always)]
fn silu_slope_f32(z: &mut [f32], slope: &mut [f32]) {
    for (v, d) in z.iter_mut().zip(slope) {
        let s = 1.0 / (1.0 + exp_f32(-*v));
        *d = s * (1.0 + *v * (1.0 - s));
        *v *= s;
    }
}

// The same loops compiled for wider vectors. Rust never contracts a * b + c
// into an FMA, so both paths round identically.
#[cfg(target_arch = "x86_64")]
fn has_avx2() -> bool {
    std::is_x86_feature_detected!("avx2")
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn silu_avx2(z: &mut [f32]) {
    silu_f32(z)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn silu_slope_avx2(z: &mut [f32], slope: &mut [f32]) {
    silu_slope_f32(z, slope)
}

impl Scalar for f64 {
    fn gemm(
        m: usize, k: usize, n: usize,
        alpha: f64, a: &[f64], rsa: isize, csa: isize,
        b: &[f64], rsb: isize, csb: isize,
        beta: f64, c: &mut [f64], rsc: isize, csc: isize,
    ) {
        if m == 0 || n == 0 {
            return;
        }
        // SAFETY: callers pass slices covering the strided extents.
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta,
                c.as_mut_ptr(), rsc, csc,
            )
        }
    }

    fn from_f64(x: f64) -> f64 {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `x * sigmoid(x)`.
    Silu,
    Identity,
}


/// Architecture of a [`DenseNet`]: layer widths, hidden activation and an
/// optional residual layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetLayout {
    /// `[input, hidden..., output]`.
    pub sizes: Vec<usize>,
    pub activation: Activation,
    /// Index of a square linear layer whose input is added to its
    /// pre-activation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<usize>,
}

impl NetLayout {
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Self {
        let mut sizes = vec![input];
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        NetLayout { sizes, activation: Activation::Silu, residual: None }
    }

    pub fn with_residual(mut self, layer: usize) -> Self {
        self.residual = Some(layer);
        self
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("invalid layer sizes {:?}", self.sizes)));
        }
        if let Some(r) = self.residual {
            if r == 0 || r + 1 >= self.sizes.len() || self.sizes[r] != self.sizes[r + 1] {
                return Err(Error::Shape(format!(
                    "residual layer {r} must be a square hidden layer in {:?}",
                    self.sizes
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet<T: Scalar = f32> {
    layout: NetLayout,
    /// Per layer: weights (`out x in`, row-major) then biases.
    params: Vec<T>,
    offsets: Vec<usize>,
}

/// Intermediate values of a batched forward pass.
pub struct Tape<T> {
    batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
    /// Activation derivatives at each hidden pre-activation.
    slopes: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

impl<T: Scalar> DenseNet<T> {
    pub fn zeros(layout: NetLayout) -> Result<Self> {
        layout.validate()?;
        let mut offsets = Vec::with_capacity(layout.layers());
        let mut off = 0;
        for w in layout.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        Ok(DenseNet { params: vec![T::zero(); off], offsets, layout })
    }

    /// Fan-in scaled uniform initialization with zero biases.
    pub fn init(layout: NetLayout, rng: &mut Rng) -> Result<Self> {
        let mut net = DenseNet::zeros(layout)?;
        for l in 0..net.layout.layers() {
            let (fan_in, out) = (net.layout.sizes[l], net.layout.sizes[l + 1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == net.layout.layers() {
                bound *= 0.1;
            }
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * out] {
                *w = T::from_f64(rng.gen_range(-bound..bound));
            }
        }
        Ok(net)
    }

    pub fn from_params(layout: NetLayout, params: Vec<T>) -> Result<Self> {
        let mut net = DenseNet::zeros(layout)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Shape("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn cast<U: Scalar>(&self) -> DenseNet<U> {
        DenseNet {
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::from_f64(p.as_f64())).collect(),
            offsets: self.offsets.clone(),
        }
    }

    pub fn layout(&self) -> &NetLayout {
        &self.layout
    }

    pub fn input_size(&self) -> usize {
        self.layout.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layout.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    /// Mutable views of layer `l`'s weights (`out x in`, row-major) and biases.
    pub fn layer_mut(&mut self, l: usize) -> (&mut [T], &mut [T]) {
        let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        let off = self.offsets[l];
        let (w, rest) = self.params[off..off + i * o + o].split_at_mut(i * o);
        (w, rest)
    }

    fn layer(&self, l: usize) -> (&[T], &[T]) {
        let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        let off = self.offsets[l];
        self.params[off..off + i * o + o].split_at(i * o)
    }

    fn check_input(&self, x: &[T], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_size() {
            return Err(Error::Shape(format!(
                "input has {} values, expected {} x {}",
                x.len(),
                batch,
                self.input_size()
            )));
        }
        Ok(())
    }

    /// `z = a W^T + b`, plus the layer input when `l` is the residual layer.
    fn affine(&self, l: usize, a: &[T], batch: usize, with_bias: bool) -> Vec<T> {
        let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
        let (w, b) = self.layer(l);
        let mut z = vec![T::zero(); batch * o];
        if with_bias {
            for row in z.chunks_exact_mut(o) {
                row.copy_from_slice(b);
            }
        }
        if self.layout.residual == Some(l) {
            for (zz, aa) in z.iter_mut().zip(a) {
                *zz = *zz + *aa;
            }
        }
        T::gemm(batch, i, o, T::one(), a, i as isize, 1, w, 1, i as isize, T::one(), &mut z, o as isize, 1);
        z
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layout.layers() {
            Activation::Identity
        } else {
            self.layout.activation
        }
    }

    /// Batched forward pass; `x` holds `batch` rows of `input_size` values.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_input(x, batch)?;
        let mut a = x.to_vec();
        for l in 0..self.layout.layers() {
            let mut z = self.affine(l, &a, batch, true);
            if self.activation(l) == Activation::Silu {
                T::silu(&mut z);
            }
            a = z;
        }
        Ok(a)
    }

    /// Forward pass that keeps what [`DenseNet::backward_tape`] needs.
    pub fn forward_tape(&self, x: &[T], batch: usize) -> Result<Tape<T>> {
        self.check_input(x, batch)?;
        let mut acts = vec![x.to_vec()];
        let mut slopes = Vec::with_capacity(self.layout.layers());
        for l in 0..self.layout.layers() {
            let mut z = self.affine(l, acts.last().unwrap(), batch, true);
            let mut slope = Vec::new();
            if self.activation(l) == Activation::Silu {
                slope = vec![T::zero(); z.len()];
                T::silu_slope(&mut z, &mut slope);
            }
            slopes.push(slope);
            acts.push(z);
        }
        Ok(Tape { batch, acts, slopes })
    }

    /// Accumulates into `grads` the parameter gradient of
    /// `sum_rows <upstream_row, output_row>`; optionally writes the input
    /// gradient.
    pub fn backward_tape(
        &self,
        tape: &Tape<T>,
        upstream: &[T],
        grads: &mut [T],
        input_grad: Option<&mut Vec<T>>,
    ) -> Result<()> {
        let batch = tape.batch;
        if upstream.len() != batch * self.output_size() {
            return Err(Error::Shape(format!(
                "upstream has {} values, expected {} x {}",
                upstream.len(),
                batch,
                self.output_size()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let want_input = input_grad.is_some();
        let mut dz = upstream.to_vec();
        for l in (0..self.layout.layers()).rev() {
            let (i, o) = (self.layout.sizes[l], self.layout.sizes[l + 1]);
            if !tape.slopes[l].is_empty() {
                for (d, s) in dz.iter_mut().zip(&tape.slopes[l]) {
                    *d = *d * *s;
                }
            }
            let off = self.offsets[l];
            let (gw, gb) = grads[off..off + i * o + o].split_at_mut(i * o);
            let a_prev = &tape.acts[l];
            T::gemm(o, batch, i, T::one(), &dz, 1, o as isize, a_prev, i as isize, 1, T::one(), gw, i as isize, 1);
            for row in dz.chunks_exact(o) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g = *g + *d;
                }
            }
            if l > 0 || want_input {
                let (w, _) = self.layer(l);
                let mut da = vec![T::zero(); batch * i];
                if self.layout.residual == Some(l) {
                    da.copy_from_slice(&dz);
                }
                T::gemm(batch, o, i, T::one(), &dz, o as isize, 1, w, i as isize, 1, T::one(), &mut da, i as isize, 1);
                dz = da;
            }
        }
        if let Some(ig) = input_grad {
            *ig = dz;
        }
        Ok(())
    }

    /// Outputs and the Jacobian of the first two outputs with respect to the
    /// first two inputs, by forward-mode propagation of two tangents. The
    /// Jacobian of row `b` is `[d0/dx0, d0/dx1, d1/dx0, d1/dx1]`.
    pub fn jacobian_2d_batch(&self, x: &[T], batch: usize) -> Result<(Vec<T>, Vec<[T; 4]>)> {
        self.check_input(x, batch)?;
        if self.input_size() < 2 || self.output_size() < 2 {
            return Err(Error::Shape("2D Jacobian needs at least two inputs and outputs".into()));
        }
        let n_in = self.input_size();
        let mut a = x.to_vec();
        // Rows [0, batch) carry d/dx0, rows [batch, 2 batch) carry d/dx1.
        let mut t = vec![T::zero(); 2 * batch * n_in];
        for b in 0..batch {
            t[b * n_in] = T::one();
            t[(batch + b) * n_in + 1] = T::one();
        }
        for l in 0..self.layout.layers() {
            let mut z = self.affine(l, &a, batch, true);
            let mut dz = self.affine(l, &t, 2 * batch, false);
            if self.activation(l) == Activation::Silu {
                let mut slope = vec![T::zero(); z.len()];
                T::silu_slope(&mut z, &mut slope);
                let (d0, d1) = dz.split_at_mut(z.len());
                for ((a, b), s) in d0.iter_mut().zip(d1.iter_mut()).zip(&slope) {
                    *a = *a * *s;
                    *b = *b * *s;
                }
            }
            a = z;
            t = dz;
        }
        let o = self.output_size();
        let jac = (0..batch)
            .map(|b| [t[b * o], t[(batch + b) * o], t[b * o + 1], t[(batch + b) * o + 1]])
            .collect();
        Ok((a, jac))
    }

    /// Single-sample forward pass.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward_batch(x, 1)
    }

    /// Parameter and input gradients of `<upstream, forward(x)>`.
    pub fn backward(&self, x: &[T], upstream: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let tape = self.forward_tape(x, 1)?;
        let mut grads = vec![T::zero(); self.params.len()];
        let mut input_grad = Vec::new();
        self.backward_tape(&tape, upstream, &mut grads, Some(&mut input_grad))?;
        Ok((grads, input_grad))
    }

    /// `d out[r] / d x[c]` for `r, c` in {0, 1}, with `x = point ‖ cond`, via
    /// one reverse pass per output row.
    pub fn input_jacobian_2d(&self, point: [T; 2], cond: &[T]) -> Result<[[T; 2]; 2]> {
        let mut x = vec![point[0], point[1]];
        x.extend_from_slice(cond);
        let tape = self.forward_tape(&x, 1)?;
        let mut jac = [[T::zero(); 2]; 2];
        let mut scratch = vec![T::zero(); self.params.len()];
        for (r, row) in jac.iter_mut().enumerate() {
            let mut up = vec![T::zero(); self.output_size()];
            up[r] = T::one();
            let mut ig = Vec::new();
            self.backward_tape(&tape, &up, &mut scratch, Some(&mut ig))?;
            *row = [ig[0], ig[1]];
        }
        Ok(jac)
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay (AdamW); zero gives plain Adam.
    #[serde(default)]
    pub weight_decay: f64,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// Applies one update. Non-finite gradients abort without touching the
    /// parameters.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} entries, params {}, grads {}",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { batch: self.step as usize });
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = g.as_f64();
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = self.lr * ((*m / c1) / ((*v / c2).sqrt() + self.eps) + self.weight_decay * p.as_f64());
            *p = T::from_f64(p.as_f64() - update);
        }
        Ok(())
    }
}
