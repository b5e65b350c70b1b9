//! Invertible layers, their tied inverse counterparts and stack builders.
//!
//! Every trainable layer refers to its storage through a [`ParamId`]. The
//! inverse-role twin of a layer holds the same id, so the decoder of an
//! invertible stack owns no parameters of its own.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init;
use crate::kernels::ConvGeom;
use crate::param::{ParamId, ParamStore};
use crate::scalar::{cst, Real};
use crate::tape::{inv_leaky_scalar, Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_ALPHA: f64 = 2.0;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Which of the two mappings of a tied pair a layer performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Forward,
    Inverse,
}

impl Role {
    pub fn flip(self) -> Role {
        match self {
            Role::Forward => Role::Inverse,
            Role::Inverse => Role::Forward,
        }
    }
}

/// An instantiated layer. Batched inputs carry the batch on axis 0:
/// `[N, features]` for linear layers and `[N, C, H, W]` for convolutions.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `w` is `[out, in]`. Forward maps `x -> W x`, inverse maps `y -> W^T y`.
    Linear { w: ParamId, role: Role },
    /// Forward is the convolution described by `geom`; inverse is its
    /// transposed convolution with the same kernel.
    Conv { k: ParamId, geom: ConvGeom, role: Role },
    /// Forward adds `b` per channel/feature, inverse subtracts it.
    Bias { b: ParamId, role: Role },
    /// Bijective leaky activation and its exact inverse.
    InvAct { alpha: f64, role: Role },
    /// Forward `sigma(T2^T T1 x + x)`; inverse `(T1^T T2 + I) sigma^-1(y)`,
    /// where `T1`, `T2` are the Toeplitz maps of kernels `k1`, `k2`.
    InvRes {
        k1: ParamId,
        k2: ParamId,
        geom: ConvGeom,
        alpha: f64,
        role: Role,
    },
    LeakyRelu { slope: f64 },
    InstanceNorm,
    Tanh,
    Sigmoid,
}

impl Layer {
    /// The tied counterpart. Fails for layers without an exact inverse.
    pub fn inverse(&self) -> Result<Layer> {
        let mut l = self.clone();
        match &mut l {
            Layer::Linear { role, .. }
            | Layer::Conv { role, .. }
            | Layer::Bias { role, .. }
            | Layer::InvAct { role, .. }
            | Layer::InvRes { role, .. } => *role = role.flip(),
            other => {
                return Err(Error::Construction(format!(
                    "{} has no invertible counterpart",
                    other.kind()
                )))
            }
        }
        Ok(l)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Linear { .. } => "linear",
            Layer::Conv { .. } => "conv",
            Layer::Bias { .. } => "bias",
            Layer::InvAct { .. } => "inv-act",
            Layer::InvRes { .. } => "inv-res",
            Layer::LeakyRelu { .. } => "leaky-relu",
            Layer::InstanceNorm => "instance-norm",
            Layer::Tanh => "tanh",
            Layer::Sigmoid => "sigmoid",
        }
    }

    pub fn role(&self) -> Role {
        match self {
            Layer::Linear { role, .. }
            | Layer::Conv { role, .. }
            | Layer::Bias { role, .. }
            | Layer::InvAct { role, .. }
            | Layer::InvRes { role, .. } => *role,
            _ => Role::Forward,
        }
    }

    /// Storages read by this layer.
    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Layer::Linear { w, .. } => vec![*w],
            Layer::Conv { k, .. } => vec![*k],
            Layer::Bias { b, .. } => vec![*b],
            Layer::InvRes { k1, k2, .. } => vec![*k1, *k2],
            _ => Vec::new(),
        }
    }

    /// Storages that are weights (as opposed to biases).
    pub fn weight_params(&self) -> Vec<ParamId> {
        match self {
            Layer::Bias { .. } => Vec::new(),
            _ => self.params(),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn out_shape<T: Real>(&self, store: &ParamStore<T>, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Linear { w, role } => {
                let (o, i) = store.value(*w).dims2()?;
                let (from, to) = match role {
                    Role::Forward => (i, o),
                    Role::Inverse => (o, i),
                };
                if input != [from] {
                    return Err(Error::shape("linear", input, &[from]));
                }
                Ok(vec![to])
            }
            Layer::Conv { geom, role, .. } => {
                let (from, to) = conv_shapes(geom);
                let (from, to) = match role {
                    Role::Forward => (from, to),
                    Role::Inverse => (to, from),
                };
                if input != from {
                    return Err(Error::shape("conv", input, &from));
                }
                Ok(to.to_vec())
            }
            Layer::Bias { b, .. } => {
                if input.is_empty() || input[0] != store.value(*b).len() {
                    return Err(Error::shape("bias", input, store.value(*b).shape()));
                }
                Ok(input.to_vec())
            }
            Layer::InvRes { geom, .. } => {
                let (from, _) = conv_shapes(geom);
                if input != from {
                    return Err(Error::shape("inv-res", input, &from));
                }
                Ok(input.to_vec())
            }
            Layer::InstanceNorm if input.len() != 3 => Err(Error::Dimension(format!(
                "instance norm needs [C,H,W] samples, got {input:?}"
            ))),
            _ => Ok(input.to_vec()),
        }
    }

    /// Records this layer on `tape`.
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match *self {
            Layer::Linear { w, role } => {
                let wv = tape.param(store, w);
                tape.matmul(x, false, wv, role == Role::Forward)
            }
            Layer::Conv { k, geom, role } => {
                let kv = tape.param(store, k);
                match role {
                    Role::Forward => tape.conv(x, kv, geom.stride, geom.pad),
                    Role::Inverse => tape.conv_transposed(x, kv, geom.stride, geom.pad, (geom.h, geom.w)),
                }
            }
            Layer::Bias { b, role } => {
                let bv = tape.param(store, b);
                let sign = if role == Role::Forward { T::one() } else { -T::one() };
                tape.add_channel(x, bv, sign)
            }
            Layer::InvAct { alpha, role } => tape.inv_leaky(x, cst(alpha), role == Role::Inverse),
            Layer::InvRes {
                k1,
                k2,
                geom,
                alpha,
                role,
            } => {
                let (k1v, k2v) = (tape.param(store, k1), tape.param(store, k2));
                let (s, p, hw) = (geom.stride, geom.pad, (geom.h, geom.w));
                match role {
                    Role::Forward => {
                        let h = tape.conv(x, k1v, s, p)?;
                        let h = tape.conv_transposed(h, k2v, s, p, hw)?;
                        let h = tape.add(h, x)?;
                        tape.inv_leaky(h, cst(alpha), false)
                    }
                    Role::Inverse => {
                        let d = tape.inv_leaky(x, cst(alpha), true)?;
                        let h = tape.conv(d, k2v, s, p)?;
                        let h = tape.conv_transposed(h, k1v, s, p, hw)?;
                        tape.add(h, d)
                    }
                }
            }
            Layer::LeakyRelu { slope } => Ok(tape.leaky_relu(x, cst(slope))),
            Layer::InstanceNorm => tape.instance_norm(x),
            Layer::Tanh => Ok(tape.tanh(x)),
            Layer::Sigmoid => Ok(tape.sigmoid(x)),
        }
    }
}

fn conv_shapes(g: &ConvGeom) -> ([usize; 3], [usize; 3]) {
    ([g.c_in, g.h, g.w], [g.c_out, g.out_h(), g.out_w()])
}

/// Ordered layers with a fixed per-sample input shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    pub input: Vec<usize>,
    pub layers: Vec<Layer>,
    /// `Inverse` for the mirrored decoder of an invertible stack.
    pub role: Role,
}

impl Stack {
    pub fn new(input: Vec<usize>, layers: Vec<Layer>) -> Self {
        Stack {
            input,
            layers,
            role: Role::Forward,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Per-sample shape after each layer (first entry is the input).
    pub fn shapes<T: Real>(&self, store: &ParamStore<T>) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![self.input.clone()];
        for l in &self.layers {
            let next = l.out_shape(store, out.last().unwrap())?;
            out.push(next);
        }
        Ok(out)
    }

    pub fn output_shape<T: Real>(&self, store: &ParamStore<T>) -> Result<Vec<usize>> {
        Ok(self.shapes(store)?.pop().unwrap())
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let want = &self.input;
        let got = tape.shape(x);
        if got.len() != want.len() + 1 || &got[1..] != &want[..] {
            return Err(Error::shape("stack input", &got[1..], want));
        }
        self.layers.iter().try_fold(x, |v, l| l.apply(tape, store, v))
    }

    /// Evaluates the stack on a batch without keeping the tape.
    pub fn apply<T: Real>(&self, store: &ParamStore<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = tape.leaf(x.clone());
        let out = self.forward(&mut tape, store, v)?;
        Ok(tape.value(out).clone())
    }

    /// Distinct storages in first-use order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for l in &self.layers {
            for id in l.params() {
                if !ids.contains(&id) {
                    ids.push(id);
                }
            }
        }
        ids
    }

    /// The reversed, inverse-role mirror sharing every storage.
    pub fn inverted<T: Real>(&self, store: &ParamStore<T>) -> Result<Stack> {
        let layers = self
            .layers
            .iter()
            .rev()
            .map(Layer::inverse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Stack {
            input: self.output_shape(store)?,
            layers,
            role: self.role.flip(),
        })
    }
}

/// Layer description used by the builders. Feature and channel counts of
/// the input side are inferred from the running shape.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Linear { out: usize },
    /// Untied transposed linear map to `out` features, stored as `[in, out]`.
    LinearT { out: usize },
    Conv { c_out: usize, k: usize, stride: usize, pad: usize },
    /// Untied transposed convolution back to `c_out x out_hw`.
    ConvT {
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        out_hw: (usize, usize),
    },
    Bias,
    InvAct { alpha: f64 },
    InvRes { k: usize, alpha: f64 },
    LeakyRelu { slope: f64 },
    InstanceNorm,
    Tanh,
    Sigmoid,
}

impl LayerSpec {
    pub fn is_invertible(&self) -> bool {
        matches!(
            self,
            LayerSpec::Linear { .. }
                | LayerSpec::Conv { .. }
                | LayerSpec::Bias
                | LayerSpec::InvAct { .. }
                | LayerSpec::InvRes { .. }
        )
    }
}

/// Encoder description: per-sample input shape plus ordered layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StackSpec {
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

/// Initial values for freshly created weights. Biases always start at zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with std `1/sqrt(fan_in)`.
    LeCun,
    Normal(f64),
    Zeros,
}

impl Init {
    fn sample<T: Real>(self, shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
        match self {
            Init::LeCun => init::lecun_normal(shape, rng),
            Init::Normal(std) => init::normal(shape, std, rng),
            Init::Zeros => Tensor::zeros(shape),
        }
    }
}

/// Instantiates `spec` as a plain stack with fresh storages named
/// `{prefix}.{index}.{weight|bias|k1|k2}`.
pub fn build_stack<T: Real>(
    spec: &StackSpec,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: Init,
    rng: &mut impl Rng,
) -> Result<Stack> {
    let mut shape = spec.input.clone();
    let mut layers = Vec::with_capacity(spec.layers.len());
    for (i, ls) in spec.layers.iter().enumerate() {
        let name = |suffix: &str| -> String { format!("{prefix}.{i}.{suffix}") };
        let layer = match *ls {
            LayerSpec::Linear { out } => {
                let [inp] = shape[..] else {
                    return Err(Error::Construction(format!("linear layer {i} on shape {shape:?}")));
                };
                let w = store.add(name("weight"), init.sample(&[out, inp], rng))?;
                Layer::Linear { w, role: Role::Forward }
            }
            LayerSpec::LinearT { out } => {
                let [inp] = shape[..] else {
                    return Err(Error::Construction(format!("linear layer {i} on shape {shape:?}")));
                };
                let w = store.add(name("weight"), init.sample(&[inp, out], rng))?;
                Layer::Linear { w, role: Role::Inverse }
            }
            LayerSpec::Conv { c_out, k, stride, pad } => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Construction(format!("conv layer {i} on shape {shape:?}")));
                };
                let geom = ConvGeom::new(c, (h, w), c_out, k, stride, pad)?;
                let kid = store.add(name("weight"), init.sample(&geom.kernel_shape(), rng))?;
                Layer::Conv {
                    k: kid,
                    geom,
                    role: Role::Forward,
                }
            }
            LayerSpec::ConvT {
                c_out,
                k,
                stride,
                pad,
                out_hw,
            } => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Construction(format!("conv layer {i} on shape {shape:?}")));
                };
                let geom = ConvGeom::new(c_out, out_hw, c, k, stride, pad)?;
                if (geom.out_h(), geom.out_w()) != (h, w) {
                    return Err(Error::Construction(format!(
                        "transposed conv {i}: {out_hw:?} does not down-sample to {h}x{w}"
                    )));
                }
                let kid = store.add(name("weight"), init.sample(&geom.kernel_shape(), rng))?;
                Layer::Conv {
                    k: kid,
                    geom,
                    role: Role::Inverse,
                }
            }
            LayerSpec::Bias => {
                if shape.is_empty() {
                    return Err(Error::Construction(format!("bias layer {i} on a scalar")));
                }
                let b = store.add(name("bias"), Tensor::zeros(&[shape[0]]))?;
                Layer::Bias { b, role: Role::Forward }
            }
            LayerSpec::InvAct { alpha } => {
                if !(alpha > 0.0) {
                    return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
                }
                Layer::InvAct {
                    alpha,
                    role: Role::Forward,
                }
            }
            LayerSpec::InvRes { k, alpha } => {
                let [c, h, w] = shape[..] else {
                    return Err(Error::Construction(format!("residual block {i} on shape {shape:?}")));
                };
                if k % 2 == 0 {
                    return Err(Error::Dimension(format!(
                        "residual block {i}: even kernel {k} changes the spatial shape"
                    )));
                }
                if !(alpha > 0.0) {
                    return Err(Error::Parameter(format!("alpha must be positive, got {alpha}")));
                }
                let geom = ConvGeom::new(c, (h, w), c, k, 1, k / 2)?;
                let k1 = store.add(name("k1"), init.sample(&geom.kernel_shape(), rng))?;
                let k2 = store.add(name("k2"), init.sample(&geom.kernel_shape(), rng))?;
                Layer::InvRes {
                    k1,
                    k2,
                    geom,
                    alpha,
                    role: Role::Forward,
                }
            }
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu { slope },
            LayerSpec::InstanceNorm => Layer::InstanceNorm,
            LayerSpec::Tanh => Layer::Tanh,
            LayerSpec::Sigmoid => Layer::Sigmoid,
        };
        shape = layer.out_shape(store, &shape)?;
        layers.push(layer);
    }
    Ok(Stack::new(spec.input.clone(), layers))
}

/// Encoder plus decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub encoder: Stack,
    pub decoder: Stack,
}

impl Network {
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        for id in self.decoder.param_ids() {
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        ids
    }

    pub fn reconstruct<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let z = self.encoder.forward(tape, store, x)?;
        self.decoder.forward(tape, store, z)
    }
}

/// Builds the encoder of `spec` and its mirrored decoder: same length,
/// reversed order, each layer in the inverse role on the same storage.
pub fn build_inverted_stack<T: Real>(
    spec: &StackSpec,
    store: &mut ParamStore<T>,
    prefix: &str,
    init: Init,
    rng: &mut impl Rng,
) -> Result<Network> {
    if let Some((i, l)) = spec.layers.iter().enumerate().find(|(_, l)| !l.is_invertible()) {
        return Err(Error::Construction(format!("layer {i} ({l:?}) is not invertible")));
    }
    let encoder = build_stack(spec, store, prefix, init, rng)?;
    let decoder = encoder.inverted(store)?;
    Ok(Network { encoder, decoder })
}

/// Scalars in distinct storages (tied pairs counted once).
pub fn parameter_count<T: Real>(net: &Network, store: &ParamStore<T>) -> usize {
    store.count(&net.param_ids())
}

/// Scalar count of the same architecture with the decoder's weights stored
/// separately from the encoder's. Biases are not duplicated.
pub fn untied_parameter_count<T: Real>(net: &Network, store: &ParamStore<T>) -> usize {
    let mut weights = Vec::new();
    for l in &net.encoder.layers {
        weights.extend(l.weight_params());
    }
    parameter_count(net, store) + store.count(&weights)
}

/// Element-wise bijective leaky activation.
pub fn inv_leaky_relu<T: Real>(x: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    Ok(x.map(|v| inv_leaky_scalar(v, alpha, false)))
}

/// Exact inverse of [`inv_leaky_relu`].
pub fn inv_leaky_relu_inverse<T: Real>(y: &Tensor<T>, alpha: T) -> Result<Tensor<T>> {
    check_alpha(alpha)?;
    Ok(y.map(|v| inv_leaky_scalar(v, alpha, true)))
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    if alpha > T::zero() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("alpha must be positive, got {alpha}")))
    }
}
