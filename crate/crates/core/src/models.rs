//! Reconstruction models compared in the orthonormality study: the tied
//! invertible autoencoder and three untied baselines.
//!
//! All four expose the same encoder and decoder matrix shapes for a given
//! architecture, so their linearizations are directly comparable.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{self, rng_for};
use crate::layers::{self, Init, LayerSpec, Network, Stack, StackSpec, DEFAULT_ALPHA, LEAKY_SLOPE};
use crate::linearize::LinearizedMap;
use crate::losses;
use crate::param::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Seed stream reserved for weight initialization.
pub const INIT_STREAM: u64 = 0x1417;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    InvAuto,
    Auto,
    Cycle,
    Vae,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::InvAuto, ModelKind::Auto, ModelKind::Cycle, ModelKind::Vae];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::InvAuto => "invauto",
            ModelKind::Auto => "auto",
            ModelKind::Cycle => "cycle",
            ModelKind::Vae => "vae",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "model",
                name: s.into(),
            })
    }
}

/// Encoder geometry shared by every model kind.
#[derive(Debug, Clone, PartialEq)]
pub enum ReconArch {
    /// Fully connected `input -> hidden[0] -> ... -> hidden[last]`.
    Mlp { input: usize, hidden: Vec<usize> },
    /// Strided convolutions `[c, h, w] -> channels[0] -> ...`, each with the
    /// same kernel, stride and padding.
    Conv {
        input: [usize; 3],
        channels: Vec<usize>,
        k: usize,
        stride: usize,
        pad: usize,
    },
}

impl ReconArch {
    /// 784 -> 256 -> 64.
    pub fn mnist_mlp() -> Self {
        ReconArch::Mlp {
            input: 784,
            hidden: vec![256, 64],
        }
    }

    /// 1x28x28 -> 4x14x14 -> 8x7x7 with 3x3 stride-2 kernels.
    pub fn mnist_conv() -> Self {
        ReconArch::Conv {
            input: [1, 28, 28],
            channels: vec![4, 8],
            k: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::mnist_mlp()),
            "conv" => Ok(Self::mnist_conv()),
            _ => Err(Error::Unknown {
                what: "architecture",
                name: s.into(),
            }),
        }
    }

    /// Per-sample input shape.
    pub fn input_shape(&self) -> Vec<usize> {
        match self {
            ReconArch::Mlp { input, .. } => vec![*input],
            ReconArch::Conv { input, .. } => input.to_vec(),
        }
    }

    fn depth(&self) -> usize {
        match self {
            ReconArch::Mlp { hidden, .. } => hidden.len(),
            ReconArch::Conv { channels, .. } => channels.len(),
        }
    }

    /// Per-sample shapes entering each weight layer, plus the final latent.
    fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![self.input_shape()];
        match self {
            ReconArch::Mlp { hidden, .. } => out.extend(hidden.iter().map(|&h| vec![h])),
            ReconArch::Conv {
                input,
                channels,
                k,
                stride,
                pad,
            } => {
                let (mut h, mut w) = (input[1], input[2]);
                let mut c = input[0];
                for &co in channels {
                    let g = crate::kernels::ConvGeom::new(c, (h, w), co, *k, *stride, *pad)?;
                    (h, w, c) = (g.out_h(), g.out_w(), co);
                    out.push(vec![c, h, w]);
                }
            }
        }
        Ok(out)
    }

    fn down(&self, i: usize) -> LayerSpec {
        match self {
            ReconArch::Mlp { hidden, .. } => LayerSpec::Linear { out: hidden[i] },
            ReconArch::Conv {
                channels, k, stride, pad, ..
            } => LayerSpec::Conv {
                c_out: channels[i],
                k: *k,
                stride: *stride,
                pad: *pad,
            },
        }
    }

    /// Untied layer mapping the output of weight layer `i` back to its input.
    fn up(&self, i: usize, shapes: &[Vec<usize>]) -> LayerSpec {
        match self {
            ReconArch::Mlp { .. } => LayerSpec::LinearT { out: shapes[i][0] },
            ReconArch::Conv { k, stride, pad, .. } => LayerSpec::ConvT {
                c_out: shapes[i][0],
                k: *k,
                stride: *stride,
                pad: *pad,
                out_hw: (shapes[i][1], shapes[i][2]),
            },
        }
    }

    /// `[W_1, b_1, sigma, ..., W_L, b_L, sigma]`.
    pub fn invertible_spec(&self, alpha: f64) -> StackSpec {
        let mut layers = Vec::new();
        for i in 0..self.depth() {
            layers.extend([self.down(i), LayerSpec::Bias, LayerSpec::InvAct { alpha }]);
        }
        StackSpec {
            input: self.input_shape(),
            layers,
        }
    }

    /// Encoder of the untied baselines: LeakyReLU after every bias, and
    /// `last_act = false` drops the final one.
    fn baseline_encoder(&self, upto: usize, last_act: bool) -> StackSpec {
        let mut layers = Vec::new();
        for i in 0..upto {
            layers.extend([self.down(i), LayerSpec::Bias]);
            if last_act || i + 1 < upto {
                layers.push(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE });
            }
        }
        StackSpec {
            input: self.input_shape(),
            layers,
        }
    }

    /// Conventional decoder: transposed-shape layers with their own biases,
    /// LeakyReLU between them and a linear output.
    fn baseline_decoder(&self) -> Result<StackSpec> {
        let shapes = self.shapes()?;
        let mut layers = Vec::new();
        for i in (0..self.depth()).rev() {
            layers.extend([self.up(i, &shapes), LayerSpec::Bias]);
            if i > 0 {
                layers.push(LayerSpec::LeakyRelu { slope: LEAKY_SLOPE });
            }
        }
        Ok(StackSpec {
            input: shapes.last().unwrap().clone(),
            layers,
        })
    }
}

/// Variational autoencoder: a shared trunk, mean and log-variance heads,
/// and a conventional decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub trunk: Stack,
    pub mu: Stack,
    pub logvar: Stack,
    pub decoder: Stack,
    pub beta: f64,
}

impl Vae {
    /// Deterministic encoder (trunk followed by the mean head).
    pub fn mean_encoder(&self) -> Stack {
        let mut layers = self.trunk.layers.clone();
        layers.extend(self.mu.layers.iter().cloned());
        Stack::new(self.trunk.input.clone(), layers)
    }

    fn encode<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<(Var, Var)> {
        let h = self.trunk.forward(tape, store, x)?;
        let mu = self.mu.forward(tape, store, h)?;
        let lv = self.logvar.forward(tape, store, h)?;
        Ok((mu, lv))
    }
}

/// ELBO-style loss: reconstruction MSE plus `beta * KL`, with the latent
/// sampled as `mu + exp(lv/2) * noise`.
pub fn vae_loss<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, vae: &Vae, x: Var, noise: Tensor<T>) -> Result<Var> {
    let (mu, lv) = vae.encode(tape, store, x)?;
    let half = tape.scale(lv, crate::scalar::cst(0.5));
    let sd = tape.exp(half);
    let eps = tape.leaf(noise);
    let spread = tape.mul(sd, eps)?;
    let z = tape.add(mu, spread)?;
    let r = vae.decoder.forward(tape, store, z)?;
    let rec = tape.mse(r, x)?;
    let kl = losses::kl_divergence(tape, mu, lv)?;
    let kl = tape.scale(kl, crate::scalar::cst(vae.beta));
    tape.add(rec, kl)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconModel {
    InvAuto(Network),
    Auto(Network),
    /// Two autoencoders trained jointly; `a` is the one that is evaluated.
    Cycle { a: Network, b: Network },
    Vae(Vae),
}

impl ReconModel {
    /// Fresh model with storages named under `kind.name()`.
    pub fn build<T: Real>(kind: ModelKind, arch: &ReconArch, store: &mut ParamStore<T>, seed: u64) -> Result<Self> {
        let rng = &mut rng_for(seed, INIT_STREAM);
        Self::build_with(kind, arch, store, kind.name(), DEFAULT_ALPHA, rng)
    }

    pub fn build_with<T: Real>(
        kind: ModelKind,
        arch: &ReconArch,
        store: &mut ParamStore<T>,
        prefix: &str,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let p = |s: &str| -> String { format!("{prefix}.{s}") };
        Ok(match kind {
            ModelKind::InvAuto => ReconModel::InvAuto(layers::build_inverted_stack(
                &arch.invertible_spec(alpha),
                store,
                &p("enc"),
                Init::LeCun,
                rng,
            )?),
            ModelKind::Auto => ReconModel::Auto(untied(arch, store, prefix, rng)?),
            ModelKind::Cycle => {
                let a = untied(arch, store, &p("a"), rng)?;
                let b = untied(arch, store, &p("b"), rng)?;
                ReconModel::Cycle { a, b }
            }
            ModelKind::Vae => {
                let depth = arch.depth();
                let trunk = layers::build_stack(&arch.baseline_encoder(depth - 1, true), store, &p("trunk"), Init::LeCun, rng)?;
                let head = StackSpec {
                    input: arch.shapes()?[depth - 1].clone(),
                    layers: vec![arch.down(depth - 1), LayerSpec::Bias],
                };
                let mu = layers::build_stack(&head, store, &p("mu"), Init::LeCun, rng)?;
                let logvar = layers::build_stack(&head, store, &p("logvar"), Init::LeCun, rng)?;
                let decoder = layers::build_stack(&arch.baseline_decoder()?, store, &p("dec"), Init::LeCun, rng)?;
                ReconModel::Vae(Vae {
                    trunk,
                    mu,
                    logvar,
                    decoder,
                    beta: 1.0,
                })
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ReconModel::InvAuto(_) => ModelKind::InvAuto,
            ReconModel::Auto(_) => ModelKind::Auto,
            ReconModel::Cycle { .. } => ModelKind::Cycle,
            ReconModel::Vae(_) => ModelKind::Vae,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        match self {
            ReconModel::InvAuto(n) | ReconModel::Auto(n) => n.param_ids(),
            ReconModel::Cycle { a, b } => {
                let mut v = a.param_ids();
                v.extend(b.param_ids());
                v
            }
            ReconModel::Vae(v) => {
                let mut ids = v.trunk.param_ids();
                for s in [&v.mu, &v.logvar, &v.decoder] {
                    ids.extend(s.param_ids());
                }
                ids
            }
        }
    }

    /// Encoder and decoder whose linear parts define `E` and `D`.
    pub fn stacks(&self) -> (Stack, Stack) {
        match self {
            ReconModel::InvAuto(n) | ReconModel::Auto(n) | ReconModel::Cycle { a: n, .. } => {
                (n.encoder.clone(), n.decoder.clone())
            }
            ReconModel::Vae(v) => (v.mean_encoder(), v.decoder.clone()),
        }
    }

    pub fn linearize<T: Real>(&self, store: &ParamStore<T>) -> Result<LinearizedMap> {
        let (e, d) = self.stacks();
        LinearizedMap::of_stacks(&e, &d, store)
    }

    /// Training objective on batch `x`. `rng` feeds the VAE's sampling noise.
    pub fn train_loss<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, rng: &mut impl Rng) -> Result<Var> {
        match self {
            ReconModel::InvAuto(n) | ReconModel::Auto(n) => losses::auto_loss(tape, store, n, x),
            ReconModel::Cycle { a, b } => {
                let ra = losses::auto_loss(tape, store, a, x)?;
                let rb = losses::auto_loss(tape, store, b, x)?;
                let fa = |t: &mut Tape<T>, v| a.reconstruct(t, store, v);
                let fb = |t: &mut Tape<T>, v| b.reconstruct(t, store, v);
                let c = losses::cycle_pair_loss(tape, fa, fb, x, x)?;
                let s = tape.add(ra, rb)?;
                tape.add(s, c)
            }
            ReconModel::Vae(v) => {
                let shape = tape.shape(x).to_vec();
                let lat = v.mu.output_shape(store)?;
                let mut nshape = vec![shape[0]];
                nshape.extend(lat);
                let noise = init::normal(&nshape, 1.0, rng);
                vae_loss(tape, store, v, x, noise)
            }
        }
    }

    /// Deterministic reconstruction (the mean path for the VAE, model `a`
    /// for the cycle pair).
    pub fn reconstruct<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        match self {
            ReconModel::InvAuto(n) | ReconModel::Auto(n) | ReconModel::Cycle { a: n, .. } => n.reconstruct(tape, store, x),
            ReconModel::Vae(v) => {
                let (mu, _) = v.encode(tape, store, x)?;
                v.decoder.forward(tape, store, mu)
            }
        }
    }

    /// Mean squared reconstruction error over `data` (`[N, ...]`), evaluated
    /// in chunks of `chunk` samples.
    pub fn mse_on<T: Real>(&self, store: &ParamStore<T>, data: &crate::data::Dataset<T>, chunk: usize) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut total = 0.0;
        let idx: Vec<usize> = (0..data.len()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let x = tape.leaf(data.batch(part)?);
            let r = self.reconstruct(&mut tape, store, x)?;
            let l = tape.mse(r, x)?;
            total += tape.value(l).item()?.as_f64() * part.len() as f64;
        }
        Ok(total / data.len() as f64)
    }
}

fn untied<T: Real>(arch: &ReconArch, store: &mut ParamStore<T>, prefix: &str, rng: &mut impl Rng) -> Result<Network> {
    let encoder = layers::build_stack(&arch.baseline_encoder(arch.depth(), true), store, &format!("{prefix}.enc"), Init::LeCun, rng)?;
    let decoder = layers::build_stack(&arch.baseline_decoder()?, store, &format!("{prefix}.dec"), Init::LeCun, rng)?;
    Ok(Network { encoder, decoder })
}
