//! Two-domain image translator built around one invertible core.
//!
//! `gen_b = dec_b . E . enc_a` and `gen_a = dec_a . D . enc_b`, where `D` is
//! the tied inverse of `E`. The heads and discriminators are ordinary untied
//! stacks; instance normalization only ever appears in the heads.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::init::rng_for;
use crate::layers::{
    self, build_inverted_stack, build_stack, Init, Layer, LayerSpec, Network, Role, Stack, StackSpec, DEFAULT_ALPHA,
    LEAKY_SLOPE,
};
use crate::models::{ReconArch, ReconModel, INIT_STREAM};
use crate::param::{ParamId, ParamStore};
use crate::scalar::Real;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Generator and discriminator hyper-parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorConfig {
    pub name: String,
    pub image_size: usize,
    pub in_channels: usize,
    /// Feature maps after the first head conv and after each down-sampling.
    pub channels: Vec<usize>,
    /// Residual blocks in `E` (and, inverted, in `D`).
    pub blocks_per_side: usize,
    pub alpha: f64,
    pub head_kernel: usize,
    pub sample_kernel: usize,
    pub res_kernel: usize,
    /// Feature maps of the discriminator's normalized conv rows.
    pub disc_channels: Vec<usize>,
    pub disc_kernel: usize,
    /// Std of the normal weight initializer.
    pub init_std: f64,
}

impl TranslatorConfig {
    /// 32x32 RGB, 16 -> 32 -> 64 features, three blocks per side.
    pub fn desk() -> Self {
        TranslatorConfig {
            name: "desk".into(),
            image_size: 32,
            in_channels: 3,
            channels: vec![16, 32, 64],
            blocks_per_side: 3,
            alpha: DEFAULT_ALPHA,
            head_kernel: 7,
            sample_kernel: 3,
            res_kernel: 3,
            disc_channels: vec![16, 32, 64, 128],
            disc_kernel: 4,
            init_std: 0.02,
        }
    }

    /// 128x128 generator with a 256-feature core and nine blocks per side.
    pub fn table6() -> Self {
        TranslatorConfig {
            name: "table6".into(),
            image_size: 128,
            channels: vec![64, 128, 256],
            blocks_per_side: 9,
            disc_channels: vec![64, 128, 256, 512],
            ..Self::desk()
        }
    }

    /// 512x512 generator with three down-samplings and a 512-feature core.
    pub fn table7() -> Self {
        TranslatorConfig {
            name: "table7".into(),
            image_size: 512,
            channels: vec![64, 128, 256, 512],
            ..Self::table6()
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::desk()),
            "table6" => Ok(Self::table6()),
            "table7" => Ok(Self::table7()),
            _ => Err(Error::Unknown {
                what: "translator architecture",
                name: s.into(),
            }),
        }
    }

    pub fn image_shape(&self) -> Vec<usize> {
        vec![self.in_channels, self.image_size, self.image_size]
    }

    fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.disc_channels.is_empty() {
            return Err(Error::Construction("empty channel schedule".into()));
        }
        let downs = self.channels.len() - 1;
        if self.image_size == 0 || self.image_size % (1 << downs) != 0 {
            return Err(Error::Construction(format!(
                "image size {} cannot be halved {downs} times and mirrored back",
                self.image_size
            )));
        }
        if self.head_kernel % 2 == 0 || self.sample_kernel % 2 == 0 || self.res_kernel % 2 == 0 {
            return Err(Error::Construction("generator kernels must be odd".into()));
        }
        Ok(())
    }

    /// Spatial extents entering each down-sampling.
    fn sizes(&self) -> Vec<usize> {
        (0..self.channels.len()).map(|i| self.image_size >> i).collect()
    }

    fn encoder_head(&self) -> StackSpec {
        let mut layers = Vec::new();
        for (i, &c) in self.channels.iter().enumerate() {
            let (k, stride) = if i == 0 { (self.head_kernel, 1) } else { (self.sample_kernel, 2) };
            layers.extend(conv_norm_relu(LayerSpec::Conv {
                c_out: c,
                k,
                stride,
                pad: k / 2,
            }));
        }
        StackSpec {
            input: self.image_shape(),
            layers,
        }
    }

    /// The tied residual core, without the heads around it.
    pub fn core_spec(&self) -> StackSpec {
        let s = self.sizes();
        StackSpec {
            input: vec![*self.channels.last().unwrap(), *s.last().unwrap(), *s.last().unwrap()],
            layers: vec![
                LayerSpec::InvRes {
                    k: self.res_kernel,
                    alpha: self.alpha,
                };
                self.blocks_per_side
            ],
        }
    }

    fn decoder_head(&self) -> StackSpec {
        let s = self.sizes();
        let mut layers = Vec::new();
        for i in (1..self.channels.len()).rev() {
            layers.extend(conv_norm_relu(LayerSpec::ConvT {
                c_out: self.channels[i - 1],
                k: self.sample_kernel,
                stride: 2,
                pad: self.sample_kernel / 2,
                out_hw: (s[i - 1], s[i - 1]),
            }));
        }
        layers.extend([
            LayerSpec::Conv {
                c_out: self.in_channels,
                k: self.head_kernel,
                stride: 1,
                pad: self.head_kernel / 2,
            },
            LayerSpec::Bias,
            LayerSpec::Tanh,
        ]);
        StackSpec {
            input: vec![*self.channels.last().unwrap(), *s.last().unwrap(), *s.last().unwrap()],
            layers,
        }
    }

    fn discriminator(&self) -> StackSpec {
        let k = self.disc_kernel;
        let last = self.disc_channels.len() - 1;
        let mut layers = Vec::new();
        for (i, &c) in self.disc_channels.iter().enumerate() {
            layers.extend(conv_norm_relu(LayerSpec::Conv {
                c_out: c,
                k,
                stride: if i < last { 2 } else { 1 },
                pad: 1,
            }));
        }
        layers.extend([
            LayerSpec::Conv {
                c_out: 1,
                k,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Bias,
            LayerSpec::Sigmoid,
        ]);
        StackSpec {
            input: self.image_shape(),
            layers,
        }
    }

    /// Rows of the A-to-B generator as (name, stride, filter) without
    /// allocating any weights.
    pub fn generator_listing(&self) -> Result<Vec<LayerRow>> {
        self.validate()?;
        let mut rows = Vec::new();
        rows.extend(listing_of_spec(&self.encoder_head()));
        rows.extend(listing_of_spec(&self.core_spec()));
        rows.extend(listing_of_spec(&self.decoder_head()));
        Ok(rows)
    }

    /// Rows of one discriminator.
    pub fn discriminator_listing(&self) -> Result<Vec<LayerRow>> {
        self.validate()?;
        Ok(listing_of_spec(&self.discriminator()))
    }
}

fn conv_norm_relu(conv: LayerSpec) -> [LayerSpec; 3] {
    [conv, LayerSpec::InstanceNorm, LayerSpec::LeakyRelu { slope: LEAKY_SLOPE }]
}

/// One row of an architecture listing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub stride: String,
    pub filter: String,
}

impl LayerRow {
    pub fn new(name: &str, stride: &str, filter: &str) -> Self {
        LayerRow {
            name: name.into(),
            stride: stride.into(),
            filter: filter.into(),
        }
    }
}

fn listing_of_spec(spec: &StackSpec) -> Vec<LayerRow> {
    let mut rows = Vec::new();
    let l = &spec.layers;
    let mut i = 0;
    while i < l.len() {
        let normed = matches!(l.get(i + 1), Some(LayerSpec::InstanceNorm));
        let name = if normed { "ConvNormReLU" } else { "Conv" };
        match &l[i] {
            LayerSpec::Conv { c_out, k, stride, .. } => {
                rows.push(LayerRow::new(name, &format!("{stride}x{stride}"), &format!("K{k}-F{c_out}")));
            }
            LayerSpec::ConvT { c_out, k, stride, .. } => {
                rows.push(LayerRow::new(name, &format!("1/{stride}x1/{stride}"), &format!("K{k}-F{c_out}")));
            }
            LayerSpec::InvRes { k, .. } => {
                let c = spec.input[0];
                rows.push(LayerRow::new("InvRes", "1x1", &format!("K{k}-F{c}")));
            }
            LayerSpec::Tanh => rows.push(LayerRow::new("Tanh", "", "")),
            LayerSpec::Sigmoid => rows.push(LayerRow::new("Sigmoid", "", "")),
            _ => {}
        }
        i += 1;
        // Normalization, activation and bias rows fold into their conv.
        while matches!(
            l.get(i),
            Some(LayerSpec::InstanceNorm | LayerSpec::LeakyRelu { .. } | LayerSpec::Bias)
        ) {
            i += 1;
        }
    }
    rows
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AToB,
    BToA,
}

impl Direction {
    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "a2b" | "AtoB" | "a-to-b" => Ok(Direction::AToB),
            "b2a" | "BtoA" | "b-to-a" => Ok(Direction::BToA),
            _ => Err(Error::Unknown {
                what: "direction",
                name: s.into(),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::AToB => "a2b",
            Direction::BToA => "b2a",
        }
    }
}

/// Both generators (sharing the core) and both discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslatorModel {
    pub config: TranslatorConfig,
    pub enc_a: Stack,
    pub enc_b: Stack,
    /// `core.encoder` is `E`, `core.decoder` is its tied inverse `D`.
    pub core: Network,
    pub dec_a: Stack,
    pub dec_b: Stack,
    pub dis_a: Stack,
    pub dis_b: Stack,
}

/// Constructs every sub-network with fresh storages under `prefix`.
pub fn build_translator<T: Real>(
    config: &TranslatorConfig,
    store: &mut ParamStore<T>,
    seed: u64,
) -> Result<TranslatorModel> {
    config.validate()?;
    let rng = &mut rng_for(seed, INIT_STREAM);
    let init = Init::Normal(config.init_std);
    let (eh, dh, ds) = (config.encoder_head(), config.decoder_head(), config.discriminator());
    Ok(TranslatorModel {
        config: config.clone(),
        enc_a: build_stack(&eh, store, "enc_a", init, rng)?,
        enc_b: build_stack(&eh, store, "enc_b", init, rng)?,
        core: build_inverted_stack(&config.core_spec(), store, "core", init, rng)?,
        dec_a: build_stack(&dh, store, "dec_a", init, rng)?,
        dec_b: build_stack(&dh, store, "dec_b", init, rng)?,
        dis_a: build_stack(&ds, store, "dis_a", init, rng)?,
        dis_b: build_stack(&ds, store, "dis_b", init, rng)?,
    })
}

fn ids_of(stacks: &[&Stack]) -> Vec<ParamId> {
    let mut v = Vec::new();
    for s in stacks {
        for id in s.param_ids() {
            if !v.contains(&id) {
                v.push(id);
            }
        }
    }
    v
}

impl TranslatorModel {
    pub fn gen_b<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x_a: Var) -> Result<Var> {
        let h = self.enc_a.forward(tape, store, x_a)?;
        let h = self.core.encoder.forward(tape, store, h)?;
        self.dec_b.forward(tape, store, h)
    }

    pub fn gen_a<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x_b: Var) -> Result<Var> {
        let h = self.enc_b.forward(tape, store, x_b)?;
        let h = self.core.decoder.forward(tape, store, h)?;
        self.dec_a.forward(tape, store, h)
    }

    pub fn generate<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, dir: Direction) -> Result<Var> {
        match dir {
            Direction::AToB => self.gen_b(tape, store, x),
            Direction::BToA => self.gen_a(tape, store, x),
        }
    }

    /// Parameters of `gen_b`: `enc_a`, the core and `dec_b`.
    pub fn gen_b_ids(&self) -> Vec<ParamId> {
        ids_of(&[&self.enc_a, &self.core.encoder, &self.dec_b])
    }

    /// Parameters of `gen_a`: `enc_b`, the core and `dec_a`.
    pub fn gen_a_ids(&self) -> Vec<ParamId> {
        ids_of(&[&self.enc_b, &self.core.decoder, &self.dec_a])
    }

    pub fn generator_ids(&self) -> Vec<ParamId> {
        ids_of(&[&self.enc_a, &self.enc_b, &self.core.encoder, &self.dec_a, &self.dec_b])
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        ids_of(&[&self.dis_a, &self.dis_b])
    }

    pub fn core_ids(&self) -> Vec<ParamId> {
        self.core.param_ids()
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut v = self.generator_ids();
        v.extend(self.discriminator_ids());
        v
    }

    /// Scalars of the whole model with the tied core.
    pub fn parameter_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.count(&self.all_ids())
    }

    pub fn core_parameter_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        layers::parameter_count(&self.core, store)
    }

    pub fn untied_core_parameter_count<T: Real>(&self, store: &ParamStore<T>) -> usize {
        layers::untied_parameter_count(&self.core, store)
    }

    /// Translates a batch `[N, C, S, S]` (or one `[C, S, S]` image).
    pub fn translate<T: Real>(&self, store: &ParamStore<T>, images: &Tensor<T>, dir: Direction) -> Result<Tensor<T>> {
        let want = self.config.image_shape();
        let single = images.shape() == &want[..];
        let batch = if single {
            let mut s = vec![1];
            s.extend(&want);
            images.clone().reshape(&s)?
        } else {
            if images.rank() != 4 || &images.shape()[1..] != &want[..] {
                return Err(Error::shape("translate", images.shape(), &want));
            }
            images.clone()
        };
        let mut tape = Tape::new();
        let x = tape.leaf(batch);
        let y = self.generate(&mut tape, store, x, dir)?;
        let out = tape.value(y).clone();
        if single {
            out.reshape(&want)
        } else {
            Ok(out)
        }
    }

    /// Rows of the A-to-B generator read off the built stacks.
    pub fn generator_listing(&self) -> Vec<LayerRow> {
        let mut rows = listing_of_stack(&self.enc_a);
        rows.extend(listing_of_stack(&self.core.encoder));
        rows.extend(listing_of_stack(&self.dec_b));
        rows
    }
}

fn listing_of_stack(stack: &Stack) -> Vec<LayerRow> {
    let l = &stack.layers;
    let mut rows = Vec::new();
    let mut i = 0;
    while i < l.len() {
        let normed = matches!(l.get(i + 1), Some(Layer::InstanceNorm));
        let name = if normed { "ConvNormReLU" } else { "Conv" };
        match &l[i] {
            Layer::Conv { geom, role, .. } => {
                let s = geom.stride;
                let (stride, f) = match role {
                    Role::Forward => (format!("{s}x{s}"), geom.c_out),
                    Role::Inverse => (format!("1/{s}x1/{s}"), geom.c_in),
                };
                rows.push(LayerRow::new(name, &stride, &format!("K{}-F{f}", geom.k)));
            }
            Layer::InvRes { geom, .. } => {
                rows.push(LayerRow::new("InvRes", "1x1", &format!("K{}-F{}", geom.k, geom.c_out)));
            }
            Layer::Tanh => rows.push(LayerRow::new("Tanh", "", "")),
            Layer::Sigmoid => rows.push(LayerRow::new("Sigmoid", "", "")),
            other => rows.push(LayerRow::new(other.kind(), "", "")),
        }
        i += 1;
        while matches!(l.get(i), Some(Layer::InstanceNorm | Layer::LeakyRelu { .. } | Layer::Bias { .. })) {
            i += 1;
        }
    }
    rows
}

/// Mean absolute error between `translated` and `truth`, both in `[-1, 1]`,
/// reported on the `[0, 1]` scale.
pub fn l1_unit_scale<T: Real>(translated: &Tensor<T>, truth: &Tensor<T>) -> Result<f64> {
    if translated.shape() != truth.shape() {
        return Err(Error::shape("l1", translated.shape(), truth.shape()));
    }
    let s: f64 = translated
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
        .sum();
    Ok(s / translated.len() as f64 / 2.0)
}

/// Translates `sources` in chunks and scores them against the aligned
/// `targets` with [`l1_unit_scale`].
pub fn evaluate_l1_paired<T: Real>(
    model: &TranslatorModel,
    store: &ParamStore<T>,
    sources: &Dataset<T>,
    targets: &Dataset<T>,
    dir: Direction,
) -> Result<f64> {
    if sources.len() != targets.len() {
        return Err(Error::Contract(format!(
            "{} sources but {} targets",
            sources.len(),
            targets.len()
        )));
    }
    if sources.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    let idx: Vec<usize> = (0..sources.len()).collect();
    for part in idx.chunks(16) {
        let out = model.translate(store, &sources.batch(part)?, dir)?;
        total += l1_unit_scale(&out, &targets.batch(part)?)? * part.len() as f64;
    }
    Ok(total / sources.len() as f64)
}

/// Translates `images` with `dir` and then back; returns the `[0, 1]`-scale
/// l1 distance to the originals.
pub fn round_trip_l1<T: Real>(model: &TranslatorModel, store: &ParamStore<T>, images: &Dataset<T>, dir: Direction) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let back = match dir {
        Direction::AToB => Direction::BToA,
        Direction::BToA => Direction::AToB,
    };
    let mut total = 0.0;
    let idx: Vec<usize> = (0..images.len()).collect();
    for part in idx.chunks(16) {
        let x = images.batch(part)?;
        let y = model.translate(store, &x, dir)?;
        let z = model.translate(store, &y, back)?;
        total += l1_unit_scale(&z, &x)? * part.len() as f64;
    }
    Ok(total / images.len() as f64)
}

/// Per-domain autoencoders used to score translations without pairs.
#[derive(Debug, Clone)]
pub struct ProxyScorer {
    pub omega_a: ReconModel,
    pub omega_b: ReconModel,
    pub trained: bool,
}

impl ProxyScorer {
    /// Small untied conv autoencoders for `[c, s, s]` images.
    pub fn architecture(config: &TranslatorConfig) -> ReconArch {
        ReconArch::Conv {
            input: [config.in_channels, config.image_size, config.image_size],
            channels: vec![8, 8],
            k: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn build<T: Real>(config: &TranslatorConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        let arch = Self::architecture(config);
        let kind = crate::models::ModelKind::Auto;
        Ok(ProxyScorer {
            omega_a: ReconModel::build_with(kind, &arch, store, "omega_a", DEFAULT_ALPHA, rng)?,
            omega_b: ReconModel::build_with(kind, &arch, store, "omega_b", DEFAULT_ALPHA, rng)?,
            trained: false,
        })
    }

    pub fn omega(&self, domain: Domain) -> &ReconModel {
        match domain {
            Domain::A => &self.omega_a,
            Domain::B => &self.omega_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    A,
    B,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::A => "A",
            Domain::B => "B",
        }
    }
}

impl core::fmt::Display for Domain {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean `[0, 1]`-scale l1 reconstruction error that the target domain's
/// autoencoder assigns to `converted` (`[N, C, S, S]`).
pub fn evaluate_autoencoder_proxy<T: Real>(
    scorer: &ProxyScorer,
    store: &ParamStore<T>,
    converted: &Tensor<T>,
    target: Domain,
) -> Result<f64> {
    if !scorer.trained {
        return Err(Error::Contract("proxy scorer has not been trained".into()));
    }
    let n = converted.shape().first().copied().unwrap_or(0);
    let idx: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    for part in idx.chunks(32) {
        let mut tape = Tape::new();
        let x = tape.leaf(converted.gather_rows(part)?);
        let r = scorer.omega(target).reconstruct(&mut tape, store, x)?;
        total += l1_unit_scale(tape.value(r), tape.value(x))? * part.len() as f64;
    }
    Ok(total / n.max(1) as f64)
}

impl core::fmt::Display for LayerRow {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{} | {} | {}", self.name, self.stride, self.filter)
    }
}

/// Listing rendered as lines, for reports.
pub fn render_listing(rows: &[LayerRow]) -> Vec<String> {
    rows.iter().map(|r| r.to_string()).collect()
}
