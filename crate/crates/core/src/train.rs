//! Training loops.
//!
//! Both loops derive everything random from `(seed, step)` through
//! [`rng_for`], and the step counter is the optimizer's own. A run restored
//! from its parameters and optimizer state therefore continues bit for bit.

use alloc::vec::Vec;

use rand::Rng;

use crate::data::{epoch_order, Dataset};
use crate::error::{Error, Result};
use crate::init::rng_for;
use crate::losses::{self, GenLoss};
use crate::models::{ModelKind, ReconArch, ReconModel};
use crate::optim::{Adam, AdamConfig};
use crate::param::ParamStore;
use crate::scalar::{cst, Real};
use crate::tape::Tape;
use crate::translator::{build_translator, ProxyScorer, TranslatorConfig, TranslatorModel};

/// Stream base for the VAE's per-step sampling noise.
pub const NOISE_STREAM: u64 = 0x7_0000_0000;
/// Stream base for the adversarial loop's per-iteration sample draw.
pub const SAMPLE_STREAM: u64 = 0x9_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl ReconConfig {
    pub const ADAM: AdamConfig = AdamConfig {
        lr: 1e-3,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 1e-6,
    };
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            epochs: 10,
            batch: 128,
            seed: 0,
            adam: Self::ADAM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training objective over the epoch's batches.
    pub train_loss: f64,
    pub test_mse: Option<f64>,
}

/// Minibatches of one epoch; the last one may be short.
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// One reconstruction model, its storages and its optimizer.
#[derive(Debug, Clone)]
pub struct ReconSession<T> {
    pub config: ReconConfig,
    pub model: ReconModel,
    pub store: ParamStore<T>,
    pub opt: Adam<T>,
    order: Option<(u64, Vec<usize>)>,
}

impl<T: Real> ReconSession<T> {
    pub fn new(kind: ModelKind, arch: &ReconArch, config: ReconConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = ReconModel::build(kind, arch, &mut store, config.seed)?;
        let opt = Adam::new(config.adam, &model.param_ids(), &store);
        Ok(Self::from_parts(config, model, store, opt))
    }

    /// Reassembles a session, e.g. from a checkpoint. The step counter is
    /// taken from `opt`.
    pub fn from_parts(config: ReconConfig, model: ReconModel, store: ParamStore<T>, opt: Adam<T>) -> Self {
        ReconSession {
            config,
            model,
            store,
            opt,
            order: None,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.opt.step_count()
    }

    /// One optimizer update on the next minibatch; returns its loss.
    pub fn run_step(&mut self, train: &Dataset<T>) -> Result<f64> {
        let n = train.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let b = self.config.batch.max(1);
        let spe = steps_per_epoch(n, b) as u64;
        let step = self.step_count();
        let (epoch, pos) = (step / spe, (step % spe) as usize);
        if self.order.as_ref().map(|(e, o)| *e != epoch || o.len() != n).unwrap_or(true) {
            self.order = Some((epoch, epoch_order(self.config.seed, epoch, n)));
        }
        let order = &self.order.as_ref().unwrap().1;
        let idx = &order[pos * b..((pos + 1) * b).min(n)];
        let mut tape = Tape::new();
        let x = tape.leaf(train.batch(idx)?);
        let mut noise = rng_for(self.config.seed, NOISE_STREAM + step);
        let loss = self.model.train_loss(&mut tape, &self.store, x, &mut noise)?;
        let value = tape.value(loss).item()?.as_f64();
        self.store.zero_grads();
        tape.backward(loss, &mut self.store)?;
        self.opt.step(&mut self.store)?;
        Ok(value)
    }

    /// Runs the remaining steps of the current epoch.
    pub fn run_epoch(&mut self, train: &Dataset<T>) -> Result<f64> {
        let spe = steps_per_epoch(train.len(), self.config.batch) as u64;
        let end = (self.step_count() / spe + 1) * spe;
        let (mut sum, mut k) = (0.0, 0usize);
        while self.step_count() < end {
            sum += self.run_step(train)?;
            k += 1;
        }
        Ok(sum / k.max(1) as f64)
    }

    pub fn completed_epochs(&self, n: usize) -> usize {
        (self.step_count() / steps_per_epoch(n, self.config.batch).max(1) as u64) as usize
    }

    /// Trains until `config.epochs` epochs are complete, calling `on_epoch`
    /// after each one.
    pub fn train(
        &mut self,
        train: &Dataset<T>,
        test: Option<&Dataset<T>>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<Vec<EpochRecord>> {
        let mut out = Vec::new();
        while self.completed_epochs(train.len()) < self.config.epochs {
            let train_loss = self.run_epoch(train)?;
            let test_mse = match test {
                Some(t) => Some(self.model.mse_on(&self.store, t, 256)?),
                None => None,
            };
            let rec = EpochRecord {
                epoch: self.completed_epochs(train.len()),
                train_loss,
                test_mse,
            };
            on_epoch(&rec);
            out.push(rec);
        }
        Ok(out)
    }
}

/// Builds and trains one reconstruction model from scratch.
pub fn train_reconstruction<T: Real>(
    kind: ModelKind,
    arch: &ReconArch,
    train: &Dataset<T>,
    test: Option<&Dataset<T>>,
    config: ReconConfig,
) -> Result<(ReconSession<T>, Vec<EpochRecord>)> {
    let mut s = ReconSession::new(kind, arch, config)?;
    let log = s.train(train, test, |_| {})?;
    Ok((s, log))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanConfig {
    pub iterations: usize,
    pub batch: usize,
    /// Weight of the cycle term.
    pub lambda: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub gen_loss: GenLoss,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            iterations: 2000,
            batch: 1,
            lambda: 10.0,
            seed: 0,
            adam: AdamConfig::GAN,
            gen_loss: GenLoss::NonSaturating,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanRecord {
    pub iteration: u64,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Unweighted cycle term.
    pub cycle: f64,
}

/// Translator with one optimizer per player.
#[derive(Debug, Clone)]
pub struct GanSession<T> {
    pub config: GanConfig,
    pub model: TranslatorModel,
    pub store: ParamStore<T>,
    pub opt_g: Adam<T>,
    pub opt_d: Adam<T>,
}

impl<T: Real> GanSession<T> {
    pub fn new(translator: &TranslatorConfig, config: GanConfig) -> Result<Self> {
        let mut store = ParamStore::new();
        let model = build_translator(translator, &mut store, config.seed)?;
        let opt_g = Adam::new(config.adam, &model.generator_ids(), &store);
        let opt_d = Adam::new(config.adam, &model.discriminator_ids(), &store);
        Ok(GanSession {
            config,
            model,
            store,
            opt_g,
            opt_d,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.opt_g.step_count()
    }

    /// One discriminator update on detached fakes followed by one generator
    /// update scored by the freshly updated discriminators.
    pub fn run_step(&mut self, a: &Dataset<T>, b: &Dataset<T>) -> Result<GanRecord> {
        if a.is_empty() || b.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let it = self.iteration();
        let rng = &mut rng_for(self.config.seed, SAMPLE_STREAM + it);
        let bs = self.config.batch.max(1);
        let ia: Vec<usize> = (0..bs).map(|_| rng.random_range(0..a.len())).collect();
        let ib: Vec<usize> = (0..bs).map(|_| rng.random_range(0..b.len())).collect();
        let m = &self.model;

        // Generator half of the graph. Discriminator storages are first read
        // after their update below, and are frozen on this tape.
        let mut gt = Tape::new();
        gt.freeze(&m.discriminator_ids());
        let xa = gt.leaf(a.batch(&ia)?);
        let xb = gt.leaf(b.batch(&ib)?);
        let fb = m.gen_b(&mut gt, &self.store, xa)?;
        let back_a = m.gen_a(&mut gt, &self.store, fb)?;
        let fa = m.gen_a(&mut gt, &self.store, xb)?;
        let back_b = m.gen_b(&mut gt, &self.store, fa)?;

        let d_loss = {
            let mut dt = Tape::new();
            let ra = dt.leaf(gt.value(xa).clone());
            let rb = dt.leaf(gt.value(xb).clone());
            let ffa = dt.leaf(gt.value(fa).clone());
            let ffb = dt.leaf(gt.value(fb).clone());
            let da_real = m.dis_a.forward(&mut dt, &self.store, ra)?;
            let da_fake = m.dis_a.forward(&mut dt, &self.store, ffa)?;
            let db_real = m.dis_b.forward(&mut dt, &self.store, rb)?;
            let db_fake = m.dis_b.forward(&mut dt, &self.store, ffb)?;
            let la = losses::discriminator_loss(&mut dt, da_real, da_fake)?;
            let lb = losses::discriminator_loss(&mut dt, db_real, db_fake)?;
            let l = dt.add(la, lb)?;
            self.store.zero_grads();
            dt.backward(l, &mut self.store)?;
            self.opt_d.step(&mut self.store)?;
            dt.value(l).item()?.as_f64()
        };

        let la = gt.l1(back_a, xa)?;
        let lb = gt.l1(back_b, xb)?;
        let cycle = gt.add(la, lb)?;
        let da = m.dis_a.forward(&mut gt, &self.store, fa)?;
        let db = m.dis_b.forward(&mut gt, &self.store, fb)?;
        let ga = losses::generator_loss(&mut gt, da, self.config.gen_loss);
        let gb = losses::generator_loss(&mut gt, db, self.config.gen_loss);
        let g = losses::total_loss(&mut gt, cycle, &[ga, gb], cst(self.config.lambda))?;
        self.store.zero_grads();
        gt.backward(g, &mut self.store)?;
        self.opt_g.step(&mut self.store)?;
        Ok(GanRecord {
            iteration: it + 1,
            d_loss,
            g_loss: gt.value(g).item()?.as_f64(),
            cycle: gt.value(cycle).item()?.as_f64(),
        })
    }

    /// Runs until `config.iterations` updates are done, calling `on_step`
    /// after each.
    pub fn train(&mut self, a: &Dataset<T>, b: &Dataset<T>, mut on_step: impl FnMut(&GanRecord)) -> Result<()> {
        while (self.iteration() as usize) < self.config.iterations {
            let r = self.run_step(a, b)?;
            on_step(&r);
        }
        Ok(())
    }
}

pub fn train_translator<T: Real>(
    translator: &TranslatorConfig,
    a: &Dataset<T>,
    b: &Dataset<T>,
    config: GanConfig,
) -> Result<GanSession<T>> {
    let mut s = GanSession::new(translator, config)?;
    s.train(a, b, |_| {})?;
    Ok(s)
}

/// Fits the per-domain proxy autoencoders with MSE and marks the scorer
/// trained.
pub fn train_proxy_scorer<T: Real>(
    translator: &TranslatorConfig,
    a: &Dataset<T>,
    b: &Dataset<T>,
    config: ReconConfig,
) -> Result<(ProxyScorer, ParamStore<T>)> {
    let mut store = ParamStore::new();
    let mut scorer = ProxyScorer::build(translator, &mut store, &mut rng_for(config.seed, crate::models::INIT_STREAM))?;
    for (model, data) in [(scorer.omega_a.clone(), a), (scorer.omega_b.clone(), b)] {
        let opt = Adam::new(config.adam, &model.param_ids(), &store);
        let mut s = ReconSession::from_parts(config, model, store, opt);
        s.train(data, None, |_| {})?;
        store = s.store;
    }
    scorer.trained = true;
    Ok((scorer, store))
}
