//! The `invauto` command line.
//!
//! Every command writes only below its output directory and finishes by
//! writing `manifest.csv`, which lists each artifact it wrote.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use invauto_core::data::{make_synthetic_domains, Dataset, Split};
use invauto_core::linearize::{identity_deviation, row_cosine_stats, row_norm_stats, LinearizedMap};
use invauto_core::models::ReconModel;
use invauto_core::train::{train_proxy_scorer, GanSession, ReconConfig, ReconSession};
use invauto_core::translator::{
    evaluate_autoencoder_proxy, evaluate_l1_paired, l1_unit_scale, round_trip_l1, Direction, Domain, TranslatorModel,
};
use invauto_core::{ParamStore, Real, Tensor};
use rayon::prelude::*;

use crate::checkpoint::{self, Checkpoint};
use crate::config::{DomainSource, ReconSource, RunConfig, CHECKPOINT, SIDECAR};
use crate::error::{IoError, Result};
use crate::export::{self, num, write_csv};
use crate::idx::{load_mnist, PixelRange};
use crate::netpbm;

/// Seed offset of the held-out synthetic domain pair.
pub const TEST_SEED_OFFSET: u64 = 1000;
const DEFAULT_N_TRAIN: usize = 500;
const DEFAULT_N_TEST: usize = 64;

#[derive(Debug, Parser)]
#[command(name = "invauto", version, about = "Invertible autoencoders: training, diagnostics and translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a reconstruction model (invauto, auto, cycle or vae).
    TrainAuto(RunArgs),
    /// Materialize E and D of a checkpoint and write the deviation statistics.
    Diagnose(RunArgs),
    /// Train a translator between two image domains.
    TrainGan(RunArgs),
    /// Translate a folder of PGM/PPM images with a trained translator.
    Convert(RunArgs),
    /// Score a trained translator on held-out images.
    Evaluate(RunArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML file of `key = value` settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// invauto | auto | cycle | vae
    #[arg(long)]
    pub model: Option<String>,
    /// mlp | conv | mlp:784-256-64 | conv:1x28x28-4-8 | desk | table6 | table7
    #[arg(long)]
    pub arch: Option<String>,
    /// mnist | mnist:DIR | folder:DIR | synthetic-<kind> | folder:DIR_A,DIR_B
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Weight of the cycle term.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub image_size: Option<usize>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run in 64-bit floats.
    #[arg(long)]
    pub f64: bool,
    /// Checkpoint to resume from or to inspect; its `run.toml` supplies
    /// the model settings.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// a2b | b2a
    #[arg(long)]
    pub direction: Option<String>,
    /// Folder of images to convert.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

impl RunArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            arch: self.arch.clone(),
            data: self.data.clone(),
            seed: self.seed,
            epochs: self.epochs,
            iterations: self.iterations,
            batch: self.batch,
            lambda: self.lambda,
            lr: self.lr,
            image_size: self.image_size,
            n_train: self.n_train,
            n_test: self.n_test,
            f64: self.f64.then_some(true),
            out: self.out.clone(),
            ..RunConfig::default()
        }
    }

    /// Checkpoint sidecar, then config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(ck) = &self.checkpoint {
            cfg = RunConfig::load(&sidecar_of(ck))?;
            // A stored output directory belongs to the earlier run.
            cfg.out = None;
        }
        if let Some(path) = &self.config {
            cfg = cfg.overlay(RunConfig::load(path)?);
        }
        Ok(cfg.overlay(self.flags()))
    }

    fn checkpoint(&self) -> Result<Checkpoint> {
        let path = self.checkpoint.as_ref().ok_or_else(|| IoError::Config("--checkpoint is required".into()))?;
        Checkpoint::load(path)
    }
}

pub fn sidecar_of(checkpoint: &Path) -> PathBuf {
    checkpoint.parent().unwrap_or(Path::new(".")).join(SIDECAR)
}

/// Artifacts written so far, relative to the output directory.
pub struct Manifest {
    root: PathBuf,
    rows: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(root: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&root).map_err(crate::error::io_at(&root))?;
        Ok(Manifest { root, rows: Vec::new() })
    }

    /// Path of artifact `name`, recorded with its description.
    pub fn path(&mut self, name: &str, what: &str) -> PathBuf {
        self.rows.push((name.into(), what.into()));
        self.root.join(name)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        let path = self.path("manifest.csv", "this list");
        let rows: Vec<Vec<String>> = self.rows.iter().map(|(a, b)| vec![a.clone(), b.clone()]).collect();
        write_csv(&path, &["artifact", "description"], &rows)?;
        Ok(path)
    }
}

/// Caps the global worker pool at `INVAUTO_THREADS` when it is set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("INVAUTO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| IoError::Config(format!("INVAUTO_THREADS must be a positive integer, got {v:?}")))?;
    // A second initialization in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs the generic command body in f64 or f32.
macro_rules! precision {
    ($f64:expr, $body:ident($($arg:expr),*)) => {
        if $f64 { $body::<f64>($($arg),*) } else { $body::<f32>($($arg),*) }
    };
}

pub fn run<I, S>(args: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    execute(&Cli::try_parse_from(args).map_err(|e| IoError::Config(e.to_string()))?)
}

pub fn execute(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::TrainAuto(a) => precision!(a.resolve()?.use_f64(), train_auto(a)),
        Command::TrainGan(a) => precision!(a.resolve()?.use_f64(), train_gan(a)),
        Command::Diagnose(a) => precision!(checkpoint_is_f64(a)?, diagnose(a)),
        Command::Convert(a) => precision!(checkpoint_is_f64(a)?, convert(a)),
        Command::Evaluate(a) => precision!(checkpoint_is_f64(a)?, evaluate(a)),
    }
}

/// Checkpoints carry their element type; inspection follows it.
fn checkpoint_is_f64(a: &RunArgs) -> Result<bool> {
    Ok(a.checkpoint()?.param_dtype()? == Some(1))
}

/// Train and test splits shaped for the configured architecture. MNIST is
/// scaled to `[0, 1]` and then centered with the training split's
/// statistics.
pub fn recon_data<T: Real>(cfg: &RunConfig) -> Result<(Dataset<T>, Dataset<T>)> {
    let shape = cfg.recon_arch()?.input_shape();
    let source = ReconSource::parse(cfg.data.as_deref().unwrap_or("mnist"))?;
    let (train, test) = match source {
        ReconSource::Mnist(dir) => {
            let tr = load_mnist::<T>(&dir, Split::Train, PixelRange::Unit)?;
            let te = load_mnist::<T>(&dir, Split::Test, PixelRange::Unit)?;
            let tr = cfg.n_train.map_or(tr.clone(), |n| tr.take(n));
            let te = cfg.n_test.map_or(te.clone(), |n| te.take(n));
            let (mean, std) = tr.fit_centering()?;
            (tr.centered(&mean, std)?, te.centered(&mean, std)?)
        }
        ReconSource::Folder(dir) => {
            let d = netpbm::load_image_folder::<T>(&dir, Split::Train)?;
            let mut te = d.clone();
            te.split = Split::Test;
            (d, te)
        }
    };
    Ok((train.reshaped(shape.clone())?, test.reshaped(shape)?))
}

fn train_auto<T: Real>(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let (kind, arch) = (cfg.model_kind()?, cfg.recon_arch()?);
    let (train, test) = recon_data::<T>(&cfg)?;
    let mut session = match &a.checkpoint {
        Some(_) => checkpoint::restore_recon(&a.checkpoint()?, kind, &arch, cfg.recon())?,
        None => ReconSession::<T>::new(kind, &arch, cfg.recon())?,
    };
    let mut m = Manifest::new(cfg.out_dir())?;
    let records = session.train(&train, Some(&test), |r| {
        eprintln!("epoch {}: train {:.6} test {:.6}", r.epoch, r.train_loss, r.test_mse.unwrap_or(f64::NAN));
    })?;
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| vec![r.epoch.to_string(), num(r.train_loss), r.test_mse.map(num).unwrap_or_default()])
        .collect();
    write_csv(&m.path("loss_curve.csv", "per-epoch training loss and test MSE"), &["epoch", "train_loss", "test_mse"], &rows)?;
    checkpoint::of_recon(&session).save(&m.path(CHECKPOINT, "parameters and optimizer state"))?;
    sidecar(&cfg, &mut m)?;
    m.finish()?;
    Ok(())
}

fn sidecar(cfg: &RunConfig, m: &mut Manifest) -> Result<()> {
    let stored = RunConfig { out: None, ..cfg.clone() };
    stored.save(&m.path(SIDECAR, "resolved run configuration"))
}

/// Training and held-out domains. Synthetic held-out pairs use the seed
/// offset by `TEST_SEED_OFFSET`; folder domains serve as their own test set.
pub struct Domains<T> {
    pub train_a: Dataset<T>,
    pub train_b: Dataset<T>,
    pub test_a: Dataset<T>,
    pub test_b: Dataset<T>,
    /// Held-out B aligned with held-out A, when the pairing is known.
    pub test_b_aligned: Option<Dataset<T>>,
}

pub fn domains<T: Real>(cfg: &RunConfig) -> Result<Domains<T>> {
    let size = cfg.translator()?.image_size;
    match cfg.domains()? {
        DomainSource::Synthetic(kind) => {
            let tr = make_synthetic_domains::<T>(kind, cfg.n_train.unwrap_or(DEFAULT_N_TRAIN), size, cfg.seed())?;
            let te = make_synthetic_domains::<T>(kind, cfg.n_test.unwrap_or(DEFAULT_N_TEST), size, cfg.seed() + TEST_SEED_OFFSET)?;
            let aligned = te.b_aligned()?;
            Ok(Domains {
                train_a: tr.a,
                train_b: tr.b,
                test_a: te.a,
                test_b: te.b,
                test_b_aligned: Some(aligned),
            })
        }
        DomainSource::Folders { a, b } => {
            let da = netpbm::load_image_folder::<T>(&a, Split::Train)?;
            let db = netpbm::load_image_folder::<T>(&b, Split::Train)?;
            Ok(Domains {
                test_a: da.clone(),
                test_b: db.clone(),
                train_a: da,
                train_b: db,
                test_b_aligned: None,
            })
        }
    }
}

fn train_gan<T: Real>(a: &RunArgs) -> Result<()> {
    let cfg = RunConfig {
        model: Some("translator".into()),
        ..a.resolve()?
    };
    let tcfg = cfg.translator()?;
    let d = domains::<T>(&cfg)?;
    let mut session = match &a.checkpoint {
        Some(_) => checkpoint::restore_gan(&a.checkpoint()?, &tcfg, cfg.gan())?,
        None => GanSession::<T>::new(&tcfg, cfg.gan())?,
    };
    let mut m = Manifest::new(cfg.out_dir())?;
    let mut rows = Vec::new();
    session.train(&d.train_a, &d.train_b, |r| {
        if r.iteration % 100 == 0 {
            eprintln!("iteration {}: d {:.4} g {:.4} cycle {:.4}", r.iteration, r.d_loss, r.g_loss, r.cycle);
        }
        rows.push(vec![r.iteration.to_string(), num(r.d_loss), num(r.g_loss), num(r.cycle)]);
    })?;
    write_csv(
        &m.path("gan_curve.csv", "per-iteration discriminator, generator and cycle losses"),
        &["iteration", "d_loss", "g_loss", "cycle"],
        &rows,
    )?;
    checkpoint::of_gan(&session).save(&m.path(CHECKPOINT, "parameters and optimizer state"))?;
    sidecar(&cfg, &mut m)?;
    m.finish()?;
    Ok(())
}

/// Model named by the checkpoint's sidecar, with the checkpoint's values.
pub enum Loaded<T> {
    Recon(ReconModel, ParamStore<T>),
    Translator(TranslatorModel, ParamStore<T>),
}

pub fn load_model<T: Real>(cfg: &RunConfig, ck: &Checkpoint) -> Result<Loaded<T>> {
    let is_translator = cfg.model.as_deref() == Some("translator");
    if is_translator {
        let mut s = GanSession::<T>::new(&cfg.translator()?, cfg.gan())?;
        ck.restore_store(&mut s.store)?;
        Ok(Loaded::Translator(s.model, s.store))
    } else {
        let mut store = ParamStore::new();
        let model = ReconModel::build(cfg.model_kind()?, &cfg.recon_arch()?, &mut store, cfg.seed())?;
        ck.restore_store(&mut store)?;
        Ok(Loaded::Recon(model, store))
    }
}

fn diagnose<T: Real>(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let ck = a.checkpoint()?;
    let (label, lin) = match load_model::<T>(&cfg, &ck)? {
        Loaded::Recon(model, store) => (model.kind().name().to_string(), model.linearize(&store)?),
        Loaded::Translator(model, store) => ("translator-core".to_string(), LinearizedMap::of_network(&model.core, &store)?),
    };
    let mut m = Manifest::new(cfg.out_dir())?;
    let (de, (dev, (cos, norms))) = rayon::join(
        || lin.de(),
        || rayon::join(|| identity_deviation(&lin.e, &lin.d), || (row_cosine_stats(&lin.e), row_norm_stats(&lin.e))),
    );
    let (de, dev, norms) = (de?, dev?, norms?);
    export::export_heatmap(&de, &m.path("de_heatmap.pgm", "heatmap of DE"))?;
    export::export_deviation_csv(&label, &dev, &m.path("deviation.csv", "deviation of DE from the identity"))?;
    export::export_row_norms_csv(&norms, &m.path("row_norms.csv", "l2 norm of every row of E"))?;
    match cos {
        Ok(cos) => {
            export::export_histogram_csv(&cos, &m.path("cosine_histogram.csv", "histogram of row-pair cosines of E"))?;
            export::export_row_stats_csv(&label, &cos, &norms, &m.path("row_stats.csv", "row cosine and norm summary"))?;
        }
        Err(e) => eprintln!("warning: no cosine statistics: {e}"),
    }
    println!("{label}: mse_total {} tying_error {}", num(dev.mse_total), num(lin.tying_error()?));
    m.finish()?;
    Ok(())
}

fn translator_of<T: Real>(cfg: &RunConfig, ck: &Checkpoint) -> Result<(TranslatorModel, ParamStore<T>)> {
    match load_model::<T>(cfg, ck)? {
        Loaded::Translator(m, s) => Ok((m, s)),
        Loaded::Recon(..) => Err(IoError::Config("checkpoint does not hold a translator".into())),
    }
}

fn convert<T: Real>(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let (model, store) = translator_of::<T>(&cfg, &a.checkpoint()?)?;
    let dir = Direction::from_name(a.direction.as_deref().unwrap_or("a2b"))?;
    let input = a.input.as_ref().ok_or_else(|| IoError::Config("--input is required".into()))?;
    let files = netpbm::image_files(input)?;
    if files.is_empty() {
        return Err(IoError::Format(format!("{}: no PGM/PPM images", input.display())));
    }
    let mut m = Manifest::new(cfg.out_dir())?;
    let outputs: Vec<PathBuf> = files
        .iter()
        .map(|f| m.path(&f.file_name().unwrap().to_string_lossy(), &format!("{} translated {}", f.display(), dir.name())))
        .collect();
    files.par_iter().zip(&outputs).try_for_each(|(src, dst)| -> Result<()> {
        let img = netpbm::load_image::<T>(src)?;
        let shape = img.shape().to_vec();
        let y = model.translate(&store, &img.reshape(&[&[1], &shape[..]].concat())?, dir)?;
        netpbm::save_image(&y.reshape(&shape)?, dst)
    })?;
    m.finish()?;
    Ok(())
}

/// Proxy autoencoder settings: fixed, cheap and independent of the run's
/// own optimizer flags.
fn proxy_config(seed: u64) -> ReconConfig {
    ReconConfig {
        epochs: 10,
        batch: 16,
        seed,
        ..ReconConfig::default()
    }
}

fn evaluate<T: Real>(a: &RunArgs) -> Result<()> {
    let cfg = a.resolve()?;
    let tcfg = cfg.translator()?;
    let (model, store) = translator_of::<T>(&cfg, &a.checkpoint()?)?;
    let d = domains::<T>(&cfg)?;
    let (scorer, proxy_store) = train_proxy_scorer(&tcfg, &d.train_a, &d.train_b, proxy_config(cfg.seed()))?;
    let mut rows = Vec::new();
    for dir in [Direction::AToB, Direction::BToA] {
        let (src, target, domain) = match dir {
            Direction::AToB => (&d.test_a, &d.test_b, Domain::B),
            Direction::BToA => (&d.test_b, &d.test_a, Domain::A),
        };
        let paired = match &d.test_b_aligned {
            Some(b) => {
                let (x, y) = if dir == Direction::AToB { (&d.test_a, b) } else { (b, &d.test_a) };
                let ident = l1_unit_scale(&all(x)?, &all(y)?)?;
                Some((evaluate_l1_paired(&model, &store, x, y, dir)?, ident))
            }
            None => None,
        };
        let converted = model.translate(&store, &all(src)?, dir)?;
        rows.push(vec![
            dir.name().to_string(),
            paired.map(|p| num(p.0)).unwrap_or_default(),
            paired.map(|p| num(p.1)).unwrap_or_default(),
            num(round_trip_l1(&model, &store, src, dir)?),
            num(evaluate_autoencoder_proxy(&scorer, &proxy_store, &converted, domain)?),
            num(evaluate_autoencoder_proxy(&scorer, &proxy_store, &all(target)?, domain)?),
        ]);
    }
    let mut m = Manifest::new(cfg.out_dir())?;
    write_csv(
        &m.path("evaluation.csv", "held-out l1 errors and proxy scores per direction"),
        &["direction", "l1_paired", "l1_untranslated", "round_trip_l1", "proxy_converted", "proxy_genuine_target"],
        &rows,
    )?;
    m.finish()?;
    Ok(())
}

fn all<T: Real>(d: &Dataset<T>) -> Result<Tensor<T>> {
    Ok(d.batch(&(0..d.len()).collect::<Vec<_>>())?)
}
