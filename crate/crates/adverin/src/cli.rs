//! Command-line interface.

use std::fs;
use std::path::{Path, PathBuf};

use adverin_core::attack::{attack, AttackConfig};
use adverin_core::gradcheck::{fuzz_suite, TOL_MAPPER, TOL_NETWORK};
use adverin_core::intensity::IntensityMapper;
use adverin_core::region::compute_region_labels;
use adverin_core::rng::{derive_seed, Rng};
use adverin_core::synth::{generate_dataset, GenConfig};
use adverin_core::train::{Method, TrainConfig, STREAM_ATTACK};
use adverin_core::container::NamedTensor;
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::experiment;
use crate::store;
use crate::UsageError;

#[derive(Debug, Parser)]
#[command(name = "adverin", version, about = "Adversarial intensity attack for domain-generalizable segmentation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of `key = value` lines used as defaults for the subcommand's flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (0 = one per core, 1 = serial)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Baseline,
    Adverin,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Baseline => Method::Baseline,
            MethodArg::Adverin => Method::Adverin,
        }
    }
}

fn even_size(s: &str) -> Result<usize, String> {
    let v: usize = s.parse().map_err(|e| format!("{e}"))?;
    if v == 0 || v % 2 != 0 {
        return Err("size must be even".into());
    }
    Ok(v)
}

/// Optimization and attack settings shared by the training commands.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    /// Base learning rate of the cosine schedule
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Attack step length in mapper-parameter space
    #[arg(long, default_value_t = 2.0)]
    pub delta: f64,
    /// Intervals of the intensity mapper
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    /// Regions per image (must match the precomputed labels)
    #[arg(long, default_value_t = 20)]
    pub regions: usize,
    /// Regions attacked per image and step
    #[arg(long, default_value_t = 5)]
    pub regions_sampled: usize,
    /// Probability that a training image is attacked in a step
    #[arg(long, default_value_t = 1.0)]
    pub attack_prob: f64,
}

impl TrainArgs {
    pub fn config(&self, method: Method, holdout: u32, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_base: self.lr,
            momentum: self.momentum,
            method,
            attack: AttackConfig {
                delta: self.delta,
                n_points: self.points,
                regions_total: self.regions,
                regions_sampled: self.regions_sampled,
                enabled: true,
                attack_prob: self.attack_prob,
            },
            seed,
            holdout,
        };
        cfg.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic multi-domain dataset
    #[command(args_override_self = true)]
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        domains: usize,
        #[arg(long, default_value_t = 100)]
        per_domain: usize,
        /// Image side length (even)
        #[arg(long, default_value = "64", value_parser = even_size)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Add k-means region labels to every sample of a dataset
    #[command(args_override_self = true)]
    PrecomputeMasks {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weight of pixel position relative to intensity in the clustering
        #[arg(long, default_value_t = 1.0)]
        spatial_weight: f64,
    },
    /// Train on all domains but the holdout and evaluate on the holdout
    #[command(args_override_self = true)]
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: u32,
        #[arg(long, value_enum, default_value_t = MethodArg::Adverin)]
        method: MethodArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Evaluate a checkpoint on a holdout domain
    #[command(args_override_self = true)]
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: u32,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Probabilities at or above this are foreground
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Leave-one-domain-out comparison over methods and seeds
    #[command(args_override_self = true)]
    Lodo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "baseline,adverin")]
        methods: Vec<MethodArg>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Attack-intensity sweep on one holdout domain
    #[command(args_override_self = true)]
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: u32,
        #[arg(long, value_delimiter = ',', default_value = "0.5,2,5,20")]
        deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Attack one sample and write the attacked image, mask and mapping curve
    #[command(args_override_self = true)]
    AttackDemo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        delta: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 5)]
        regions_sampled: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every analytic gradient
    #[command(args_override_self = true)]
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Mapper Jacobian cases
        #[arg(long, default_value_t = 1000)]
        mapper_trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "8", value_parser = even_size)]
        size: usize,
        /// Central-difference step for the network checks
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build()?)
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads;
    match cli.command {
        Command::GenData { out, domains, per_domain, size, seed } => {
            let cfg = GenConfig { n_domains: domains, per_domain, size, seed };
            cfg.validate().map_err(|e| UsageError(e.to_string()))?;
            let samples = generate_dataset(&cfg)?;
            let manifest = store::write_dataset(&out, &samples)?;
            println!("{}", manifest.display());
        }
        Command::PrecomputeMasks { data, k, seed, spatial_weight } => {
            precompute_masks(&data, k, seed, spatial_weight, threads)?;
        }
        Command::Train { data, holdout, method, seed, out, train } => {
            let cfg = train.config(method.into(), holdout, seed)?;
            let ds = store::load_dataset(&data)?;
            let r = experiment::train_and_evaluate(&ds, &cfg, cfg.method.as_str(), &out)?;
            println!("holdout {holdout} overall dice {} hd95 {}", r.scores.overall_dice(), r.scores.overall_hd95());
        }
        Command::Eval { data, holdout, ckpt, report, threshold } => {
            let net = store::load_checkpoint(&ckpt)?;
            let ds = store::load_dataset(&data)?;
            let rows = experiment::evaluate_holdout(&net, &ds, holdout, threshold)?;
            let s = crate::report::write_report(&report, holdout, &rows)?;
            println!("holdout {holdout} overall dice {} hd95 {}", s.overall_dice(), s.overall_hd95());
        }
        Command::Lodo { data, seeds, methods, out, train } => {
            let base = train.config(Method::Adverin, 0, 0)?;
            if seeds.is_empty() || methods.is_empty() {
                return Err(UsageError("need at least one seed and one method".into()).into());
            }
            let ds = store::load_dataset(&data)?;
            let methods: Vec<Method> = methods.into_iter().map(Into::into).collect();
            let o = experiment::lodo(&ds, &base, &methods, &seeds, &out, threads)?;
            for r in o.summary.iter().filter(|r| r.holdout == crate::report::ALL) {
                println!("{} overall dice {} hd95 {}", r.method, r.dice, r.hd95);
            }
        }
        Command::Sweep { data, holdout, deltas, seeds, out, train } => {
            let base = train.config(Method::Adverin, holdout, 0)?;
            if deltas.iter().any(|d| !d.is_finite() || *d < 0.0) {
                return Err(UsageError("deltas must be finite and >= 0".into()).into());
            }
            let ds = store::load_dataset(&data)?;
            let rows = experiment::sweep(&ds, &base, holdout, &deltas, &seeds, &out, threads, &[])?;
            for r in rows.iter().filter(|r| r.seed.is_none()) {
                println!("delta {} dice {} hd95 {}", r.delta, r.dice, r.hd95);
            }
        }
        Command::AttackDemo { data, sample, ckpt, delta, points, regions_sampled, seed, out } => {
            attack_demo(&data, &sample, &ckpt, delta, points, regions_sampled, seed, &out)?;
        }
        Command::Gradcheck { trials, mapper_trials, seed, size, step } => {
            let r = fuzz_suite(trials, mapper_trials, seed, size, step)?;
            println!("mapper: {} checked, max rel err {:e} (limit {TOL_MAPPER:e})", r.mapper.checked, r.mapper.max_rel_err);
            println!(
                "segnet: {} checked, {} skipped at kinks, max rel err {:e} (limit {TOL_NETWORK:e})",
                r.segnet.checked, r.segnet.skipped, r.segnet.max_rel_err
            );
            println!(
                "rho: {} checked, {} skipped at kinks, max rel err {:e} (limit {TOL_NETWORK:e})",
                r.rho.checked, r.rho.skipped, r.rho.max_rel_err
            );
            println!("g0 nonzero: {} of {}", r.g0_nonzero, r.cases);
            if !r.passed() {
                bail!("gradient check failed");
            }
            println!("ok");
        }
    }
    Ok(())
}

pub fn precompute_masks(data: &Path, k: usize, seed: u64, spatial_weight: f64, threads: usize) -> Result<()> {
    if k == 0 {
        return Err(UsageError("k must be positive".into()).into());
    }
    let ds = store::load_dataset(data)?;
    let work: Vec<(usize, &store::ManifestEntry)> = ds.entries.iter().enumerate().collect();
    pool(threads)?.install(|| {
        work.par_iter().try_for_each(|&(i, e)| -> Result<()> {
            let s = &ds.samples[i];
            let labels = compute_region_labels(&s.image, k, spatial_weight, derive_seed(seed, i as u64))
                .with_context(|| format!("sample {}", e.sample_id))?;
            let s = s.clone().with_region_labels(labels)?;
            store::write_container(&data.join(&e.path), &store::sample_tensors(&s))
        })
    })?;
    log::info!("labelled {} samples", ds.samples.len());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn attack_demo(
    data: &Path,
    sample_id: &str,
    ckpt: &Path,
    delta: f64,
    points: usize,
    regions_sampled: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let net = store::load_checkpoint(ckpt)?;
    let ds = store::load_dataset(data)?;
    let sample = ds.sample(sample_id).ok_or_else(|| anyhow!("sample {sample_id} not in dataset"))?;
    let regions = sample
        .region_labels
        .as_ref()
        .map(|l| l.k())
        .ok_or_else(|| anyhow!("sample {sample_id} has no region labels; run precompute-masks first"))?;
    let cfg = AttackConfig { delta, n_points: points, regions_total: regions, regions_sampled, ..AttackConfig::default() };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let mut rng = Rng::substream(seed, STREAM_ATTACK);
    let r = attack(&net, sample, &cfg, &mut rng)?;
    let loss_after = net.loss(&r.attacked, &sample.truth)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (h, w) = (r.attacked.height(), r.attacked.width());
    store::write_container(
        &out.join("attacked.adin"),
        &[
            NamedTensor::new("image", vec![h, w], r.attacked.data().to_vec()),
            NamedTensor::new("meta.vrange", vec![2], vec![r.attacked.vmin(), r.attacked.vmax()]),
        ],
    )?;
    store::write_container(
        &out.join("mask.adin"),
        &[NamedTensor::new("mask", vec![h, w], r.mask.data().iter().map(|&v| v as f64).collect())],
    )?;
    let mut c = csv::Writer::from_path(out.join("curve.csv"))?;
    c.write_record(["t", "knot"])?;
    for (t, k) in IntensityMapper::new(r.rho_hat.clone())?.curve().points() {
        c.write_record([t.to_string(), k.to_string()])?;
    }
    c.flush()?;
    let rho: Vec<String> = r.rho_hat.iter().map(f64::to_string).collect();
    fs::write(
        out.join("loss.txt"),
        format!(
            "loss_before = {}\nloss_after = {}\npredicted_increase = {}\nrho_hat = {}\n",
            r.loss_before,
            loss_after,
            r.predicted_increase,
            rho.join(",")
        ),
    )?;
    println!("loss before {} after {}", r.loss_before, loss_after);
    Ok(())
}
