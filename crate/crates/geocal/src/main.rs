use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geocal::config::{Mode, SimConfig};
use geocal::error::{GeocalError, Result};
use geocal::formats::{self, Container, LoadOptions};
use geocal::report::{write_eval_csv, write_json};
use geocal::sim;
use geocal_core::aggregate::build_shape_bank;
use geocal_core::augment::{augment_multi_domain, augment_single_domain};
use geocal_core::calibrate::{build_knowledge_base, calibrate_tail, match_classes, GgeurLayer};
use geocal_core::model::{evaluate, train, BandThresholds, Sampler};
use geocal_core::partition::partition;
use geocal_core::synth::{CovarianceFamily, GaussianMixture, MixtureSpec, Spectrum};
use geocal_core::{
    AugmentPlan, ClassifierParams, ClientUpload, CovarianceMode, EmbeddingSet, KnowledgeBase, PartitionKind,
    PartitionSpec, ScaleMode, TailPolicy, TrainConfig,
};

#[derive(Parser)]
#[command(name = "geocal", version, about = "Geometry-guided embedding calibration toolkit")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed (and the config's seed list).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a container into per-client containers.
    Partition(PartitionArgs),
    /// Compute a client's statistics upload from its container.
    Stats(StatsArgs),
    /// Aggregate uploads into a shape bank.
    Aggregate(AggregateArgs),
    /// Augment a client container with a shape bank, or calibrate tail
    /// classes against a knowledge base.
    Augment(AugmentArgs),
    /// Match classes to knowledge-base donors.
    Match(MatchArgs),
    /// Train and evaluate a classifier.
    Train(TrainArgs),
    /// Run a configured experiment.
    Simulate,
    /// Run a configured analysis study.
    Analyze,
    /// Generate a synthetic Gaussian-mixture container.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Geometry {
    /// Retained principal directions.
    #[arg(long, default_value_t = geocal_core::DEFAULT_M)]
    m: usize,
    /// Use the uncentered second moment instead of the covariance.
    #[arg(long)]
    raw_second_moment: bool,
    /// L2-normalize rows after loading.
    #[arg(long)]
    l2_normalize: bool,
}

impl Geometry {
    fn mode(&self) -> CovarianceMode {
        if self.raw_second_moment {
            CovarianceMode::RawSecondMoment
        } else {
            CovarianceMode::Centered
        }
    }

    fn load(&self, path: &Path) -> Result<EmbeddingSet> {
        formats::load_container(path, LoadOptions { l2_normalize: self.l2_normalize })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Dirichlet,
    Fixed,
    Longtail,
}

#[derive(Args)]
struct PartitionArgs {
    input: PathBuf,
    #[arg(long, value_enum, default_value = "dirichlet")]
    kind: Kind,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 4)]
    clients: usize,
    #[arg(long, default_value_t = 100.0)]
    imbalance_factor: f64,
}

#[derive(Args)]
struct StatsArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    client_id: u32,
    #[arg(long, default_value_t = 0)]
    domain: usize,
    #[command(flatten)]
    geometry: Geometry,
}

#[derive(Args)]
struct AggregateArgs {
    /// `GEOU1` uploads.
    #[arg(required = true)]
    uploads: Vec<PathBuf>,
    #[arg(long, default_value_t = geocal_core::DEFAULT_M)]
    m: usize,
    /// Also store per-(class, domain) prototypes.
    #[arg(long)]
    prototypes: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Lambda,
    SqrtLambda,
}

impl From<Scale> for ScaleMode {
    fn from(s: Scale) -> Self {
        match s {
            Scale::Lambda => ScaleMode::Lambda,
            Scale::SqrtLambda => ScaleMode::SqrtLambda,
        }
    }
}

#[derive(Args)]
struct AugmentArgs {
    input: PathBuf,
    /// Federated shape bank (`GEOS1`).
    #[arg(long, conflicts_with = "kb")]
    bank: Option<PathBuf>,
    /// Knowledge base (`GEOS1` or `GEOB1`) for tail calibration.
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Use the two-step multi-domain augmentation.
    #[arg(long)]
    multi_domain: bool,
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value_t = 500)]
    per_prototype: usize,
    #[arg(long, value_enum, default_value = "lambda")]
    scale: Scale,
    #[command(flatten)]
    geometry: Geometry,
}

#[derive(Args)]
struct MatchArgs {
    input: PathBuf,
    /// Knowledge base (`GEOS1` or `GEOB1`).
    #[arg(long)]
    kb: PathBuf,
    #[arg(long, default_value_t = 1)]
    top_k: usize,
    /// Match every class, not only tail classes.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    geometry: Geometry,
}

#[derive(Args)]
struct TrainArgs {
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Hidden units; 0 trains a linear softmax head.
    #[arg(long, default_value_t = 512)]
    hidden: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long)]
    inverse_sampling: bool,
    /// Knowledge base enabling the tail perturbation layer.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[command(flatten)]
    geometry: Geometry,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    domains: usize,
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 3.0)]
    mean_spread: f64,
    #[arg(long, default_value_t = 0.0)]
    domain_shift: f64,
    #[arg(long, default_value_t = 1.0)]
    leading: f64,
    #[arg(long, default_value_t = 0.7)]
    decay: f64,
    #[arg(long, default_value_t = 0.01)]
    floor: f64,
    /// One covariance basis for every class.
    #[arg(long)]
    shared: bool,
    /// Seed of the mixture itself; `--seed` drives sampling.
    #[arg(long, default_value_t = 0)]
    mixture_seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn out_path(cli_out: &Option<PathBuf>, default: &str) -> PathBuf {
    cli_out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn load_kb(path: &Path, g: &Geometry) -> Result<KnowledgeBase> {
    let bytes = formats::read_file(path)?;
    if bytes.starts_with(formats::geos::MAGIC.as_bytes()) {
        Ok(KnowledgeBase::from_bank(formats::decode_bank(&bytes)?)?)
    } else {
        let mut set = Container::decode(&bytes)?.into_set();
        if g.l2_normalize {
            set = set.l2_normalized();
        }
        Ok(build_knowledge_base(&set, g.m, g.mode())?)
    }
}

fn load_config(cli: &Cli) -> Result<SimConfig> {
    let path = cli.config.as_ref().ok_or_else(|| GeocalError::config("--config is required"))?;
    let mut cfg = SimConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Partition(a) => {
            let set = formats::load_container(&a.input, LoadOptions::default())?;
            let kind = match a.kind {
                Kind::Dirichlet => PartitionKind::DirichletLabelSkew,
                Kind::Fixed => PartitionKind::FixedAssignment,
                Kind::Longtail => PartitionKind::LongtailExponential,
            };
            let spec = PartitionSpec {
                kind,
                beta: a.beta,
                imbalance_factor: a.imbalance_factor,
                num_clients: a.clients,
                seed,
            };
            spec.validate().map_err(|e| GeocalError::config(e.to_string()))?;
            let parts = partition(&set, &spec)?;
            let dir = out_path(&cli.out, "partition");
            for (k, idx) in parts.iter().enumerate() {
                formats::save_container(&set.subset(idx), dir.join(format!("client-{k}.geob")))?;
            }
            write_json(&dir.join("partition.json"), &parts)
        }
        Command::Stats(a) => {
            let set = a.geometry.load(&a.input)?;
            let upload = ClientUpload::from_set(a.client_id, a.domain, &set, a.geometry.mode());
            formats::save_upload(&upload, out_path(&cli.out, "upload.geou"))
        }
        Command::Aggregate(a) => {
            let uploads = a.uploads.iter().map(formats::load_upload).collect::<Result<Vec<_>>>()?;
            let bank = build_shape_bank(&uploads, a.m, a.prototypes)?;
            formats::save_bank(&bank, out_path(&cli.out, "bank.geos"))
        }
        Command::Augment(a) => {
            let set = a.geometry.load(&a.input)?;
            let out = out_path(&cli.out, "augmented.geob");
            if let Some(bank) = &a.bank {
                let bank = formats::load_bank(bank)?;
                let mut plan =
                    if a.multi_domain { AugmentPlan::multi_domain(seed) } else { AugmentPlan::single_domain(seed) };
                plan.per_prototype_count = a.per_prototype;
                plan.scale_mode = a.scale.into();
                if let Some(t) = a.target {
                    plan.target_count_per_class = t;
                }
                let aug = if a.multi_domain {
                    augment_multi_domain(&set, &bank, &plan)?
                } else {
                    augment_single_domain(&set, &bank, &plan)?
                };
                return formats::save_container(&aug, out);
            }
            let kb = a.kb.as_ref().ok_or_else(|| GeocalError::config("augment needs --bank or --kb"))?;
            let kb = load_kb(kb, &a.geometry)?;
            let mut policy = TailPolicy { scale_mode: a.scale.into(), ..TailPolicy::default() };
            if let Some(t) = a.target {
                policy.augment_target = geocal_core::calibrate::AugmentTarget::Explicit(t);
            }
            let (aug, records) = calibrate_tail(&set, &kb, &policy, a.geometry.mode(), seed)?;
            formats::save_container(&aug, &out)?;
            write_json(&out.with_extension("matches.json"), &records)
        }
        Command::Match(a) => {
            let set = a.geometry.load(&a.input)?;
            let kb = load_kb(&a.kb, &a.geometry)?;
            let counts = set.class_counts();
            let classes: Vec<usize> = if a.all {
                (0..counts.len()).filter(|&c| counts[c] > 0).collect()
            } else {
                let tail = TailPolicy::default().tail_classes(&counts);
                (0..counts.len()).filter(|&c| tail[c] && counts[c] > 0).collect()
            };
            let records = match_classes(&set, &classes, &kb, a.top_k, a.geometry.mode())?;
            write_json(&out_path(&cli.out, "matches.json"), &records)
        }
        Command::Train(a) => {
            let train_set = a.geometry.load(&a.train)?;
            let test = a.geometry.load(&a.test)?;
            let arch = geocal_core::Architecture {
                input_dim: train_set.dim(),
                hidden_dim: a.hidden,
                num_classes: train_set.num_classes().max(test.num_classes()),
            };
            let cfg = TrainConfig {
                learning_rate: a.lr,
                batch_size: a.batch_size,
                epochs: a.epochs,
                seed,
                sampler: if a.inverse_sampling { Sampler::InverseFrequency } else { Sampler::Uniform },
            };
            cfg.validate().map_err(|e| GeocalError::config(e.to_string()))?;
            let layer = match &a.kb {
                Some(kb) => {
                    let kb = load_kb(kb, &a.geometry)?;
                    let policy = TailPolicy::default();
                    Some(GgeurLayer::from_knowledge_base(&train_set, &kb, &policy, a.geometry.mode())?.0)
                }
                None => None,
            };
            let init = ClassifierParams::init(arch, seed);
            let params = train(&train_set, &cfg, &init, layer.as_ref())?;
            let out = out_path(&cli.out, "model.geow");
            formats::save_params(&params, &out)?;
            let counts = train_set.class_counts();
            let report = evaluate(&params, &test, &BandThresholds::default(), Some(&counts))?;
            write_eval_csv(&out.with_extension("eval.csv"), &report)?;
            write_json(&out.with_extension("eval.json"), &report)
        }
        Command::Simulate => {
            let cfg = load_config(&cli)?;
            sim::simulate(&cfg, &cfg.output_dir).map(drop)
        }
        Command::Analyze => {
            let cfg = load_config(&cli)?;
            if cfg.mode != Mode::Analysis {
                return Err(GeocalError::config("analyze needs mode = \"analysis\""));
            }
            sim::simulate(&cfg, &cfg.output_dir).map(drop)
        }
        Command::Synth(a) => {
            let spec = MixtureSpec {
                num_classes: a.classes,
                dim: a.dim,
                num_domains: a.domains,
                mean_spread: a.mean_spread,
                domain_shift: a.domain_shift,
                spectrum: Spectrum { leading: a.leading, decay: a.decay, floor: a.floor },
                family: if a.shared { CovarianceFamily::Shared } else { CovarianceFamily::Rotated },
                seed: a.mixture_seed,
            };
            spec.validate().map_err(|e| GeocalError::config(e.to_string()))?;
            let set = GaussianMixture::new(spec)?.sample_balanced(a.per_class, seed)?;
            formats::save_container(&set, out_path(&cli.out, "synthetic.geob"))
        }
    }
}
