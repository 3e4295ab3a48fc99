//! Experiment driver: runs a validated [`SimConfig`] and writes its report
//! tree.
//!
//! Every random choice of a run is keyed by the run seed and a fixed tag, so
//! the baseline and treatment arms see the same partition, the same initial
//! weights and the same minibatch order, and repeated runs are identical.

use std::path::Path;

use geocal_core::aggregate::build_shape_bank;
use geocal_core::analysis::{
    consistency_curve, cross_domain_similarity, matching_stability, size_ratios, ConsistencyRow, SizeRatioRow,
    StabilityRow,
};
use geocal_core::augment::{augment_multi_domain, augment_single_domain};
use geocal_core::calibrate::{build_knowledge_base, GgeurLayer, MatchRecord};
use geocal_core::model::{evaluate, fedavg, train, EvalReport, Sampler};
use geocal_core::partition::partition;
use geocal_core::rng::derive_seed;
use geocal_core::synth::GaussianMixture;
use geocal_core::{
    Architecture, ClassifierParams, ClientUpload, EmbeddingSet, PartitionKind, PartitionSpec, ShapeBank,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Mode, SimConfig};
use crate::error::{GeocalError, Result};
use crate::formats::{load_container, save_bank, save_params, LoadOptions};
use crate::manifest::Manifest;
use crate::report::{write_csv, write_eval_csv, write_json, write_matrix_csv};

pub const TAG_TRAIN_DATA: u64 = 1;
pub const TAG_TEST_DATA: u64 = 2;
pub const TAG_KB_DATA: u64 = 3;
pub const TAG_PARTITION: u64 = 4;
pub const TAG_AUGMENT: u64 = 5;
pub const TAG_INIT: u64 = 6;
pub const TAG_LOCAL: u64 = 7;
pub const TAG_ANALYSIS: u64 = 8;

/// Rounds averaged into the headline accuracy.
pub const FINAL_ROUNDS: usize = 5;

pub const BASELINE: &str = "baseline";
pub const GGEUR: &str = "ggeur";

#[derive(Debug, Clone)]
pub struct Inputs {
    pub train: EmbeddingSet,
    pub test: Option<EmbeddingSet>,
    pub kb: Option<EmbeddingSet>,
}

/// Loads the configured containers, or generates them for `seed`.
pub fn load_inputs(cfg: &SimConfig, seed: u64) -> Result<Inputs> {
    if let Some(syn) = &cfg.synthetic {
        let g = GaussianMixture::new(syn.mixture)?;
        let mut train = g.sample_balanced(syn.train_per_class, derive_seed(seed, &[TAG_TRAIN_DATA]))?;
        if cfg.mode == Mode::Longtail {
            let spec = PartitionSpec {
                kind: PartitionKind::LongtailExponential,
                seed: derive_seed(seed, &[TAG_PARTITION]),
                ..cfg.partition
            };
            train = train.subset(&partition(&train, &spec)?[0]);
        }
        let test = g.sample_balanced(syn.test_per_class, derive_seed(seed, &[TAG_TEST_DATA]))?;
        let kb = g.sample_balanced(syn.kb_per_class.max(1), derive_seed(seed, &[TAG_KB_DATA]))?;
        return Ok(Inputs { train, test: Some(test), kb: Some(kb) });
    }
    let opts = LoadOptions { l2_normalize: cfg.data.l2_normalize };
    let load = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| load_container(p, opts)).transpose();
    let train = load(&cfg.data.train)?.ok_or_else(|| GeocalError::config("data.train is required"))?;
    Ok(Inputs { train, test: load(&cfg.data.test)?, kb: load(&cfg.data.kb)? })
}

fn require<'a>(set: &'a Option<EmbeddingSet>, name: &str) -> Result<&'a EmbeddingSet> {
    set.as_ref().ok_or_else(|| GeocalError::config(format!("data.{name} is required for this mode")))
}

fn architecture(cfg: &SimConfig, train: &EmbeddingSet, test: &EmbeddingSet) -> Architecture {
    let classes = train.num_classes().max(test.num_classes());
    Architecture { input_dim: train.dim(), hidden_dim: cfg.train.hidden_dim, num_classes: classes }
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RoundRow {
    pub arm: String,
    pub round: usize,
    pub top1: f64,
    pub domain_std: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ClientRow {
    pub client: usize,
    pub domain: usize,
    pub local_rows: usize,
    pub local_classes: usize,
    pub augmented_rows: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    /// Mean top-1 over the last [`FINAL_ROUNDS`] rounds.
    pub final_top1: f64,
    pub final_domain_std: f64,
    pub last_round: EvalReport,
}

#[derive(Debug, Clone)]
pub struct FedOutcome {
    pub rounds: Vec<RoundRow>,
    pub clients: Vec<ClientRow>,
    pub arms: Vec<ArmSummary>,
    pub bank: ShapeBank,
    pub params: Vec<(String, ClassifierParams)>,
}

impl FedOutcome {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

/// Partition, upload statistics, aggregate shapes, augment, then federated
/// rounds of local training and FedAvg for each arm.
pub fn run_fed(cfg: &SimConfig, inputs: &Inputs, seed: u64) -> Result<FedOutcome> {
    let multi = match cfg.mode {
        Mode::FedSingleDomain => false,
        Mode::FedMultiDomain => true,
        _ => return Err(GeocalError::config("run_fed needs a fed mode")),
    };
    let train_set = &inputs.train;
    let test = require(&inputs.test, "test")?;
    let spec = PartitionSpec { seed: derive_seed(seed, &[TAG_PARTITION]), ..cfg.partition };
    let parts = partition(train_set, &spec)?;
    let clients: Vec<EmbeddingSet> = parts.iter().map(|idx| train_set.subset(idx)).collect();
    let domain_of = |k: usize| if multi { k } else { 0 };

    let uploads: Vec<ClientUpload> = clients
        .iter()
        .enumerate()
        .map(|(k, c)| ClientUpload::from_set(k as u32, domain_of(k), c, cfg.covariance_mode))
        .collect();
    let bank = build_shape_bank(&uploads, cfg.m, multi)?;

    let augmented: Vec<EmbeddingSet> = clients
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            if c.is_empty() {
                return Ok(c.clone());
            }
            let plan = cfg.augment.plan(derive_seed(seed, &[TAG_AUGMENT, k as u64]));
            if multi {
                augment_multi_domain(c, &bank, &plan)
            } else {
                augment_single_domain(c, &bank, &plan)
            }
        })
        .collect::<Result<_, _>>()?;

    let client_rows = clients
        .iter()
        .zip(&augmented)
        .enumerate()
        .map(|(k, (c, a))| ClientRow {
            client: k,
            domain: domain_of(k),
            local_rows: c.len(),
            local_classes: c.class_counts().iter().filter(|&&n| n > 0).count(),
            augmented_rows: a.len(),
        })
        .collect();

    let arch = architecture(cfg, train_set, test);
    let init = ClassifierParams::init(arch, derive_seed(seed, &[TAG_INIT]));
    let mut arms: Vec<(&str, &[EmbeddingSet])> = Vec::new();
    if !cfg.skip_baseline {
        arms.push((BASELINE, &clients));
    }
    arms.push((GGEUR, &augmented));

    let mut rounds = Vec::new();
    let mut summaries = Vec::new();
    let mut params = Vec::new();
    for (name, sets) in arms {
        let (global, history) = federate(cfg, sets, &init, test, seed)?;
        let tail = &history[history.len().saturating_sub(FINAL_ROUNDS)..];
        let mean = |f: fn(&EvalReport) -> f64| tail.iter().map(f).sum::<f64>() / tail.len() as f64;
        summaries.push(ArmSummary {
            arm: name.to_owned(),
            final_top1: mean(|r| r.top1_overall),
            final_domain_std: mean(|r| r.domain_std),
            last_round: history.last().cloned().expect("rounds >= 1"),
        });
        rounds.extend(history.iter().enumerate().map(|(r, rep)| RoundRow {
            arm: name.to_owned(),
            round: r + 1,
            top1: rep.top1_overall,
            domain_std: rep.domain_std,
        }));
        params.push((name.to_owned(), global));
    }
    Ok(FedOutcome { rounds, clients: client_rows, arms: summaries, bank, params })
}

/// FedAvg over `cfg.rounds`; returns the final global model and one
/// evaluation per round.
fn federate(
    cfg: &SimConfig,
    sets: &[EmbeddingSet],
    init: &ClassifierParams,
    test: &EmbeddingSet,
    seed: u64,
) -> Result<(ClassifierParams, Vec<EvalReport>)> {
    let active: Vec<usize> = (0..sets.len()).filter(|&k| !sets[k].is_empty()).collect();
    if active.is_empty() {
        return Err(GeocalError::config("every client is empty"));
    }
    let weights: Vec<f64> = active.iter().map(|&k| sets[k].len() as f64).collect();
    let mut global = init.clone();
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let local: Vec<ClassifierParams> = active
            .par_iter()
            .map(|&k| {
                let tc = cfg.train.config(derive_seed(seed, &[TAG_LOCAL, round as u64, k as u64]), Sampler::Uniform);
                train(&sets[k], &tc, &global, None)
            })
            .collect::<Result<_, _>>()?;
        global = fedavg(&local, &weights)?;
        history.push(evaluate(&global, test, &cfg.eval, None)?);
    }
    Ok((global, history))
}

#[derive(Debug, Clone)]
pub struct LongtailOutcome {
    pub arms: Vec<(String, EvalReport)>,
    pub matches: Vec<MatchRecord>,
    pub train_counts: Vec<usize>,
    pub params: Vec<(String, ClassifierParams)>,
}

impl LongtailOutcome {
    pub fn arm(&self, name: &str) -> Option<&EvalReport> {
        self.arms.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }
}

/// Knowledge base, tail matching, then training with and without the
/// perturbation layer from the same initialization and batch order.
pub fn run_longtail(cfg: &SimConfig, inputs: &Inputs, seed: u64) -> Result<LongtailOutcome> {
    let train_set = &inputs.train;
    let test = require(&inputs.test, "test")?;
    let kb_set = require(&inputs.kb, "kb")?;
    let kb = build_knowledge_base(kb_set, cfg.m, cfg.covariance_mode)?;
    let (layer, matches) = GgeurLayer::from_knowledge_base(train_set, &kb, &cfg.tail, cfg.covariance_mode)?;
    let arch = architecture(cfg, train_set, test);
    let init = ClassifierParams::init(arch, derive_seed(seed, &[TAG_INIT]));
    let tc = cfg.train.config(derive_seed(seed, &[TAG_LOCAL]), Sampler::InverseFrequency);
    let train_counts = train_set.class_counts();

    let mut arms = Vec::new();
    let mut params = Vec::new();
    let mut variants: Vec<(&str, Option<&GgeurLayer>)> = Vec::new();
    if !cfg.skip_baseline {
        variants.push((BASELINE, None));
    }
    variants.push((GGEUR, Some(&layer)));
    for (name, l) in variants {
        let p = train(train_set, &tc, &init, l)?;
        arms.push((name.to_owned(), evaluate(&p, test, &cfg.eval, Some(&train_counts))?));
        params.push((name.to_owned(), p));
    }
    Ok(LongtailOutcome { arms, matches, train_counts, params })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CrossDomainRow {
    pub domain_a: usize,
    pub domain_b: usize,
    pub mean_same_class: f64,
    pub mean_cross_class: f64,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub consistency: Vec<ConsistencyRow>,
    pub stability: Vec<StabilityRow>,
    pub size_ratios: Vec<SizeRatioRow>,
    pub cross_domain: Vec<geocal_core::analysis::DomainPairSimilarity>,
}

/// Geometry studies of the training set (reference) against the knowledge
/// base (candidates).
pub fn run_analysis(cfg: &SimConfig, inputs: &Inputs, seed: u64) -> Result<AnalysisOutcome> {
    let reference = &inputs.train;
    let cand = require(&inputs.kb, "kb")?;
    let mode = cfg.covariance_mode;
    let cand_kb = build_knowledge_base(cand, cfg.m, mode)?;
    let ref_kb = build_knowledge_base(reference, cfg.m, mode)?;
    Ok(AnalysisOutcome {
        consistency: consistency_curve(reference, cand, cfg.m, mode)?,
        stability: matching_stability(
            reference,
            &cfg.analysis.sizes,
            &cand_kb,
            cfg.analysis.trials,
            derive_seed(seed, &[TAG_ANALYSIS]),
        )?,
        size_ratios: size_ratios(&ref_kb, &cand_kb)?,
        cross_domain: cross_domain_similarity(reference, cfg.m, mode)?,
    })
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    /// `(arm, headline accuracy)`: final-rounds mean in fed modes, overall
    /// top-1 in longtail.
    pub arms: Vec<(String, f64)>,
}

/// Runs every seed of `cfg` and writes the report tree under `out`.
pub fn simulate(cfg: &SimConfig, out: &Path) -> Result<Vec<SeedSummary>> {
    cfg.validate()?;
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        let inputs = load_inputs(cfg, seed)?;
        let arms = match cfg.mode {
            Mode::FedSingleDomain | Mode::FedMultiDomain => {
                let o = run_fed(cfg, &inputs, seed)?;
                write_csv(&dir.join("rounds.csv"), &o.rounds)?;
                write_csv(&dir.join("clients.csv"), &o.clients)?;
                write_json(&dir.join("report.json"), &o.arms)?;
                for a in &o.arms {
                    write_eval_csv(&dir.join(format!("{}_eval.csv", a.arm)), &a.last_round)?;
                }
                save_bank(&o.bank, dir.join("shape_bank.geos"))?;
                for (name, p) in &o.params {
                    save_params(p, dir.join(format!("{name}.geow")))?;
                }
                o.arms.iter().map(|a| (a.arm.clone(), a.final_top1)).collect()
            }
            Mode::Longtail => {
                let o = run_longtail(cfg, &inputs, seed)?;
                write_csv(&dir.join("matches.csv"), &match_rows(&o.matches))?;
                write_json(&dir.join("report.json"), &o.arms)?;
                for (name, r) in &o.arms {
                    write_eval_csv(&dir.join(format!("{name}_eval.csv")), r)?;
                }
                for (name, p) in &o.params {
                    save_params(p, dir.join(format!("{name}.geow")))?;
                }
                o.arms.iter().map(|(n, r)| (n.clone(), r.top1_overall)).collect()
            }
            Mode::Analysis => {
                let o = run_analysis(cfg, &inputs, seed)?;
                write_csv(&dir.join("consistency.csv"), &o.consistency)?;
                write_csv(&dir.join("stability.csv"), &o.stability)?;
                write_csv(&dir.join("size_ratios.csv"), &o.size_ratios)?;
                let rows: Vec<CrossDomainRow> = o
                    .cross_domain
                    .iter()
                    .map(|p| CrossDomainRow {
                        domain_a: p.domain_a,
                        domain_b: p.domain_b,
                        mean_same_class: p.mean_same_class(),
                        mean_cross_class: p.mean_cross_class(),
                    })
                    .collect();
                write_csv(&dir.join("cross_domain.csv"), &rows)?;
                for p in &o.cross_domain {
                    let path = dir.join(format!("shape_similarity_d{}_d{}.csv", p.domain_a, p.domain_b));
                    write_matrix_csv(&path, "class", &p.matrix)?;
                }
                Vec::new()
            }
        };
        summaries.push(SeedSummary { seed, arms });
    }
    write_json(&out.join("summary.json"), &summaries)?;
    Manifest::new(cfg).write(out)?;
    Ok(summaries)
}

#[derive(Debug, Clone, Serialize)]
pub struct MatchRow {
    pub class: usize,
    pub donor: usize,
    pub cosine: f64,
    pub shape_similarity: f64,
}

pub fn match_rows(records: &[MatchRecord]) -> Vec<MatchRow> {
    records
        .iter()
        .map(|r| MatchRow { class: r.class, donor: r.donor, cosine: r.cosine, shape_similarity: r.shape_similarity })
        .collect()
}
