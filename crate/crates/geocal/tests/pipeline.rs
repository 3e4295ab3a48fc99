use geocal::sim::{load_inputs, run_analysis, run_fed, run_longtail, TAG_INIT, TAG_LOCAL};
use geocal::SimConfig;
use geocal_core::model::{evaluate, train, Sampler};
use geocal_core::rng::derive_seed;
use geocal_core::{Architecture, ClassifierParams};

#[test]
fn one_client_one_round_equals_centralized_training() {
    let cfg = SimConfig::from_toml(
        "mode = \"fed_single_domain\"\nrounds = 1\n[synthetic]\ntrain_per_class = 30\ntest_per_class = 10\n\
         [synthetic.mixture]\nnum_classes = 3\ndim = 5\n[partition]\nkind = \"dirichlet_label_skew\"\nnum_clients = 1\n\
         [train]\nhidden_dim = 4\nepochs = 3\nlearning_rate = 0.05\n",
    )
    .unwrap();
    let seed = 11;
    let inputs = load_inputs(&cfg, seed).unwrap();
    let fed = run_fed(&cfg, &inputs, seed).unwrap();

    let arch = Architecture::mlp(5, 4, 3);
    let init = ClassifierParams::init(arch, derive_seed(seed, &[TAG_INIT]));
    let tc = cfg.train.config(derive_seed(seed, &[TAG_LOCAL, 0, 0]), Sampler::Uniform);
    let central = train(&inputs.train, &tc, &init, None).unwrap();
    let baseline = &fed.params.iter().find(|(n, _)| n == "baseline").unwrap().1;
    assert_eq!(baseline.flatten(), central.flatten());
    let test = inputs.test.as_ref().unwrap();
    let report = evaluate(&central, test, &cfg.eval, None).unwrap();
    assert_eq!(fed.arm("baseline").unwrap().final_top1, report.top1_overall);
}

#[test]
fn multi_domain_run_reports_every_client() {
    let cfg = SimConfig::from_toml(
        "mode = \"fed_multi_domain\"\nrounds = 3\n[synthetic]\ntrain_per_class = 40\ntest_per_class = 10\n\
         [synthetic.mixture]\nnum_classes = 4\ndim = 6\nnum_domains = 3\ndomain_shift = 1.5\n\
         [partition]\nkind = \"fixed_assignment\"\n[augment]\ntarget_count_per_class = 80\nper_prototype_count = 30\n\
         [train]\nhidden_dim = 0\nlearning_rate = 0.05\n",
    )
    .unwrap();
    let inputs = load_inputs(&cfg, 0).unwrap();
    let o = run_fed(&cfg, &inputs, 0).unwrap();
    assert_eq!(o.clients.len(), 3);
    assert!(o.clients.iter().all(|c| c.augmented_rows >= 4 * 80));
    assert_eq!(o.rounds.len(), 6);
    assert_eq!(o.bank.prototypes().unwrap().len(), 3 * 4);
}

#[test]
fn longtail_arms_share_initialization_and_report_bands() {
    let cfg = SimConfig::from_toml(
        "mode = \"longtail\"\n[synthetic]\ntrain_per_class = 300\ntest_per_class = 50\nkb_per_class = 300\n\
         [synthetic.mixture]\nnum_classes = 10\ndim = 16\nmean_spread = 1.0\n[partition]\nkind = \"longtail_exponential\"\n\
         imbalance_factor = 100.0\n[train]\nhidden_dim = 0\nlearning_rate = 0.05\nepochs = 10\n",
    )
    .unwrap();
    let inputs = load_inputs(&cfg, 1).unwrap();
    let o = run_longtail(&cfg, &inputs, 1).unwrap();
    assert_eq!(o.train_counts[0], 300);
    assert_eq!(*o.train_counts.last().unwrap(), 3);
    let base = o.arm("baseline").unwrap();
    let ggeur = o.arm("ggeur").unwrap();
    assert!(base.tail.is_some() && ggeur.head.is_some());
    assert!(!o.matches.is_empty());
}

#[test]
fn analysis_outputs_are_consistent() {
    let cfg = SimConfig::from_toml(
        "mode = \"analysis\"\nm = 3\n[synthetic]\ntrain_per_class = 200\ntest_per_class = 10\nkb_per_class = 200\n\
         [synthetic.mixture]\nnum_classes = 5\ndim = 8\nnum_domains = 2\n[analysis]\nsizes = [5, 30]\ntrials = 10\n",
    )
    .unwrap();
    let inputs = load_inputs(&cfg, 2).unwrap();
    let o = run_analysis(&cfg, &inputs, 2).unwrap();
    assert_eq!(o.consistency.len(), 25);
    assert_eq!(o.stability.len(), 2);
    assert_eq!(o.size_ratios.len(), 5);
    assert_eq!(o.cross_domain.len(), 1);
    // Train and KB come from the same mixture, so each class matches itself.
    for r in o.consistency.iter().filter(|r| r.rank == 1) {
        assert_eq!(r.ref_class, r.cand_class);
    }
}
