use std::fs;
use std::path::{Path, PathBuf};

use sgada::data::{Generator, LabeledDataset};
use sgada::diffcore::Tape;
use sgada::nets::{Extractor, ModelBundle};
use sgada::pipeline::{
    evaluate, generate_pseudolabels, prepare_data, pretrain_source, run_all, sgada_adapt, warmup_adda, Benchmark,
    ExperimentConfig, Manifest, PreparedData, RunControl,
};
use sgada::pseudo::{PseudoLabel, PseudoLabelSet, SelectionMode};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        benchmark: Benchmark::Custom,
        generator: Generator::GaussianMixture,
        n_per_class: vec![150, 300, 200],
        target_n_per_class: vec![],
        noise_sigma: 1.0,
        mixture_radius: 3.0,
        mean_shift: [1.0, 0.5],
        epochs_pretrain: 6,
        epochs_warmup: 4,
        epochs_sgada: 4,
        ..ExperimentConfig::default()
    }
}

fn bundle_for(cfg: &ExperimentConfig, data: &PreparedData) -> ModelBundle {
    ModelBundle::new(
        cfg.extractor_spec(data.source_train.dim()),
        data.source_train.n_classes(),
        cfg.disc_hidden,
        cfg.seed,
    )
    .unwrap()
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("pipeline").join(name);
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn separable_source_is_learned() {
    let cfg = ExperimentConfig {
        mixture_radius: 8.0,
        noise_sigma: 0.5,
        epochs_pretrain: 15,
        lr_pretrain: 5e-3,
        ..small()
    };
    let data = prepare_data(&cfg).unwrap();
    let mut b = bundle_for(&cfg, &data);
    let rec = pretrain_source(&cfg, &mut b, &data.source_train).unwrap();
    let val = evaluate(&b, &data.source_val, Extractor::Source).unwrap();
    assert!(val.overall >= 99.0, "source val accuracy {}", val.overall);

    let loss = rec.column("ce_loss").unwrap();
    assert_eq!(loss.len(), 15);
    // Allow small epoch-to-epoch noise, but the trend must go down.
    for w in loss.windows(2) {
        assert!(w[1] <= w[0] * 1.05 + 1e-3, "loss went up: {loss:?}");
    }
    assert!(loss[14] < 0.25 * loss[0]);
}

#[test]
fn zero_epochs_change_nothing() {
    let cfg = ExperimentConfig {
        epochs_pretrain: 0,
        ..small()
    };
    let data = prepare_data(&cfg).unwrap();
    let mut b = bundle_for(&cfg, &data);
    let before = b.checkpoint_text();
    let rec = pretrain_source(&cfg, &mut b, &data.source_train).unwrap();
    assert_eq!(rec.epochs_run(), 0);
    assert_eq!(b.checkpoint_text(), before);
}

#[test]
fn unlabeled_source_is_rejected() {
    let cfg = small();
    let data = prepare_data(&cfg).unwrap();
    let mut b = bundle_for(&cfg, &data);
    let err = pretrain_source(&cfg, &mut b, &data.source_train.unlabeled()).unwrap_err();
    assert!(err.to_string().contains("unlabeled"), "{err}");
}

#[test]
fn null_shift_warmup_keeps_accuracy_and_confuses_the_discriminator() {
    let mut deltas = Vec::new();
    let mut d_means = Vec::new();
    for seed in 0..5 {
        let cfg = ExperimentConfig {
            mean_shift: [0.0, 0.0],
            n_per_class: vec![500, 1000, 700],
            seed,
            ..small()
        };
        let data = prepare_data(&cfg).unwrap();
        let mut b = bundle_for(&cfg, &data);
        pretrain_source(&cfg, &mut b, &data.source_train).unwrap();
        let before = evaluate(&b, &data.target_test, Extractor::Source).unwrap().macro_avg;
        let rec = warmup_adda(&cfg, &mut b, &data.source_train, &data.target_train.unlabeled()).unwrap();
        let after = evaluate(&b, &data.target_test, Extractor::Target).unwrap().macro_avg;
        deltas.push((after - before).abs());
        let last = rec.epochs_run() - 1;
        d_means.push(rec.column("d_source_mean").unwrap()[last]);
        d_means.push(rec.column("d_target_mean").unwrap()[last]);
    }
    assert!(median(deltas.clone()) <= 2.0, "macro accuracy moved by {deltas:?}");
    // Indistinguishable domains leave D near chance.
    assert!(d_means.iter().all(|d| (d - 0.5).abs() < 0.1), "{d_means:?}");
}

fn warmed(cfg: &ExperimentConfig) -> (PreparedData, ModelBundle) {
    let data = prepare_data(cfg).unwrap();
    let mut b = bundle_for(cfg, &data);
    pretrain_source(cfg, &mut b, &data.source_train).unwrap();
    warmup_adda(cfg, &mut b, &data.source_train, &data.target_train.unlabeled()).unwrap();
    (data, b)
}

#[test]
fn zero_confidence_threshold_selects_every_row() {
    let cfg = ExperimentConfig {
        tau_cls: 0.0,
        selection_mode: SelectionMode::ClsOnly,
        ..small()
    };
    let (data, b) = warmed(&cfg);
    let target = data.target_train.unlabeled();
    let set = generate_pseudolabels(&cfg, &b, &target).unwrap();
    assert_eq!(set.indices(), (0..target.len()).collect::<Vec<_>>());
}

#[test]
fn pseudo_labels_match_a_row_by_row_recomputation() {
    let cfg = small();
    let (data, b) = warmed(&cfg);
    let target = data.target_train.unlabeled();
    let set = generate_pseudolabels(&cfg, &b, &target).unwrap();

    let mut expected = Vec::new();
    for i in 0..target.len() {
        let mut t = Tape::new();
        let x = t.constant(target.features().select_rows(&[i]));
        let f = b.extract(&mut t, Extractor::Target, x, false).unwrap();
        let p = b.classify(&mut t, f, false).unwrap();
        let d = b.discriminate(&mut t, f, false).unwrap();
        let probs = t.value(p).row(0).to_vec();
        let d = t.value(d).get(0, 0);
        let (mut arg, mut conf) = (0, probs[0]);
        for (k, &q) in probs.iter().enumerate() {
            if q > conf {
                (arg, conf) = (k, q);
            }
        }
        if conf >= cfg.tau_cls && (d >= 0.5 || 1.0 - d < cfg.tau_disc) {
            expected.push((i, arg));
        }
    }
    let got: Vec<(usize, usize)> = set.entries.iter().map(|e| (e.sample_index, e.label)).collect();
    assert!(!expected.is_empty());
    assert_eq!(got, expected);
}

#[test]
fn zero_lambda_is_plain_adversarial_training() {
    let cfg = ExperimentConfig { lambda: 0.0, ..small() };
    let (data, warm) = warmed(&cfg);
    let target = data.target_train.unlabeled();
    let set = generate_pseudolabels(&cfg, &warm, &target).unwrap();
    assert!(!set.is_empty());
    let empty = PseudoLabelSet {
        entries: vec![],
        ..set.clone()
    };

    let mut a = warm.clone();
    let mut b = warm;
    let ra = sgada_adapt(&cfg, &mut a, &data.source_train, &target, &set).unwrap();
    let rb = sgada_adapt(&cfg, &mut b, &data.source_train, &target, &empty).unwrap();
    let ft = a.extractor_ids(Extractor::Target);
    assert_eq!(a.hash(&ft), b.hash(&ft));
    assert_eq!(ra.column("adv_loss"), rb.column("adv_loss"));
    assert_eq!(ra.column("disc_loss"), rb.column("disc_loss"));
}

#[test]
fn oracle_pseudo_labels_approach_a_target_trained_model() {
    let cfg = ExperimentConfig {
        mean_shift: [1.5, 0.0],
        rotation_deg: 25.0,
        epochs_pretrain: 15,
        epochs_sgada: 20,
        lr_pretrain: 5e-3,
        lr_ft: 1e-3,
        lambda: 10.0,
        n_per_class: vec![500, 1000, 700],
        ..small()
    };
    let (data, mut b) = warmed(&cfg);
    let truth = data.target_train.dense_labels().unwrap();
    let oracle = PseudoLabelSet {
        entries: truth
            .iter()
            .enumerate()
            .map(|(i, &label)| PseudoLabel {
                sample_index: i,
                label,
                cls_confidence: 1.0,
                disc_source_prob: 0.5,
            })
            .collect(),
        tau_cls: 0.0,
        tau_disc: 0.0,
        generation_epoch: 0,
    };
    sgada_adapt(
        &cfg,
        &mut b,
        &data.source_train,
        &data.target_train.unlabeled(),
        &oracle,
    )
    .unwrap();
    let adapted = evaluate(&b, &data.target_test, Extractor::Target).unwrap().overall;

    // Fully supervised on the same target rows.
    let relabeled = LabeledDataset::new(
        data.target_train.features().clone(),
        truth.into_iter().map(Some).collect(),
        sgada::data::Domain::Source,
        data.target_train.class_names().to_vec(),
    )
    .unwrap();
    let mut reference = bundle_for(&cfg, &data);
    pretrain_source(&cfg, &mut reference, &relabeled).unwrap();
    let target_only = evaluate(&reference, &data.target_test, Extractor::Source)
        .unwrap()
        .overall;
    assert!(
        adapted >= target_only - 2.0,
        "adapted {adapted:.2} vs target-only {target_only:.2}"
    );
}

#[test]
fn empty_pseudo_label_set_runs_with_a_warning() {
    let cfg = ExperimentConfig {
        tau_cls: 1.0,
        epochs_pretrain: 2,
        epochs_warmup: 1,
        epochs_sgada: 1,
        ..small()
    };
    let dir = scratch("empty");
    let out = run_all(&cfg, &dir, RunControl::default()).unwrap();
    assert!(out.completed);
    assert_eq!(out.n_pseudo, Some(0));
    assert!(!out.warnings.is_empty());
    let manifest = Manifest::load(&dir).unwrap();
    assert!(manifest.get("warning.empty_pseudo_labels").is_some());
    let sgada = fs::read_to_string(dir.join("phase_sgada.csv")).unwrap();
    assert_eq!(sgada.lines().count(), 2);
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.txt" {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_and_resumed_runs_are_identical() {
    let cfg = ExperimentConfig {
        epochs_pretrain: 3,
        epochs_warmup: 2,
        epochs_sgada: 2,
        ..small()
    };
    let a = scratch("repeat-a");
    let b = scratch("repeat-b");
    assert!(run_all(&cfg, &a, RunControl::default()).unwrap().completed);
    assert!(run_all(&cfg, &b, RunControl::default()).unwrap().completed);

    let c = scratch("resume");
    let halted = run_all(
        &cfg,
        &c,
        RunControl {
            stop_after: None,
            halt_at: Some((sgada::pipeline::Phase::Warmup, 1)),
        },
    )
    .unwrap();
    assert!(!halted.completed);
    assert!(run_all(&cfg, &c, RunControl::default()).unwrap().completed);

    let ta = tree(&a);
    assert!(ta.len() > 10);
    let names = |t: &[(PathBuf, Vec<u8>)]| t.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>();
    for other in [tree(&b), tree(&c)] {
        assert_eq!(names(&ta), names(&other));
        for ((p, x), (_, y)) in ta.iter().zip(&other) {
            assert!(x == y, "{} differs", p.display());
        }
    }
}

#[test]
fn changed_config_refuses_to_reuse_a_run_directory() {
    let cfg = ExperimentConfig {
        epochs_pretrain: 1,
        epochs_warmup: 1,
        epochs_sgada: 1,
        ..small()
    };
    let dir = scratch("reuse");
    run_all(&cfg, &dir, RunControl::default()).unwrap();
    let other = ExperimentConfig { seed: 7, ..cfg };
    assert!(run_all(&other, &dir, RunControl::default()).is_err());
}
