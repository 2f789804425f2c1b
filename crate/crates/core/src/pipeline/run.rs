//! The end-to-end run: every phase, its evaluations, checkpoints after each
//! epoch, and a manifest that lets an interrupted run pick up where it
//! stopped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{Benchmark, ExperimentConfig, FLIR_TOY_CLASSES};
use super::metrics::MetricsReport;
use super::phases::{
    evaluate, pretrain_source_from, sgada_adapt_from, target_predictions, warmup_adda_from, Flow, Phase, PhaseRecord,
};
use crate::data::{default_class_names, generate, load_csv, split, Domain, LabeledDataset};
use crate::diffcore::ParamId;
use crate::error::{Error, Result};
use crate::nets::{fmt_f64, Extractor, ModelBundle};
use crate::pseudo::{audit, select, PseudoLabelSet, SelectionMode, SelectionStats};
use crate::rng::derive_seed;

pub const MANIFEST: &str = "manifest.txt";
pub const CONFIG_COPY: &str = "config.cfg";
pub const PSEUDO_LABELS: &str = "pseudo_labels.csv";
pub const TIMING: &str = "timing.txt";
const LATEST: &str = "checkpoints/latest.ckpt";
const PROGRESS: &str = "checkpoints/progress.txt";
const PSEUDO_CURRENT: &str = "checkpoints/pseudo_current.csv";

/// The trained phases, in execution order.
pub const TRAINING_ORDER: [Phase; 4] = [Phase::Pretrain, Phase::Warmup, Phase::PseudoLabel, Phase::Sgada];

/// Evaluation labels, in table order.
pub const EVAL_STAGES: [&str; 3] = ["source_only", "warmup", "sgada"];

pub fn metrics_file(stage: &str) -> String {
    format!("metrics_{stage}.txt")
}

pub fn phase_file(phase: Phase) -> String {
    format!("phase_{}.csv", phase.as_str())
}

pub fn checkpoint_file(phase: Phase) -> String {
    format!("checkpoints/after_{}.ckpt", phase.as_str())
}

pub fn selection_file(mode: SelectionMode, ext: &str) -> String {
    format!("selection_{}.{ext}", mode.as_str())
}

/// Stops a run early. Used by the phase-by-phase commands and by the
/// resume tests.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunControl {
    /// Return once this phase and its evaluation are done.
    pub stop_after: Option<Phase>,
    /// Return right after this many epochs of this phase, as a crash would.
    pub halt_at: Option<(Phase, usize)>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    /// Every phase has finished.
    pub completed: bool,
    pub source_only: Option<MetricsReport>,
    pub warmup: Option<MetricsReport>,
    pub sgada: Option<MetricsReport>,
    /// Warm-up model on the target training rows, i.e. the classifier
    /// accuracy the pseudo-labels compete with.
    pub warmup_target_train: Option<MetricsReport>,
    pub selection: Vec<(SelectionMode, SelectionStats)>,
    pub n_pseudo: Option<usize>,
    pub warnings: Vec<String>,
}

/// The splits a run trains and evaluates on.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub source_train: LabeledDataset,
    pub source_val: LabeledDataset,
    pub source_test: LabeledDataset,
    /// Labeled; only evaluation and the audit look at its labels.
    pub target_train: LabeledDataset,
    pub target_test: LabeledDataset,
}

/// Both domains before splitting.
pub fn build_datasets(cfg: &ExperimentConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match cfg.shift_spec() {
        Some(mut spec) => {
            spec.seed = derive_seed(cfg.seed, "data-source", 0);
            let source = generate(&spec, Domain::Source)?;
            spec.seed = derive_seed(cfg.seed, "data-target", 0);
            let target = generate(&spec, Domain::Target)?;
            if cfg.benchmark == Benchmark::FlirToy {
                let names: Vec<String> = FLIR_TOY_CLASSES.iter().map(|s| s.to_string()).collect();
                return Ok((source.with_class_names(names.clone())?, target.with_class_names(names)?));
            }
            Ok((source, target))
        }
        None => {
            let source = load_csv(Path::new(&cfg.source_csv))?;
            let target = load_csv(Path::new(&cfg.target_csv))?;
            if source.domain() != Domain::Source || target.domain() != Domain::Target {
                return Err(Error::contract(
                    "source_csv must hold source rows and target_csv target rows",
                ));
            }
            let names = default_class_names(source.n_classes().max(target.n_classes()));
            Ok((source.with_class_names(names.clone())?, target.with_class_names(names)?))
        }
    }
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (source, target) = build_datasets(cfg)?;
    let f = (cfg.split[0], cfg.split[1], cfg.split[2]);
    let (source_train, source_val, source_test) = split(&source, f, derive_seed(cfg.seed, "split-source", 0))?;
    // Target validation rows are not used; no tuning looks at target labels.
    let (target_train, _, target_test) = split(&target, f, derive_seed(cfg.seed, "split-target", 0))?;
    Ok(PreparedData {
        source_train,
        source_val,
        source_test,
        target_train,
        target_test,
    })
}

fn new_bundle(cfg: &ExperimentConfig, data: &PreparedData) -> Result<ModelBundle> {
    ModelBundle::new(
        cfg.extractor_spec(data.source_train.dim()),
        data.source_train.n_classes(),
        cfg.disc_hidden,
        cfg.seed,
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Sorted `key = value` lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest(pub BTreeMap<String, String>);

impl Manifest {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::parse(origin, i + 1, "expected 'key = value'"))?;
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Self(map))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        Self::parse(&read_text(&path)?, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.to_string(), value.into());
    }

    pub fn is_done(&self, phase: Phase) -> bool {
        self.get(&format!("phase.{}", phase.as_str())) == Some("done")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Everything the run writes, resolved against one directory.
struct RunDir {
    root: PathBuf,
    manifest: Manifest,
    timing: BTreeMap<String, f64>,
}

impl RunDir {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn write(&self, rel: &str, text: &str) -> Result<()> {
        write_text(&self.path(rel), text)
    }

    fn read(&self, rel: &str) -> Result<String> {
        read_text(&self.path(rel))
    }

    fn origin(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    fn save_manifest(&self) -> Result<()> {
        self.write(MANIFEST, &self.manifest.to_text())
    }

    fn save_timing(&self) -> Result<()> {
        let mut out = String::new();
        for (k, v) in &self.timing {
            let _ = writeln!(out, "{k} = {v:.3}");
        }
        self.write(TIMING, &out)
    }

    fn progress(&self) -> Result<Option<(Phase, usize)>> {
        let p = self.path(PROGRESS);
        if !p.exists() {
            return Ok(None);
        }
        let m = Manifest::parse(&read_text(&p)?, &self.origin(PROGRESS))?;
        let bad = || Error::parse(self.origin(PROGRESS), 0, "expected 'phase' and 'epochs' entries");
        let phase = Phase::parse(m.get("phase").ok_or_else(bad)?)?;
        let epochs = m.get("epochs").ok_or_else(bad)?.parse().map_err(|_| bad())?;
        Ok(Some((phase, epochs)))
    }

    /// Checkpoint, loss history and progress marker after one epoch.
    fn save_epoch(&self, bundle: &ModelBundle, rec: &PhaseRecord, pseudo: Option<&PseudoLabelSet>) -> Result<()> {
        write_text(&self.path(LATEST), &bundle.checkpoint_text())?;
        self.write(&phase_file(rec.phase), &rec.to_csv())?;
        if let Some(p) = pseudo {
            self.write(PSEUDO_CURRENT, &p.to_csv())?;
        }
        self.write(
            PROGRESS,
            &format!("epochs = {}\nphase = {}\n", rec.epochs_run(), rec.phase.as_str()),
        )
    }

    /// Record and checkpoint state to resume `phase` from.
    fn resume_point(&self, phase: Phase) -> Result<PhaseRecord> {
        match self.progress()? {
            Some((p, n)) if p == phase && n > 0 => {
                let mut rec =
                    PhaseRecord::from_csv(phase, &self.read(&phase_file(phase))?, &self.origin(&phase_file(phase)))?;
                if rec.epochs.len() < n {
                    return Err(Error::contract(format!(
                        "{} has {} epochs but progress says {n}",
                        self.origin(&phase_file(phase)),
                        rec.epochs.len()
                    )));
                }
                rec.epochs.truncate(n);
                Ok(rec)
            }
            _ => Ok(PhaseRecord::new(phase)),
        }
    }

    fn finish_phase(&mut self, phase: Phase, bundle: &ModelBundle, rec: Option<&PhaseRecord>) -> Result<()> {
        let ckpt = bundle.checkpoint_text();
        self.write(&checkpoint_file(phase), &ckpt)?;
        write_text(&self.path(LATEST), &ckpt)?;
        if let Some(rec) = rec {
            self.write(&phase_file(phase), &rec.to_csv())?;
            self.manifest
                .set(&format!("artifact.phase_{}", phase.as_str()), phase_file(phase));
            self.timing.insert(phase.as_str().to_string(), rec.wall_time_secs);
            self.save_timing()?;
        }
        self.manifest.set(
            &format!("artifact.checkpoint_{}", phase.as_str()),
            checkpoint_file(phase),
        );
        self.manifest.set(&format!("phase.{}", phase.as_str()), "done");
        self.save_manifest()?;
        self.write(PROGRESS, &format!("epochs = 0\nphase = {}\n", phase.as_str()))
    }

    fn write_metrics(&mut self, stage: &str, report: &MetricsReport) -> Result<()> {
        self.write(&metrics_file(stage), &report.to_text())?;
        self.write(&format!("metrics_{stage}.csv"), &report.to_csv())?;
        self.manifest
            .set(&format!("artifact.metrics_{stage}"), metrics_file(stage));
        Ok(())
    }

    fn load_metrics(&self, stage: &str) -> Result<MetricsReport> {
        let rel = metrics_file(stage);
        MetricsReport::parse_text(&self.read(&rel)?, &self.origin(&rel))
    }
}

/// Raw features of the test rows of both domains, one row per sample.
fn features_csv(bundle: &ModelBundle, which: Extractor, data: &PreparedData) -> Result<String> {
    let mut out = String::from("domain,label");
    for k in 0..bundle.spec.feature_dim {
        let _ = write!(out, ",f{k}");
    }
    out.push('\n');
    // Source rows always go through F_s; target rows through `which`.
    for (ds, ext) in [(&data.source_test, Extractor::Source), (&data.target_test, which)] {
        let f = bundle.features(ext, ds.features())?;
        for (r, label) in ds.labels().iter().enumerate() {
            let label = label.map(|l| l.to_string()).unwrap_or_else(|| "-1".into());
            let _ = write!(out, "{},{label}", ds.domain());
            for v in f.row(r) {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            out.push('\n');
        }
    }
    Ok(out)
}

fn check_hash(bundle: &ModelBundle, ids: &[ParamId], expected: Option<&str>, what: &str) -> Result<()> {
    let got = bundle.hash(ids);
    match expected {
        Some(e) if e == got => Ok(()),
        Some(_) => Err(Error::contract(format!(
            "{what} parameters changed after they were frozen"
        ))),
        None => Err(Error::contract(format!("manifest has no frozen hash for {what}"))),
    }
}

fn guard_zero(ds: &LabeledDataset, phase: Phase) -> Result<()> {
    match ds.target_label_reads() {
        0 => Ok(()),
        n => Err(Error::contract(format!(
            "target labels were read {n} times during {}",
            phase.as_str()
        ))),
    }
}

/// Runs (or resumes) the whole procedure under `out_dir`.
pub fn run_all(cfg: &ExperimentConfig, out_dir: &Path, control: RunControl) -> Result<RunOutcome> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut dir = RunDir {
        root: out_dir.to_path_buf(),
        manifest: Manifest::default(),
        timing: BTreeMap::new(),
    };
    let hash = cfg.hash();
    if dir.path(MANIFEST).exists() {
        dir.manifest = Manifest::load(out_dir)?;
        if dir.manifest.get("config_hash") != Some(hash.as_str()) {
            return Err(Error::contract(format!(
                "{} belongs to a run with a different config",
                out_dir.display()
            )));
        }
        if dir.path(TIMING).exists() {
            let t = Manifest::parse(&dir.read(TIMING)?, &dir.origin(TIMING))?;
            dir.timing =
                t.0.into_iter()
                    .filter_map(|(k, v)| Some((k, v.parse().ok()?)))
                    .collect();
        }
    } else {
        dir.manifest.set("config_hash", hash);
        dir.manifest.set("seed", cfg.seed.to_string());
        dir.manifest.set("artifact.config", CONFIG_COPY);
        for p in TRAINING_ORDER {
            dir.manifest.set(&format!("phase.{}", p.as_str()), "pending");
        }
        dir.write(CONFIG_COPY, &cfg.to_text())?;
        dir.save_manifest()?;
    }

    let data = prepare_data(cfg)?;
    let target_unl = data.target_train.unlabeled();
    let mut bundle = new_bundle(cfg, &data)?;
    if dir.path(LATEST).exists() {
        bundle.load_checkpoint(&dir.path(LATEST))?;
    }

    let mut outcome = RunOutcome {
        out_dir: out_dir.to_path_buf(),
        completed: false,
        source_only: None,
        warmup: None,
        sgada: None,
        warmup_target_train: None,
        selection: Vec::new(),
        n_pseudo: None,
        warnings: Vec::new(),
    };
    let src_ids = bundle.extractor_ids(Extractor::Source);
    let cls_ids = bundle.classifier_ids();
    let tgt_ids = bundle.extractor_ids(Extractor::Target);
    let disc_ids = bundle.discriminator_ids();

    // Halts are reported through this flag so the hook can stay a closure.
    let halt_for = |phase: Phase, rec: &PhaseRecord| control.halt_at == Some((phase, rec.epochs_run()));

    // Source pre-training and the source-only baseline.
    if !dir.manifest.is_done(Phase::Pretrain) {
        let mut rec = dir.resume_point(Phase::Pretrain)?;
        let flow = pretrain_source_from(cfg, &mut bundle, &data.source_train, &mut rec, &mut |b, r, p| {
            dir.save_epoch(b, r, p)?;
            Ok(if halt_for(Phase::Pretrain, r) {
                Flow::Halt
            } else {
                Flow::Continue
            })
        })?;
        if flow == Flow::Halt {
            return Ok(outcome);
        }
        dir.manifest.set("hash.f_source", bundle.hash(&src_ids));
        dir.manifest.set("hash.classifier", bundle.hash(&cls_ids));
        let val = evaluate(&bundle, &data.source_val, Extractor::Source)?;
        dir.write_metrics("source_val", &val)?;
        let report = evaluate(&bundle, &data.target_test, Extractor::Source)?;
        dir.write_metrics("source_only", &report)?;
        dir.write(
            "features_source_only.csv",
            &features_csv(&bundle, Extractor::Source, &data)?,
        )?;
        dir.finish_phase(Phase::Pretrain, &bundle, Some(&rec))?;
    }
    outcome.source_only = Some(dir.load_metrics("source_only")?);
    let frozen_src = dir.manifest.get("hash.f_source").map(str::to_string);
    let frozen_cls = dir.manifest.get("hash.classifier").map(str::to_string);
    if control.stop_after == Some(Phase::Pretrain) {
        return Ok(outcome);
    }

    // Adversarial warm-up.
    if !dir.manifest.is_done(Phase::Warmup) {
        let mut rec = dir.resume_point(Phase::Warmup)?;
        let flow = warmup_adda_from(
            cfg,
            &mut bundle,
            &data.source_train,
            &target_unl,
            &mut rec,
            &mut |b, r, p| {
                dir.save_epoch(b, r, p)?;
                Ok(if halt_for(Phase::Warmup, r) {
                    Flow::Halt
                } else {
                    Flow::Continue
                })
            },
        )?;
        if flow == Flow::Halt {
            return Ok(outcome);
        }
        guard_zero(&target_unl, Phase::Warmup)?;
        check_hash(&bundle, &src_ids, frozen_src.as_deref(), "source extractor")?;
        check_hash(&bundle, &cls_ids, frozen_cls.as_deref(), "classifier")?;
        let report = evaluate(&bundle, &data.target_test, Extractor::Target)?;
        dir.write_metrics("warmup", &report)?;
        dir.write("features_warmup.csv", &features_csv(&bundle, Extractor::Target, &data)?)?;
        dir.finish_phase(Phase::Warmup, &bundle, Some(&rec))?;
    }
    outcome.warmup = Some(dir.load_metrics("warmup")?);
    if control.stop_after == Some(Phase::Warmup) {
        return Ok(outcome);
    }

    // Pseudo-labels from frozen networks, audited for every selection mode.
    if !dir.manifest.is_done(Phase::PseudoLabel) {
        let all_ids: Vec<ParamId> = [&src_ids, &tgt_ids, &cls_ids, &disc_ids]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        let before = bundle.hash(&all_ids);
        let preds = target_predictions(&bundle, &target_unl)?;
        let set = select(&preds, &cfg.selection_rule(), 0);
        if bundle.hash(&all_ids) != before {
            return Err(Error::contract("networks changed during pseudo-label generation"));
        }
        dir.write(PSEUDO_LABELS, &set.to_csv())?;
        dir.manifest.set("artifact.pseudo_labels", PSEUDO_LABELS);
        dir.manifest.set("pseudo.n_selected", set.n_hat_t().to_string());
        if set.is_empty() {
            dir.manifest
                .set("warning.empty_pseudo_labels", "self-training term skipped");
        }

        let truth = data.target_train.dense_labels()?;
        let predicted: Vec<usize> = preds.iter().map(|p| p.predicted_class).collect();
        let report = MetricsReport::from_predictions(&truth, &predicted, data.target_train.class_names())?;
        dir.write_metrics("warmup_target_train", &report)?;
        for mode in SelectionMode::ALL {
            let mut rule = cfg.selection_rule();
            rule.mode = mode;
            let stats = audit(&select(&preds, &rule, 0), &truth, data.target_train.n_classes())?;
            dir.write(&selection_file(mode, "csv"), &stats.to_csv())?;
            dir.write(
                &selection_file(mode, "txt"),
                &stats.to_table(data.target_train.class_names()),
            )?;
            dir.manifest.set(
                &format!("artifact.selection_{}", mode.as_str()),
                selection_file(mode, "csv"),
            );
        }
        dir.finish_phase(Phase::PseudoLabel, &bundle, None)?;
    }
    outcome.warmup_target_train = Some(dir.load_metrics("warmup_target_train")?);
    for mode in SelectionMode::ALL {
        let rel = selection_file(mode, "csv");
        outcome
            .selection
            .push((mode, parse_selection_csv(&dir.read(&rel)?, &dir.origin(&rel))?));
    }
    let initial = PseudoLabelSet::from_csv(
        &dir.read(PSEUDO_LABELS)?,
        &dir.origin(PSEUDO_LABELS),
        cfg.tau_cls,
        cfg.tau_disc,
        0,
    )?;
    outcome.n_pseudo = Some(initial.n_hat_t());
    if initial.is_empty() {
        outcome
            .warnings
            .push("no target sample passed the selection rule; SGADA runs without the self-training term".into());
    }
    if control.stop_after == Some(Phase::PseudoLabel) {
        return Ok(outcome);
    }

    // SGADA.
    if !dir.manifest.is_done(Phase::Sgada) {
        let mut rec = dir.resume_point(Phase::Sgada)?;
        let mut plabels = if rec.epochs_run() > 0 && dir.path(PSEUDO_CURRENT).exists() {
            let k = cfg.regenerate_every_k;
            let generated_at = (rec.epochs_run() - 1).checked_div(k).map_or(0, |q| q * k);
            PseudoLabelSet::from_csv(
                &dir.read(PSEUDO_CURRENT)?,
                &dir.origin(PSEUDO_CURRENT),
                cfg.tau_cls,
                cfg.tau_disc,
                generated_at,
            )?
        } else {
            initial
        };
        let flow = sgada_adapt_from(
            cfg,
            &mut bundle,
            &data.source_train,
            &target_unl,
            &mut plabels,
            &mut rec,
            &mut |b, r, p| {
                dir.save_epoch(b, r, p)?;
                Ok(if halt_for(Phase::Sgada, r) {
                    Flow::Halt
                } else {
                    Flow::Continue
                })
            },
        )?;
        if flow == Flow::Halt {
            return Ok(outcome);
        }
        guard_zero(&target_unl, Phase::Sgada)?;
        check_hash(&bundle, &src_ids, frozen_src.as_deref(), "source extractor")?;
        check_hash(&bundle, &cls_ids, frozen_cls.as_deref(), "classifier")?;
        let report = evaluate(&bundle, &data.target_test, Extractor::Target)?;
        dir.write_metrics("sgada", &report)?;
        dir.write("features_sgada.csv", &features_csv(&bundle, Extractor::Target, &data)?)?;
        dir.manifest.set("label_guard.target_reads_in_training", "0");
        dir.finish_phase(Phase::Sgada, &bundle, Some(&rec))?;
    }
    outcome.sgada = Some(dir.load_metrics("sgada")?);
    outcome.completed = true;
    Ok(outcome)
}

/// Reads back [`SelectionStats::to_csv`] output.
pub fn parse_selection_csv(text: &str, origin: &str) -> Result<SelectionStats> {
    use crate::pseudo::ClassSelection;
    let mut per_class = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 5 {
            return Err(Error::parse(origin, i + 1, "expected 5 cells"));
        }
        if cells[0] == "all" {
            continue;
        }
        let num = |c: &str| {
            c.parse::<usize>()
                .map_err(|_| Error::parse(origin, i + 1, format!("bad count '{c}'")))
        };
        per_class.push(ClassSelection {
            n_samples: num(cells[1])?,
            n_selected: num(cells[2])?,
            n_correct: num(cells[3])?,
        });
    }
    Ok(SelectionStats { per_class })
}

/// Evaluates the latest checkpoint on the target test rows, through F_t
/// once warm-up has started and through F_s before that.
pub fn evaluate_latest(cfg: &ExperimentConfig, out_dir: &Path) -> Result<MetricsReport> {
    let data = prepare_data(cfg)?;
    let mut bundle = new_bundle(cfg, &data)?;
    let latest = out_dir.join(LATEST);
    if !latest.exists() {
        return Err(Error::contract(format!("no checkpoint at {}", latest.display())));
    }
    bundle.load_checkpoint(&latest)?;
    let manifest = Manifest::load(out_dir)?;
    let warm = manifest.is_done(Phase::Warmup)
        || matches!(
            RunDir { root: out_dir.to_path_buf(), manifest: manifest.clone(), timing: BTreeMap::new() }.progress()?,
            Some((Phase::Warmup | Phase::Sgada, n)) if n > 0
        );
    let which = if warm { Extractor::Target } else { Extractor::Source };
    let report = evaluate(&bundle, &data.target_test, which)?;
    write_text(&out_dir.join(metrics_file("latest")), &report.to_text())?;
    Ok(report)
}

/// Threshold sweep of `mode` over the warm-up model's target predictions.
pub fn sweep(cfg: &ExperimentConfig, out_dir: &Path, step: f64, mode: SelectionMode) -> Result<PathBuf> {
    let ckpt = out_dir.join(checkpoint_file(Phase::Warmup));
    if !ckpt.exists() {
        return Err(Error::contract(format!(
            "sweep needs a finished warm-up: {} is missing",
            ckpt.display()
        )));
    }
    let data = prepare_data(cfg)?;
    let mut bundle = new_bundle(cfg, &data)?;
    bundle.load_checkpoint(&ckpt)?;
    let preds = target_predictions(&bundle, &data.target_train.unlabeled())?;
    let truth = data.target_train.dense_labels()?;
    let rows = crate::pseudo::threshold_sweep(&preds, &truth, step, mode)?;
    let path = out_dir.join(format!("sweep_{}.csv", mode.as_str()));
    write_text(&path, &crate::pseudo::sweep_csv(&rows))?;
    Ok(path)
}

/// Writes both generated domains as CSV.
pub fn write_datasets(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (source, target) = build_datasets(cfg)?;
    let s = out_dir.join("source.csv");
    let t = out_dir.join("target.csv");
    write_text(&s, &crate::data::to_csv(&source))?;
    write_text(&t, &crate::data::to_csv(&target))?;
    Ok((s, t))
}
