//! The training phases and evaluation.
//!
//! Each trainer takes the epoch to start from (the length of the record it
//! is handed) and calls `on_epoch` after every finished epoch, which is
//! where the orchestrator checkpoints and may stop the run.

use std::fmt::Write as _;
use std::time::Instant;

use super::config::ExperimentConfig;
use super::metrics::MetricsReport;
use crate::data::{batches, LabeledDataset};
use crate::diffcore::{adam_step, Matrix, ParamId, Tape};
use crate::error::{Error, Result};
use crate::losses::{
    adv_feature_loss, adv_feature_loss_literal, disc_loss, self_training_loss, supervised_ce_loss,
    target_update_objective,
};
use crate::nets::{fmt_f64, Extractor, ModelBundle};
use crate::pseudo::{select, PseudoLabelSet, TargetPrediction};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Pretrain,
    Warmup,
    PseudoLabel,
    Sgada,
    Eval,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Warmup => "warmup",
            Phase::PseudoLabel => "pseudolabel",
            Phase::Sgada => "sgada",
            Phase::Eval => "eval",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Phase::Pretrain),
            "warmup" => Ok(Phase::Warmup),
            "pseudolabel" => Ok(Phase::PseudoLabel),
            "sgada" => Ok(Phase::Sgada),
            "eval" => Ok(Phase::Eval),
            _ => Err(Error::contract(format!("unknown phase '{s}'"))),
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            Phase::Pretrain => &["ce_loss", "train_acc"],
            Phase::Warmup => &["disc_loss", "adv_loss", "d_source_mean", "d_target_mean"],
            Phase::Sgada => &[
                "disc_loss",
                "adv_loss",
                "selftrain_loss",
                "d_source_mean",
                "d_target_mean",
            ],
            Phase::PseudoLabel | Phase::Eval => &[],
        }
    }
}

/// Per-epoch means of the logged quantities of one phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseRecord {
    pub phase: Phase,
    pub columns: Vec<String>,
    /// One row per finished epoch.
    pub epochs: Vec<Vec<f64>>,
    pub wall_time_secs: f64,
}

impl PhaseRecord {
    pub fn new(phase: Phase) -> Self {
        Self {
            phase,
            columns: phase.columns().iter().map(|s| s.to_string()).collect(),
            epochs: Vec::new(),
            wall_time_secs: 0.0,
        }
    }

    pub fn epochs_run(&self) -> usize {
        self.epochs.len()
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.epochs.iter().map(|row| row[j]).collect())
    }

    /// `epoch,<columns...>` with 17-digit values. Excludes wall time.
    pub fn to_csv(&self) -> String {
        let mut out = format!("epoch,{}\n", self.columns.join(","));
        for (e, row) in self.epochs.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
            let _ = writeln!(out, "{e},{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(phase: Phase, text: &str, origin: &str) -> Result<Self> {
        let mut rec = Self::new(phase);
        let mut lines = text.lines().enumerate();
        let expected = format!("epoch,{}", rec.columns.join(","));
        match lines.next() {
            Some((_, h)) if h == expected => {}
            _ => return Err(Error::parse(origin, 1, format!("expected header '{expected}'"))),
        }
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != rec.columns.len() + 1 {
                return Err(Error::parse(origin, i + 1, "wrong number of cells"));
            }
            let row: Result<Vec<f64>> = cells[1..]
                .iter()
                .map(|c| {
                    c.parse()
                        .map_err(|_| Error::parse(origin, i + 1, format!("bad number '{c}'")))
                })
                .collect();
            rec.epochs.push(row?);
        }
        Ok(rec)
    }
}

/// What the epoch callback asks the trainer to do next.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Halt,
}

/// Receives the bundle, the record so far and, during SGADA, the
/// pseudo-label set in use.
pub type EpochHook<'a> = dyn FnMut(&ModelBundle, &PhaseRecord, Option<&PseudoLabelSet>) -> Result<Flow> + 'a;

fn no_hook(_: &ModelBundle, _: &PhaseRecord, _: Option<&PseudoLabelSet>) -> Result<Flow> {
    Ok(Flow::Continue)
}

/// Batches over `n` rows that restart with a fresh permutation whenever
/// they run out; batch `g` of the stream depends only on `(seed, g)`.
pub(crate) struct CyclingStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    per_cycle: usize,
    cached: Option<(usize, Vec<Vec<usize>>)>,
}

impl CyclingStream {
    pub(crate) fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            n,
            batch_size,
            seed,
            per_cycle: n.div_ceil(batch_size),
            cached: None,
        }
    }

    pub(crate) fn batch(&mut self, global: usize) -> &[usize] {
        let cycle = global / self.per_cycle;
        if self.cached.as_ref().map(|c| c.0) != Some(cycle) {
            self.cached = Some((cycle, batches(self.n, self.batch_size, self.seed, cycle as u64)));
        }
        &self.cached.as_ref().unwrap().1[global % self.per_cycle]
    }
}

/// Stream seeds are keyed by role only, so every adversarial phase sees
/// the same target batch order for a given epoch.
pub(crate) fn stream_seed(cfg: &ExperimentConfig, role: &str) -> u64 {
    derive_seed(cfg.seed, role, 0)
}

fn labels_of(ds: &LabeledDataset, what: &str) -> Result<Vec<usize>> {
    ds.dense_labels().map_err(|e| Error::contract(format!("{what}: {e}")))
}

fn concat_ids(groups: &[Vec<ParamId>]) -> Vec<ParamId> {
    groups.iter().flatten().copied().collect()
}

/// Supervised training of F_s and C on labeled source data.
pub fn pretrain_source(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
) -> Result<PhaseRecord> {
    let mut rec = PhaseRecord::new(Phase::Pretrain);
    pretrain_source_from(cfg, bundle, source, &mut rec, &mut no_hook)?;
    Ok(rec)
}

pub fn pretrain_source_from(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    rec: &mut PhaseRecord,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Flow> {
    let labels = labels_of(source, "pretraining needs a fully labeled source set")?;
    let ids = concat_ids(&[bundle.extractor_ids(Extractor::Source), bundle.classifier_ids()]);
    let adam = cfg.adam(cfg.lr_pretrain);
    let seed = stream_seed(cfg, "source-batches");
    let started = Instant::now();
    for epoch in rec.epochs_run()..cfg.epochs_pretrain {
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        let plan = batches(source.len(), cfg.batch_size, seed, epoch as u64);
        for idx in &plan {
            let mut tape = Tape::new();
            let x = tape.constant(source.features().select_rows(idx));
            let f = bundle.extract(&mut tape, Extractor::Source, x, true)?;
            let probs = bundle.classify(&mut tape, f, true)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let loss = supervised_ce_loss(&mut tape, probs, &y)?;
            tape.backward(loss.scalar, &mut bundle.store)?;
            adam_step(&mut bundle.store, &ids, adam);
            let p = tape.value(probs);
            correct += (0..idx.len()).filter(|&r| p.row_argmax(r).0 == y[r]).count();
            seen += idx.len();
            loss_sum += loss.detached;
        }
        let n_batches = plan.len().max(1) as f64;
        rec.epochs
            .push(vec![loss_sum / n_batches, 100.0 * correct as f64 / seen.max(1) as f64]);
        rec.wall_time_secs += started.elapsed().as_secs_f64();
        if on_epoch(bundle, rec, None)? == Flow::Halt {
            return Ok(Flow::Halt);
        }
    }
    Ok(Flow::Continue)
}

/// One discriminator update on a source/target batch pair, extractor
/// outputs held constant. Returns (loss, mean D on source, mean D on target).
fn disc_step(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    xs: &Matrix,
    xt: &Matrix,
    d_ids: &[ParamId],
) -> Result<(f64, f64, f64)> {
    let fs = bundle.features(Extractor::Source, xs)?;
    let ft = bundle.features(Extractor::Target, xt)?;
    let mut tape = Tape::new();
    let fs = tape.constant(fs);
    let ft = tape.constant(ft);
    let ds = bundle.discriminate(&mut tape, fs, true)?;
    let dt = bundle.discriminate(&mut tape, ft, true)?;
    let loss = disc_loss(&mut tape, ds, dt)?;
    let means = (
        tape.value(ds).sum() / xs.rows() as f64,
        tape.value(dt).sum() / xt.rows() as f64,
    );
    tape.backward(loss.scalar, &mut bundle.store)?;
    adam_step(&mut bundle.store, d_ids, cfg.adam(cfg.lr_disc));
    Ok((loss.detached, means.0, means.1))
}

/// One F_t update: adversarial term on `xt` through a frozen D, plus
/// `lambda` times cross-entropy of the frozen classifier on the
/// pseudo-labeled batch when one is given.
fn target_step(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    xt: &Matrix,
    pseudo: Option<(&Matrix, &[usize])>,
    ft_ids: &[ParamId],
) -> Result<(f64, Option<f64>)> {
    let mut tape = Tape::new();
    let x = tape.constant(xt.clone());
    let f = bundle.extract(&mut tape, Extractor::Target, x, true)?;
    let d = bundle.discriminate(&mut tape, f, false)?;
    let adv = if cfg.paper_literal_advf {
        adv_feature_loss_literal(&mut tape, d)?
    } else {
        adv_feature_loss(&mut tape, d)?
    };
    let (objective, st) = match pseudo {
        Some((xp, labels)) => {
            let xp = tape.constant(xp.clone());
            let fp = bundle.extract(&mut tape, Extractor::Target, xp, true)?;
            let probs = bundle.classify(&mut tape, fp, false)?;
            let st = self_training_loss(&mut tape, probs, labels)?;
            (
                target_update_objective(&mut tape, adv, st, cfg.lambda)?,
                Some(st.detached),
            )
        }
        None => (adv, None),
    };
    tape.backward(objective.scalar, &mut bundle.store)?;
    adam_step(&mut bundle.store, ft_ids, cfg.adam(cfg.lr_ft));
    Ok((adv.detached, st))
}

/// Adversarial alignment of F_t, initialized from F_s. F_s and C are
/// never updated.
pub fn warmup_adda(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    target: &LabeledDataset,
) -> Result<PhaseRecord> {
    let mut rec = PhaseRecord::new(Phase::Warmup);
    warmup_adda_from(cfg, bundle, source, target, &mut rec, &mut no_hook)?;
    Ok(rec)
}

pub fn warmup_adda_from(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    target: &LabeledDataset,
    rec: &mut PhaseRecord,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Flow> {
    if rec.epochs_run() == 0 {
        bundle.clone_source_to_target()?;
    }
    adversarial_epochs(cfg, bundle, source, target, None, cfg.epochs_warmup, rec, on_epoch)
}

/// Continues adversarial training of F_t with the self-training term over
/// `plabels`. An empty pseudo-label set drops the term for the whole phase.
pub fn sgada_adapt(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    target: &LabeledDataset,
    plabels: &PseudoLabelSet,
) -> Result<PhaseRecord> {
    let mut rec = PhaseRecord::new(Phase::Sgada);
    let mut plabels = plabels.clone();
    sgada_adapt_from(cfg, bundle, source, target, &mut plabels, &mut rec, &mut no_hook)?;
    Ok(rec)
}

pub fn sgada_adapt_from(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    target: &LabeledDataset,
    plabels: &mut PseudoLabelSet,
    rec: &mut PhaseRecord,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Flow> {
    if rec.epochs_run() == 0 {
        if cfg.reinit_disc_for_sgada {
            bundle.reinit_discriminator(cfg.seed);
        } else {
            let d = bundle.discriminator_ids();
            bundle.reset_optimizer(&d);
        }
    }
    adversarial_epochs(
        cfg,
        bundle,
        source,
        target,
        Some(plabels),
        cfg.epochs_sgada,
        rec,
        on_epoch,
    )
}

#[allow(clippy::too_many_arguments)]
fn adversarial_epochs(
    cfg: &ExperimentConfig,
    bundle: &mut ModelBundle,
    source: &LabeledDataset,
    target: &LabeledDataset,
    mut plabels: Option<&mut PseudoLabelSet>,
    epochs: usize,
    rec: &mut PhaseRecord,
    on_epoch: &mut EpochHook<'_>,
) -> Result<Flow> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::contract(
            "adversarial training needs non-empty source and target sets",
        ));
    }
    let d_ids = bundle.discriminator_ids();
    let ft_ids = bundle.extractor_ids(Extractor::Target);
    let mut source_stream = CyclingStream::new(source.len(), cfg.batch_size, stream_seed(cfg, "source-batches"));
    let target_seed = stream_seed(cfg, "target-batches");
    let pseudo_seed = stream_seed(cfg, "pseudo-batches");
    let per_epoch = target.len().div_ceil(cfg.batch_size);
    let started = Instant::now();

    for epoch in rec.epochs_run()..epochs {
        if let Some(pl) = plabels.as_deref_mut() {
            if cfg.regenerate_every_k > 0 && epoch > 0 && epoch % cfg.regenerate_every_k == 0 {
                *pl = generate_pseudolabels_at(cfg, bundle, target, epoch)?;
            }
        }
        // Pseudo batches are drawn from a stream over the current set; its
        // position is tied to the global step so resuming mid-phase
        // reproduces it.
        let mut pseudo_stream = plabels.as_deref().filter(|pl| !pl.is_empty()).map(|pl| {
            (
                CyclingStream::new(pl.n_hat_t(), cfg.batch_size, pseudo_seed),
                pl.indices(),
                pl.labels(),
            )
        });

        let mut sums = [0.0f64; 5];
        let plan = batches(target.len(), cfg.batch_size, target_seed, epoch as u64);
        for (i, tidx) in plan.iter().enumerate() {
            let global = epoch * per_epoch + i;
            let xs = source.features().select_rows(source_stream.batch(global));
            let xt = target.features().select_rows(tidx);
            for _ in 0..cfg.disc_steps {
                let (dl, dsm, dtm) = disc_step(cfg, bundle, &xs, &xt, &d_ids)?;
                sums[0] += dl / cfg.disc_steps as f64;
                sums[3] += dsm / cfg.disc_steps as f64;
                sums[4] += dtm / cfg.disc_steps as f64;
            }
            let pseudo_batch = pseudo_stream.as_mut().map(|(stream, rows, labels)| {
                let picks = stream.batch(global);
                let sample_rows: Vec<usize> = picks.iter().map(|&k| rows[k]).collect();
                let y: Vec<usize> = picks.iter().map(|&k| labels[k]).collect();
                (target.features().select_rows(&sample_rows), y)
            });
            for _ in 0..cfg.ft_steps {
                let p = pseudo_batch.as_ref().map(|(x, y)| (x, y.as_slice()));
                let (adv, st) = target_step(cfg, bundle, &xt, p, &ft_ids)?;
                sums[1] += adv / cfg.ft_steps as f64;
                sums[2] += st.unwrap_or(0.0) / cfg.ft_steps as f64;
            }
        }
        let n = plan.len().max(1) as f64;
        let row = if rec.phase == Phase::Sgada {
            vec![sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n, sums[4] / n]
        } else {
            vec![sums[0] / n, sums[1] / n, sums[3] / n, sums[4] / n]
        };
        rec.epochs.push(row);
        rec.wall_time_secs += started.elapsed().as_secs_f64();
        if on_epoch(bundle, rec, plabels.as_deref())? == Flow::Halt {
            return Ok(Flow::Halt);
        }
    }
    Ok(Flow::Continue)
}

/// Classifier prediction, its confidence and the discriminator's source
/// probability for every target row, from frozen networks.
pub fn target_predictions(bundle: &ModelBundle, target: &LabeledDataset) -> Result<Vec<TargetPrediction>> {
    let f = bundle.features(Extractor::Target, target.features())?;
    let probs = bundle.class_probs(&f)?;
    let d = bundle.source_probs(&f)?;
    Ok((0..target.len())
        .map(|i| {
            let (predicted_class, cls_confidence) = probs.row_argmax(i);
            TargetPrediction {
                sample_index: i,
                predicted_class,
                cls_confidence,
                disc_source_prob: d.get(i, 0),
            }
        })
        .collect())
}

/// Pseudo-labels for the target training rows under the configured rule.
pub fn generate_pseudolabels(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    target: &LabeledDataset,
) -> Result<PseudoLabelSet> {
    generate_pseudolabels_at(cfg, bundle, target, 0)
}

fn generate_pseudolabels_at(
    cfg: &ExperimentConfig,
    bundle: &ModelBundle,
    target: &LabeledDataset,
    epoch: usize,
) -> Result<PseudoLabelSet> {
    let preds = target_predictions(bundle, target)?;
    Ok(select(&preds, &cfg.selection_rule(), epoch))
}

/// Accuracy report of C over the chosen extractor. Reads the labels of
/// `ds`; evaluation only.
pub fn evaluate(bundle: &ModelBundle, ds: &LabeledDataset, which: Extractor) -> Result<MetricsReport> {
    let truth = labels_of(ds, "evaluation needs labels")?;
    let f = bundle.features(which, ds.features())?;
    let probs = bundle.class_probs(&f)?;
    let predicted: Vec<usize> = (0..ds.len()).map(|r| probs.row_argmax(r).0).collect();
    MetricsReport::from_predictions(&truth, &predicted, ds.class_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cycling_stream_covers_each_cycle() {
        let mut s = CyclingStream::new(10, 3, 4);
        let first: Vec<usize> = (0..4).flat_map(|g| s.batch(g).to_vec()).collect();
        let mut sorted = first.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let second: Vec<usize> = (4..8).flat_map(|g| s.batch(g).to_vec()).collect();
        assert_ne!(first, second);
        let mut fresh = CyclingStream::new(10, 3, 4);
        assert_eq!(fresh.batch(5), s.batch(5));
    }

    #[test]
    fn record_csv_round_trip() {
        let mut r = PhaseRecord::new(Phase::Sgada);
        r.epochs.push(vec![0.1, 0.2, 1.0 / 3.0, 0.5, 0.25]);
        r.epochs.push(vec![1e-9, 2.0, 3.0, 0.4, 0.6]);
        let back = PhaseRecord::from_csv(Phase::Sgada, &r.to_csv(), "mem").unwrap();
        assert_eq!(back.epochs, r.epochs);
        assert_eq!(back.column("selftrain_loss").unwrap(), vec![1.0 / 3.0, 3.0]);
        assert!(PhaseRecord::from_csv(Phase::Warmup, &r.to_csv(), "mem").is_err());
    }
}
