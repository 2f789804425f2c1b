//! Pseudo-label selection from classifier confidence and discriminator
//! output, and the bookkeeping used to audit it.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nets::fmt_f64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetPrediction {
    pub sample_index: usize,
    pub predicted_class: usize,
    /// Maximum softmax probability.
    pub cls_confidence: f64,
    /// Discriminator probability that the sample is from the source domain.
    pub disc_source_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SelectionMode {
    ClsOnly,
    DiscOnly,
    ClsAndDisc,
}

impl SelectionMode {
    pub const ALL: [SelectionMode; 3] = [Self::ClsOnly, Self::DiscOnly, Self::ClsAndDisc];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ClsOnly => "cls_only",
            Self::DiscOnly => "disc_only",
            Self::ClsAndDisc => "cls_and_disc",
        }
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls_only" => Ok(Self::ClsOnly),
            "disc_only" => Ok(Self::DiscOnly),
            "cls_and_disc" => Ok(Self::ClsAndDisc),
            _ => Err(Error::contract(format!(
                "unknown selection mode '{s}' (cls_only, disc_only, cls_and_disc)"
            ))),
        }
    }
}

/// Thresholds and variant flags of the selection rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelectionRule {
    pub tau_cls: f64,
    pub tau_disc: f64,
    pub mode: SelectionMode,
    /// Accept discriminator-target samples below `tau_disc` even when the
    /// classifier threshold fails.
    pub waive_cls_in_branch2: bool,
}

impl SelectionRule {
    pub fn new(tau_cls: f64, tau_disc: f64, mode: SelectionMode) -> Self {
        Self {
            tau_cls,
            tau_disc,
            mode,
            waive_cls_in_branch2: false,
        }
    }

    fn cls_ok(&self, p: &TargetPrediction) -> bool {
        p.cls_confidence >= self.tau_cls
    }

    /// The discriminator calls the sample source.
    fn source_branch(p: &TargetPrediction) -> bool {
        p.disc_source_prob >= 0.5
    }

    /// Confidence in "target" is below `tau_disc`.
    fn target_branch(&self, p: &TargetPrediction) -> bool {
        1.0 - p.disc_source_prob < self.tau_disc
    }

    pub fn accepts(&self, p: &TargetPrediction) -> bool {
        let disc = Self::source_branch(p) || self.target_branch(p);
        match self.mode {
            SelectionMode::ClsOnly => self.cls_ok(p),
            SelectionMode::DiscOnly => disc,
            SelectionMode::ClsAndDisc if self.waive_cls_in_branch2 => {
                (self.cls_ok(p) && Self::source_branch(p)) || (!Self::source_branch(p) && self.target_branch(p))
            }
            SelectionMode::ClsAndDisc => self.cls_ok(p) && disc,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PseudoLabel {
    pub sample_index: usize,
    pub label: usize,
    pub cls_confidence: f64,
    pub disc_source_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    /// Sorted by ascending `sample_index`.
    pub entries: Vec<PseudoLabel>,
    pub tau_cls: f64,
    pub tau_disc: f64,
    pub generation_epoch: usize,
}

pub const PSEUDO_CSV_HEADER: &str = "sample_index,pseudo_label,cls_confidence,disc_source_prob";

impl PseudoLabelSet {
    pub fn n_hat_t(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.sample_index).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{PSEUDO_CSV_HEADER}\n");
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.sample_index,
                e.label,
                fmt_f64(e.cls_confidence),
                fmt_f64(e.disc_source_prob)
            );
        }
        out
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Parses the CSV form. Thresholds are not part of the file and are
    /// taken from the arguments.
    pub fn from_csv(text: &str, origin: &str, tau_cls: f64, tau_disc: f64, generation_epoch: usize) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == PSEUDO_CSV_HEADER => {}
            _ => {
                return Err(Error::parse(
                    origin,
                    1,
                    format!("expected header '{PSEUDO_CSV_HEADER}'"),
                ))
            }
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 4 {
                return Err(Error::parse(
                    origin,
                    n,
                    format!("expected 4 cells, got {}", cells.len()),
                ));
            }
            let bad = |c: &str| Error::parse(origin, n, format!("bad cell '{c}'"));
            entries.push(PseudoLabel {
                sample_index: cells[0].parse().map_err(|_| bad(cells[0]))?,
                label: cells[1].parse().map_err(|_| bad(cells[1]))?,
                cls_confidence: cells[2].parse().map_err(|_| bad(cells[2]))?,
                disc_source_prob: cells[3].parse().map_err(|_| bad(cells[3]))?,
            });
        }
        if entries.windows(2).any(|w| w[0].sample_index >= w[1].sample_index) {
            return Err(Error::parse(origin, 0, "sample indices must be unique and ascending"));
        }
        Ok(Self {
            entries,
            tau_cls,
            tau_disc,
            generation_epoch,
        })
    }
}

/// Applies `rule` to every prediction. Output is ordered by sample index
/// regardless of input order.
pub fn select(preds: &[TargetPrediction], rule: &SelectionRule, generation_epoch: usize) -> PseudoLabelSet {
    let mut entries: Vec<PseudoLabel> = preds
        .iter()
        .filter(|p| rule.accepts(p))
        .map(|p| PseudoLabel {
            sample_index: p.sample_index,
            label: p.predicted_class,
            cls_confidence: p.cls_confidence,
            disc_source_prob: p.disc_source_prob,
        })
        .collect();
    entries.sort_by_key(|e| e.sample_index);
    PseudoLabelSet {
        entries,
        tau_cls: rule.tau_cls,
        tau_disc: rule.tau_disc,
        generation_epoch,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ClassSelection {
    /// True members of the class in the whole target set.
    pub n_samples: usize,
    /// Samples pseudo-labeled as this class.
    pub n_selected: usize,
    pub n_correct: usize,
}

impl ClassSelection {
    /// Fraction of selected samples whose pseudo-label is right; `None` when
    /// nothing was selected.
    pub fn precision(&self) -> Option<f64> {
        (self.n_selected > 0).then(|| self.n_correct as f64 / self.n_selected as f64)
    }

    pub fn precision_pct(&self) -> Option<f64> {
        self.precision().map(|p| 100.0 * p)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionStats {
    pub per_class: Vec<ClassSelection>,
}

impl SelectionStats {
    pub fn total(&self) -> ClassSelection {
        self.per_class
            .iter()
            .fold(ClassSelection::default(), |acc, c| ClassSelection {
                n_samples: acc.n_samples + c.n_samples,
                n_selected: acc.n_selected + c.n_selected,
                n_correct: acc.n_correct + c.n_correct,
            })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,n_samples,n_selected,n_correct,precision_pct\n");
        for (k, c) in self.per_class.iter().enumerate() {
            let _ = writeln!(
                out,
                "{k},{},{},{},{}",
                c.n_samples,
                c.n_selected,
                c.n_correct,
                pct_cell(c)
            );
        }
        let t = self.total();
        let _ = writeln!(
            out,
            "all,{},{},{},{}",
            t.n_samples,
            t.n_selected,
            t.n_correct,
            pct_cell(&t)
        );
        out
    }

    /// Rows per quantity, columns per class.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let names: Vec<String> = (0..self.per_class.len())
            .map(|k| class_names.get(k).cloned().unwrap_or_else(|| format!("class{k}")))
            .collect();
        let mut out = format!("{:<40}", "");
        for n in &names {
            let _ = write!(out, "{n:>12}");
        }
        out.push('\n');
        type Cell = fn(&ClassSelection) -> String;
        let rows: [(&str, Cell); 4] = [
            ("Number of samples", |c| c.n_samples.to_string()),
            ("Number of selected samples", |c| c.n_selected.to_string()),
            ("Number of correctly selected samples", |c| c.n_correct.to_string()),
            ("Accuracy of selected samples (%)", pct_cell),
        ];
        for (label, f) in rows.iter() {
            let _ = write!(out, "{label:<40}");
            for c in &self.per_class {
                let _ = write!(out, "{:>12}", f(c));
            }
            out.push('\n');
        }
        out
    }
}

fn pct_cell(c: &ClassSelection) -> String {
    c.precision_pct().map(|p| format!("{p:.2}")).unwrap_or_default()
}

/// Per-class selection counts against ground truth. `true_labels` covers
/// the whole target set, indexed by sample index. Evaluation only.
pub fn audit(selected: &PseudoLabelSet, true_labels: &[usize], n_classes: usize) -> Result<SelectionStats> {
    let mut per_class = vec![ClassSelection::default(); n_classes];
    for &y in true_labels {
        per_class
            .get_mut(y)
            .ok_or_else(|| Error::contract(format!("true label {y} outside [0, {n_classes})")))?
            .n_samples += 1;
    }
    for e in &selected.entries {
        let truth = *true_labels.get(e.sample_index).ok_or_else(|| {
            Error::contract(format!(
                "sample index {} out of range for {} labels",
                e.sample_index,
                true_labels.len()
            ))
        })?;
        let slot = per_class
            .get_mut(e.label)
            .ok_or_else(|| Error::contract(format!("pseudo-label {} outside [0, {n_classes})", e.label)))?;
        slot.n_selected += 1;
        if truth == e.label {
            slot.n_correct += 1;
        }
    }
    Ok(SelectionStats { per_class })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub tau_cls: f64,
    pub tau_disc: f64,
    pub n_selected: usize,
    pub n_correct: usize,
}

impl SweepRow {
    pub fn precision(&self) -> Option<f64> {
        (self.n_selected > 0).then(|| self.n_correct as f64 / self.n_selected as f64)
    }
}

/// Threshold values `0, step, 2·step, …, 1`. When `1/step` is an integer
/// `n`, the k-th value is computed as `k / n` so that grid points equal
/// their decimal literals.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::contract(format!("grid step must be in (0, 0.5], got {step}")));
    }
    let n = (1.0 / step).round();
    if ((n * step) - 1.0).abs() < 1e-9 {
        let n = n as usize;
        Ok((0..=n).map(|k| k as f64 / n as f64).collect())
    } else {
        let count = (1.0 / step).floor() as usize;
        Ok((0..=count).map(|k| (k as f64 * step).min(1.0)).collect())
    }
}

/// Evaluates `mode` over the full threshold grid.
pub fn threshold_sweep(
    preds: &[TargetPrediction],
    true_labels: &[usize],
    grid_step: f64,
    mode: SelectionMode,
) -> Result<Vec<SweepRow>> {
    let grid = threshold_grid(grid_step)?;
    let mut rows = Vec::with_capacity(grid.len() * grid.len());
    for &tau_cls in &grid {
        for &tau_disc in &grid {
            let set = select(preds, &SelectionRule::new(tau_cls, tau_disc, mode), 0);
            let mut n_correct = 0;
            for e in &set.entries {
                let truth = *true_labels
                    .get(e.sample_index)
                    .ok_or_else(|| Error::contract(format!("sample index {} has no label", e.sample_index)))?;
                if truth == e.label {
                    n_correct += 1;
                }
            }
            rows.push(SweepRow {
                tau_cls,
                tau_disc,
                n_selected: set.n_hat_t(),
                n_correct,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("tau_cls,tau_disc,n_selected,n_correct,precision\n");
    for r in rows {
        let p = r.precision().map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.tau_cls, r.tau_disc, r.n_selected, r.n_correct, p
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(i: usize, conf: f64, d: f64) -> TargetPrediction {
        TargetPrediction {
            sample_index: i,
            predicted_class: i % 3,
            cls_confidence: conf,
            disc_source_prob: d,
        }
    }

    const DEFAULT_RULE: (f64, f64) = (0.79, 0.87);

    fn rule(mode: SelectionMode) -> SelectionRule {
        SelectionRule::new(DEFAULT_RULE.0, DEFAULT_RULE.1, mode)
    }

    #[test]
    fn combined_rule_branches() {
        let r = rule(SelectionMode::ClsAndDisc);
        assert!(r.accepts(&pred(0, 0.85, 0.60)));
        assert!(r.accepts(&pred(0, 0.85, 0.20)));
        assert!(!r.accepts(&pred(0, 0.70, 0.90)));
        assert!(!r.accepts(&pred(0, 0.85, 0.10)));
    }

    #[test]
    fn waiver_accepts_low_confidence_in_target_branch() {
        let mut r = rule(SelectionMode::ClsAndDisc);
        r.waive_cls_in_branch2 = true;
        assert!(r.accepts(&pred(0, 0.40, 0.20)));
        assert!(!r.accepts(&pred(0, 0.40, 0.60)));
        assert!(r.accepts(&pred(0, 0.85, 0.60)));
        assert!(!r.accepts(&pred(0, 0.95, 0.10)));
    }

    #[test]
    fn mode_variants() {
        let p = pred(0, 0.5, 0.5);
        assert!(!rule(SelectionMode::ClsOnly).accepts(&p));
        assert!(rule(SelectionMode::DiscOnly).accepts(&p));
        let q = pred(0, 0.95, 0.05);
        assert!(rule(SelectionMode::ClsOnly).accepts(&q));
        assert!(!rule(SelectionMode::DiscOnly).accepts(&q));
        for m in SelectionMode::ALL {
            assert_eq!(m.as_str().parse::<SelectionMode>().unwrap(), m);
        }
        assert!("both".parse::<SelectionMode>().is_err());
    }

    #[test]
    fn select_orders_by_index() {
        let preds = vec![pred(5, 0.9, 0.9), pred(1, 0.9, 0.9), pred(3, 0.1, 0.9)];
        let set = select(&preds, &rule(SelectionMode::ClsAndDisc), 0);
        assert_eq!(set.indices(), vec![1, 5]);
        assert_eq!(set.labels(), vec![1, 2]);
        assert_eq!(set.n_hat_t(), 2);
    }

    #[test]
    fn audit_counts_by_predicted_class() {
        let preds = vec![
            pred(0, 0.9, 0.9),
            pred(1, 0.9, 0.9),
            pred(2, 0.9, 0.9),
            pred(3, 0.9, 0.9),
        ];
        let set = select(&preds, &rule(SelectionMode::ClsOnly), 0);
        // predicted: 0,1,2,0 ; truth: 0,0,2,1
        let stats = audit(&set, &[0, 0, 2, 1], 3).unwrap();
        assert_eq!(
            stats.per_class[0],
            ClassSelection {
                n_samples: 2,
                n_selected: 2,
                n_correct: 1
            }
        );
        assert_eq!(
            stats.per_class[1],
            ClassSelection {
                n_samples: 1,
                n_selected: 1,
                n_correct: 0
            }
        );
        assert_eq!(stats.per_class[2].precision(), Some(1.0));
        assert_eq!(stats.total().n_selected, 4);
    }

    #[test]
    fn audit_empty_class_has_no_precision() {
        let set = select(&[pred(0, 0.9, 0.9)], &rule(SelectionMode::ClsOnly), 0);
        let stats = audit(&set, &[0, 1, 2], 3).unwrap();
        assert_eq!(stats.per_class[1].n_selected, 0);
        assert_eq!(stats.per_class[1].precision(), None);
        assert!(stats.to_csv().contains("\n1,1,0,0,\n"));
        let bad = select(&[pred(7, 0.9, 0.9)], &rule(SelectionMode::ClsOnly), 0);
        assert!(audit(&bad, &[0, 1, 2], 3).is_err());
    }

    #[test]
    fn table_layout() {
        let stats = SelectionStats {
            per_class: vec![ClassSelection {
                n_samples: 3702,
                n_selected: 3995,
                n_correct: 2901,
            }],
        };
        let t = stats.to_table(&["bicycle".into()]);
        assert!(t.contains("bicycle"));
        assert!(t.contains("72.62"));
    }

    #[test]
    fn grid_hits_decimal_literals() {
        let g = threshold_grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert!(g.contains(&0.79) && g.contains(&0.87) && g.contains(&0.13));
        assert!(threshold_grid(0.0).is_err());
        assert!(threshold_grid(0.6).is_err());
        assert_eq!(threshold_grid(0.3).unwrap().len(), 4);
    }

    #[test]
    fn sweep_extremes() {
        let preds: Vec<_> = (0..30)
            .map(|i| pred(i, 0.4 + 0.02 * i as f64, (i as f64 + 1.0) / 32.0))
            .collect();
        let truth: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let rows = threshold_sweep(&preds, &truth, 0.5, SelectionMode::ClsAndDisc).unwrap();
        let all = rows.iter().find(|r| r.tau_cls == 0.0 && r.tau_disc == 1.0).unwrap();
        assert_eq!(all.n_selected, 30);
        let none = rows.iter().find(|r| r.tau_cls == 1.0).unwrap();
        assert_eq!(none.n_selected, 0);
    }

    #[test]
    fn csv_round_trip() {
        let preds = vec![pred(2, 0.91, 0.4), pred(8, 1.0 / 3.0 + 0.5, 0.77)];
        let set = select(&preds, &rule(SelectionMode::ClsAndDisc), 0);
        let back = PseudoLabelSet::from_csv(&set.to_csv(), "mem", 0.79, 0.87, 0).unwrap();
        assert_eq!(back, set);
        assert!(PseudoLabelSet::from_csv("a,b\n", "mem", 0.0, 0.0, 0).is_err());
    }
}
