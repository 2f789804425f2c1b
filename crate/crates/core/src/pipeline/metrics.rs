use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Classification quality on one labeled dataset. Accuracies are percent.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    /// `None` for classes absent from the evaluated data.
    pub per_class: Vec<Option<f64>>,
    /// Unweighted mean over the classes that are present.
    pub macro_avg: f64,
    pub overall: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Unweighted mean of the defined entries.
pub fn macro_average(per_class: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

impl MetricsReport {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], class_names: &[String]) -> Result<Self> {
        let k = class_names.len();
        if truth.len() != predicted.len() {
            return Err(Error::contract("truth and prediction lengths differ"));
        }
        if truth.is_empty() {
            return Err(Error::contract("cannot evaluate an empty dataset"));
        }
        let mut confusion = vec![vec![0usize; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= k || p >= k {
                return Err(Error::contract(format!("class index outside [0, {k})")));
            }
            confusion[t][p] += 1;
        }
        Ok(Self::from_confusion(confusion, class_names.to_vec()))
    }

    pub fn from_confusion(confusion: Vec<Vec<usize>>, class_names: Vec<String>) -> Self {
        let per_class: Vec<Option<f64>> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| 100.0 * row[c] as f64 / n as f64)
            })
            .collect();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..confusion.len()).map(|c| confusion[c][c]).sum();
        Self {
            macro_avg: macro_average(&per_class).unwrap_or(f64::NAN),
            overall: if total > 0 {
                100.0 * correct as f64 / total as f64
            } else {
                f64::NAN
            },
            per_class,
            confusion,
            class_names,
        }
    }

    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].is_none())
            .collect()
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "macro_acc = {}", self.macro_avg);
        let _ = writeln!(out, "overall_acc = {}", self.overall);
        for (name, acc) in self.class_names.iter().zip(&self.per_class) {
            match acc {
                Some(a) => {
                    let _ = writeln!(out, "acc.{name} = {a}");
                }
                None => {
                    let _ = writeln!(out, "acc.{name} = undefined");
                }
            }
        }
        let absent: Vec<String> = self
            .absent_classes()
            .iter()
            .map(|c| self.class_names[*c].clone())
            .collect();
        let _ = writeln!(out, "absent_classes = {}", absent.join(","));
        for (name, row) in self.class_names.iter().zip(&self.confusion) {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            let _ = writeln!(out, "confusion.{name} = {}", cells.join(" "));
        }
        out
    }

    /// One row per class plus `macro` and `overall` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,accuracy_pct,n_samples,n_correct\n");
        for (c, name) in self.class_names.iter().enumerate() {
            let n: usize = self.confusion[c].iter().sum();
            let acc = self.per_class[c].map(|a| a.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{name},{acc},{n},{}", self.confusion[c][c]);
        }
        let total: usize = self.confusion.iter().flatten().sum();
        let correct: usize = (0..self.confusion.len()).map(|c| self.confusion[c][c]).sum();
        let _ = writeln!(out, "macro,{},{total},{correct}", self.macro_avg);
        let _ = writeln!(out, "overall,{},{total},{correct}", self.overall);
        out
    }

    /// Reads back [`to_text`](Self::to_text) output.
    pub fn parse_text(text: &str, origin: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut per_class = Vec::new();
        let mut confusion = Vec::new();
        let mut macro_avg = None;
        let mut overall = None;
        for (i, line) in text.lines().enumerate() {
            let bad = |m: &str| Error::parse(origin, i + 1, m.to_string());
            let (k, v) = line.split_once(" = ").ok_or_else(|| bad("expected 'key = value'"))?;
            if k == "macro_acc" {
                macro_avg = Some(v.parse().map_err(|_| bad("bad macro_acc"))?);
            } else if k == "overall_acc" {
                overall = Some(v.parse().map_err(|_| bad("bad overall_acc"))?);
            } else if let Some(name) = k.strip_prefix("acc.") {
                names.push(name.to_string());
                per_class.push(if v == "undefined" {
                    None
                } else {
                    Some(v.parse().map_err(|_| bad("bad accuracy"))?)
                });
            } else if k.starts_with("confusion.") {
                let row: Result<Vec<usize>> = v
                    .split_whitespace()
                    .map(|c| c.parse().map_err(|_| bad("bad confusion cell")))
                    .collect();
                confusion.push(row?);
            }
        }
        let (Some(macro_avg), Some(overall)) = (macro_avg, overall) else {
            return Err(Error::parse(origin, 0, "missing macro_acc or overall_acc"));
        };
        Ok(Self {
            class_names: names,
            per_class,
            macro_avg,
            overall,
            confusion,
        })
    }
}
