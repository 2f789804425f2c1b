//! Datasets, synthetic shift benchmarks, CSV ingestion, splitting and
//! batching.

mod csv;
mod generate;
mod split;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use csv::{load_csv, parse_csv, save_csv, to_csv};
pub use generate::{apply_shift, generate, Generator, ShiftSpec};
pub use split::{batches, split};

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            _ => Err(Error::contract(format!("unknown domain '{s}'"))),
        }
    }
}

/// Feature rows with optional labels.
///
/// Label reads on a target-domain dataset go through [`labels`](Self::labels)
/// and are counted, so training code can prove it never looked at target
/// ground truth.
#[derive(Debug)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<Option<usize>>,
    domain: Domain,
    class_names: Vec<String>,
    target_label_reads: AtomicUsize,
}

impl Clone for LabeledDataset {
    fn clone(&self) -> Self {
        Self {
            features: self.features.clone(),
            labels: self.labels.clone(),
            domain: self.domain,
            class_names: self.class_names.clone(),
            target_label_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for LabeledDataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.domain == other.domain
            && self.class_names == other.class_names
    }
}

impl LabeledDataset {
    pub fn new(features: Matrix, labels: Vec<Option<usize>>, domain: Domain, class_names: Vec<String>) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::contract(format!(
                "{} labels for {} feature rows",
                labels.len(),
                features.rows()
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&l| l >= class_names.len()) {
            return Err(Error::contract(format!(
                "label {bad} outside [0, {})",
                class_names.len()
            )));
        }
        Ok(Self {
            features,
            labels,
            domain,
            class_names,
            target_label_reads: AtomicUsize::new(0),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Labels, with `None` for unlabeled rows. Counted on target data.
    pub fn labels(&self) -> &[Option<usize>] {
        if self.domain == Domain::Target {
            self.target_label_reads.fetch_add(1, Ordering::Relaxed);
        }
        &self.labels
    }

    /// Every label, or an error naming the first unlabeled row.
    pub fn dense_labels(&self) -> Result<Vec<usize>> {
        self.labels()
            .iter()
            .enumerate()
            .map(|(i, l)| l.ok_or_else(|| Error::contract(format!("{} row {i} is unlabeled", self.domain))))
            .collect()
    }

    /// Number of target-label reads since creation.
    pub fn target_label_reads(&self) -> usize {
        self.target_label_reads.load(Ordering::Relaxed)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain,
            class_names: self.class_names.clone(),
            target_label_reads: AtomicUsize::new(0),
        }
    }

    pub(crate) fn raw_labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Same rows with labels removed.
    pub fn unlabeled(&self) -> LabeledDataset {
        LabeledDataset {
            labels: vec![None; self.len()],
            ..self.clone()
        }
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if let Some(bad) = self.labels.iter().flatten().find(|&&l| l >= names.len()) {
            return Err(Error::contract(format!("label {bad} outside [0, {})", names.len())));
        }
        self.class_names = names;
        Ok(self)
    }
}

pub fn default_class_names(n: usize) -> Vec<String> {
    (0..n).map(|k| format!("class{k}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(domain: Domain) -> LabeledDataset {
        LabeledDataset::new(
            Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(),
            vec![Some(0), None, Some(1)],
            domain,
            default_class_names(2),
        )
        .unwrap()
    }

    #[test]
    fn label_reads_counted_only_on_target() {
        let s = ds(Domain::Source);
        let _ = s.labels();
        assert_eq!(s.target_label_reads(), 0);
        let t = ds(Domain::Target);
        let _ = t.features();
        assert_eq!(t.target_label_reads(), 0);
        let _ = t.labels();
        assert_eq!(t.target_label_reads(), 1);
    }

    #[test]
    fn validation() {
        let f = Matrix::zeros(2, 1);
        assert!(LabeledDataset::new(f.clone(), vec![Some(0)], Domain::Source, default_class_names(2)).is_err());
        assert!(LabeledDataset::new(f, vec![Some(0), Some(2)], Domain::Source, default_class_names(2)).is_err());
        assert!(ds(Domain::Source).dense_labels().is_err());
    }

    #[test]
    fn subset_and_unlabeled() {
        let d = ds(Domain::Source);
        let s = d.subset(&[2, 0]);
        assert_eq!(s.features().as_slice(), &[2.0, 0.0]);
        assert_eq!(s.labels(), &[Some(1), Some(0)]);
        assert!(d.unlabeled().labels().iter().all(Option::is_none));
    }
}
