//! Experiment configuration: `key = value` lines, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::{Generator, ShiftSpec};
use crate::diffcore::AdamConfig;
use crate::error::{Error, Result};
use crate::nets::ExtractorSpec;
use crate::pseudo::{SelectionMode, SelectionRule};

/// Where the two domains come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Benchmark {
    /// Three imbalanced Gaussian classes under a mean shift.
    FlirToy,
    /// Three-arc moons under a rotation.
    TwoMoons,
    /// Generator fields of the config, taken as written.
    Custom,
    /// `source_csv` and `target_csv`.
    Csv,
}

impl Benchmark {
    fn parse(s: &str) -> Result<Self> {
        match s {
            "flir-toy" => Ok(Self::FlirToy),
            "two-moons" => Ok(Self::TwoMoons),
            "custom" => Ok(Self::Custom),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::contract(format!(
                "unknown benchmark '{s}' (flir-toy, two-moons, custom, csv)"
            ))),
        }
    }

    fn as_str(&self) -> &'static str {
        match self {
            Self::FlirToy => "flir-toy",
            Self::TwoMoons => "two-moons",
            Self::Custom => "custom",
            Self::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub benchmark: Benchmark,
    pub source_csv: String,
    pub target_csv: String,
    pub generator: Generator,
    pub n_per_class: Vec<usize>,
    pub target_n_per_class: Vec<usize>,
    pub noise_sigma: f64,
    pub rotation_deg: f64,
    pub mean_shift: [f64; 2],
    pub mixture_radius: f64,
    pub split: [f64; 3],

    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
    pub disc_hidden: usize,

    pub batch_size: usize,
    pub epochs_pretrain: usize,
    pub epochs_warmup: usize,
    pub epochs_sgada: usize,
    pub lr_pretrain: f64,
    pub lr_ft: f64,
    pub lr_disc: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub disc_steps: usize,
    pub ft_steps: usize,

    pub lambda: f64,
    pub tau_cls: f64,
    pub tau_disc: f64,
    pub selection_mode: SelectionMode,

    pub seed: u64,
    pub paper_literal_advf: bool,
    pub waive_cls_in_branch2: bool,
    pub regenerate_every_k: usize,
    pub reinit_disc_for_sgada: bool,
}

/// Every accepted key, in canonical order.
pub const CONFIG_KEYS: &[&str] = &[
    "benchmark",
    "source_csv",
    "target_csv",
    "generator",
    "n_per_class",
    "target_n_per_class",
    "noise_sigma",
    "rotation_deg",
    "mean_shift",
    "mixture_radius",
    "split",
    "hidden_dims",
    "feature_dim",
    "disc_hidden",
    "batch_size",
    "epochs_pretrain",
    "epochs_warmup",
    "epochs_sgada",
    "lr_pretrain",
    "lr_ft",
    "lr_disc",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "disc_steps",
    "ft_steps",
    "lambda",
    "tau_cls",
    "tau_disc",
    "selection_mode",
    "seed",
    "paper_literal_advf",
    "waive_cls_in_branch2",
    "regenerate_every_k",
    "reinit_disc_for_sgada",
];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            benchmark: Benchmark::FlirToy,
            source_csv: String::new(),
            target_csv: String::new(),
            generator: Generator::GaussianMixture,
            n_per_class: vec![520, 3840, 2630],
            target_n_per_class: vec![370, 3860, 2100],
            noise_sigma: 1.0,
            rotation_deg: 0.0,
            mean_shift: [0.0, 0.0],
            mixture_radius: 2.5,
            split: [0.6, 0.2, 0.2],
            hidden_dims: vec![16, 16],
            feature_dim: 8,
            disc_hidden: 16,
            batch_size: 32,
            epochs_pretrain: 15,
            epochs_warmup: 15,
            epochs_sgada: 15,
            lr_pretrain: 5e-4,
            // Scaled up from the ResNet fine-tuning rate of 1e-5, under which a
            // small freshly trained extractor barely moves in 15 epochs.
            lr_ft: 3e-5,
            lr_disc: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            disc_steps: 1,
            ft_steps: 1,
            lambda: 0.25,
            tau_cls: 0.79,
            tau_disc: 0.87,
            selection_mode: SelectionMode::ClsAndDisc,
            seed: 0,
            paper_literal_advf: false,
            waive_cls_in_branch2: false,
            regenerate_every_k: 0,
            reinit_disc_for_sgada: false,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::contract(format!("{key}: cannot parse '{v}'")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::contract(format!("{key}: expected true/false, got '{v}'"))),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn is_key(key: &str) -> bool {
        CONFIG_KEYS.contains(&key)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "benchmark" => self.benchmark = Benchmark::parse(v)?,
            "source_csv" => self.source_csv = v.to_string(),
            "target_csv" => self.target_csv = v.to_string(),
            "generator" => self.generator = v.parse()?,
            "n_per_class" => self.n_per_class = parse_list(key, v)?,
            "target_n_per_class" => self.target_n_per_class = parse_list(key, v)?,
            "noise_sigma" => self.noise_sigma = parse_num(key, v)?,
            "rotation_deg" => self.rotation_deg = parse_num(key, v)?,
            "mean_shift" => {
                let xs: Vec<f64> = parse_list(key, v)?;
                self.mean_shift = xs
                    .try_into()
                    .map_err(|_| Error::contract("mean_shift needs exactly two values"))?;
            }
            "mixture_radius" => self.mixture_radius = parse_num(key, v)?,
            "split" => {
                let xs: Vec<f64> = parse_list(key, v)?;
                self.split = xs
                    .try_into()
                    .map_err(|_| Error::contract("split needs exactly three fractions"))?;
            }
            "hidden_dims" => self.hidden_dims = parse_list(key, v)?,
            "feature_dim" => self.feature_dim = parse_num(key, v)?,
            "disc_hidden" => self.disc_hidden = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs_pretrain" => self.epochs_pretrain = parse_num(key, v)?,
            "epochs_warmup" => self.epochs_warmup = parse_num(key, v)?,
            "epochs_sgada" => self.epochs_sgada = parse_num(key, v)?,
            "lr_pretrain" => self.lr_pretrain = parse_num(key, v)?,
            "lr_ft" => self.lr_ft = parse_num(key, v)?,
            "lr_disc" => self.lr_disc = parse_num(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse_num(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse_num(key, v)?,
            "adam_eps" => self.adam_eps = parse_num(key, v)?,
            "disc_steps" => self.disc_steps = parse_num(key, v)?,
            "ft_steps" => self.ft_steps = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "tau_cls" => self.tau_cls = parse_num(key, v)?,
            "tau_disc" => self.tau_disc = parse_num(key, v)?,
            "selection_mode" => self.selection_mode = v.parse()?,
            "seed" => self.seed = parse_num(key, v)?,
            "paper_literal_advf" => self.paper_literal_advf = parse_bool(key, v)?,
            "waive_cls_in_branch2" => self.waive_cls_in_branch2 = parse_bool(key, v)?,
            "regenerate_every_k" => self.regenerate_every_k = parse_num(key, v)?,
            "reinit_disc_for_sgada" => self.reinit_disc_for_sgada = parse_bool(key, v)?,
            _ => return Err(Error::contract(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "benchmark" => self.benchmark.as_str().to_string(),
            "source_csv" => self.source_csv.clone(),
            "target_csv" => self.target_csv.clone(),
            "generator" => self.generator.as_str().to_string(),
            "n_per_class" => join(&self.n_per_class),
            "target_n_per_class" => join(&self.target_n_per_class),
            "noise_sigma" => self.noise_sigma.to_string(),
            "rotation_deg" => self.rotation_deg.to_string(),
            "mean_shift" => join(&self.mean_shift),
            "mixture_radius" => self.mixture_radius.to_string(),
            "split" => join(&self.split),
            "hidden_dims" => join(&self.hidden_dims),
            "feature_dim" => self.feature_dim.to_string(),
            "disc_hidden" => self.disc_hidden.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs_pretrain" => self.epochs_pretrain.to_string(),
            "epochs_warmup" => self.epochs_warmup.to_string(),
            "epochs_sgada" => self.epochs_sgada.to_string(),
            "lr_pretrain" => self.lr_pretrain.to_string(),
            "lr_ft" => self.lr_ft.to_string(),
            "lr_disc" => self.lr_disc.to_string(),
            "adam_beta1" => self.adam_beta1.to_string(),
            "adam_beta2" => self.adam_beta2.to_string(),
            "adam_eps" => self.adam_eps.to_string(),
            "disc_steps" => self.disc_steps.to_string(),
            "ft_steps" => self.ft_steps.to_string(),
            "lambda" => self.lambda.to_string(),
            "tau_cls" => self.tau_cls.to_string(),
            "tau_disc" => self.tau_disc.to_string(),
            "selection_mode" => self.selection_mode.as_str().to_string(),
            "seed" => self.seed.to_string(),
            "paper_literal_advf" => self.paper_literal_advf.to_string(),
            "waive_cls_in_branch2" => self.waive_cls_in_branch2.to_string(),
            "regenerate_every_k" => self.regenerate_every_k.to_string(),
            "reinit_disc_for_sgada" => self.reinit_disc_for_sgada.to_string(),
            _ => unreachable!("key list and accessor out of sync: {key}"),
        }
    }

    /// Parses config text on top of the defaults.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(origin, i + 1, "expected 'key = value'"))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Canonical text: every key in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }

    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let lrs = [self.lr_pretrain, self.lr_ft, self.lr_disc];
        if lrs.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::contract("learning rates must be > 0"));
        }
        for (name, t) in [("tau_cls", self.tau_cls), ("tau_disc", self.tau_disc)] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::contract(format!("{name} must be in [0, 1], got {t}")));
            }
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::contract("lambda must be >= 0"));
        }
        if self.batch_size == 0 || self.disc_steps == 0 || self.ft_steps == 0 {
            return Err(Error::contract("batch_size, disc_steps and ft_steps must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::contract("Adam betas must be in [0, 1)"));
        }
        if self.benchmark == Benchmark::Csv && (self.source_csv.is_empty() || self.target_csv.is_empty()) {
            return Err(Error::contract("benchmark = csv needs source_csv and target_csv"));
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn selection_rule(&self) -> SelectionRule {
        SelectionRule {
            tau_cls: self.tau_cls,
            tau_disc: self.tau_disc,
            mode: self.selection_mode,
            waive_cls_in_branch2: self.waive_cls_in_branch2,
        }
    }

    pub fn extractor_spec(&self, input_dim: usize) -> ExtractorSpec {
        ExtractorSpec {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            feature_dim: self.feature_dim,
        }
    }

    /// Generator settings for the synthetic benchmarks; `None` for CSV input.
    pub fn shift_spec(&self) -> Option<ShiftSpec> {
        match self.benchmark {
            Benchmark::FlirToy => Some(flir_toy_spec()),
            Benchmark::TwoMoons => Some(two_moons_spec()),
            Benchmark::Custom => Some(ShiftSpec {
                generator: self.generator,
                n_per_class: self.n_per_class.clone(),
                target_n_per_class: (!self.target_n_per_class.is_empty()).then(|| self.target_n_per_class.clone()),
                noise_sigma: self.noise_sigma,
                rotation_deg: self.rotation_deg,
                mean_shift: self.mean_shift,
                mixture_radius: self.mixture_radius,
                seed: 0,
            }),
            Benchmark::Csv => None,
        }
    }
}

pub const FLIR_TOY_CLASSES: [&str; 3] = ["bicycle", "car", "person"];

/// Class counts at one tenth of the thermal benchmark's ratios, unit-variance
/// components on a circle of radius 2.5, and a target translation of 1.5σ
/// toward the majority class, which pushes the minority class into the
/// overlap region.
pub fn flir_toy_spec() -> ShiftSpec {
    ShiftSpec {
        generator: Generator::GaussianMixture,
        n_per_class: vec![520, 3840, 2630],
        target_n_per_class: Some(vec![370, 3860, 2100]),
        noise_sigma: 1.0,
        rotation_deg: 0.0,
        mean_shift: FLIR_TOY_SHIFT,
        mixture_radius: 2.5,
        seed: 0,
    }
}

/// `1.5 * (cos 120°, sin 120°)`, the direction of the car component's mean.
pub const FLIR_TOY_SHIFT: [f64; 2] = [-0.75, 1.299_038_105_676_658];

pub fn two_moons_spec() -> ShiftSpec {
    ShiftSpec {
        generator: Generator::TwoMoons,
        n_per_class: vec![300, 1200, 900],
        target_n_per_class: None,
        noise_sigma: 0.1,
        rotation_deg: 30.0,
        mean_shift: [0.0, 0.0],
        mixture_radius: 3.0,
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparameters() {
        let c = ExperimentConfig::default();
        assert_eq!(c.batch_size, 32);
        assert_eq!((c.epochs_pretrain, c.epochs_warmup, c.epochs_sgada), (15, 15, 15));
        assert_eq!((c.lr_pretrain, c.lr_ft, c.lr_disc), (5e-4, 3e-5, 1e-3));
        assert_eq!((c.lambda, c.tau_cls, c.tau_disc), (0.25, 0.79, 0.87));
        c.validate().unwrap();
    }

    #[test]
    fn flir_toy_shift_is_one_and_a_half_sigma_toward_the_majority_mean() {
        let [x, y] = FLIR_TOY_SHIFT;
        assert!(((x * x + y * y).sqrt() - 1.5).abs() < 1e-12);
        let angle = y.atan2(x).to_degrees();
        assert!((angle - 120.0).abs() < 1e-9);
        let spec = flir_toy_spec();
        assert_eq!(spec.n_per_class, vec![520, 3840, 2630]);
        assert_eq!(spec.target_n_per_class, Some(vec![370, 3860, 2100]));
        assert_eq!(spec.noise_sigma, 1.0);
    }

    #[test]
    fn text_round_trip() {
        let mut c = ExperimentConfig::default();
        c.set("lambda", "0.7").unwrap();
        c.set("hidden_dims", "32, 8").unwrap();
        c.set("mean_shift", "1.5,-0.25").unwrap();
        c.set("selection_mode", "cls_only").unwrap();
        let back = ExperimentConfig::parse(&c.to_text(), "mem").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn comments_and_errors() {
        let c = ExperimentConfig::parse("# note\nseed = 7  # trailing\n\n", "mem").unwrap();
        assert_eq!(c.seed, 7);
        match ExperimentConfig::parse("seed = 1\nlrate = 3\n", "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(ExperimentConfig::parse("seed\n", "mem").is_err());
        assert!(ExperimentConfig::parse("tau_cls = high\n", "mem").is_err());
    }

    #[test]
    fn every_key_is_settable() {
        let c = ExperimentConfig::default();
        for key in CONFIG_KEYS {
            let mut d = ExperimentConfig::default();
            d.set(key, &c.get(key)).unwrap();
            assert_eq!(d, c, "{key}");
        }
    }

    #[test]
    fn validation() {
        for c in [
            ExperimentConfig {
                tau_disc: 1.5,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                lr_ft: 0.0,
                ..ExperimentConfig::default()
            },
            ExperimentConfig {
                benchmark: Benchmark::Csv,
                ..ExperimentConfig::default()
            },
        ] {
            assert!(c.validate().is_err());
        }
    }
}
