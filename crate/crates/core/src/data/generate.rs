use std::f64::consts::PI;
use std::str::FromStr;

use super::{default_class_names, Domain, LabeledDataset};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    /// Interleaved half-circles; 2 or 3 classes.
    TwoMoons,
    /// Isotropic Gaussians with means evenly spaced on a circle.
    GaussianMixture,
}

impl Generator {
    pub fn as_str(self) -> &'static str {
        match self {
            Generator::TwoMoons => "two_moons",
            Generator::GaussianMixture => "gaussian_mixture",
        }
    }
}

impl FromStr for Generator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(Generator::TwoMoons),
            "gaussian_mixture" => Ok(Generator::GaussianMixture),
            _ => Err(Error::contract(format!("unknown generator '{s}'"))),
        }
    }
}

/// A 2-D source distribution and the shift that turns it into the target.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSpec {
    pub generator: Generator,
    /// Source class counts.
    pub n_per_class: Vec<usize>,
    /// Target class counts; `None` reuses `n_per_class`.
    pub target_n_per_class: Option<Vec<usize>>,
    pub noise_sigma: f64,
    /// Counter-clockwise rotation about the origin applied to target points.
    pub rotation_deg: f64,
    /// Translation applied to target points after rotation.
    pub mean_shift: [f64; 2],
    /// Radius of the circle carrying the mixture means.
    pub mixture_radius: f64,
    pub seed: u64,
}

impl ShiftSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [Some(&self.n_per_class), self.target_n_per_class.as_ref()];
        for c in counts.into_iter().flatten() {
            if c.iter().filter(|&&n| n >= 1).count() < 2 {
                return Err(Error::contract("need at least two classes with >= 1 sample"));
            }
        }
        if let Some(t) = &self.target_n_per_class {
            if t.len() != self.n_per_class.len() {
                return Err(Error::contract("source and target class counts differ in length"));
            }
        }
        if self.generator == Generator::TwoMoons && !(2..=3).contains(&self.n_per_class.len()) {
            return Err(Error::contract(format!(
                "two_moons supports 2 or 3 classes, got {}",
                self.n_per_class.len()
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.rotation_deg.is_finite() {
            return Err(Error::contract("noise_sigma must be >= 0 and rotation finite"));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_per_class.len()
    }

    pub fn counts(&self, domain: Domain) -> &[usize] {
        match (domain, &self.target_n_per_class) {
            (Domain::Target, Some(t)) => t,
            _ => &self.n_per_class,
        }
    }
}

/// Rotates `p` by `rotation_deg` about the origin, then translates it.
pub fn apply_shift(p: [f64; 2], rotation_deg: f64, mean_shift: [f64; 2]) -> [f64; 2] {
    let (s, c) = rotation_deg.to_radians().sin_cos();
    [c * p[0] - s * p[1] + mean_shift[0], s * p[0] + c * p[1] + mean_shift[1]]
}

fn moon_point(class: usize, rng: &mut Rng) -> [f64; 2] {
    let t = rng.uniform() * PI;
    match class {
        0 => [t.cos(), t.sin()],
        1 => [1.0 - t.cos(), 0.5 - t.sin()],
        // Third arc continues the chain: the upper arc moved two units right.
        _ => [2.0 + t.cos(), t.sin()],
    }
}

fn mixture_mean(class: usize, n_classes: usize, radius: f64) -> [f64; 2] {
    let angle = 2.0 * PI * class as f64 / n_classes as f64;
    [radius * angle.cos(), radius * angle.sin()]
}

/// Samples one domain. Rows are grouped by class in class order; the random
/// stream depends only on `spec.seed` and the class counts, so with a null
/// shift and equal counts both domains are identical.
pub fn generate(spec: &ShiftSpec, domain: Domain) -> Result<LabeledDataset> {
    spec.validate()?;
    let counts = spec.counts(domain);
    let k = counts.len();
    let mut rng = Rng::new(spec.seed);
    let total: usize = counts.iter().sum();
    let mut values = Vec::with_capacity(total * 2);
    let mut labels = Vec::with_capacity(total);
    for (class, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let base = match spec.generator {
                Generator::TwoMoons => moon_point(class, &mut rng),
                Generator::GaussianMixture => mixture_mean(class, k, spec.mixture_radius),
            };
            let noisy = [
                base[0] + spec.noise_sigma * rng.normal(),
                base[1] + spec.noise_sigma * rng.normal(),
            ];
            let p = match domain {
                Domain::Source => noisy,
                Domain::Target => apply_shift(noisy, spec.rotation_deg, spec.mean_shift),
            };
            values.extend_from_slice(&p);
            labels.push(Some(class));
        }
    }
    LabeledDataset::new(
        Matrix::from_vec(total, 2, values)?,
        labels,
        domain,
        default_class_names(k),
    )
}
