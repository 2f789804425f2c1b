//! The four networks: source extractor, target extractor, classifier and
//! domain discriminator, plus the checkpoint text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::{Matrix, ParamId, ParamStore, Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const CHECKPOINT_MAGIC: &str = "SGADA-CKPT v1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractorSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub feature_dim: usize,
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::contract("extractor needs at least one hidden layer"));
        }
        if self.input_dim == 0 || self.feature_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::contract("extractor dimensions must be >= 1"));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden_dims);
        w.push(self.feature_dim);
        w
    }
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dims: vec![16, 16],
            feature_dim: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Extractor {
    Source,
    Target,
}

/// Fully connected layer `x·w + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

impl Affine {
    fn init(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let w = store.add(Parameter::new(format!("{name}.w"), glorot(fan_in, fan_out, rng)));
        let b = store.add(Parameter::new(format!("{name}.b"), Matrix::zeros(1, fan_out)));
        Self { w, b }
    }

    fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, trainable: bool) -> Result<Var> {
        let (w, b) = if trainable {
            (tape.param(store, self.w), tape.param(store, self.b))
        } else {
            (
                tape.constant(store.get(self.w).value.clone()),
                tape.constant(store.get(self.b).value.clone()),
            )
        };
        tape.affine(x, w, b)
    }

    fn reinit(&self, store: &mut ParamStore, rng: &mut Rng) {
        let (fan_in, fan_out) = store.get(self.w).value.shape();
        let w = store.get_mut(self.w);
        w.value = glorot(fan_in, fan_out, rng);
        w.clear_grad();
        w.reset_optimizer();
        let b = store.get_mut(self.b);
        b.value = Matrix::zeros(1, fan_out);
        b.clear_grad();
        b.reset_optimizer();
    }
}

/// Uniform in ±sqrt(6 / (fan_in + fan_out)), drawn row-major.
fn glorot(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let vals = (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect();
    Matrix::from_vec(fan_in, fan_out, vals).expect("finite init")
}

/// Stack of affine layers with ReLU between them and no activation after
/// the last one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Affine>,
}

impl Mlp {
    fn init(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut Rng) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Affine::init(store, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var, trainable: bool) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h, trainable)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}

/// Parameters of every network plus their shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub store: ParamStore,
    pub f_source: Mlp,
    pub f_target: Mlp,
    pub classifier: Affine,
    pub discriminator: Mlp,
    pub spec: ExtractorSpec,
    pub n_classes: usize,
    pub disc_hidden: usize,
}

impl ModelBundle {
    /// Fresh bundle. Initialization draws from one stream in the order
    /// f_source, f_target, classifier, discriminator.
    pub fn new(spec: ExtractorSpec, n_classes: usize, disc_hidden: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        if n_classes < 2 || disc_hidden == 0 {
            return Err(Error::contract("need n_classes >= 2 and disc_hidden >= 1"));
        }
        let mut rng = Rng::derived(seed, "init", 0);
        let mut store = ParamStore::new();
        let widths = spec.widths();
        let f_source = Mlp::init(&mut store, "f_source", &widths, &mut rng);
        let f_target = Mlp::init(&mut store, "f_target", &widths, &mut rng);
        let classifier = Affine::init(&mut store, "classifier", spec.feature_dim, n_classes, &mut rng);
        let discriminator = Mlp::init(
            &mut store,
            "discriminator",
            &[spec.feature_dim, disc_hidden, disc_hidden, 1],
            &mut rng,
        );
        Ok(Self {
            store,
            f_source,
            f_target,
            classifier,
            discriminator,
            spec,
            n_classes,
            disc_hidden,
        })
    }

    pub fn extractor(&self, which: Extractor) -> &Mlp {
        match which {
            Extractor::Source => &self.f_source,
            Extractor::Target => &self.f_target,
        }
    }

    pub fn extractor_ids(&self, which: Extractor) -> Vec<ParamId> {
        self.extractor(which).param_ids()
    }

    pub fn classifier_ids(&self) -> Vec<ParamId> {
        vec![self.classifier.w, self.classifier.b]
    }

    pub fn discriminator_ids(&self) -> Vec<ParamId> {
        self.discriminator.param_ids()
    }

    /// Features of a batch on the tape. `x` must have `input_dim` columns.
    pub fn extract(&self, tape: &mut Tape, which: Extractor, x: Var, trainable: bool) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.spec.input_dim {
            return Err(Error::shape(
                "extract",
                tape.value(x).shape(),
                (self.spec.input_dim, self.spec.feature_dim),
            ));
        }
        self.extractor(which).forward(tape, &self.store, x, trainable)
    }

    /// Class probabilities (softmax over one affine layer).
    pub fn classify(&self, tape: &mut Tape, features: Var, trainable: bool) -> Result<Var> {
        let logits = self.classifier.forward(tape, &self.store, features, trainable)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Probability that each feature row came from the source domain.
    pub fn discriminate(&self, tape: &mut Tape, features: Var, trainable: bool) -> Result<Var> {
        let logit = self.discriminator.forward(tape, &self.store, features, trainable)?;
        Ok(tape.sigmoid(logit))
    }

    pub fn features(&self, which: Extractor, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let f = self.extract(&mut tape, which, xv, false)?;
        Ok(tape.value(f).clone())
    }

    pub fn class_probs(&self, features: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let fv = tape.constant(features.clone());
        let p = self.classify(&mut tape, fv, false)?;
        Ok(tape.value(p).clone())
    }

    pub fn source_probs(&self, features: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let fv = tape.constant(features.clone());
        let d = self.discriminate(&mut tape, fv, false)?;
        Ok(tape.value(d).clone())
    }

    /// Deep-copies F_s into F_t and zeroes F_t's optimizer state.
    pub fn clone_source_to_target(&mut self) -> Result<()> {
        let src = self.f_source.param_ids();
        let dst = self.f_target.param_ids();
        self.store.copy_values(&src, &dst)
    }

    pub fn reinit_discriminator(&mut self, seed: u64) {
        let mut rng = Rng::derived(seed, "disc-reinit", 0);
        for layer in &self.discriminator.layers {
            layer.reinit(&mut self.store, &mut rng);
        }
    }

    pub fn reset_optimizer(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.store.get_mut(id).reset_optimizer();
        }
    }

    pub fn hash(&self, ids: &[ParamId]) -> String {
        self.store.value_hash(ids)
    }

    /// Checkpoint text: magic line, one `name / rows / cols / values` block
    /// per parameter, then `.adam_m`, `.adam_v` and `.step` blocks in the
    /// same layout. Values carry 17 significant digits.
    pub fn checkpoint_text(&self) -> String {
        let mut out = String::new();
        out.push_str(CHECKPOINT_MAGIC);
        out.push('\n');
        for (_, p) in self.store.iter() {
            write_block(&mut out, &p.name, &p.value);
        }
        for (_, p) in self.store.iter() {
            write_block(&mut out, &format!("{}.adam_m", p.name), &p.adam_m);
            write_block(&mut out, &format!("{}.adam_v", p.name), &p.adam_v);
            write_block(
                &mut out,
                &format!("{}.step", p.name),
                &Matrix::scalar(p.step_count as f64),
            );
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.checkpoint_text()).map_err(|e| Error::io(path, e))
    }

    /// Overwrites values and optimizer state from a checkpoint. Every block
    /// must name a parameter of this bundle with a matching shape, and every
    /// parameter must be present.
    pub fn load_checkpoint_text(&mut self, text: &str, origin: &str) -> Result<()> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(Error::parse(origin, 1, format!("expected '{CHECKPOINT_MAGIC}'"))),
        }
        let mut seen = vec![[false; 4]; self.store.len()];
        while let Some((line_no, name)) = lines.next() {
            let mut next_num = |what: &str| -> Result<(usize, String)> {
                let (n, l) = lines
                    .next()
                    .ok_or_else(|| Error::parse(origin, line_no, format!("truncated block, missing {what}")))?;
                Ok((n, l.trim().to_string()))
            };
            let (rn, rows) = next_num("rows")?;
            let rows: usize = rows.parse().map_err(|_| Error::parse(origin, rn, "bad row count"))?;
            let (cn, cols) = next_num("cols")?;
            let cols: usize = cols.parse().map_err(|_| Error::parse(origin, cn, "bad column count"))?;
            let mut vals = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                let (vn, v) = next_num("value")?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(origin, vn, format!("bad number '{v}'")))?;
                vals.push(v);
            }
            let m = Matrix::from_vec(rows, cols, vals).map_err(|e| Error::parse(origin, line_no, e.to_string()))?;

            let (base, slot) = if let Some(b) = name.strip_suffix(".adam_m") {
                (b, 1)
            } else if let Some(b) = name.strip_suffix(".adam_v") {
                (b, 2)
            } else if let Some(b) = name.strip_suffix(".step") {
                (b, 3)
            } else {
                (name, 0)
            };
            let id = self
                .store
                .find(base)
                .ok_or_else(|| Error::parse(origin, line_no, format!("unknown parameter '{name}'")))?;
            let p = self.store.get_mut(id);
            let expect = if slot == 3 { (1, 1) } else { p.value.shape() };
            if m.shape() != expect {
                return Err(Error::parse(
                    origin,
                    line_no,
                    format!("'{name}' is {rows}x{cols}, expected {}x{}", expect.0, expect.1),
                ));
            }
            match slot {
                0 => p.value = m,
                1 => p.adam_m = m,
                2 => p.adam_v = m,
                _ => p.step_count = m.as_slice()[0] as u64,
            }
            p.clear_grad();
            seen[id.index()][slot] = true;
        }
        if let Some(i) = seen.iter().position(|s| s.iter().any(|b| !b)) {
            let name = &self.store.get(ParamId(i)).name;
            return Err(Error::parse(
                origin,
                0,
                format!("checkpoint is missing state for '{name}'"),
            ));
        }
        Ok(())
    }

    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.load_checkpoint_text(&text, &path.display().to_string())
    }
}

fn write_block(out: &mut String, name: &str, m: &Matrix) {
    let _ = writeln!(out, "{name}\n{}\n{}", m.rows(), m.cols());
    for v in m.as_slice() {
        let _ = writeln!(out, "{}", fmt_f64(*v));
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Predicted class and its probability (the classifier confidence).
pub fn predict_row(probs: &Matrix, row: usize) -> (usize, f64) {
    probs.row_argmax(row)
}
