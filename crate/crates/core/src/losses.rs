//! Training objectives, built from tape primitives so `backward` covers them.
//!
//! Every `1/n` factor is a per-batch mean. Probabilities pass through
//! `ln_clamped`, so no loss can reach infinity.

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// A scalar loss on the tape together with its value at creation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub scalar: Var,
    pub detached: f64,
}

impl LossValue {
    fn new(tape: &Tape, scalar: Var) -> Self {
        Self {
            scalar,
            detached: tape.value(scalar).as_slice()[0],
        }
    }
}

fn column_len(tape: &Tape, v: Var, what: &str) -> Result<usize> {
    let m = tape.value(v);
    if m.cols() != 1 {
        return Err(Error::contract(format!(
            "{what} must be a column, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if m.rows() == 0 {
        return Err(Error::contract(format!("{what} is empty")));
    }
    Ok(m.rows())
}

/// `-mean(ln d_on_source) - mean(ln(1 - d_on_target))`.
pub fn disc_loss(tape: &mut Tape, d_on_source: Var, d_on_target: Var) -> Result<LossValue> {
    column_len(tape, d_on_source, "discriminator output on source")?;
    column_len(tape, d_on_target, "discriminator output on target")?;
    let ls = tape.ln_clamped(d_on_source);
    let src = tape.mean(ls)?;
    let not_source = tape.one_minus(d_on_target);
    let lt = tape.ln_clamped(not_source);
    let tgt = tape.mean(lt)?;
    let total = tape.add(src, tgt)?;
    let loss = tape.scale(total, -1.0);
    Ok(LossValue::new(tape, loss))
}

/// Inverted-label objective for the target extractor:
/// `-mean(ln d_on_target)`. Minimizing it pushes the discriminator toward
/// calling target features "source".
pub fn adv_feature_loss(tape: &mut Tape, d_on_target: Var) -> Result<LossValue> {
    column_len(tape, d_on_target, "discriminator output on target")?;
    let l = tape.ln_clamped(d_on_target);
    let m = tape.mean(l)?;
    let loss = tape.scale(m, -1.0);
    Ok(LossValue::new(tape, loss))
}

/// The sign-flipped form `+mean(ln d_on_target)`, kept for ablations.
/// Minimizing it drives target features *away* from the source side.
pub fn adv_feature_loss_literal(tape: &mut Tape, d_on_target: Var) -> Result<LossValue> {
    column_len(tape, d_on_target, "discriminator output on target")?;
    let l = tape.ln_clamped(d_on_target);
    let loss = tape.mean(l)?;
    Ok(LossValue::new(tape, loss))
}

fn cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize], what: &'static str) -> Result<LossValue> {
    if labels.is_empty() {
        return Err(Error::contract(format!("{what}: empty label set")));
    }
    let (rows, classes) = tape.value(probs).shape();
    if rows != labels.len() {
        return Err(Error::shape(what, (rows, classes), (labels.len(), 1)));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::contract(format!("{what}: label {bad} outside [0, {classes})")));
    }
    let picked = tape.pick_per_row(probs, labels)?;
    let logs = tape.ln_clamped(picked);
    let m = tape.mean(logs)?;
    let loss = tape.scale(m, -1.0);
    Ok(LossValue::new(tape, loss))
}

/// Mean cross-entropy over pseudo-labeled target rows.
pub fn self_training_loss(tape: &mut Tape, probs: Var, pseudo_labels: &[usize]) -> Result<LossValue> {
    cross_entropy(tape, probs, pseudo_labels, "self_training_loss")
}

/// Mean cross-entropy against ground-truth labels.
pub fn supervised_ce_loss(tape: &mut Tape, probs: Var, labels: &[usize]) -> Result<LossValue> {
    cross_entropy(tape, probs, labels, "supervised_ce_loss")
}

/// `adv + lambda * selftrain` on one tape, so a single backward pass
/// reaches the target extractor through both terms.
pub fn target_update_objective(
    tape: &mut Tape,
    adv: LossValue,
    selftrain: LossValue,
    lambda: f64,
) -> Result<LossValue> {
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("lambda must be >= 0, got {lambda}")));
    }
    let weighted = tape.scale(selftrain.scalar, lambda);
    let total = tape.add(adv.scalar, weighted)?;
    Ok(LossValue::new(tape, total))
}
