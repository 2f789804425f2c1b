use sha2::{Digest, Sha256};

use super::Matrix;
use crate::error::{Error, Result};

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable matrix with its gradient accumulator and Adam moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub adam_m: Matrix,
    pub adam_v: Matrix,
    pub step_count: u64,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            adam_m: Matrix::zeros(r, c),
            adam_v: Matrix::zeros(r, c),
            step_count: 0,
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad.as_mut_slice().fill(0.0);
    }

    pub fn reset_optimizer(&mut self) {
        self.adam_m.as_mut_slice().fill(0.0);
        self.adam_v.as_mut_slice().fill(0.0);
        self.step_count = 0;
    }
}

/// Arena owning every parameter of a model. Networks refer to entries by
/// [`ParamId`]; the tape writes gradients back here on `backward`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, param: Parameter) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn clear_grads(&mut self, ids: &[ParamId]) {
        for &id in ids {
            self.params[id.0].clear_grad();
        }
    }

    pub fn clear_all_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::clear_grad);
    }

    /// Copies values from `src` into `dst` pairwise and resets the optimizer
    /// state of every destination parameter.
    pub fn copy_values(&mut self, src: &[ParamId], dst: &[ParamId]) -> Result<()> {
        if src.len() != dst.len() {
            return Err(Error::contract("parameter group sizes differ"));
        }
        for (&s, &d) in src.iter().zip(dst) {
            let value = self.params[s.0].value.clone();
            let target = &mut self.params[d.0];
            if target.value.shape() != value.shape() {
                return Err(Error::shape("copy_values", value.shape(), target.value.shape()));
            }
            target.value = value;
            target.clear_grad();
            target.reset_optimizer();
        }
        Ok(())
    }

    /// SHA-256 over the names, shapes and exact bit patterns of the values
    /// of `ids`, hex-encoded.
    pub fn value_hash(&self, ids: &[ParamId]) -> String {
        let mut h = Sha256::new();
        for &id in ids {
            let p = &self.params[id.0];
            h.update(p.name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.as_slice() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
