//! Dense matrices, reverse-mode differentiation and the Adam update.

mod adam;
mod gradcheck;
mod matrix;
mod param;
mod tape;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{grad_check, GradCheckReport};
pub use matrix::Matrix;
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var, PROB_EPS};
