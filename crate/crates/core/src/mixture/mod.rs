//! Mixture assembly: notation parsing, the joint model, model dropout and
//! parameter accounting.

mod count;
mod dropout;
mod model;
mod spec;

pub use count::{component_params, count_params, param_growth};
pub use dropout::{sample_batch, sample_dropout, DropoutMask};
pub use model::{BlockTrace, MixtureLayer, ModelState, Nmm, NmmConfig};
pub use spec::MixtureSpec;
