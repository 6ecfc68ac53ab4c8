//! Reverse-mode differentiation over the primitive ops the controllers and
//! losses are built from.
//!
//! The primitive set is deliberately small: affine map, tanh, exp,
//! elementwise add/multiply, concatenation, slice, squared error, mean over
//! a batch of scalars, diagonal-Gaussian log-density, and clip (zero
//! gradient outside the bounds). A forward pass is recorded eagerly on a
//! [`tape::Tape`]; [`tape::Tape::backward`] replays it in reverse and
//! returns a [`GradStore`] aligned with the [`ParamStore`] it was built
//! against. All arithmetic is f64.

mod checkpoint;
mod fd;
mod store;
mod tape;

pub use checkpoint::{read_params, read_params_file, write_params, write_params_file, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use fd::{fd_check, fd_check_probed};
pub use store::{GradStore, ParamEntry, ParamStore, Shape};
pub use tape::{Tape, ValueId};
