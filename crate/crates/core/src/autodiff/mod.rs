//! Dense tensors, a reverse-mode tape, Adam and a finite-difference checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig};
pub use gradcheck::{finite_difference_check, relative_error, SlotCheck};
pub use params::{GradBuffer, ParameterStore, Slot, SlotId};
pub use tape::{sigmoid, NodeId, Tape};
pub use tensor::Tensor;
