//! Dense tensors with a reverse-mode tape, the Adam optimizer, the
//! classification loss, finite-difference gradient checking and the
//! parameter checkpoint format.

mod checkpoint;
mod gradcheck;
mod optim;
mod param;
mod scalar;
mod tape;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CheckpointEntry};
pub use gradcheck::{gradcheck, GradCheckReport};
pub use optim::{AdamConfig, AdamState};
pub use param::{ParamId, ParamStore, Parameter};
pub use scalar::{Precision, Real};
pub use tape::{Activation, Backward, Gradients, Mode, Tape, Var};
pub use tensor::{cross_entropy, Tensor};
