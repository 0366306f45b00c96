//! Dense linear algebra, a single-layer LSTM with exact BPTT, losses, Adam and
//! checkpoint serialization.

mod adam;
pub mod checkpoint;
mod loss;
mod lstm;
mod matrix;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use loss::{loss_and_gradients, loss_and_output_grad, Loss};
pub use lstm::{ForwardPass, HeadKind, LstmState, SequenceModelParams};
pub use matrix::Matrix2D;
