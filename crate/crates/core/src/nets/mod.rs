//! Feed-forward networks with exact backpropagation and binary checkpoints.

mod backprop;
pub mod checkpoint;
mod params;
mod spec;

pub use backprop::{backward, forward, forward_traced, input_gradient, ForwardTrace};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use params::{LayerParams, NetworkParams, ParamSet};
pub use spec::{LayerSpec, NetworkSpec, Role};
