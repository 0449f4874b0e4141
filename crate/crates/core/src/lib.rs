//! Multi-teacher adversarial robustness distillation.
//!
//! A student network is trained on clean inputs against a clean teacher and
//! on PGD inputs against a robust teacher. Two controllers balance the
//! teachers: an entropy-based rule that moves the teachers' softmax
//! temperatures until their prediction entropies agree, and a relative-loss
//! rule that reweights the two distillation terms so the student learns from
//! both at the same relative pace. Models are scored by weighted robust
//! accuracy, the mean of clean and adversarial accuracy.
//!
//! Everything is desk scale: small dense or convolutional networks, synthetic
//! two-moons/blob data or IDX/CIFAR binaries, double precision throughout.

pub mod attacks;
pub mod data;
pub mod distill;
pub mod entropy_balance;
pub mod error;
pub mod eval;
pub mod loss_balance;
pub mod nets;
pub mod numeric;
pub mod par;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{ProbVector, Tensor};
