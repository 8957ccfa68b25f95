//! From-scratch reverse-mode automatic differentiation in f64, sized for
//! the small convolutional and graph networks this crate trains.

pub mod ops;
pub mod optim;
mod tensor;

pub use ops::RunningStats;
pub use optim::{grad_check_full, grad_check_sampled, Adam, PlateauScheduler};
pub use tensor::{grad_enabled, no_grad, Tensor};
