pub mod autodiff;
pub mod domain;
pub mod pipeline;
pub mod qd;
pub mod repair;
pub mod report;
pub mod sim;
pub mod surrogate;

pub use domain::{Domain, DomainError, Evaluation};
