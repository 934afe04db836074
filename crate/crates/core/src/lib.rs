pub mod analytics;
pub mod autograd;
pub mod baselines;
pub mod cross_domain;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod rng;
pub mod source_model;
pub mod synthdata;
pub mod tahin;
pub mod tensor;
pub mod train_eval;
pub mod tsv;
pub mod verify;

pub use error::{Error, Result};
