//! Gradient-alignment training for cross-platform abusive-language
//! classifiers: a small hashed-feature network with exact gradients,
//! cross-entropy and supervised contrastive losses, the ERM / Fish trainer
//! family, corpus handling and evaluation.

pub mod checkpoint;
pub mod data;
pub mod eval;
pub mod losses;
pub mod model;
pub mod trainers;
