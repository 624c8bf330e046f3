//! Two-stage swap reward (TSSR) for SMILES generation.
//!
//! The crate covers the whole pipeline: tokenization and vocabulary priors,
//! SMILES parsing and canonicalization, chemistry diagnostics, the two-stage
//! repair reward, a GRU actor-critic with hand-written backpropagation,
//! maximum-likelihood pretraining, PPO training and evaluation metrics.

pub mod checkpoint;
pub mod chemcheck;
pub mod config;
pub mod element;
pub mod metrics;
pub mod molparse;
pub mod optim;
pub mod policy;
pub mod pretrain;
pub mod trainer;
pub mod tssr;
pub mod vocab;
