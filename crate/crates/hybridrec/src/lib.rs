// Index-based loops mirror the matrix/tensor math throughout the numeric
// core and are clearer there than iterator chains.
#![allow(clippy::needless_range_loop)]

//! Self-contained hybrid recommender engine: implicit-feedback interaction
//! scoring, ALS collaborative filtering, a four-branch deep network fusing
//! ALS latent factors with content/context/sequence signals, cold-start
//! fallback, and budgeted recommendation-coverage optimization.

pub mod als;
pub mod coverage;
pub mod dataset;
pub mod embeddings;
pub mod hybridnet;
pub mod metrics;
pub mod tensorcore;
pub mod cli;
