//! Fast multi-instance multi-label learning.
//!
//! Instances are mapped into a low-dimensional space shared by all labels;
//! each label owns several linear sub-concept heads in that space. A bag
//! scores a label by its best (instance, sub-concept) pair, the arg-max
//! instance being the key instance. Training runs stochastic gradient
//! descent on sampled (bag, relevant label, violated label) triplets,
//! weighting each step by a harmonic estimate of the relevant label's rank.
//! A dummy label trained to sit between relevant and irrelevant labels
//! provides the per-bag decision threshold.

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod objective;
pub mod persist;
pub mod scoring;
pub mod training;
pub mod types;

pub use error::{MimlError, Result};
pub use evaluation::EvalReport;
pub use scoring::{bag_score, predict_relevant, rank_labels, BagScore};
pub use training::{train, TrainState};
pub use types::{Bag, Dataset, LabelSpace, Model, TrainConfig, Triplet, Variant};
