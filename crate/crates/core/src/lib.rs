//! Polymer property prediction from repeat-unit graphs.
//!
//! A repeat unit is written as restricted SMILES with two `*` anchors
//! ([`smiles`]), chained into polymer graphs ([`augment`], [`graph`]) and fed
//! to a max-aggregation message-passing model ([`model`], [`train`]) built on
//! a small reverse-mode autodiff tape ([`diffcore`]). [`theory`] holds
//! executable checks of the chain abstraction; [`eval`] covers metrics,
//! size sweeps and data ingestion.

use thiserror::Error;

pub mod augment;
pub mod diffcore;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod smiles;
pub mod theory;
pub mod train;

pub use augment::{build_training_set, chain_repeat, AugmentSpec, Sample, SplitSpec};
pub use graph::{featurize, PolymerGraph};
pub use model::{forward, ModelConfig, ModelParams, Pooling};
pub use smiles::{parse_repeat_unit, RepeatUnit};
pub use train::{train, TrainConfig};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Smiles(#[from] smiles::SmilesError),
    #[error(transparent)]
    Graph(#[from] graph::GraphError),
    #[error(transparent)]
    Augment(#[from] augment::AugmentError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Theory(#[from] theory::TheoryError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
