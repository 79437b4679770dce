//! Adversarial differentiable architecture search for GANs.
//!
//! The crate is organised bottom-up: [`tensor`] is a small reverse-mode
//! engine, [`space`] describes the searchable cells, [`relax`] turns discrete
//! edge choices into Gumbel-softmax mixtures, [`supernet`] assembles the
//! mixed and derived networks, [`search`] runs the alternating four-way
//! update loop, [`derive`] extracts discrete architectures, [`eval`] scores
//! samples and [`train`] retrains a derived generator and
//! [`io`] holds the configuration and file formats.

pub mod data;
pub mod derive;
pub mod error;
pub mod eval;
pub mod io;
mod ops;
pub mod params;
pub mod relax;
pub mod search;
pub mod space;
pub mod supernet;
pub mod tensor;
pub mod train;

pub use data::{Dataset, Sampler};
pub use derive::{ArchSource, DerivedArch};
pub use eval::{EvalReport, FeatureConfig};
pub use io::{ArchCheckpoint, RunConfig, SpaceConfig, TensorArchive, WeightsMeta};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use relax::{ArchGroup, ArchParams, GumbelForm, MixStrategy, MixedOp, Relaxation};
pub use search::{LogRecord, Phase, SearchConfig, SearchState};
pub use space::{
    Activation, CandidateRole, CandidateSet, CellKind, CellTemplate, EdgeId, EdgeSpec, NetRole,
    NetworkTemplate, OpKind,
};
pub use supernet::{DerivedNet, Network, SuperNet};
pub use train::{EvalConfig, Opponent, TrainConfig, Trainer};
pub use tensor::{DType, Graph, InterpMode, PoolKind, Scalar, Tensor, Var};
