//! Few-shot classification over stacked backbone features.
//!
//! Pooled embeddings from one or more frozen backbones are read from FSF
//! files ([`store`]), concatenated and restacked into an `S x S x C` grid
//! ([`ensemble`]), and classified by a small CNN-MLP head trained from
//! scratch on each episode's support set ([`head`], [`episodic`]).

pub mod ensemble;
pub mod episodic;
pub mod error;
pub mod head;
pub mod real;
pub mod reporting;
pub mod store;
pub mod synth;

pub use ensemble::{flatten, reshape_stack, StackedTensor};
pub use error::{Error, ErrorKind, Result};
pub use head::{HeadConfig, HeadParams, TrainConfig};
pub use real::Real;
pub use store::{join, read_fsf, write_fsf, FeatureStore, JoinMode, JoinedDataset};
