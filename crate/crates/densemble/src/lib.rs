//! Ensembles of spatially specialized embedding heads over a shared
//! densely connected backbone, for identity retrieval.
//!
//! One DenseNet-style feature extractor is trained once and read at many
//! points: each head taps the backbone at a different depth and spatial slice,
//! learns its own bottleneck embedding under its own classification loss, and
//! at retrieval time the per-head embeddings are concatenated (optionally
//! binarized) and ranked by Euclidean or Hamming distance. Because the heads
//! share almost all of the computation, the ensemble costs barely more than a
//! single network; [`flops`] quantifies that claim layer by layer.
//!
//! The crate is self-contained: exact-arithmetic tensors and autograd-free
//! hand-written backward passes ([`tensor`], [`ops`]), the backbone and
//! ensemble models ([`backbone`], [`ensemble`]), SGD training with standard
//! augmentation ([`train`], [`augment`]), the retrieval pipeline and on-disk
//! feature format ([`retrieval`]), a synthetic identity dataset ([`data`]),
//! INI experiment configs ([`config`]), finite-difference gradient
//! verification ([`gradcheck`]) and a command-line front end ([`cli`]).
//!
//! Start with the `examples/` directory; each example exercises one of the
//! capabilities above end to end at desk scale.

pub mod augment;
pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod ops;
pub mod retrieval;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
