//! Net-load scenario engine: a conditional GAN whose generator loss
//! internalizes a DC optimal power flow, plus the dispatch, reserve and
//! evaluation machinery around it.
//!
//! Module map:
//! - [`grid`]: transmission-network data model and loader
//! - [`qpsolver`]: dense convex QP solver with exact dual recovery
//! - [`opf`]: hour-decoupled dispatch and reserve-allocation problems
//! - [`dataprep`]: day-level normalization, labels, splits, CSV ingestion
//! - [`neuralnet`]: dense/conv layers, reverse-mode gradients, SGD
//! - [`oacgan`]: the operation-adversarial trainer and generator
//! - [`evalharness`]: cost and security-level scoring of error sources

pub mod dataprep;
pub mod evalharness;
pub mod grid;
pub mod linalg;
pub mod neuralnet;
pub mod oacgan;
pub mod opf;
pub mod qpsolver;
