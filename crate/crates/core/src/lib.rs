//! Embedding-based multi-object instance tracking on a cell grid.
//!
//! The crate trains small per-cell embedding heads with a contrastive
//! objective (pull cells of one instance together, push instances apart,
//! spread non-matching instances via an entropy term), aligns frames with a
//! cycle-consistent correspondence loss that needs no track labels, and runs
//! an online tracker that matches per-frame instance embeddings against a
//! memory bank of track prototypes. Evaluation (spatio-temporal IoU, video
//! AP, MOTA) and a synthetic benchmark generator round out the pipeline so
//! the whole loop — generate, train, track, evaluate — is reproducible from
//! a seed.
//!
//! Modules:
//! - [`grid`]: instance masks, grid cell assignment, IoU primitives.
//! - [`losses`]: loss kernels with analytic gradients.
//! - [`correspond`]: frame sampling, affinity chains, cycle-consistency loss.
//! - [`model`]: embedding heads, Adam, training loops, test-time refinement.
//! - [`tracker`]: the online memory-bank tracker and a spatial baseline.
//! - [`metrics`]: video AP, MOTA, and supporting matchers.
//! - [`synth`]: synthetic benchmark sequences with controllable difficulty.
//! - [`formats`]: versioned JSON/binary readers and writers.
//! - [`gradcheck`]: central-difference gradient verification used by tests.

pub mod correspond;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod grid;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
