//! WiFi CSI fall-detection toolkit.
//!
//! The crate covers the full path from raw channel readings to cross-domain
//! evaluation:
//!
//! - [`ingest`]: binary CSI record streams (CSIR), amplitude/phase extraction,
//!   windowing onto a uniform 1 kHz grid, and block-mean downsampling into
//!   labeled samples (CSIW).
//! - [`synth`]: deterministic, domain-parameterized synthetic CSI generation so
//!   every training and evaluation path is testable without recorded data.
//! - [`autodiff`]: a small dense-tensor engine with reverse-mode
//!   differentiation, covering exactly the operations the classifiers and the
//!   adversarial inner loop need — including gradients with respect to inputs.
//! - [`models`]: CNN and LSTM fall classifiers with an explicit split between
//!   embedding parameters and the final classification layer.
//! - [`train`]: adversarial data augmentation — worst-case sample synthesis
//!   under a squared-distance transport penalty in embedding space, alternated
//!   with minimization over the growing dataset, swept over a radius grid to
//!   produce an ensemble.
//! - [`harness`]: leave-one-domain-out orchestration, metrics, model
//!   selection, reports, and persistence.
//!
//! Everything is deterministic given explicit seeds: RNG is ChaCha8 throughout,
//! and repeated runs produce byte-identical artifacts.

pub mod autodiff;
pub mod harness;
pub mod ingest;
pub mod models;
pub mod synth;
pub mod train;

pub use autodiff::{DiffError, Graph, NodeId, Tensor};
pub use ingest::{CsiRecord, IngestError, RawWindow, Sample};
