//! Ruler-based scale calibration, millimetre lesion geometry, and
//! metadata-driven population graphs classified with a spectral GCN.

pub mod checkpoint;
pub mod config;
pub mod cohortsynth;
pub mod error;
pub mod evalkit;
pub mod experiment;
pub mod gcn;
pub mod lesiongeom;
pub mod mask;
pub mod optim;
pub mod popgraph;
pub mod rulergen;
pub mod scalenet;
pub mod tpcf;

pub use error::{Error, Result};
pub use mask::BinaryMask;
pub use tpcf::TpcfSignature;
