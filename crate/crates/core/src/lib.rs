//! Reconstruction of the nine missing leads of a standard 12-lead ECG
//! (III, aVR, aVL, aVF, V1, V3–V6) from leads I, II and V2.

pub mod error;
pub mod ingest;
pub mod leads;
pub mod metrics;
pub mod models;
pub mod preprocess;
pub mod report;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
