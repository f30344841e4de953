//! Oscillometric blood-pressure bias analysis.
//!
//! The crate ingests continuous arterial pressure waveforms, splits them into
//! quality-controlled 60 s segments, simulates cuff-deflation readings on
//! each segment, fits a Gaussian measurement-noise model to the simulated
//! errors and corrects single or repeated readings with least-squares or
//! maximum-likelihood estimators.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod config;
pub mod estimation;
pub mod evaluation;
pub mod interp;
pub mod oscillometry;
pub mod pipeline;
pub mod quality_control;
pub mod report;
pub mod respiration;
pub mod stats;
pub mod svg;
pub mod synthetic;
pub mod waveform_io;

pub use estimation::{derive_pp_map, ls_estimate, ml_estimate, MeasurementSet, NoiseModel};
pub use quality_control::{BpReading, Segment};
pub use waveform_io::WaveformRecord;
