//! Acuity assessment of ICU patients from wrist accelerometry and EHR data.
//!
//! The pipeline runs from raw cohort files to holdout reports:
//! [`synth`] or [`datamodel`] supply a cohort, [`phenotype`] labels
//! assessment windows, [`signal`] and [`ehr`] turn streams into scaled
//! inputs, [`dataset`] splits them by patient, [`models`] (built on
//! [`autodiff`]) scores them, and [`eval`] and [`hpo`] run the training and
//! evaluation protocol. [`cli`] wires the stages to a run directory.

pub mod autodiff;
pub mod cli;
pub mod datamodel;
pub mod dataset;
pub mod ehr;
pub mod eval;
pub mod hpo;
pub mod models;
pub mod phenotype;
pub mod seed;
pub mod signal;
pub mod synth;
