//! Multimodal survival modeling: cohort assembly, stratified folds, feature
//! transforms, penalized Cox regression, censoring-aware metrics, late
//! fusion experiments and a report summarization client.

pub mod cohort;
pub mod coxph;
pub mod error;
pub mod pipeline;
pub mod splits;
pub mod summarizer;
pub mod survmetrics;
pub mod synth;
pub mod xform;

pub use cohort::{
    load_cohort, CohortDataset, ModalityKind, ModalityMatrix, PatientRecord, Project,
    SurvivalOutcome,
};
pub use coxph::{cox_fit, CoxModel, FitConfig};
pub use error::{Error, Result};
pub use pipeline::{run_experiment, ExperimentConfig, ExperimentOutput, PcaDim, ResultTable};
pub use splits::{stratified_kfold, SplitPlan};
pub use survmetrics::{concordance_index, StepFunction};
