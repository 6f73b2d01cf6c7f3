//! Review tooling: rubric records, reviewer assignment, "Yes" frequencies
//! and inter-rater agreement.

mod assign;
mod kappa;
mod rubric;

pub use assign::{assign_reviews, AssignError};
pub use kappa::{cohen_kappa, lights_kappa, AgreementBand, KappaError, LightsKappa, PairKappa};
pub use rubric::{
    frequency_table, percent, read_records, Category, FrequencyRow, ReliabilityReport,
    ResponseType, RubricError, RubricRecord,
};
