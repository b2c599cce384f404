//! Synthetic multi-task benchmark: the response functions the search
//! optimizes, observation histories, and evaluation statistics.

mod history;
mod stats;
mod suite;

pub use history::{ObservationHistory, ObservationRecord, TaskId, TaskRegistry};
pub use stats::{mean_std, median, pearson, ridge_fit};
pub use suite::{
    raw_features, task_name, Oracle, SuiteDescriptor, TaskSuite, FEATURES, RAW_FEATURES,
};
