//! Ablation grid over source/target knowledge sizes and the search
//! comparison between transfer, no-transfer and random arms.

mod ablation;
mod compare;

pub use ablation::{
    ablation_train_config, run_ablation, run_ablation_with, run_cell, summarize, AblationCell,
    AblationConfig, AblationPool, AblationResult, GridPoint,
};
pub use compare::{
    comparison_train_config, random_search, run_search_comparison, run_search_comparison_with, Arm,
    CompareConfig, CompareRow, CompareSummary,
};
