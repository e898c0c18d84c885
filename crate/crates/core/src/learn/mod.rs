//! Learned call timing: features, soft labels, regressors, scoring and
//! selection.

pub mod data;
pub mod features;
pub mod labels;
pub mod linear;
pub mod mlp;
pub mod model;
pub mod select;
pub mod train;

pub use data::{
    dataset_csv, generate_runs_for, generate_training_runs, scenario_descriptors, search_scenario, split_scenarios, RunSummary,
    ScenarioDescriptor, ScenarioRun, Split,
};
pub use features::{extract_features, runtime_features, FeatureVector, SparseRow, Trace, FEATURE_LEN, WINDOW};
pub use labels::{build_labels, curve_value, Curve, SoftLabelParams};
pub use model::{
    load_corridor, load_model, save_corridor, save_model, CorridorPolicy, Normalization, Predictor, Regressor, Scratch,
    TrainedModel, TrainingMetadata,
};
pub use select::{confusion_durations, model_score, select_model, Candidate, Durations, Score, ValidationCase};
pub use train::{label_sets, train_regressor, Dataset, Episode, LabelSet, RegressorKind, TrainConfig};

#[cfg(test)]
mod tests;
