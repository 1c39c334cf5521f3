//! Quality measures for synthetic tables: pairwise NMI, classifier efficacy
//! and nearest-neighbor distances to the real rows.

mod classify;
mod efficacy;
mod metrics;
mod nmi;
mod nn;

pub use classify::{encode_features, label_column, Classifier, DecisionTree, Features, MlpClassifier};
pub use efficacy::{
    efficacy, efficacy_with, score_classifier, ClassifierFactory, ClassifierScore, ClassifierSpec, EfficacyReport,
    TrainedOn,
};
pub use metrics::{accuracy, f1_score, macro_f1, observed_labels};
pub use nmi::{
    bucket_id, discretize_quantile, nmi_codes, nmi_codes_with, nmi_distance, nmi_matrix, quantile_cuts, BucketSpec,
    NmiMatrix, NmiNorm, DEFAULT_BUCKETS,
};
pub use nn::{
    column_scales, histogram, nn_distance_hist, nn_distances, row_distance, HistBin, NnDistanceReport,
    DEFAULT_NN_BINS, DEGENERATE_PENALTY,
};
