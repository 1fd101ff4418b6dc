//! Reward models: raw features, frozen representations, trained heads.

pub mod features;
mod model;
mod representation;
mod scorer;
mod train;

pub use features::{raw_features, standardized_features, FeatureScaler, RawFeatures, FEATURE_DIM, FEATURE_NAMES};
pub use model::{
    rm_score, score_matrix, score_matrix_from_features, RepresentationCache, RewardModel, RmKind, TrainMeta,
};
pub use representation::{RepDims, Representation};
pub use scorer::{z_from_scores, z_normalize, GoldReward, RandomScorer, Scorer, Transformed, MIN_REFERENCE};
pub use train::{
    bt_loss, bt_terms_from_scores, pointwise_loss, rm_accuracy, train_grid, train_rm, Labeled, RmGrid, TrainConfig,
    TrainingSet,
};
