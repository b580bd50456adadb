//! Image reconstruction from undersampled k-space.

mod admm;
mod learned;
mod lps;

pub use admm::{
    admm_reconstruct, admm_step, tune_reg_weight, zero_filled, ADMMState, ReconConfig, ReconMode,
};
pub use learned::{
    learned_admm_reconstruct, train_learned_admm, ConvPair, IterationOperators, LearnedAdmmModel,
    LearnedTrainSample,
};
pub use lps::{ls_reconstruct, LplusSConfig, LpsResult};
