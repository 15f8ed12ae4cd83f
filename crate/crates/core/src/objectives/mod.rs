//! Pre-training losses, masking, sampling and hard-negative mining.

mod losses;
mod masking;
mod plan;
mod sampling;

pub use losses::{
    combine, iac_loss, iac_score, itc_loss, masked_token_loss, match_loss, smooth_targets, smoothing_floor,
    total_loss, LossReport, Mode, DEFAULT_BETA, IAM_SMOOTHING,
};
pub use masking::{mask_tokens, mask_tokens_with, MaskRecord, Masked, MASK_PROB, MASK_TOKEN_PROB, RANDOM_TOKEN_PROB};
pub use plan::{forward_losses, BatchPlan, Objective, Sample, StepLosses};
pub use sampling::{
    matched_pairs, mine_hard_negatives, sample_iam_pairs, HardNegatives, IamPair, IamSample, MatchedPair,
    IAM_PER_IMAGE,
};
