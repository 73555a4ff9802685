//! Thin-plate splines, landmark augmentation, similarity fitting and RANSAC.

pub mod augment;
pub mod ransac;
pub mod similarity;
pub mod tps;

pub use augment::{augment_landmarks, augment_with_plan, AugmentConfig, AugmentPlan, Augmentation, GroupOp};
pub use ransac::{ransac_similarity, RansacConfig, RansacResult};
pub use similarity::{fit_similarity, SimilarityTransform};
pub use tps::{tps_warp_image, TpsField};
