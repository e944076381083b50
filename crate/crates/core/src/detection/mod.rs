//! Anchor-based six-keypoint vertebra detection: anchors, target assignment,
//! keypoint encoding, the Genant-weighted loss and detection decoding.

mod anchors;
mod decode;
mod encoding;
mod loss;
mod raster;
mod targets;

pub use anchors::{AnchorConfig, AnchorGrid};
pub use decode::{detect, nms, Detection};
pub use encoding::{decode_keypoints, encode_keypoints, EncodedKeypoints, ENCODED_LEN};
pub use loss::{detection_loss, detection_loss_grad, LossBreakdown, LossGradient, Predictions};
pub use raster::{objectness_from_volume, objectness_to_volume, regression_from_volume, regression_to_volume};
pub use targets::{assign_targets, DetectionTargets, GroundTruth, PositiveAnchor};
