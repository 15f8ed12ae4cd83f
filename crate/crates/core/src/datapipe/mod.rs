//! Manifests, dataset filters, external-service clients and input preparation.

mod clients;
mod filters;
mod manifest;
mod pipeline;
mod prepare;
mod recrop;
pub mod synthetic;

pub use clients::{
    with_retries, CaptionClient, ClientConfig, EchoCaptionClient, HttpCaptionClient, HttpPoseClient, Person,
    PoseClient, StubPoseClient, CAPTION_URL_ENV, POSE_URL_ENV,
};
pub use filters::{
    filter_filesize, filter_grayscale, grayscale_statistic, DropReason, GRAYSCALE_THRESHOLD, MIN_FILE_BYTES,
};
pub use manifest::{Manifest, ManifestRecord};
pub use pipeline::{filter_manifest, write_filtered, FilterConfig, FilterResult, Kept, PipelineReport, Services};
pub use prepare::{
    hflip, image_to_tensor, load_rgb, prepare_input, FLIP_PROB, INPUT_HEIGHT, INPUT_WIDTH, NORM_MEAN, NORM_STD,
};
pub use recrop::{keypoint_box, recrop, Recrop, DEFAULT_MARGIN, MIN_CONFIDENCE};
