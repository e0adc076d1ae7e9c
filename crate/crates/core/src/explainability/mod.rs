//! Grad-CAM heatmaps, thermal overlays, and captions from an image-to-text
//! model that sees only the overlay and fixed prompts.

mod caption;
pub(crate) mod colormap;
mod gradcam;
pub mod prompts;
mod thermal;

pub use caption::{
    encode_png, generate_caption, read_captions_jsonl, write_captions_jsonl, CaptionRecord, CaptionRequest,
    FixtureCaptioner, Image2TextBackend, RetryPolicy,
};
pub use gradcam::{grad_cam, select_cam_target, ActivationHeatmap, CamTarget};
pub use thermal::{render_thermal, ThermalImage, DEFAULT_OPACITY};
