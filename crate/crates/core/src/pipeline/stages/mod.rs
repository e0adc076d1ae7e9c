mod caption;
mod demo;
mod evaluate;
mod generate;
mod report;
mod verify;
mod video;

pub use caption::{cmd_caption, cmd_label_template, CaptionOutcome};
pub use demo::write_demo;
pub use evaluate::{cmd_evaluate_captions, EvaluateOutcome};
pub use generate::{cmd_generate, GenerateOutcome};
pub use report::cmd_report;
pub use verify::{cmd_verify, VerifyOutcome};
pub use video::{cmd_video_eval, cmd_video_gen, VideoOutcome};

pub(crate) const SEED_ID: &str = "seed";
pub(crate) const SEED_PATH: &str = "inputs/seed.png";
pub(crate) const OBJECT_MASK: &str = "masks/object.png";
pub(crate) const ENV_MASK: &str = "masks/environment.png";
pub(crate) const GROUND_TRUTH: &str = "ground_truth.json";
pub(crate) const CANDIDATES: &str = "candidates.jsonl";
pub(crate) const DETECTIONS: &str = "detections.jsonl";
pub(crate) const METRICS: &str = "metrics.csv";
pub(crate) const VERIFY_JSON: &str = "verify.json";
pub(crate) const CAPTIONS: &str = "captions.jsonl";
pub(crate) const CAPTION_ERRORS: &str = "caption_errors.json";
pub(crate) const LABELS_COPY: &str = "inputs/labels.csv";
