//! Caption evidence scoring against human labels, and the tally of image
//! regions where detector attention was disrupted.

mod labels;
mod regions;
mod scoring;

pub use labels::{join_labels, read_label_rows, ImageOutcome, LabelRow};
pub use regions::{tally_attention_regions, AttentionRegion, AttentionRegionLabel, RegionTable, BUCKETS};
pub use scoring::{
    aggregate_scores, score_caption, CaptionEvalRecord, EvidenceLabel, Group, GroupRow, Judgement, MeanSd, ScoreTable,
};
