use std::path::Path;

use serde::{Deserialize, Serialize};

use super::caption::explained_images;
use super::{CANDIDATES, GROUND_TRUTH, SEED_ID, SEED_PATH};
use crate::detection::GroundTruth;
use crate::error::{Error, Result};
use crate::guidance::CandidateRecord;
use crate::imaging::load_png;
use crate::pipeline::{read_json, read_jsonl, stage, write_json, Run};
use crate::video::{evaluate_video, generate_video, VideoClip, VideoEvaluation};

/// Contents of `video/<clip>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoOutcome {
    pub clip: String,
    pub frames: usize,
    pub fps: f64,
    pub evaluation: VideoEvaluation,
}

fn clip_name(dir: &Path) -> Result<String> {
    dir.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Precondition(format!("{} has no usable name", dir.display())))
}

/// Scores every frame of a clip against the run's ground truth.
pub fn cmd_video_eval(run: &mut Run, clip_dir: &Path) -> Result<VideoOutcome> {
    run.manifest.require(stage::GENERATE)?;
    let gt: GroundTruth = read_json(&run.path(GROUND_TRUTH))?;
    let clip = VideoClip::load_dir(clip_dir)?;
    let name = clip_name(clip_dir)?;
    let mut detector = run.config.backends.detector();
    let evaluation = evaluate_video(&clip, &gt, detector.as_mut(), &run.config.detection)?;
    let outcome = VideoOutcome {
        clip: name.clone(),
        frames: clip.frames().len(),
        fps: clip.fps(),
        evaluation,
    };
    let rel = format!("video/{name}.json");
    write_json(&run.path(&rel), &outcome)?;
    let mut outputs = run
        .manifest
        .stages
        .get(stage::VIDEO)
        .map(|s| s.outputs.clone())
        .unwrap_or_default();
    if !outputs.contains(&rel) {
        outputs.push(rel);
    }
    run.finish(stage::VIDEO, outputs)?;
    Ok(outcome)
}

/// Animates one run image with the configured video backend and writes the
/// clip as numbered frames.
pub fn cmd_video_gen(run: &Run, image_id: &str, out_dir: &Path) -> Result<usize> {
    run.manifest.require(stage::GENERATE)?;
    let rel = if image_id == SEED_ID {
        SEED_PATH.to_string()
    } else {
        let candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
        candidates
            .into_iter()
            .find(|c| c.image_id == image_id)
            .and_then(|c| c.image_path)
            .or_else(|| {
                explained_images(run)
                    .ok()?
                    .into_iter()
                    .find(|(id, _)| id == image_id)
                    .map(|(_, p)| p)
            })
            .ok_or_else(|| Error::JoinFailure(format!("no image `{image_id}` in run")))?
    };
    let anchor = load_png(&run.path(&rel))?.with_source_id(image_id);
    let mut backend = run.config.backends.video();
    let clip = generate_video(&anchor, backend.as_mut())?;
    clip.save_dir(out_dir)?;
    Ok(clip.frames().len())
}
