use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::{CANDIDATES, CAPTIONS, CAPTION_ERRORS, DETECTIONS, GROUND_TRUTH, SEED_ID, SEED_PATH};
use crate::detection::{DetectionResult, GroundTruth};
use crate::error::{Error, Result};
use crate::evaluation::LabelRow;
use crate::explainability::{
    generate_caption, grad_cam, read_captions_jsonl, render_thermal, select_cam_target, CaptionRecord,
    Image2TextBackend, ThermalImage,
};
use crate::guidance::{CandidateRecord, CandidateStatus};
use crate::imaging::{load_png, save_png};
use crate::pipeline::{read_json, read_jsonl, stage, write_json, write_jsonl, Run};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionOutcome {
    pub captioned: usize,
    /// Image id and error message for every image left without a caption.
    pub failed: Vec<(String, String)>,
}

/// Images that get explained: the seed and every retained candidate.
pub(crate) fn explained_images(run: &Run) -> Result<Vec<(String, String)>> {
    let candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
    let mut out = vec![(SEED_ID.to_string(), SEED_PATH.to_string())];
    out.extend(
        candidates
            .into_iter()
            .filter(|c| c.status == CandidateStatus::Ok)
            .filter_map(|c| Some((c.image_id, c.image_path?))),
    );
    Ok(out)
}

fn thermal_for(run: &Run, id: &str, rel: &str, det: &DetectionResult, gt: &GroundTruth) -> Result<ThermalImage> {
    let img = load_png(&run.path(rel))?.with_source_id(id);
    let mut detector = run.config.backends.detector();
    let object = gt
        .objects
        .first()
        .ok_or(Error::Precondition("ground truth is empty".into()))?;
    let target = select_cam_target(
        det,
        object,
        run.config.detection.iou_threshold,
        detector.cam_layer().is_some(),
    );
    let heat = grad_cam(&img, &target, detector.as_mut())?;
    let mut thermal = render_thermal(&img, &heat, run.config.caption.opacity)?;
    thermal.heatmap_ref = format!("thermal/{id}.png");
    Ok(thermal)
}

/// Grad-CAM overlays for the seed and retained candidates, then one caption
/// per overlay. Images whose caption fails after retries are listed in
/// `caption_errors.json` and skipped.
pub fn cmd_caption(run: &mut Run, backend: &dyn Image2TextBackend) -> Result<CaptionOutcome> {
    run.manifest.require(stage::GENERATE)?;
    let gt: GroundTruth = read_json(&run.path(GROUND_TRUTH))?;
    let detections: BTreeMap<String, DetectionResult> = read_jsonl::<DetectionResult>(&run.path(DETECTIONS))?
        .into_iter()
        .map(|d| (d.image_id.clone(), d))
        .collect();
    let images = explained_images(run)?;

    let mut thermals = Vec::with_capacity(images.len());
    for (id, rel) in &images {
        let det = detections
            .get(id)
            .ok_or_else(|| Error::JoinFailure(format!("no detections for `{id}`")))?;
        let t = thermal_for(run, id, rel, det, &gt)?;
        save_png(&t.image, &run.path(&t.heatmap_ref))?;
        thermals.push(t);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.config.caption.parallelism)
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let policy = run.config.caption.retry;
    let results: Vec<Result<CaptionRecord>> = pool.install(|| {
        thermals
            .par_iter()
            .map(|t| generate_caption(t, backend, &policy))
            .collect()
    });

    let mut records = Vec::new();
    let mut failed = Vec::new();
    for (r, t) in results.into_iter().zip(&thermals) {
        match r {
            Ok(rec) => records.push(rec),
            Err(e @ Error::CaptionUnavailable { .. }) => {
                log::warn!("{e}");
                failed.push((t.base_image_id.clone(), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    write_jsonl(&run.path(CAPTIONS), &records)?;
    let errors_path = run.path(CAPTION_ERRORS);
    if failed.is_empty() {
        if errors_path.exists() {
            std::fs::remove_file(&errors_path).map_err(|e| Error::io(&errors_path, e))?;
        }
    } else {
        let map: BTreeMap<&str, &str> = failed.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        write_json(&errors_path, &map)?;
    }

    let mut candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
    for c in &mut candidates {
        c.caption_ref = records
            .iter()
            .any(|r| r.image_id == c.image_id)
            .then(|| format!("{CAPTIONS}#{}", c.image_id));
    }
    write_jsonl(&run.path(CANDIDATES), &candidates)?;

    let mut outputs: Vec<String> = thermals.iter().map(|t| t.heatmap_ref.clone()).collect();
    outputs.extend([CAPTIONS.to_string(), CANDIDATES.to_string()]);
    if !failed.is_empty() {
        outputs.push(CAPTION_ERRORS.to_string());
    }
    run.finish(stage::CAPTION, outputs)?;
    Ok(CaptionOutcome {
        captioned: records.len(),
        failed,
    })
}

pub(crate) fn read_captions(run: &Run) -> Result<Vec<CaptionRecord>> {
    let path = run.path(CAPTIONS);
    let f = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    read_captions_jsonl(std::io::BufReader::new(f)).map_err(|e| Error::parse(&path, e))
}

/// Blank labeling sheet with one row per captioned image.
pub fn cmd_label_template(run: &Run, out: &Path) -> Result<usize> {
    run.manifest.require(stage::CAPTION)?;
    let captions = read_captions(run)?;
    let mut wr = csv::Writer::from_writer(Vec::new());
    for c in &captions {
        wr.serialize(LabelRow {
            image_id: c.image_id.clone(),
            claims_missed: false,
            claims_fp: false,
            claims_miscl: false,
            accurate_description: false,
            coherent_evidence: false,
            regions: String::new(),
        })
        .map_err(|e| Error::parse(out, e))?;
    }
    let bytes = wr.into_inner().map_err(|e| Error::parse(out, e))?;
    write_atomic(out, &bytes)?;
    Ok(captions.len())
}
