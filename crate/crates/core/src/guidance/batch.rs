use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_rfm_candidate, DiffusionBackend, GuidanceConfig, GuidanceProblem, GuidanceTrace};
use crate::detection::{DetectionConfig, DetectionResult, DetectorBackend, FailureReport, GroundTruth};
use crate::error::{Error, Result};
use crate::imaging::{save_png, BinaryMask, RasterImage};

/// Builds fresh backend instances; every candidate gets its own pair.
pub trait BackendFactory: Sync {
    fn diffusion(&self) -> Result<Box<dyn DiffusionBackend>>;
    fn detector(&self) -> Result<Box<dyn DetectorBackend>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateStatus {
    Ok,
    BackendError,
    Filtered,
}

impl CandidateStatus {
    /// Produced an image (possibly later filtered as unrealistic).
    pub fn has_image(self) -> bool {
        matches!(self, CandidateStatus::Ok | CandidateStatus::Filtered)
    }
}

/// One generated (or failed) candidate. Paths are relative to the run dir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub image_id: String,
    pub prompt_id: String,
    pub prompt: String,
    pub rng_seed: u64,
    pub status: CandidateStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub image_path: Option<String>,
    pub trace_path: Option<String>,
    pub final_loss: Option<f64>,
    pub report: Option<FailureReport>,
    #[serde(default)]
    pub metric_ref: Option<String>,
    #[serde(default)]
    pub caption_ref: Option<String>,
}

pub struct BatchRequest<'a> {
    pub seed: &'a RasterImage,
    pub object_mask: &'a BinaryMask,
    pub gt: &'a GroundTruth,
    pub detection: &'a DetectionConfig,
    pub prompts: &'a [String],
    pub seeds: &'a [u64],
    /// Template config; prompt and rng seed are set per candidate.
    pub guidance: &'a GuidanceConfig,
    pub workers: usize,
    pub out_dir: &'a Path,
}

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub records: Vec<CandidateRecord>,
    pub detections: Vec<DetectionResult>,
}

/// Generates one candidate per (prompt, seed) pair. A failing candidate is
/// recorded with `backend_error` status and the batch carries on.
pub fn run_generation_batch(req: &BatchRequest<'_>, factory: &dyn BackendFactory) -> Result<BatchOutcome> {
    if req.prompts.is_empty() {
        return Err(Error::EmptyInput("prompt list"));
    }
    if req.seeds.is_empty() {
        return Err(Error::EmptyInput("rng seed list"));
    }
    req.guidance.validate()?;
    for dir in ["candidates", "traces"] {
        let p = req.out_dir.join(dir);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }

    let jobs: Vec<(usize, &String, u64)> = req
        .prompts
        .iter()
        .enumerate()
        .flat_map(|(i, p)| req.seeds.iter().map(move |&s| (i, p, s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(req.workers.max(1))
        .build()
        .map_err(|e| Error::Precondition(format!("thread pool: {e}")))?;
    let results: Vec<(CandidateRecord, Option<DetectionResult>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, prompt, seed)| run_one(req, factory, i, prompt, seed))
            .collect()
    });

    let mut records = Vec::with_capacity(results.len());
    let mut detections = Vec::new();
    for (rec, det) in results {
        records.push(rec);
        detections.extend(det);
    }
    Ok(BatchOutcome { records, detections })
}

fn run_one(
    req: &BatchRequest<'_>,
    factory: &dyn BackendFactory,
    prompt_idx: usize,
    prompt: &str,
    seed: u64,
) -> (CandidateRecord, Option<DetectionResult>) {
    let prompt_id = format!("p{prompt_idx:03}");
    let image_id = format!("{prompt_id}-s{seed}");
    let mut rec = CandidateRecord {
        image_id: image_id.clone(),
        prompt_id,
        prompt: prompt.to_string(),
        rng_seed: seed,
        status: CandidateStatus::Ok,
        error: None,
        image_path: None,
        trace_path: None,
        final_loss: None,
        report: None,
        metric_ref: None,
        caption_ref: None,
    };
    let cfg = GuidanceConfig {
        positive_prompt: prompt.to_string(),
        rng_seed: seed,
        ..req.guidance.clone()
    };
    let trace_rel = format!("traces/{image_id}.csv");
    let outcome = (|| -> Result<_> {
        let mut diff = factory.diffusion()?;
        let mut det = factory.detector()?;
        let problem = GuidanceProblem {
            seed: req.seed,
            object_mask: req.object_mask,
            gt: req.gt,
            detection: req.detection,
        };
        let cand = generate_rfm_candidate(&problem, &cfg, diff.as_mut(), det.as_mut())?;
        let image = cand.image.clone().with_source_id(&image_id);
        let image_rel = format!("candidates/{image_id}.png");
        save_png(&image, &req.out_dir.join(&image_rel))?;
        Ok((cand, image_rel))
    })();

    match outcome {
        Ok((cand, image_rel)) => {
            rec.image_path = Some(image_rel);
            rec.final_loss = cand.trace.final_loss.map(|l| l.total);
            rec.report = Some(cand.report);
            rec.trace_path = write_trace(req.out_dir, &trace_rel, &cand.trace).then_some(trace_rel);
            let mut dets = cand.detections;
            dets.image_id = image_id;
            (rec, Some(dets))
        }
        Err(e) => {
            log::warn!("candidate {image_id} failed: {e}");
            if let Error::GuidanceAborted { trace, .. } = &e {
                rec.trace_path = write_trace(req.out_dir, &trace_rel, trace).then_some(trace_rel);
            }
            rec.status = CandidateStatus::BackendError;
            rec.error = Some(e.to_string());
            (rec, None)
        }
    }
}

fn write_trace(out_dir: &Path, rel: &str, trace: &GuidanceTrace) -> bool {
    let mut buf = Vec::new();
    if trace.write_csv(&mut buf).is_err() {
        return false;
    }
    crate::util::write_atomic(&out_dir.join(rel), &buf).is_ok()
}
