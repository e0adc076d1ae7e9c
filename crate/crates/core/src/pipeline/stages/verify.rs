use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CANDIDATES, METRICS, SEED_PATH, VERIFY_JSON};
use crate::error::{Error, Result};
use crate::guidance::{CandidateRecord, CandidateStatus};
use crate::imaging::load_png;
use crate::pipeline::{read_jsonl, stage, write_json, write_jsonl, Run};
use crate::util::{mean_sd, write_atomic};
use crate::verification::{
    flag_unrealistic, fooling_rate, lpips, mse, psnr_from_mse, ssim, summarize, write_metrics_csv, MetricRecord,
    UnrealisticFlag,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMeans {
    pub n: usize,
    pub ssim: Option<f64>,
    pub lpips: Option<f64>,
}

impl GroupMeans {
    fn of<'a>(records: impl Iterator<Item = &'a MetricRecord>) -> Self {
        let rs: Vec<&MetricRecord> = records.collect();
        let mean = |f: fn(&MetricRecord) -> f64| {
            (!rs.is_empty()).then(|| mean_sd(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).0)
        };
        Self {
            n: rs.len(),
            ssim: mean(|r| r.ssim),
            lpips: mean(|r| r.lpips),
        }
    }
}

/// Contents of `verify.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    pub evaluated: usize,
    pub flagged: usize,
    pub retained: usize,
    pub failing: usize,
    /// Over retained candidates.
    pub fooling_rate: f64,
    pub flags: Vec<UnrealisticFlag>,
    pub rfm: GroupMeans,
    pub non_rfm: GroupMeans,
}

/// Similarity metrics against the seed, outlier filtering and the fooling
/// rate over the retained candidates.
pub fn cmd_verify(run: &mut Run) -> Result<VerifyOutcome> {
    run.manifest.require(stage::GENERATE)?;
    let seed = load_png(&run.path(SEED_PATH))?;
    let mut candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
    let usable: Vec<&CandidateRecord> = candidates.iter().filter(|c| c.status.has_image()).collect();
    if usable.is_empty() {
        return Err(Error::EmptyRun);
    }
    let backends = &run.config.backends;
    let mut records = usable
        .par_iter()
        .map(|c| -> Result<MetricRecord> {
            let rel = c
                .image_path
                .as_deref()
                .ok_or(Error::Precondition(format!("{} has no image", c.image_id)))?;
            let img = load_png(&run.path(rel))?;
            let report = c
                .report
                .as_ref()
                .ok_or_else(|| Error::Precondition(format!("{} has no failure report", c.image_id)))?;
            let m = mse(&seed, &img)?;
            let mut perceptual = backends.perceptual();
            Ok(MetricRecord {
                image_id: c.image_id.clone(),
                prompt_id: c.prompt_id.clone(),
                confidence: report.confidence_of_object,
                ssim: ssim(&seed, &img)?,
                lpips: lpips(&seed, &img, perceptual.as_mut())?,
                mse: m,
                psnr: psnr_from_mse(m),
                failure_kind: report.kind,
                flagged: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let flags = flag_unrealistic(&records, &run.config.filter);
    for r in &mut records {
        r.flagged = flags.iter().any(|f| f.image_id == r.image_id);
    }
    let retained: Vec<MetricRecord> = records.iter().filter(|r| !r.flagged).cloned().collect();
    if retained.is_empty() {
        return Err(Error::EmptyRun);
    }
    let summary = summarize(&retained)?;

    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &records).map_err(|e| Error::parse(run.path(METRICS), e))?;
    write_atomic(&run.path(METRICS), &buf)?;
    let scale = run.config.report.mse_scale;
    write_atomic(&run.path("summary.csv"), summary.to_csv(scale).as_bytes())?;
    write_atomic(&run.path("summary.txt"), summary.to_text(scale).as_bytes())?;

    for c in &mut candidates {
        if let Some(r) = records.iter().find(|r| r.image_id == c.image_id) {
            c.metric_ref = Some(format!("{METRICS}#{}", r.image_id));
            c.status = if r.flagged {
                CandidateStatus::Filtered
            } else {
                CandidateStatus::Ok
            };
        }
    }
    write_jsonl(&run.path(CANDIDATES), &candidates)?;

    let outcome = VerifyOutcome {
        evaluated: records.len(),
        flagged: flags.len(),
        retained: retained.len(),
        failing: retained.iter().filter(|r| r.failure_kind.is_failure()).count(),
        fooling_rate: fooling_rate(&retained)?,
        flags,
        rfm: GroupMeans::of(retained.iter().filter(|r| r.failure_kind.is_failure())),
        non_rfm: GroupMeans::of(retained.iter().filter(|r| !r.failure_kind.is_failure())),
    };
    write_json(&run.path(VERIFY_JSON), &outcome)?;
    run.finish(
        stage::VERIFY,
        [METRICS, "summary.csv", "summary.txt", VERIFY_JSON, CANDIDATES]
            .map(String::from)
            .to_vec(),
    )?;
    Ok(outcome)
}
