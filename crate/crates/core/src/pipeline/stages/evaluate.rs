use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::caption::read_captions;
use super::{CANDIDATES, DETECTIONS, GROUND_TRUTH, LABELS_COPY, SEED_ID};
use crate::detection::{classify_failure, DetectionResult, GroundTruth};
use crate::error::{Error, Result};
use crate::evaluation::{
    aggregate_scores, join_labels, read_label_rows, score_caption, tally_attention_regions, CaptionEvalRecord,
    ImageOutcome, RegionTable, ScoreTable,
};
use crate::guidance::CandidateRecord;
use crate::pipeline::{read_json, read_jsonl, stage, Run};
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateOutcome {
    pub records: Vec<CaptionEvalRecord>,
    pub scores: ScoreTable,
    pub regions: RegionTable,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub(crate) fn scores_csv(records: &[CaptionEvalRecord]) -> String {
    let mut out = String::from(
        "image_id,generated,missed,hallucination,misclassification,tp,tn,fp,fn,accuracy,recall,precision,f1,describes_image_accurately,evidence_coherent\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.image_id,
            r.generated,
            r.present[0],
            r.present[1],
            r.present[2],
            r.tp,
            r.tn,
            r.fp,
            r.fn_,
            r.accuracy,
            opt(r.recall),
            opt(r.precision),
            opt(r.f1),
            r.describes_image_accurately,
            r.evidence_coherent
        )
        .unwrap();
    }
    out
}

/// Detector outcome for every captioned image.
fn outcomes(run: &Run) -> Result<BTreeMap<String, ImageOutcome>> {
    let gt: GroundTruth = read_json(&run.path(GROUND_TRUTH))?;
    let mut out = BTreeMap::new();
    let detections: Vec<DetectionResult> = read_jsonl(&run.path(DETECTIONS))?;
    if let Some(seed) = detections.iter().find(|d| d.image_id == SEED_ID) {
        out.insert(
            SEED_ID.to_string(),
            ImageOutcome {
                generated: false,
                report: classify_failure(seed, &gt, &run.config.detection),
            },
        );
    }
    let candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
    for c in candidates {
        if let Some(report) = c.report {
            out.insert(
                c.image_id,
                ImageOutcome {
                    generated: true,
                    report,
                },
            );
        }
    }
    let captioned: Vec<String> = read_captions(run)?.into_iter().map(|c| c.image_id).collect();
    out.retain(|id, _| captioned.contains(id));
    Ok(out)
}

/// Joins human evidence labels with detector outcomes and writes the
/// per-image scores, the grouped score table and the attention-region table.
pub fn cmd_evaluate_captions(run: &mut Run, labels_csv: &Path) -> Result<EvaluateOutcome> {
    run.manifest.require(stage::GENERATE)?;
    run.manifest.require(stage::CAPTION)?;
    let bytes = std::fs::read(labels_csv).map_err(|e| Error::io(labels_csv, e))?;
    let rows = read_label_rows(bytes.as_slice()).map_err(|e| Error::parse(labels_csv, e))?;
    let outcomes = outcomes(run)?;
    let (evidence, regions) = join_labels(&rows, &outcomes)?;
    for e in &evidence {
        e.check_against(&outcomes[&e.image_id].report)?;
    }
    let records = evidence.iter().map(score_caption).collect::<Result<Vec<_>>>()?;
    let scores = aggregate_scores(&records)?;
    let reports = outcomes.into_iter().map(|(k, v)| (k, v.report)).collect();
    let table = tally_attention_regions(&regions, &reports)?;

    write_atomic(&run.path(LABELS_COPY), &bytes)?;
    let files = [
        ("caption_scores.csv", scores_csv(&records)),
        ("caption_table.csv", scores.to_csv()),
        ("caption_table.txt", scores.to_text()),
        ("regions_table.csv", table.to_csv()),
        ("regions_table.txt", table.to_text()),
    ];
    for (name, text) in &files {
        write_atomic(&run.path(name), text.as_bytes())?;
    }
    let mut outputs: Vec<String> = files.iter().map(|(n, _)| n.to_string()).collect();
    outputs.push(LABELS_COPY.to_string());
    run.finish(stage::EVALUATE, outputs)?;
    Ok(EvaluateOutcome {
        records,
        scores,
        regions: table,
    })
}
