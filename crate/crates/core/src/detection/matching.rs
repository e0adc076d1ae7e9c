use serde::{Deserialize, Serialize};

use super::{iou, BoundingBox, Detection, DetectionConfig, DetectionResult, GroundTruth, GroundTruthObject};

/// Primary failure label. When several failures are present the most severe
/// one wins: missed > misclassification > hallucination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    Missed,
    Hallucination,
    Misclassification,
}

impl FailureKind {
    pub fn is_failure(self) -> bool {
        self != FailureKind::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::None => "none",
            FailureKind::Missed => "missed",
            FailureKind::Hallucination => "hallucination",
            FailureKind::Misclassification => "misclassification",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "none" => FailureKind::None,
            "missed" => FailureKind::Missed,
            "hallucination" => FailureKind::Hallucination,
            "misclassification" => FailureKind::Misclassification,
            _ => return None,
        })
    }
}

impl std::fmt::Display for FailureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub truth: GroundTruthObject,
    pub detection: Detection,
    pub iou: f64,
}

impl MatchedPair {
    pub fn label_correct(&self) -> bool {
        self.truth.label == self.detection.label
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub kind: FailureKind,
    pub matched_pairs: Vec<MatchedPair>,
    pub unmatched_truths: Vec<GroundTruthObject>,
    pub unmatched_detections: Vec<Detection>,
    pub confidence_of_object: Option<f64>,
}

impl FailureReport {
    pub fn has_missed(&self) -> bool {
        !self.unmatched_truths.is_empty()
    }

    pub fn has_misclassification(&self) -> bool {
        self.matched_pairs.iter().any(|p| !p.label_correct())
    }

    pub fn has_hallucination(&self) -> bool {
        !self.unmatched_detections.is_empty()
    }

    /// Report for a detector that found every truth with the right label
    /// and nothing else; used by tests and fixtures.
    pub fn clean(gt: &GroundTruth, confidence: f64) -> Self {
        let result = DetectionResult::new(
            "fixture",
            gt.objects
                .iter()
                .map(|o| Detection::new(o.bbox, o.label.clone(), confidence))
                .collect(),
        );
        classify_failure(&result, gt, &DetectionConfig::default())
    }

    /// Report with exactly the requested failure types, built by running
    /// the matcher on a constructed two-car scene.
    pub fn with_failures(missed: bool, hallucination: bool, misclassification: bool) -> Self {
        let bx = |x: f64| BoundingBox::new(x, 0.0, x + 10.0, 10.0).expect("valid box");
        let gt = GroundTruth {
            objects: vec![
                GroundTruthObject {
                    label: "car".into(),
                    bbox: bx(0.0),
                },
                GroundTruthObject {
                    label: "car".into(),
                    bbox: bx(20.0),
                },
            ],
        };
        let mut dets = Vec::new();
        if !missed {
            dets.push(Detection::new(bx(0.0), "car", 0.9));
        }
        dets.push(Detection::new(
            bx(20.0),
            if misclassification { "truck" } else { "car" },
            0.8,
        ));
        if hallucination {
            dets.push(Detection::new(bx(40.0), "airplane", 0.7));
        }
        classify_failure(&DetectionResult::new("fixture", dets), &gt, &DetectionConfig::default())
    }
}

/// Greedy IoU matching of detections to ground truth, in descending
/// confidence order.
///
/// Same-label matches are taken first; remaining detections may then claim a
/// remaining truth with a different label (a misclassification). Truths left
/// over are missed, detections left over are hallucinations.
pub fn classify_failure(res: &DetectionResult, gt: &GroundTruth, cfg: &DetectionConfig) -> FailureReport {
    let mut dets: Vec<&Detection> = res
        .detections
        .iter()
        .filter(|d| d.confidence >= cfg.confidence_threshold)
        .collect();
    dets.sort_by(|a, b| a.rank_cmp(b));

    let mut truth_taken = vec![false; gt.objects.len()];
    let mut det_match: Vec<Option<(usize, f64)>> = vec![None; dets.len()];

    for same_label_pass in [true, false] {
        for (di, det) in dets.iter().enumerate() {
            if det_match[di].is_some() {
                continue;
            }
            let best = gt
                .objects
                .iter()
                .enumerate()
                .filter(|(ti, t)| !truth_taken[*ti] && (!same_label_pass || t.label == det.label))
                .map(|(ti, t)| (ti, iou(&t.bbox, &det.bbox)))
                .filter(|(_, v)| *v >= cfg.iou_threshold)
                // highest IoU, lowest truth index on ties
                .fold(None::<(usize, f64)>, |acc, cur| match acc {
                    Some(a) if a.1 >= cur.1 => Some(a),
                    _ => Some(cur),
                });
            if let Some((ti, v)) = best {
                truth_taken[ti] = true;
                det_match[di] = Some((ti, v));
            }
        }
    }

    let mut matched_pairs = Vec::new();
    let mut unmatched_detections = Vec::new();
    for (di, det) in dets.iter().enumerate() {
        match det_match[di] {
            Some((ti, v)) => matched_pairs.push(MatchedPair {
                truth: gt.objects[ti].clone(),
                detection: (*det).clone(),
                iou: v,
            }),
            None => unmatched_detections.push((*det).clone()),
        }
    }
    let unmatched_truths: Vec<_> = gt
        .objects
        .iter()
        .zip(&truth_taken)
        .filter(|(_, taken)| !**taken)
        .map(|(t, _)| t.clone())
        .collect();

    let confidence_of_object = matched_pairs
        .iter()
        .filter(|p| p.label_correct())
        .map(|p| p.detection.confidence)
        .reduce(f64::max);

    let mut report = FailureReport {
        kind: FailureKind::None,
        matched_pairs,
        unmatched_truths,
        unmatched_detections,
        confidence_of_object,
    };
    report.kind = if report.has_missed() {
        FailureKind::Missed
    } else if report.has_misclassification() {
        FailureKind::Misclassification
    } else if report.has_hallucination() {
        FailureKind::Hallucination
    } else {
        FailureKind::None
    };
    report
}
