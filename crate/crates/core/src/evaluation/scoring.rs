use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detection::FailureReport;
use crate::error::{Error, Result};
use crate::util::mean_sd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Judgement {
    pub caption_claims: bool,
    pub actually_present: bool,
}

/// Human judgement of one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceLabel {
    pub image_id: String,
    pub generated: bool,
    pub missed: Judgement,
    pub hallucination: Judgement,
    pub misclassification: Judgement,
    pub describes_image_accurately: bool,
    pub evidence_coherent: bool,
}

impl EvidenceLabel {
    pub fn judgements(&self) -> [Judgement; 3] {
        [self.missed, self.hallucination, self.misclassification]
    }

    pub fn is_rfm(&self) -> bool {
        self.judgements().iter().any(|j| j.actually_present)
    }

    /// `actually_present` must agree with the detector's report.
    pub fn check_against(&self, report: &FailureReport) -> Result<()> {
        let expected = [
            report.has_missed(),
            report.has_hallucination(),
            report.has_misclassification(),
        ];
        let names = ["missed", "hallucination", "misclassification"];
        for ((j, e), name) in self.judgements().iter().zip(expected).zip(names) {
            if j.actually_present != e {
                return Err(Error::InconsistentLabel {
                    image_id: self.image_id.clone(),
                    reason: format!("{name} present={} but report says {e}", j.actually_present),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionEvalRecord {
    pub image_id: String,
    pub generated: bool,
    /// Presence of missed / hallucination / misclassification.
    pub present: [bool; 3],
    pub tp: u8,
    pub tn: u8,
    pub fp: u8,
    #[serde(rename = "fn")]
    pub fn_: u8,
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub describes_image_accurately: bool,
    pub evidence_coherent: bool,
}

impl CaptionEvalRecord {
    pub fn is_rfm(&self) -> bool {
        self.present.iter().any(|&p| p)
    }
}

pub fn score_caption(label: &EvidenceLabel) -> Result<CaptionEvalRecord> {
    if label.image_id.is_empty() {
        return Err(Error::InconsistentLabel {
            image_id: String::new(),
            reason: "empty image id".into(),
        });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0u8, 0u8, 0u8, 0u8);
    for j in label.judgements() {
        match (j.caption_claims, j.actually_present) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: u8, den: u8| (den > 0).then(|| num as f64 / den as f64);
    Ok(CaptionEvalRecord {
        image_id: label.image_id.clone(),
        generated: label.generated,
        present: label.judgements().map(|j| j.actually_present),
        tp,
        tn,
        fp,
        fn_,
        accuracy: (tp + tn) as f64 / 3.0,
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
        describes_image_accurately: label.describes_image_accurately,
        evidence_coherent: label.evidence_coherent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    All,
    Generated,
    NonGenerated,
    Rfms,
    FnRfms,
    FpRfms,
    MisclRfms,
    NonRfms,
}

impl Group {
    pub const ALL: [Group; 8] = [
        Group::All,
        Group::Generated,
        Group::NonGenerated,
        Group::Rfms,
        Group::FnRfms,
        Group::FpRfms,
        Group::MisclRfms,
        Group::NonRfms,
    ];

    pub fn title(self) -> &'static str {
        match self {
            Group::All => "All Images",
            Group::Generated => "Generated",
            Group::NonGenerated => "Non-generated",
            Group::Rfms => "RFMs",
            Group::FnRfms => "FN RFMs",
            Group::FpRfms => "FP RFMs",
            Group::MisclRfms => "Miscl RFMs",
            Group::NonRfms => "non-RFMs",
        }
    }

    pub fn contains(self, r: &CaptionEvalRecord) -> bool {
        match self {
            Group::All => true,
            Group::Generated => r.generated,
            Group::NonGenerated => !r.generated,
            Group::Rfms => r.is_rfm(),
            Group::FnRfms => r.present[0],
            Group::FpRfms => r.present[1],
            Group::MisclRfms => r.present[2],
            Group::NonRfms => !r.is_rfm(),
        }
    }

    /// Recall, precision and F1 are shown as "-" for images without failures.
    pub fn hides_failure_metrics(self) -> bool {
        self == Group::NonRfms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (mean, sd) = mean_sd(values);
        Some(Self {
            n: values.len(),
            mean,
            sd,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: Group,
    pub n: usize,
    pub accuracy: Option<MeanSd>,
    pub recall: Option<MeanSd>,
    pub precision: Option<MeanSd>,
    pub f1: Option<MeanSd>,
    /// Fraction of captions that describe the image accurately.
    pub description_rate: Option<f64>,
    /// Fraction of RFM captions in the group whose evidence is coherent.
    pub coherence_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub rows: Vec<GroupRow>,
}

/// Per-image metrics averaged within each group, over the records where the
/// metric is defined. Empty groups keep a row with n = 0.
pub fn aggregate_scores(records: &[CaptionEvalRecord]) -> Result<ScoreTable> {
    if records.is_empty() {
        return Err(Error::EmptyInput("caption evaluation records"));
    }
    let rows = Group::ALL
        .iter()
        .map(|&group| {
            let members: Vec<&CaptionEvalRecord> = records.iter().filter(|r| group.contains(r)).collect();
            let col = |f: &dyn Fn(&CaptionEvalRecord) -> Option<f64>| {
                MeanSd::of(&members.iter().filter_map(|r| f(r)).collect::<Vec<_>>())
            };
            let hide = group.hides_failure_metrics();
            let rate =
                |rs: Vec<bool>| (!rs.is_empty()).then(|| rs.iter().filter(|&&b| b).count() as f64 / rs.len() as f64);
            GroupRow {
                group,
                n: members.len(),
                accuracy: col(&|r| Some(r.accuracy)),
                recall: if hide { None } else { col(&|r| r.recall) },
                precision: if hide { None } else { col(&|r| r.precision) },
                f1: if hide { None } else { col(&|r| r.f1) },
                description_rate: rate(members.iter().map(|r| r.describes_image_accurately).collect()),
                coherence_rate: rate(
                    members
                        .iter()
                        .filter(|r| r.is_rfm())
                        .map(|r| r.evidence_coherent)
                        .collect(),
                ),
            }
        })
        .collect();
    Ok(ScoreTable { rows })
}

impl ScoreTable {
    pub fn row(&self, g: Group) -> &GroupRow {
        self.rows.iter().find(|r| r.group == g).expect("every group has a row")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "group,n,accuracy_mean,accuracy_sd,recall_mean,recall_sd,precision_mean,precision_sd,f1_mean,f1_sd,description_rate,coherence_rate\n",
        );
        let ms = |m: &Option<MeanSd>| match m {
            Some(m) => format!("{},{}", m.mean, m.sd),
            None => "-,-".into(),
        };
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| v.to_string());
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.group.title(),
                r.n,
                ms(&r.accuracy),
                ms(&r.recall),
                ms(&r.precision),
                ms(&r.f1),
                opt(r.description_rate),
                opt(r.coherence_rate)
            )
            .unwrap();
        }
        out
    }

    /// Mean as a percentage, SD as a fraction.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14}", "");
        for h in ["Accuracy", "Recall", "Precision", "F1-Score"] {
            write!(out, " {h:>18}").unwrap();
        }
        out.push('\n');
        write!(out, "{:<14}", "").unwrap();
        for _ in 0..4 {
            write!(out, " {:>10} {:>7}", "Mean", "SD").unwrap();
        }
        out.push('\n');
        for r in &self.rows {
            write!(out, "{:<14}", r.group.title()).unwrap();
            for m in [&r.accuracy, &r.recall, &r.precision, &r.f1] {
                match m {
                    Some(m) => write!(out, " {:>9.2}% {:>7.2}", m.mean * 100.0, m.sd).unwrap(),
                    None => write!(out, " {:>10} {:>7}", "-", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
