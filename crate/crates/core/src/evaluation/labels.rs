use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::regions::{AttentionRegion, AttentionRegionLabel};
use super::scoring::{EvidenceLabel, Judgement};
use crate::detection::FailureReport;
use crate::error::{Error, Result};

/// One row of the human labeling file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub image_id: String,
    pub claims_missed: bool,
    pub claims_fp: bool,
    pub claims_miscl: bool,
    pub accurate_description: bool,
    pub coherent_evidence: bool,
    #[serde(default)]
    pub regions: String,
}

pub fn read_label_rows<R: Read>(r: R) -> csv::Result<Vec<LabelRow>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(r)
        .deserialize()
        .collect()
}

/// What the run knows about a captioned image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub generated: bool,
    pub report: FailureReport,
}

/// Combines human claims with detector outcomes. Every row must name a
/// known image.
pub fn join_labels(
    rows: &[LabelRow],
    outcomes: &BTreeMap<String, ImageOutcome>,
) -> Result<(Vec<EvidenceLabel>, Vec<AttentionRegionLabel>)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("label rows"));
    }
    let mut evidence = Vec::with_capacity(rows.len());
    let mut regions = Vec::with_capacity(rows.len());
    for row in rows {
        let Some(o) = outcomes.get(&row.image_id) else {
            return Err(Error::JoinFailure(format!("no image `{}` in run", row.image_id)));
        };
        let jg = |claims: bool, present: bool| Judgement {
            caption_claims: claims,
            actually_present: present,
        };
        evidence.push(EvidenceLabel {
            image_id: row.image_id.clone(),
            generated: o.generated,
            missed: jg(row.claims_missed, o.report.has_missed()),
            hallucination: jg(row.claims_fp, o.report.has_hallucination()),
            misclassification: jg(row.claims_miscl, o.report.has_misclassification()),
            describes_image_accurately: row.accurate_description,
            evidence_coherent: row.coherent_evidence,
        });
        let parsed = row
            .regions
            .split(';')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                AttentionRegion::parse(s).ok_or_else(|| Error::InconsistentLabel {
                    image_id: row.image_id.clone(),
                    reason: format!("unknown region `{s}`"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        regions.push(AttentionRegionLabel::new(row.image_id.clone(), parsed));
    }
    Ok((evidence, regions))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_joins() {
        let csv = "image_id,claims_missed,claims_fp,claims_miscl,accurate_description,coherent_evidence,regions\n\
                   a,true,false,false,true,true,road; sky\n\
                   b,false,false,true,true,false,\n";
        let rows = read_label_rows(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 2);
        let missed = FailureReport::with_failures(true, false, false);
        let mut outcomes = BTreeMap::new();
        outcomes.insert(
            "a".to_string(),
            ImageOutcome {
                generated: true,
                report: missed,
            },
        );
        outcomes.insert(
            "b".to_string(),
            ImageOutcome {
                generated: false,
                report: FailureReport::with_failures(false, false, false),
            },
        );
        let (ev, reg) = join_labels(&rows, &outcomes).unwrap();
        assert!(ev[0].missed.actually_present && ev[0].missed.caption_claims);
        assert!(!ev[1].generated);
        assert_eq!(reg[0].regions.len(), 2);
        assert!(reg[1].regions.is_empty());

        outcomes.remove("b");
        assert!(matches!(join_labels(&rows, &outcomes), Err(Error::JoinFailure(_))));
    }

    #[test]
    fn rejects_unknown_region() {
        let csv = "image_id,claims_missed,claims_fp,claims_miscl,accurate_description,coherent_evidence,regions\n\
                   a,true,false,false,true,true,ocean\n";
        let rows = read_label_rows(csv.as_bytes()).unwrap();
        let mut outcomes = BTreeMap::new();
        outcomes.insert(
            "a".to_string(),
            ImageOutcome {
                generated: true,
                report: FailureReport::with_failures(false, false, false),
            },
        );
        assert!(matches!(
            join_labels(&rows, &outcomes),
            Err(Error::InconsistentLabel { .. })
        ));
    }
}
