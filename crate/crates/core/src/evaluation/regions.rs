use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::detection::FailureReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionRegion {
    Road,
    SideOfRoad,
    Background,
    Sky,
    UnnaturalObject,
}

impl AttentionRegion {
    pub const ALL: [AttentionRegion; 5] = [
        AttentionRegion::Road,
        AttentionRegion::SideOfRoad,
        AttentionRegion::Background,
        AttentionRegion::Sky,
        AttentionRegion::UnnaturalObject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttentionRegion::Road => "road",
            AttentionRegion::SideOfRoad => "side_of_road",
            AttentionRegion::Background => "background",
            AttentionRegion::Sky => "sky",
            AttentionRegion::UnnaturalObject => "unnatural_object",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            AttentionRegion::Road => "Road",
            AttentionRegion::SideOfRoad => "Side of Road",
            AttentionRegion::Background => "Background",
            AttentionRegion::Sky => "Sky",
            AttentionRegion::UnnaturalObject => "Unnatural Object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionRegionLabel {
    pub image_id: String,
    pub regions: BTreeSet<AttentionRegion>,
}

impl AttentionRegionLabel {
    pub fn new(image_id: impl Into<String>, regions: impl IntoIterator<Item = AttentionRegion>) -> Self {
        Self {
            image_id: image_id.into(),
            regions: regions.into_iter().collect(),
        }
    }
}

/// Percentages per region (rows) and failure bucket (columns FN, FP,
/// Miscl, All). A bucket with no images has no percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionTable {
    pub bucket_sizes: [usize; 4],
    pub percent: BTreeMap<AttentionRegion, [Option<f64>; 4]>,
}

pub const BUCKETS: [&str; 4] = ["FN", "FP", "Miscl", "All"];

/// An image belongs to every bucket whose failure it shows; "All" is every
/// labeled image with at least one failure. Labels of images without
/// failures do not contribute.
pub fn tally_attention_regions(
    labels: &[AttentionRegionLabel],
    reports: &BTreeMap<String, FailureReport>,
) -> Result<RegionTable> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("attention region labels"));
    }
    let mut sizes = [0usize; 4];
    let mut hits: BTreeMap<AttentionRegion, [usize; 4]> = AttentionRegion::ALL.iter().map(|r| (*r, [0; 4])).collect();
    for label in labels {
        let report = reports
            .get(&label.image_id)
            .ok_or_else(|| Error::JoinFailure(format!("no failure report for `{}`", label.image_id)))?;
        let member = [
            report.has_missed(),
            report.has_hallucination(),
            report.has_misclassification(),
            report.kind.is_failure(),
        ];
        for (b, &m) in member.iter().enumerate() {
            if !m {
                continue;
            }
            sizes[b] += 1;
            for r in &label.regions {
                hits.get_mut(r).expect("all regions present")[b] += 1;
            }
        }
    }
    let percent = hits
        .into_iter()
        .map(|(r, h)| {
            let row = std::array::from_fn(|b| (sizes[b] > 0).then(|| 100.0 * h[b] as f64 / sizes[b] as f64));
            (r, row)
        })
        .collect();
    Ok(RegionTable {
        bucket_sizes: sizes,
        percent,
    })
}

impl RegionTable {
    pub fn get(&self, region: AttentionRegion, bucket: usize) -> Option<f64> {
        self.percent[&region][bucket]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("region,{}\n", BUCKETS.join(","));
        for (r, row) in &self.percent {
            out.push_str(r.as_str());
            for v in row {
                out.push(',');
                match v {
                    Some(v) => write!(out, "{v}").unwrap(),
                    None => out.push('-'),
                }
            }
            out.push('\n');
        }
        write!(out, "n").unwrap();
        for n in self.bucket_sizes {
            write!(out, ",{n}").unwrap();
        }
        out.push('\n');
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<18}", "Important Area");
        for b in BUCKETS {
            write!(out, " {b:>8}").unwrap();
        }
        out.push('\n');
        for (r, row) in &self.percent {
            write!(out, "{:<18}", r.title()).unwrap();
            for v in row {
                match v {
                    Some(v) => write!(out, " {:>7.2}%", v).unwrap(),
                    None => write!(out, " {:>8}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        out
    }
}
