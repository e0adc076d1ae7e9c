use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::detection::FailureKind;
use crate::error::{Error, Result};
use crate::util::mean_sd;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub image_id: String,
    pub prompt_id: String,
    /// Confidence of the correct-label detection matching the object;
    /// absent when there is none.
    pub confidence: Option<f64>,
    pub ssim: f64,
    pub lpips: f64,
    pub mse: f64,
    pub psnr: f64,
    pub failure_kind: FailureKind,
    #[serde(default)]
    pub flagged: bool,
}

pub fn write_metrics_csv<W: Write>(w: W, records: &[MetricRecord]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: Read>(r: R) -> csv::Result<Vec<MetricRecord>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Fraction of records with any detection failure.
pub fn fooling_rate(records: &[MetricRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyInput("metric records"));
    }
    let failing = records.iter().filter(|r| r.failure_kind.is_failure()).count();
    Ok(failing as f64 / records.len() as f64)
}

/// Linear interpolation between closest ranks on sorted data (the common
/// statistics-package default). `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub p25: f64,
    pub p75: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (mean, sd) = mean_sd(&v);
        Some(Self {
            mean,
            sd,
            min: v[0],
            p25: percentile(&v, 0.25),
            p75: percentile(&v, 0.75),
            max: v[v.len() - 1],
        })
    }

    fn scaled(self, k: f64) -> Self {
        Self {
            mean: self.mean * k,
            sd: self.sd * k,
            min: self.min * k,
            p25: self.p25 * k,
            p75: self.p75 * k,
            max: self.max * k,
        }
    }
}

/// Statistics over the values that exist, plus how many were left out
/// (absent confidences, infinite PSNR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    pub n: usize,
    pub excluded: usize,
    pub stats: Option<Stats>,
}

impl ColumnSummary {
    fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let mut kept = Vec::new();
        let mut excluded = 0;
        for v in values {
            match v {
                Some(x) if x.is_finite() => kept.push(x),
                _ => excluded += 1,
            }
        }
        Self {
            n: kept.len(),
            excluded,
            stats: Stats::of(&kept),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub records: usize,
    pub confidence: ColumnSummary,
    pub ssim: ColumnSummary,
    pub lpips: ColumnSummary,
    pub mse: ColumnSummary,
    pub psnr: ColumnSummary,
}

pub fn summarize(records: &[MetricRecord]) -> Result<SummaryStats> {
    if records.is_empty() {
        return Err(Error::EmptyInput("metric records"));
    }
    Ok(SummaryStats {
        records: records.len(),
        confidence: ColumnSummary::of(records.iter().map(|r| r.confidence)),
        ssim: ColumnSummary::of(records.iter().map(|r| Some(r.ssim))),
        lpips: ColumnSummary::of(records.iter().map(|r| Some(r.lpips))),
        mse: ColumnSummary::of(records.iter().map(|r| Some(r.mse))),
        psnr: ColumnSummary::of(records.iter().map(|r| Some(r.psnr))),
    })
}

const ROWS: [&str; 6] = ["Mean", "SD", "Min", "25%", "75%", "Max"];

impl SummaryStats {
    fn columns(&self, mse_scale: f64) -> [(&'static str, ColumnSummary); 5] {
        let mut mse = self.mse;
        mse.stats = mse.stats.map(|s| s.scaled(mse_scale));
        [
            ("Confidence", self.confidence),
            ("SSIM", self.ssim),
            ("LPIPS", self.lpips),
            ("MSE", mse),
            ("PSNR", self.psnr),
        ]
    }

    fn cell(c: &ColumnSummary, row: usize) -> Option<f64> {
        c.stats.map(|s| [s.mean, s.sd, s.min, s.p25, s.p75, s.max][row])
    }

    /// Rows Mean/SD/Min/25%/75%/Max by metric columns. `mse_scale`
    /// rescales the MSE column only (e.g. 255^2 for an 8-bit domain).
    pub fn to_csv(&self, mse_scale: f64) -> String {
        let cols = self.columns(mse_scale);
        let mut out = String::from("statistic");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (i, row) in ROWS.iter().enumerate() {
            out.push_str(row);
            for (_, c) in &cols {
                out.push(',');
                if let Some(v) = Self::cell(c, i) {
                    write!(out, "{v}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self, mse_scale: f64) -> String {
        let cols = self.columns(mse_scale);
        let mut out = format!("{:<6}", "");
        for (name, _) in &cols {
            write!(out, " {name:>12}").unwrap();
        }
        out.push('\n');
        for (i, row) in ROWS.iter().enumerate() {
            write!(out, "{row:<6}").unwrap();
            for (_, c) in &cols {
                match Self::cell(c, i) {
                    Some(v) => write!(out, " {v:>12.4}").unwrap(),
                    None => write!(out, " {:>12}", "-").unwrap(),
                }
            }
            out.push('\n');
        }
        let mut notes = Vec::new();
        if self.confidence.excluded > 0 {
            notes.push(format!(
                "confidence absent for {} of {} images",
                self.confidence.excluded, self.records
            ));
        }
        if self.psnr.excluded > 0 {
            notes.push(format!(
                "{} identical images (infinite PSNR) excluded",
                self.psnr.excluded
            ));
        }
        for n in notes {
            writeln!(out, "note: {n}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Flag at more than `sigma` standard deviations from the batch mean.
    pub sigma: f64,
    /// Smaller batches are never flagged.
    pub min_batch: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            min_batch: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnrealisticFlag {
    pub image_id: String,
    pub reasons: Vec<String>,
}

/// Low-SSIM or high-LPIPS outliers relative to the batch.
pub fn flag_unrealistic(records: &[MetricRecord], cfg: &FilterConfig) -> Vec<UnrealisticFlag> {
    if records.len() < cfg.min_batch.max(2) {
        return Vec::new();
    }
    let ssim: Vec<f64> = records.iter().map(|r| r.ssim).collect();
    let lpips: Vec<f64> = records.iter().map(|r| r.lpips).collect();
    let (ms, ss) = mean_sd(&ssim);
    let (ml, sl) = mean_sd(&lpips);
    let ssim_floor = ms - cfg.sigma * ss;
    let lpips_ceiling = ml + cfg.sigma * sl;
    records
        .iter()
        .filter_map(|r| {
            let mut reasons = Vec::new();
            if r.ssim < ssim_floor {
                reasons.push(format!("ssim {:.4} < {:.4}", r.ssim, ssim_floor));
            }
            if r.lpips > lpips_ceiling {
                reasons.push(format!("lpips {:.4} > {:.4}", r.lpips, lpips_ceiling));
            }
            (!reasons.is_empty()).then(|| UnrealisticFlag {
                image_id: r.image_id.clone(),
                reasons,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: usize, ssim: f64, lpips: f64, kind: FailureKind) -> MetricRecord {
        MetricRecord {
            image_id: format!("i{id}"),
            prompt_id: format!("p{id}"),
            confidence: Some(0.9),
            ssim,
            lpips,
            mse: 0.01,
            psnr: 20.0,
            failure_kind: kind,
            flagged: false,
        }
    }

    #[test]
    fn fooling_rate_examples() {
        let ok: Vec<_> = (0..10).map(|i| rec(i, 0.5, 0.2, FailureKind::None)).collect();
        assert_eq!(fooling_rate(&ok).unwrap(), 0.0);
        let bad: Vec<_> = (0..3).map(|i| rec(i, 0.5, 0.2, FailureKind::Missed)).collect();
        assert_eq!(fooling_rate(&bad).unwrap(), 1.0);
        assert!(matches!(fooling_rate(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn percentiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&v, 0.25), 1.75);
        assert_eq!(percentile(&v, 0.75), 3.25);
        assert_eq!(percentile(&[5.0], 0.25), 5.0);
    }

    #[test]
    fn single_record_summary() {
        let s = summarize(&[rec(0, 0.4, 0.3, FailureKind::None)]).unwrap();
        let st = s.ssim.stats.unwrap();
        assert_eq!((st.mean, st.sd, st.min, st.max), (0.4, 0.0, 0.4, 0.4));
    }

    #[test]
    fn absent_and_infinite_values_are_counted() {
        let mut a = rec(0, 1.0, 0.0, FailureKind::None);
        a.psnr = f64::INFINITY;
        a.confidence = None;
        let s = summarize(&[a, rec(1, 0.5, 0.1, FailureKind::None)]).unwrap();
        assert_eq!((s.psnr.n, s.psnr.excluded), (1, 1));
        assert_eq!((s.confidence.n, s.confidence.excluded), (1, 1));
        assert!(s.to_text(1.0).contains("confidence absent for 1 of 2"));
    }

    #[test]
    fn outlier_flagging() {
        let mut batch: Vec<_> = (0..20)
            .map(|i| rec(i, 0.6 + 0.001 * i as f64, 0.2, FailureKind::None))
            .collect();
        assert!(flag_unrealistic(&batch, &FilterConfig::default()).is_empty());
        batch[7].ssim = -0.5;
        let f = flag_unrealistic(&batch, &FilterConfig::default());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].image_id, "i7");
        let mut small: Vec<_> = (0..4).map(|i| rec(i, 0.6, 0.2, FailureKind::None)).collect();
        small[0].ssim = -1.0;
        assert!(flag_unrealistic(&small, &FilterConfig::default()).is_empty());
    }

    #[test]
    fn csv_roundtrip_keeps_infinity_and_absence() {
        let mut a = rec(0, 1.0, 0.0, FailureKind::Hallucination);
        a.psnr = f64::INFINITY;
        a.confidence = None;
        let recs = vec![a, rec(1, 0.5, 0.1, FailureKind::None)];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("image_id,prompt_id,confidence,ssim,lpips,mse,psnr,failure_kind,flagged\n"));
        assert!(text.contains(",inf,hallucination,"));
        assert_eq!(read_metrics_csv(&buf[..]).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn summary_is_permutation_invariant(vals in prop::collection::vec(0.0f64..1.0, 1..30), rot in 0usize..30) {
            let recs: Vec<_> = vals.iter().enumerate().map(|(i, v)| rec(i, *v, 1.0 - v, FailureKind::None)).collect();
            let mut shuffled = recs.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let (a, b) = (summarize(&recs).unwrap(), summarize(&shuffled).unwrap());
            let (sa, sb) = (a.ssim.stats.unwrap(), b.ssim.stats.unwrap());
            prop_assert!((sa.mean - sb.mean).abs() < 1e-12);
            prop_assert!((sa.sd - sb.sd).abs() < 1e-12);
            prop_assert_eq!((sa.min, sa.p25, sa.p75, sa.max), (sb.min, sb.p25, sb.p75, sb.max));
            prop_assert!(sa.min <= sa.p25 && sa.p25 <= sa.p75 && sa.p75 <= sa.max && sa.sd >= 0.0);
        }
    }
}
