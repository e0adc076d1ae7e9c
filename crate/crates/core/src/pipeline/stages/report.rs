use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::caption::read_captions;
use super::verify::VerifyOutcome;
use super::video::VideoOutcome;
use super::{CANDIDATES, VERIFY_JSON};
use crate::error::Result;
use crate::guidance::{CandidateRecord, CandidateStatus};
use crate::pipeline::manifest::index;
use crate::pipeline::{read_json, read_jsonl, stage, Run};
use crate::util::{read_to_string, write_atomic};

const REPORT: &str = "report.md";

fn block(out: &mut String, text: &str) {
    out.push_str("```text\n");
    out.push_str(text.trim_end());
    out.push_str("\n```\n\n");
}

fn fmt_mean(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into())
}

/// Writes `report.md`: summary tables, per-failure galleries and an index of
/// every artifact in the run. Contains no timestamps.
pub fn cmd_report(run: &mut Run) -> Result<String> {
    run.manifest.require(stage::VERIFY)?;
    let m = &run.manifest;
    let mut out = String::new();
    writeln!(out, "# Run {}\n", m.run_id).unwrap();
    writeln!(out, "- config hash: `{}`", m.config_hash).unwrap();
    writeln!(out, "- seed sha256: `{}`", m.seed_sha256).unwrap();
    writeln!(out, "- object: `{}`", run.config.object_label).unwrap();
    let stages: Vec<&str> = m
        .stages
        .keys()
        .map(String::as_str)
        .filter(|s| *s != stage::REPORT)
        .collect();
    writeln!(out, "- stages: {}\n", stages.join(", ")).unwrap();

    let verify: VerifyOutcome = read_json(&run.path(VERIFY_JSON))?;
    out.push_str("## Verification\n\n");
    writeln!(
        out,
        "Fooling rate: {:.2}% ({} of {} retained candidates fail detection; {} flagged as unrealistic).\n",
        verify.fooling_rate * 100.0,
        verify.failing,
        verify.retained,
        verify.flagged
    )
    .unwrap();
    block(&mut out, &read_to_string(&run.path("summary.txt"))?);
    out.push_str("| group | n | mean SSIM | mean LPIPS |\n|---|---|---|---|\n");
    for (name, g) in [("RFM", &verify.rfm), ("non-RFM", &verify.non_rfm)] {
        writeln!(
            out,
            "| {name} | {} | {} | {} |",
            g.n,
            fmt_mean(g.ssim),
            fmt_mean(g.lpips)
        )
        .unwrap();
    }
    out.push('\n');
    if !verify.flags.is_empty() {
        out.push_str("Flagged:\n\n");
        for f in &verify.flags {
            writeln!(out, "- `{}`: {}", f.image_id, f.reasons.join("; ")).unwrap();
        }
        out.push('\n');
    }

    let captions: BTreeMap<String, String> = if m.has_stage(stage::CAPTION) {
        read_captions(run)?.into_iter().map(|c| (c.image_id, c.text)).collect()
    } else {
        BTreeMap::new()
    };
    let candidates: Vec<CandidateRecord> = read_jsonl(&run.path(CANDIDATES))?;
    out.push_str("## Failures\n\n");
    let mut any = false;
    for c in &candidates {
        let (Some(report), Some(img)) = (&c.report, &c.image_path) else {
            continue;
        };
        if c.status != CandidateStatus::Ok || !report.kind.is_failure() {
            continue;
        }
        any = true;
        writeln!(out, "### {} ({})\n", c.image_id, report.kind).unwrap();
        writeln!(out, "Prompt: {}\n", c.prompt).unwrap();
        let mut kinds = Vec::new();
        if report.has_missed() {
            kinds.push("missed");
        }
        if report.has_misclassification() {
            kinds.push("misclassification");
        }
        if report.has_hallucination() {
            kinds.push("hallucination");
        }
        writeln!(out, "Failures present: {}\n", kinds.join(", ")).unwrap();
        writeln!(out, "![{}]({img})", c.image_id).unwrap();
        let thermal = format!("thermal/{}.png", c.image_id);
        if run.path(&thermal).exists() {
            writeln!(out, "![{} thermal]({thermal})", c.image_id).unwrap();
        }
        out.push('\n');
        if let Some(text) = captions.get(&c.image_id) {
            writeln!(out, "> {}\n", text.trim().replace('\n', "\n> ")).unwrap();
        }
    }
    if !any {
        out.push_str("No retained candidate caused a detection failure.\n\n");
    }
    let errors: Vec<&CandidateRecord> = candidates.iter().filter(|c| !c.status.has_image()).collect();
    if !errors.is_empty() {
        out.push_str("Candidates without an image:\n\n");
        for c in errors {
            writeln!(
                out,
                "- `{}`: {}",
                c.image_id,
                c.error.as_deref().unwrap_or("unknown error")
            )
            .unwrap();
        }
        out.push('\n');
    }

    if m.has_stage(stage::EVALUATE) {
        out.push_str("## Caption evidence\n\n");
        block(&mut out, &read_to_string(&run.path("caption_table.txt"))?);
        out.push_str("## Attention regions\n\n");
        block(&mut out, &read_to_string(&run.path("regions_table.txt"))?);
    }

    if let Some(v) = m.stages.get(stage::VIDEO) {
        out.push_str("## Video\n\n| clip | frames | failing fraction | complete |\n|---|---|---|---|\n");
        for rel in &v.outputs {
            let o: VideoOutcome = read_json(&run.path(rel))?;
            writeln!(
                out,
                "| {} | {} | {:.4} | {} |",
                o.clip,
                o.frames,
                o.evaluation.failing_fraction,
                o.evaluation.is_complete()
            )
            .unwrap();
        }
        out.push('\n');
    }

    out.push_str("## Artifacts\n\n");
    let mut files: Vec<String> = index(&run.dir)?.into_keys().filter(|k| k != REPORT).collect();
    files.push(REPORT.to_string());
    files.sort();
    for f in files {
        writeln!(out, "- [{f}]({f})").unwrap();
    }

    write_atomic(&run.path(REPORT), out.as_bytes())?;
    run.finish(stage::REPORT, vec![REPORT.to_string()])?;
    Ok(out)
}
