use std::path::{Path, PathBuf};

use super::{CANDIDATES, DETECTIONS, ENV_MASK, GROUND_TRUTH, OBJECT_MASK, SEED_ID, SEED_PATH};
use crate::detection::{classify_failure, detect, DetectionResult, GroundTruth};
use crate::error::{Error, Result};
use crate::guidance::{run_generation_batch, BatchRequest, CandidateStatus};
use crate::imaging::{extract_environment_mask_with, load_png, save_mask_png, save_png, RasterImage};
use crate::pipeline::{stage, write_json, write_jsonl, RunConfig, RunManifest, MANIFEST_FILE};
use crate::util::{sha256_hex, write_atomic};

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutcome {
    pub run_dir: PathBuf,
    pub run_id: String,
    pub candidates: usize,
    pub ok: usize,
    pub backend_errors: usize,
}

/// Outputs of every stage; cleared when a run directory is regenerated.
const STAGE_OUTPUTS: [&str; 7] = [
    "candidates",
    "traces",
    "thermal",
    "video",
    "inputs",
    "masks",
    "report.md",
];
const STAGE_FILES: [&str; 15] = [
    "config.toml",
    "ground_truth.json",
    "candidates.jsonl",
    "detections.jsonl",
    "metrics.csv",
    "summary.csv",
    "summary.txt",
    "verify.json",
    "captions.jsonl",
    "caption_errors.json",
    "caption_scores.csv",
    "caption_table.csv",
    "caption_table.txt",
    "regions_table.csv",
    "regions_table.txt",
];

fn clear_previous(out: &Path) -> Result<()> {
    for d in STAGE_OUTPUTS {
        let p = out.join(d);
        if p.is_dir() {
            std::fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        } else if p.is_file() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    for f in STAGE_FILES {
        let p = out.join(f);
        if p.is_file() {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    Ok(())
}

/// Config and seed gate, masks, then one candidate per prompt and seed.
pub fn cmd_generate(config_path: &Path, out_dir: &Path) -> Result<GenerateOutcome> {
    let (cfg, base) = RunConfig::load(config_path)?;
    let seed_file = base.join(&cfg.seed_image);
    let seed = load_png(&seed_file)
        .map_err(|e| Error::ConfigInvalid(format!("seed image: {e}")))?
        .with_source_id(SEED_ID);

    let mut detector = cfg.backends.detector();
    let seed_result = detect(&seed, detector.as_mut(), &cfg.detection)?;
    let gt = match &cfg.ground_truth {
        Some(gt) => gt.clone(),
        None => GroundTruth::from_detections(&seed_result, &[cfg.object_label.as_str()]),
    };
    if gt.is_empty() {
        return Err(Error::SeedGateFailed(format!(
            "the detector finds no `{}` on the seed image",
            cfg.object_label
        )));
    }
    let seed_report = classify_failure(&seed_result, &gt, &cfg.detection);
    if seed_report.kind.is_failure() {
        return Err(Error::SeedGateFailed(format!(
            "the detector already fails on the seed image ({})",
            seed_report.kind
        )));
    }

    let mut segmenter = cfg.backends.segmenter(&base)?;
    let masks = extract_environment_mask_with(
        &seed,
        &[cfg.object_label.as_str()],
        segmenter.as_mut(),
        &cfg.segmentation,
    )?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let previous = RunManifest::load(out_dir).ok();
    if previous.is_some() {
        clear_previous(out_dir)?;
    }

    save_png(&seed, &out_dir.join(SEED_PATH))?;
    // pixel-exact copy of what later stages will read back
    let seed = load_png(&out_dir.join(SEED_PATH))?.with_source_id(SEED_ID);
    save_mask_png(&masks.object, &out_dir.join(OBJECT_MASK))?;
    save_mask_png(&masks.environment, &out_dir.join(ENV_MASK))?;
    write_atomic(&out_dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    write_json(&out_dir.join(GROUND_TRUTH), &gt)?;

    let prompts = cfg.prompts.positive.clone();
    let seeds = cfg.rng_seeds();
    let guidance = cfg.guidance.to_config(&cfg.prompts.negative);
    let batch = run_generation_batch(
        &BatchRequest {
            seed: &seed,
            object_mask: &masks.object,
            gt: &gt,
            detection: &cfg.detection,
            prompts: &prompts,
            seeds: &seeds,
            guidance: &guidance,
            workers: cfg.workers,
            out_dir,
        },
        &cfg.backends,
    )?;

    write_jsonl(&out_dir.join(CANDIDATES), &batch.records)?;
    let mut detections = vec![DetectionResult {
        image_id: SEED_ID.into(),
        ..seed_result
    }];
    detections.extend(batch.detections);
    write_jsonl(&out_dir.join(DETECTIONS), &detections)?;

    let config_hash = cfg.hash();
    let seed_sha = seed_digest(&seed);
    let run_id = format!(
        "run-{}",
        &sha256_hex(format!("{config_hash}:{seed_sha}").as_bytes())[..16]
    );
    let mut manifest = RunManifest::new(run_id.clone(), config_hash, seed_sha);
    if let Some(prev) = previous.filter(|p| p.run_id == run_id) {
        manifest.created_at = prev.created_at;
    }
    let outputs = [
        "config.toml",
        SEED_PATH,
        OBJECT_MASK,
        ENV_MASK,
        GROUND_TRUTH,
        CANDIDATES,
        DETECTIONS,
    ]
    .map(String::from)
    .into_iter()
    .chain(
        batch
            .records
            .iter()
            .flat_map(|r| r.image_path.clone().into_iter().chain(r.trace_path.clone())),
    )
    .collect();
    manifest.finish_stage(out_dir, stage::GENERATE, outputs)?;
    debug_assert!(out_dir.join(MANIFEST_FILE).exists());

    let ok = batch.records.iter().filter(|r| r.status == CandidateStatus::Ok).count();
    Ok(GenerateOutcome {
        run_dir: out_dir.to_path_buf(),
        run_id,
        candidates: batch.records.len(),
        ok,
        backend_errors: batch.records.len() - ok,
    })
}

fn seed_digest(seed: &RasterImage) -> String {
    sha256_hex(seed.to_rgb8().as_raw())
}
