//! Adversarially guided inpainting.
//!
//! The environment region is regenerated by a diffusion model while the
//! object region is held to the seed. On the last `guidance_steps` denoising
//! steps the initial noise is nudged uphill on the detector's loss:
//!
//! ```text
//! eps <- eps + alpha * clip(normalize(dL/dz_t . dz_t/d eps))
//! ```
//!
//! where `L` is evaluated on the decoded one-step prediction of the clean
//! latent, composited over the seed. The noise is fixed per run and refined
//! in place.

mod batch;
mod toy;
mod trace;

use ndarray::{Array2, Array3, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use batch::{run_generation_batch, BackendFactory, BatchRequest, CandidateRecord, CandidateStatus};
pub use toy::{prompt_template, LinearToyDiffusion};
pub use trace::{GuidanceTrace, TraceRow};

use crate::detection::{
    classify_failure, compute_od_loss, detect, DetectionConfig, DetectionLoss, DetectionResult, DetectorBackend,
    FailureReport, GroundTruth,
};
use crate::error::{BackendError, Error, Result};
use crate::imaging::{composite_object_over, BinaryMask, RasterImage};

/// Latent tensor, channels x rows x cols.
pub type Latent = Array3<f64>;

/// Initial diffusion noise, the quantity guidance optimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTensor {
    pub values: Latent,
    pub rng_seed: u64,
}

impl NoiseTensor {
    /// Standard normal noise from a seeded ChaCha stream.
    pub fn sample(shape: (usize, usize, usize), rng_seed: u64) -> Self {
        let mut rng = crate::util::stream_rng(rng_seed, "initial-noise");
        let values = Array3::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng));
        Self { values, rng_seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub z: Latent,
    pub t: usize,
}

/// `(dL/dz_t) . (dz_t/d eps)`, shaped like the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTensor {
    pub values: Latent,
}

impl GradientTensor {
    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }
}

fn l2(a: &Latent) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Text conditioning for one generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub positive: String,
    pub negative: String,
    /// Classifier-free guidance scale between the negative and positive prompt.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Gradient-ascent step size.
    pub alpha: f64,
    pub denoise_steps: usize,
    /// Guided steps at the end of the schedule. `None` means a quarter of
    /// `denoise_steps`.
    pub guidance_steps: Option<usize>,
    pub grad_norm_clip: f64,
    pub guidance_scale: f64,
    pub positive_prompt: String,
    pub negative_prompt: String,
    pub rng_seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            denoise_steps: 20,
            guidance_steps: None,
            grad_norm_clip: 1.0,
            guidance_scale: 1.0,
            positive_prompt: String::new(),
            negative_prompt: crate::explainability::prompts::NEGATIVE.to_string(),
            rng_seed: 0,
        }
    }
}

impl GuidanceConfig {
    pub fn effective_guidance_steps(&self) -> usize {
        self.guidance_steps.unwrap_or(self.denoise_steps / 4)
    }

    pub fn prompts(&self) -> PromptPair {
        PromptPair {
            positive: self.positive_prompt.clone(),
            negative: self.negative_prompt.clone(),
            scale: self.guidance_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad(format!("alpha must be finite and >= 0, got {}", self.alpha));
        }
        if self.denoise_steps == 0 {
            return bad("denoise_steps must be positive".into());
        }
        if self.effective_guidance_steps() > self.denoise_steps {
            return bad(format!(
                "guidance_steps {} exceeds denoise_steps {}",
                self.effective_guidance_steps(),
                self.denoise_steps
            ));
        }
        if !(self.grad_norm_clip.is_finite() && self.grad_norm_clip > 0.0) {
            return bad("grad_norm_clip must be positive".into());
        }
        if !self.guidance_scale.is_finite() {
            return bad("guidance_scale must be finite".into());
        }
        Ok(())
    }
}

/// What the sampler needs to hold the object region to the seed.
pub struct InpaintContext<'a> {
    pub seed_latent: &'a Latent,
    /// Latent cells that must follow the seed (rows x cols).
    pub object_cells: &'a Array2<bool>,
    pub noise: &'a Latent,
    pub prompts: &'a PromptPair,
}

/// Latent diffusion model used for inpainting.
///
/// Implementors provide the autoencoder, the noise schedule, and a
/// clean-latent predictor with its vector-Jacobian product. The DDIM sampler
/// step and the inpainting blend are provided on top of those.
pub trait DiffusionBackend {
    fn latent_shape(&self, width: usize, height: usize) -> (usize, usize, usize);

    fn encode(&mut self, img: &RasterImage) -> std::result::Result<Latent, BackendError>;

    fn decode(&mut self, z: &Latent) -> std::result::Result<RasterImage, BackendError>;

    /// `grad_pixels` is height x width x 3; returns a latent-shaped gradient.
    fn decode_vjp(&mut self, z: &Latent, grad_pixels: &Array3<f64>) -> std::result::Result<Latent, BackendError>;

    fn train_timesteps(&self) -> usize;

    /// Cumulative signal fraction at timestep `t`.
    fn alpha_bar(&self, t: usize) -> f64;

    fn predict_clean(
        &mut self,
        z_t: &Latent,
        t: usize,
        prompts: &PromptPair,
    ) -> std::result::Result<Latent, BackendError>;

    fn predict_clean_vjp(
        &mut self,
        z_t: &Latent,
        t: usize,
        prompts: &PromptPair,
        grad_clean: &Latent,
    ) -> std::result::Result<Latent, BackendError>;

    /// Object-cell mask on the latent grid for a pixel-space object mask.
    fn object_cells(&self, object_mask: &BinaryMask) -> Array2<bool> {
        object_mask.bits().clone()
    }

    /// Evenly spaced descending timesteps, ending at 0.
    fn timesteps(&self, steps: usize) -> Vec<usize> {
        let total = self.train_timesteps();
        (0..steps).rev().map(|i| i * total / steps).collect()
    }

    /// Forward process `sqrt(ab) * clean + sqrt(1 - ab) * eps`.
    fn noised(&self, clean: &Latent, eps: &Latent, t: usize) -> Latent {
        let ab = self.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = clean * a;
        out.scaled_add(b, eps);
        out
    }

    /// Applies `(dz_t / d eps)^T` to `v`.
    fn grad_latent_wrt_noise(&self, t: usize, v: &Latent) -> Latent {
        v * (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Moves `z_t` to where it would be had it been noised with `eps_new`
    /// instead of `eps_old`.
    fn renoise(&self, z_t: &Latent, t: usize, eps_old: &Latent, eps_new: &Latent) -> Latent {
        let s = (1.0 - self.alpha_bar(t)).sqrt();
        let mut out = z_t.clone();
        Zip::from(&mut out)
            .and(eps_old)
            .and(eps_new)
            .for_each(|z, &o, &n| *z += s * (n - o));
        out
    }

    /// One deterministic DDIM step from `t` to `t_prev` (`None` = fully
    /// denoised), then the object cells are reset to the seed latent noised
    /// to `t_prev`.
    fn denoise_step(
        &mut self,
        z_t: &Latent,
        t: usize,
        t_prev: Option<usize>,
        ctx: &InpaintContext<'_>,
    ) -> std::result::Result<Latent, BackendError> {
        let x0 = self.predict_clean(z_t, t, ctx.prompts)?;
        let ab = self.alpha_bar(t);
        let mut next = match t_prev {
            None => x0,
            Some(tp) => {
                let abp = self.alpha_bar(tp);
                let mut eps_hat = z_t - &(&x0 * ab.sqrt());
                eps_hat /= (1.0 - ab).sqrt();
                let mut out = x0 * abp.sqrt();
                out.scaled_add((1.0 - abp).sqrt(), &eps_hat);
                out
            }
        };
        let held = match t_prev {
            None => ctx.seed_latent.clone(),
            Some(tp) => self.noised(ctx.seed_latent, ctx.noise, tp),
        };
        blend_object_cells(&mut next, &held, ctx.object_cells);
        Ok(next)
    }
}

fn blend_object_cells(z: &mut Latent, held: &Latent, cells: &Array2<bool>) {
    let (c, h, w) = z.dim();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                if cells[[y, x]] {
                    z[[ch, y, x]] = held[[ch, y, x]];
                }
            }
        }
    }
}

/// `eps + alpha * g`, with `g` L2-normalised and then clipped to
/// `grad_norm_clip`. A zero gradient leaves the noise unchanged.
pub fn optimize_noise_step(eps: &NoiseTensor, grad: &GradientTensor, cfg: &GuidanceConfig) -> Result<NoiseTensor> {
    if eps.values.dim() != grad.values.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise {:?} vs gradient {:?}",
            eps.values.dim(),
            grad.values.dim()
        )));
    }
    if grad.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    let norm = grad.norm();
    if norm == 0.0 || cfg.alpha == 0.0 {
        return Ok(eps.clone());
    }
    let step_norm = 1.0_f64.min(cfg.grad_norm_clip);
    let mut values = eps.values.clone();
    values.scaled_add(cfg.alpha * step_norm / norm, &grad.values);
    Ok(NoiseTensor {
        values,
        rng_seed: eps.rng_seed,
    })
}

/// Fixed inputs of one guided generation.
pub struct GuidanceProblem<'a> {
    pub seed: &'a RasterImage,
    pub object_mask: &'a BinaryMask,
    pub gt: &'a GroundTruth,
    pub detection: &'a DetectionConfig,
}

/// Detection loss of the one-step clean prediction at `z_t` and its
/// gradient with respect to `z_t`.
pub fn loss_at_latent(
    diff: &mut dyn DiffusionBackend,
    det: &mut dyn DetectorBackend,
    problem: &GuidanceProblem<'_>,
    z_t: &Latent,
    t: usize,
    prompts: &PromptPair,
) -> Result<(DetectionLoss, Latent)> {
    let ctx = problem.seed.source_id().to_string();
    let x0 = diff
        .predict_clean(z_t, t, prompts)
        .map_err(|e| Error::backend(&ctx, e))?;
    let decoded = diff.decode(&x0).map_err(|e| Error::backend(&ctx, e))?;
    let comp = composite_object_over(&decoded, problem.seed, problem.object_mask)?;
    let (loss, mut g_img) = compute_od_loss(&comp, problem.gt, det, problem.detection)?;
    // the composite ignores generated pixels under the object mask
    for ((y, x), &obj) in problem.object_mask.bits().indexed_iter() {
        if obj {
            for c in 0..3 {
                g_img[[y, x, c]] = 0.0;
            }
        }
    }
    let g_x0 = diff.decode_vjp(&x0, &g_img).map_err(|e| Error::backend(&ctx, e))?;
    let g_z = diff
        .predict_clean_vjp(z_t, t, prompts, &g_x0)
        .map_err(|e| Error::backend(&ctx, e))?;
    if g_z.dim() != z_t.dim() {
        return Err(Error::ShapeMismatch(
            "predict_clean_vjp changed the latent shape".into(),
        ));
    }
    Ok((loss, g_z))
}

/// Output of one guided generation.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub image: RasterImage,
    pub detections: DetectionResult,
    pub report: FailureReport,
    pub trace: GuidanceTrace,
}

struct Guide<'a, 'b> {
    det: &'a mut dyn DetectorBackend,
    problem: &'a GuidanceProblem<'b>,
}

fn sample(
    seed: &RasterImage,
    object_mask: &BinaryMask,
    cfg: &GuidanceConfig,
    diff: &mut dyn DiffusionBackend,
    mut guide: Option<Guide<'_, '_>>,
    trace: &mut GuidanceTrace,
) -> Result<RasterImage> {
    cfg.validate()?;
    if object_mask.dims() != seed.dims() {
        return Err(Error::DimensionMismatch {
            expected: seed.dims(),
            actual: object_mask.dims(),
        });
    }
    let ctx_id = seed.source_id().to_string();
    let shape = diff.latent_shape(seed.width(), seed.height());
    let seed_latent = diff.encode(seed).map_err(|e| Error::backend(&ctx_id, e))?;
    if seed_latent.dim() != shape {
        return Err(Error::ShapeMismatch(format!(
            "encoder returned {:?}, expected {shape:?}",
            seed_latent.dim()
        )));
    }
    let cells = diff.object_cells(object_mask);
    let prompts = cfg.prompts();
    let mut eps = NoiseTensor::sample(shape, cfg.rng_seed);
    let steps = diff.timesteps(cfg.denoise_steps);
    let first_guided = cfg.denoise_steps - cfg.effective_guidance_steps();

    let mut z = eps.values.clone();
    let held = diff.noised(&seed_latent, &eps.values, steps[0]);
    blend_object_cells(&mut z, &held, &cells);

    for (i, &t) in steps.iter().enumerate() {
        if let (Some(g), true) = (guide.as_mut(), i >= first_guided) {
            let (loss, g_z) = match loss_at_latent(diff, g.det, g.problem, &z, t, &prompts) {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { .. }) => {
                    return Err(Error::GuidanceAborted {
                        step: i,
                        trace: Box::new(trace.clone()),
                    })
                }
                Err(e) => return Err(e),
            };
            let grad = GradientTensor {
                values: diff.grad_latent_wrt_noise(t, &g_z),
            };
            trace.rows.push(TraceRow {
                step: i,
                t,
                total_loss: loss.total,
                cls_loss: loss.classification,
                reg_loss: loss.bbox_regression,
                grad_norm_preclip: grad.norm(),
            });
            let updated = optimize_noise_step(&eps, &grad, cfg)?;
            z = diff.renoise(&z, t, &eps.values, &updated.values);
            eps = updated;
        }
        let ctx = InpaintContext {
            seed_latent: &seed_latent,
            object_cells: &cells,
            noise: &eps.values,
            prompts: &prompts,
        };
        z = diff
            .denoise_step(&z, t, steps.get(i + 1).copied(), &ctx)
            .map_err(|e| Error::backend(&ctx_id, e))?;
    }
    let decoded = diff.decode(&z).map_err(|e| Error::backend(&ctx_id, e))?;
    composite_object_over(&decoded, seed, object_mask)
}

/// Plain inpainting of the environment region, no detector feedback.
pub fn inpaint(
    seed: &RasterImage,
    object_mask: &BinaryMask,
    cfg: &GuidanceConfig,
    diff: &mut dyn DiffusionBackend,
) -> Result<RasterImage> {
    sample(seed, object_mask, cfg, diff, None, &mut GuidanceTrace::default())
}

/// Guided generation of one candidate, followed by detection and failure
/// classification of the composited result.
pub fn generate_rfm_candidate(
    problem: &GuidanceProblem<'_>,
    cfg: &GuidanceConfig,
    diff: &mut dyn DiffusionBackend,
    det: &mut dyn DetectorBackend,
) -> Result<Candidate> {
    if problem.gt.is_empty() {
        return Err(Error::Precondition("ground truth is empty".into()));
    }
    let mut trace = GuidanceTrace::default();
    let guide = Guide {
        det: &mut *det,
        problem,
    };
    let image = sample(problem.seed, problem.object_mask, cfg, diff, Some(guide), &mut trace)?;
    let final_loss = match compute_od_loss(&image, problem.gt, det, problem.detection) {
        Ok((loss, _)) => loss,
        Err(Error::NonFiniteLoss { .. }) => {
            return Err(Error::GuidanceAborted {
                step: cfg.denoise_steps,
                trace: Box::new(trace),
            })
        }
        Err(e) => return Err(e),
    };
    trace.final_loss = Some(final_loss);
    let detections = detect(&image, det, problem.detection)?;
    let report = classify_failure(&detections, problem.gt, problem.detection);
    Ok(Candidate {
        image,
        detections,
        report,
        trace,
    })
}
