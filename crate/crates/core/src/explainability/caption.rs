use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompts::{PROMPT_VERSION, SYSTEM, USER};
use super::ThermalImage;
use crate::error::{BackendError, Error, Result};
use crate::util::sha256_hex;

/// Everything an image-to-text backend receives. Detection results are
/// deliberately absent; the image carries no id either.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionRequest<'a> {
    #[serde(with = "hex_bytes")]
    pub image_png: Vec<u8>,
    pub system_prompt: &'a str,
    pub user_prompt: &'a str,
}

mod hex_bytes {
    pub fn serialize<S: serde::Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }
}

pub trait Image2TextBackend: Send + Sync {
    fn model_id(&self) -> &str;
    fn caption(&self, request: &CaptionRequest<'_>) -> std::result::Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub image_id: String,
    pub text: String,
    pub prompt_version: String,
    pub model_id: String,
    pub created_at: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: usize,
    /// Delay before retry `k` is `base_delay_ms * 2^k`.
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: usize) -> Self {
        Self {
            max_retries,
            base_delay_ms: 0,
        }
    }

    fn delay(&self, retry: usize) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1 << retry.min(20)))
    }
}

pub fn encode_png(t: &ThermalImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    t.image
        .to_rgb8()
        .write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory png encoding");
    buf.into_inner()
}

pub fn generate_caption(t: &ThermalImage, b: &dyn Image2TextBackend, policy: &RetryPolicy) -> Result<CaptionRecord> {
    let request = CaptionRequest {
        image_png: encode_png(t),
        system_prompt: SYSTEM,
        user_prompt: USER,
    };
    let mut attempt = 0;
    loop {
        let err = match b.caption(&request) {
            Ok(text) if !text.trim().is_empty() => {
                if attempt > 0 {
                    log::info!("caption for {} succeeded after {attempt} retries", t.base_image_id);
                }
                return Ok(CaptionRecord {
                    image_id: t.base_image_id.clone(),
                    text,
                    prompt_version: PROMPT_VERSION.to_string(),
                    model_id: b.model_id().to_string(),
                    created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
                });
            }
            Ok(_) => BackendError::new("empty caption"),
            Err(e) => e,
        };
        if attempt >= policy.max_retries {
            return Err(Error::CaptionUnavailable {
                image_id: t.base_image_id.clone(),
                attempts: attempt + 1,
                last_error: err,
            });
        }
        log::warn!(
            "caption for {} failed (attempt {}): {err}",
            t.base_image_id,
            attempt + 1
        );
        std::thread::sleep(policy.delay(attempt));
        attempt += 1;
    }
}

/// Deterministic captioner: looks the image up by the SHA-256 of its PNG
/// bytes and falls back to a fixed text.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixtureCaptioner {
    pub by_digest: BTreeMap<String, String>,
    pub fallback: String,
}

impl FixtureCaptioner {
    pub fn with_fallback(text: impl Into<String>) -> Self {
        Self {
            by_digest: BTreeMap::new(),
            fallback: text.into(),
        }
    }

    pub fn insert(&mut self, t: &ThermalImage, text: impl Into<String>) {
        self.by_digest.insert(sha256_hex(&encode_png(t)), text.into());
    }
}

impl Image2TextBackend for FixtureCaptioner {
    fn model_id(&self) -> &str {
        "fixture"
    }

    fn caption(&self, request: &CaptionRequest<'_>) -> std::result::Result<String, BackendError> {
        let key = sha256_hex(&request.image_png);
        Ok(self.by_digest.get(&key).unwrap_or(&self.fallback).clone())
    }
}

pub fn write_captions_jsonl<W: Write>(mut w: W, records: &[CaptionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_captions_jsonl<R: BufRead>(r: R) -> std::result::Result<Vec<CaptionRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainability::{render_thermal, ActivationHeatmap};
    use crate::imaging::street_scene;
    use ndarray::Array2;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn thermal() -> ThermalImage {
        let img = street_scene(16, 16);
        let h = ActivationHeatmap {
            values: Array2::from_shape_fn((16, 16), |(y, x)| (x * y) as f64 / 225.0),
            source_layer: "l".into(),
        };
        render_thermal(&img, &h, 0.5).unwrap()
    }

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl Image2TextBackend for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }
        fn caption(&self, _: &CaptionRequest<'_>) -> std::result::Result<String, BackendError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(BackendError::new(format!("http 503 #{n}")))
            } else {
                Ok("attention on the road".into())
            }
        }
    }

    #[test]
    fn fixture_passthrough() {
        let t = thermal();
        let mut b = FixtureCaptioner::with_fallback("default");
        b.insert(&t, "golden");
        let r = generate_caption(&t, &b, &RetryPolicy::no_delay(3)).unwrap();
        assert_eq!(r.text, "golden");
        assert_eq!(r.prompt_version, "caption-v1");
        assert_eq!(r.model_id, "fixture");
        assert_eq!(r.image_id, "seed");
    }

    #[test]
    fn retries_then_succeeds() {
        let b = Flaky {
            failures: 2,
            calls: AtomicUsize::new(0),
        };
        let r = generate_caption(&thermal(), &b, &RetryPolicy::no_delay(3)).unwrap();
        assert_eq!(r.text, "attention on the road");
        assert_eq!(b.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let b = Flaky {
            failures: 10,
            calls: AtomicUsize::new(0),
        };
        let err = generate_caption(&thermal(), &b, &RetryPolicy::no_delay(3)).unwrap_err();
        match err {
            Error::CaptionUnavailable {
                attempts, last_error, ..
            } => {
                assert_eq!(attempts, 4);
                assert!(last_error.0.contains("#3"));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(b.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(2000));
    }

    #[test]
    fn jsonl_roundtrip() {
        let r = CaptionRecord {
            image_id: "a".into(),
            text: "t".into(),
            prompt_version: PROMPT_VERSION.into(),
            model_id: "m".into(),
            created_at: "2024-01-01T00:00:00Z".into(),
        };
        let mut buf = Vec::new();
        write_captions_jsonl(&mut buf, std::slice::from_ref(&r)).unwrap();
        assert_eq!(read_captions_jsonl(&buf[..]).unwrap(), vec![r]);
    }
}
