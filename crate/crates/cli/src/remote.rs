use std::time::Duration;

use base64::Engine;
use rfm_core::explainability::{CaptionRequest, Image2TextBackend};
use rfm_core::pipeline::RemoteCaptionerSpec;
use rfm_core::BackendError;
use serde_json::{json, Value};

/// Image-to-text client for a chat-completions style HTTP endpoint.
pub struct RemoteCaptioner {
    spec: RemoteCaptionerSpec,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl RemoteCaptioner {
    /// Reads the API key from the environment variable named in the spec.
    pub fn new(spec: RemoteCaptionerSpec) -> anyhow::Result<Self> {
        let api_key = std::env::var(&spec.api_key_env)
            .map_err(|_| anyhow::anyhow!("environment variable {} is not set", spec.api_key_env))?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(spec.timeout_secs))
            .build()?;
        Ok(Self { spec, api_key, client })
    }
}

/// Request body: system prompt, user prompt and the overlay as a data URL.
pub fn payload(model: &str, req: &CaptionRequest<'_>) -> Value {
    let png = base64::engine::general_purpose::STANDARD.encode(&req.image_png);
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": req.system_prompt},
            {"role": "user", "content": [
                {"type": "text", "text": req.user_prompt},
                {"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{png}")}},
            ]},
        ],
    })
}

pub fn parse_response(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::new("response has no choices[0].message.content"))
}

impl Image2TextBackend for RemoteCaptioner {
    fn model_id(&self) -> &str {
        &self.spec.model
    }

    fn caption(&self, request: &CaptionRequest<'_>) -> Result<String, BackendError> {
        let body: Value = self
            .client
            .post(&self.spec.endpoint)
            .bearer_auth(&self.api_key)
            .json(&payload(&self.spec.model, request))
            .send()
            .and_then(|r| r.error_for_status())
            .and_then(|r| r.json())
            .map_err(|e| BackendError::new(e.to_string()))?;
        parse_response(&body)
    }
}
