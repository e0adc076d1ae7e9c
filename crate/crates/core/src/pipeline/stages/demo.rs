use std::path::Path;

use crate::error::Result;
use crate::imaging::{save_png, street_scene};
use crate::util::write_atomic;

const DEMO_CONFIG: &str = r#"seed_image = "seed.png"
object_label = "car"
rng_seed = 7
samples_per_prompt = 1
workers = 2

[prompts]
positive = [
    "photo-realistic scene with dense fog",
    "photo-realistic scene in low light",
    "photo-realistic scene with glaring sun",
    "photo-realistic scene in heavy rain",
    "photo-realistic scene with snow",
    "photo-realistic scene at night",
    "photo-realistic scene during a dust storm",
    "photo-realistic scene with strong reflections",
    "photo-realistic scene under heavy clouds",
    "photo-realistic scene in strong wind",
]

[guidance]
alpha = 4.0
denoise_steps = 20
guidance_steps = 5

[caption.retry]
max_retries = 3
base_delay_ms = 0
"#;

/// Writes a synthetic seed image and a config that runs against the toy
/// backends.
pub fn write_demo(dir: &Path) -> Result<()> {
    save_png(&street_scene(64, 64), &dir.join("seed.png"))?;
    write_atomic(&dir.join("config.toml"), DEMO_CONFIG.as_bytes())
}
