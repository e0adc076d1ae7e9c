//! Verbatim prompt resources. The caption pair is pinned by
//! [`PROMPT_VERSION`] and [`PROMPT_DIGEST`].

use crate::util::sha256_hex;

pub const SYSTEM: &str = include_str!("../../resources/prompts/caption_system.txt");
pub const USER: &str = include_str!("../../resources/prompts/caption_user.txt");
/// Shared negative prompt for image generation.
pub const NEGATIVE: &str = include_str!("../../resources/prompts/negative.txt");
pub const VIDEO_POSITIVE: &str = include_str!("../../resources/prompts/video_positive.txt");
pub const VIDEO_NEGATIVE: &str = include_str!("../../resources/prompts/video_negative.txt");

pub const PROMPT_VERSION: &str = "caption-v1";

/// SHA-256 of `SYSTEM`, a NUL byte, then `USER`.
pub const PROMPT_DIGEST: &str = "bc30781b5534e529ecdb68b35325e3ae5ad9b4935d63a99ed1e3ad591fddc56e";

pub fn caption_pair_digest(system: &str, user: &str) -> String {
    let mut bytes = Vec::with_capacity(system.len() + user.len() + 1);
    bytes.extend_from_slice(system.as_bytes());
    bytes.push(0);
    bytes.extend_from_slice(user.as_bytes());
    sha256_hex(&bytes)
}
