//! Consistency verification: similarity to the seed, fooling rate,
//! confidence statistics and batch-relative outlier flags.

mod metrics;
mod stats;

pub use metrics::{
    gaussian_taps, lpips, mse, psnr, psnr_from_mse, ssim, IdentityFeatures, PerceptualBackend, PooledPyramid,
    SSIM_SIGMA, SSIM_WINDOW,
};
pub use stats::{
    flag_unrealistic, fooling_rate, percentile, read_metrics_csv, summarize, write_metrics_csv, ColumnSummary,
    FilterConfig, MetricRecord, Stats, SummaryStats, UnrealisticFlag,
};
