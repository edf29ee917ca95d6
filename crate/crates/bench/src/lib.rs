//! Shared fixtures for the criterion benches.

use polarnn::channel::FrameSource;
use polarnn::{ChannelConfig, PolarCode};

/// Channel LLR frames for `code` at `snr_db`.
pub fn llr_frames(code: &PolarCode, snr_db: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let sigma = ChannelConfig::for_code(code, snr_db)
        .expect("positive rate")
        .sigma;
    FrameSource::new(code.clone(), sigma, 20.0, seed)
        .chunk(0, count)
        .into_iter()
        .map(|f| f.llrs)
        .collect()
}
