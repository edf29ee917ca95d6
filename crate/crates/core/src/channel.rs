//! BPSK over AWGN and channel LLRs.
//!
//! Bit `b` is sent as symbol `2b - 1`. Channel LLRs are
//! `ln P(x = -1 | y) / P(x = +1 | y) = -2y / sigma^2`, so a positive LLR
//! favours bit 0.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{param, Result};
use crate::polar::{BitWord, PolarCode};
use crate::rng::stream_rng;

/// Noise level derived from Eb/N0 and code rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub rate: f64,
    pub sigma: f64,
}

impl ChannelConfig {
    pub fn new(snr_db: f64, rate: f64) -> Result<Self> {
        Ok(Self {
            snr_db,
            rate,
            sigma: sigma_from_snr(snr_db, rate)?,
        })
    }

    pub fn for_code(code: &PolarCode, snr_db: f64) -> Result<Self> {
        Self::new(snr_db, code.rate())
    }
}

/// `sigma = sqrt(1 / (2 · rate · 10^(snr_db / 10)))`, with SNR read as Eb/N0.
pub fn sigma_from_snr(snr_db: f64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(param(format!("rate must be positive, got {rate}")));
    }
    Ok((1.0 / (2.0 * rate * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// Modulates and adds white Gaussian noise.
pub fn transmit<R: Rng + ?Sized>(codeword: &[u8], sigma: f64, rng: &mut R) -> Vec<f64> {
    codeword
        .iter()
        .map(|&b| {
            let x = 2.0 * f64::from(b & 1) - 1.0;
            let z: f64 = rng.sample(StandardNormal);
            x + sigma * z
        })
        .collect()
}

/// Channel LLRs, clamped to `[-l_max, l_max]`.
pub fn llr_from_received(received: &[f64], sigma: f64, l_max: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(param("sigma must be positive to form LLRs"));
    }
    let scale = -2.0 / (sigma * sigma);
    Ok(received
        .iter()
        .map(|&y| (scale * y).clamp(-l_max, l_max))
        .collect())
}

/// LLRs of a noiseless transmission: `±l_max` with the sign of the bit.
pub fn noiseless_llrs(codeword: &[u8], l_max: f64) -> Vec<f64> {
    codeword
        .iter()
        .map(|&b| if b & 1 == 1 { -l_max } else { l_max })
        .collect()
}

/// One simulated codeword transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub message: BitWord,
    pub codeword: BitWord,
    pub received: Vec<f64>,
    pub llrs: Vec<f64>,
}

impl Frame {
    /// Draws a uniform message and pushes it through the channel.
    ///
    /// `sigma == 0` yields noiseless `±l_max` LLRs.
    pub fn random<R: Rng + ?Sized>(code: &PolarCode, sigma: f64, l_max: f64, rng: &mut R) -> Frame {
        let message: BitWord = (0..code.k()).map(|_| rng.gen_range(0..2u8)).collect();
        Self::from_message(code, message, sigma, l_max, rng)
    }

    pub fn from_message<R: Rng + ?Sized>(
        code: &PolarCode,
        message: BitWord,
        sigma: f64,
        l_max: f64,
        rng: &mut R,
    ) -> Frame {
        let codeword = code.encode(&message).expect("message length matches K");
        let received = transmit(&codeword, sigma, rng);
        let llrs = if sigma > 0.0 {
            llr_from_received(&received, sigma, l_max).expect("sigma checked")
        } else {
            noiseless_llrs(&codeword, l_max)
        };
        Frame {
            message,
            codeword,
            received,
            llrs,
        }
    }

    /// Writes one CSV row: message bits, codeword bits, then LLRs.
    pub fn write_csv_row<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let bits = |w: &[u8]| w.iter().map(|b| char::from(b'0' + b)).collect::<String>();
        let llrs: Vec<String> = self.llrs.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(
            out,
            "{},{},{}",
            bits(&self.message),
            bits(&self.codeword),
            llrs.join(",")
        )
    }
}

/// Deterministic frame source: frame `i` depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct FrameSource {
    code: PolarCode,
    sigma: f64,
    l_max: f64,
    seed: u64,
}

impl FrameSource {
    pub fn new(code: PolarCode, sigma: f64, l_max: f64, seed: u64) -> Self {
        Self {
            code,
            sigma,
            l_max,
            seed,
        }
    }

    pub fn code(&self) -> &PolarCode {
        &self.code
    }

    /// `count` frames drawn from stream `chunk`.
    pub fn chunk(&self, chunk: u64, count: usize) -> Vec<Frame> {
        let mut rng: ChaCha8Rng = stream_rng(self.seed, chunk);
        (0..count)
            .map(|_| Frame::random(&self.code, self.sigma, self.l_max, &mut rng))
            .collect()
    }
}
