//! Monte-Carlo BER curves and the f-kernel micro-benchmark.
//!
//! Frames are generated in fixed-size chunks, each drawn from its own ChaCha
//! stream keyed by `(seed, snr index, chunk index)`. Chunks are decoded in
//! parallel and error counts are summed, so results do not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use crate::builder::NnDecoder;
use crate::channel::{ChannelConfig, Frame, FrameSource};
use crate::decoders::{f_function, FVariant, MlDecoder, ScDecoder};
use crate::error::{param, Error, Result};
use crate::nn::NeuralDecoder;
use crate::polar::{BitWord, PolarCode};
use crate::rng::stream_rng;

/// Frames per generated chunk.
pub const CHUNK_FRAMES: usize = 256;
const CHUNKS_PER_ROUND: usize = 32;

/// Anything that maps N channel LLRs to K message bits.
pub trait Decoder: Send + Sync {
    fn decode(&self, llrs: &[f64]) -> Result<BitWord>;
}

impl Decoder for ScDecoder {
    fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        ScDecoder::decode(self, llrs)
    }
}

impl Decoder for MlDecoder {
    fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        MlDecoder::decode(self, llrs)
    }
}

impl Decoder for NnDecoder {
    fn decode(&self, llrs: &[f64]) -> Result<BitWord> {
        NnDecoder::decode(self, llrs)
    }
}

/// When to stop simulating one SNR point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub min_frames: u64,
    /// Every decoder in the comparison must reach this many bit errors.
    pub min_bit_errors: u64,
    /// Hard cap, reached first in near-noiseless regimes.
    pub max_frames: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_frames: 10_000,
            min_bit_errors: 100,
            max_frames: 10_000_000,
        }
    }
}

impl StopRule {
    /// Exactly `frames` frames (rounded up to whole chunks).
    pub fn fixed(frames: u64) -> Self {
        Self {
            min_frames: frames,
            min_bit_errors: 0,
            max_frames: frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BerPoint {
    pub snr_db: f64,
    pub decoder: String,
    pub frames: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
}

impl BerPoint {
    /// Binomial standard error of the BER estimate.
    pub fn std_error(&self) -> f64 {
        if self.bits == 0 {
            return 0.0;
        }
        (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }
}

pub const BER_CSV_HEADER: &str = "snr_db,decoder,frames,bits,bit_errors,ber";

pub fn ber_csv(points: &[BerPoint]) -> String {
    let mut out = String::from(BER_CSV_HEADER);
    out.push('\n');
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6e}",
            p.snr_db, p.decoder, p.frames, p.bits, p.bit_errors, p.ber
        );
    }
    out
}

/// Simulation settings shared by every point of a curve.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    pub stop: StopRule,
    pub seed: u64,
    /// Channel LLR clamp.
    pub l_max: f64,
}

impl SimConfig {
    pub fn new(stop: StopRule, seed: u64) -> Self {
        Self {
            stop,
            seed,
            l_max: crate::builder::DEFAULT_L_MAX,
        }
    }
}

fn bit_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

fn chunk_key(snr_index: usize, chunk: u64) -> u64 {
    ((snr_index as u64) << 40) | chunk
}

/// BER curve of a single decoder.
pub fn run_ber(
    decoder: &dyn Decoder,
    name: &str,
    code: &PolarCode,
    snr_list: &[f64],
    config: &SimConfig,
) -> Result<Vec<BerPoint>> {
    compare_decoders(code, &[(name, decoder)], snr_list, config)
}

/// BER of several decoders on identical frames (common random numbers).
///
/// One point per `(snr, decoder)`, ordered by SNR then by decoder.
pub fn compare_decoders(
    code: &PolarCode,
    decoders: &[(&str, &dyn Decoder)],
    snr_list: &[f64],
    config: &SimConfig,
) -> Result<Vec<BerPoint>> {
    if snr_list.is_empty() {
        return Err(param("SNR list is empty"));
    }
    if decoders.is_empty() {
        return Err(param("no decoders to compare"));
    }
    let stop = config.stop;
    let mut points = Vec::with_capacity(snr_list.len() * decoders.len());
    for (si, &snr) in snr_list.iter().enumerate() {
        let sigma = ChannelConfig::for_code(code, snr)?.sigma;
        let source = FrameSource::new(code.clone(), sigma, config.l_max, config.seed);
        let mut errors = vec![0u64; decoders.len()];
        let mut frames = 0u64;
        let mut next_chunk = 0u64;
        loop {
            let wanted = if frames == 0 {
                (stop.min_frames.max(1) as usize).div_ceil(CHUNK_FRAMES)
            } else {
                CHUNKS_PER_ROUND
            };
            let cap = (stop.max_frames.saturating_sub(frames) as usize).div_ceil(CHUNK_FRAMES);
            let round = wanted.min(cap).max(1);
            let counts = (next_chunk..next_chunk + round as u64)
                .into_par_iter()
                .map(|c| {
                    let mut local = vec![0u64; decoders.len()];
                    for frame in source.chunk(chunk_key(si, c), CHUNK_FRAMES) {
                        for (slot, (_, dec)) in local.iter_mut().zip(decoders) {
                            *slot += bit_errors(&dec.decode(&frame.llrs)?, &frame.message);
                        }
                    }
                    Ok(local)
                })
                .collect::<Result<Vec<_>>>()?;
            for local in counts {
                for (e, l) in errors.iter_mut().zip(local) {
                    *e += l;
                }
            }
            next_chunk += round as u64;
            frames += (round * CHUNK_FRAMES) as u64;
            let enough_errors = errors.iter().all(|&e| e >= stop.min_bit_errors);
            if (frames >= stop.min_frames && enough_errors) || frames >= stop.max_frames {
                break;
            }
        }
        let bits = frames * code.k() as u64;
        for ((name, _), &e) in decoders.iter().zip(&errors) {
            points.push(BerPoint {
                snr_db: snr,
                decoder: (*name).to_string(),
                frames,
                bits,
                bit_errors: e,
                ber: if bits == 0 {
                    0.0
                } else {
                    e as f64 / bits as f64
                },
            });
        }
    }
    Ok(points)
}

/// Outcome of comparing a neural decoder with SC frame by frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EquivalenceReport {
    pub frames: u64,
    pub bits: u64,
    pub disagreeing_bits: u64,
    pub disagreeing_frames: u64,
    /// Disagreeing frames whose SC leaf LLRs all had `|llr| >= eps`.
    pub unguarded_disagreements: u64,
    /// Frames with some SC leaf LLR inside the dead zone.
    pub dead_zone_frames: u64,
}

impl EquivalenceReport {
    pub fn disagreement_rate(&self) -> f64 {
        if self.bits == 0 {
            0.0
        } else {
            self.disagreeing_bits as f64 / self.bits as f64
        }
    }

    fn absorb(&mut self, other: &EquivalenceReport) {
        self.frames += other.frames;
        self.bits += other.bits;
        self.disagreeing_bits += other.disagreeing_bits;
        self.disagreeing_frames += other.disagreeing_frames;
        self.unguarded_disagreements += other.unguarded_disagreements;
        self.dead_zone_frames += other.dead_zone_frames;
    }
}

/// Hardened `net` against SC over `frames` AWGN frames at `snr_db`.
pub fn nn_sc_equivalence(
    code: &PolarCode,
    net: &NeuralDecoder,
    snr_db: f64,
    frames: u64,
    config: &SimConfig,
) -> Result<EquivalenceReport> {
    let sigma = ChannelConfig::for_code(code, snr_db)?.sigma;
    let source = FrameSource::new(code.clone(), sigma, config.l_max, config.seed);
    let sc = ScDecoder::new(code.clone());
    let nn = NnDecoder::new(net.clone());
    let chunks = (frames as usize).div_ceil(CHUNK_FRAMES) as u64;
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = EquivalenceReport::default();
            let remaining = frames - c * CHUNK_FRAMES as u64;
            let take = remaining.min(CHUNK_FRAMES as u64) as usize;
            for frame in source.chunk(c, CHUNK_FRAMES).into_iter().take(take) {
                let trace = sc.decode_traced(&frame.llrs)?;
                let guess = nn.decode(&frame.llrs)?;
                let diff = bit_errors(&guess, &trace.message);
                let in_dead_zone = trace.min_leaf_magnitude < net.eps;
                r.frames += 1;
                r.bits += code.k() as u64;
                r.disagreeing_bits += diff;
                r.dead_zone_frames += u64::from(in_dead_zone);
                if diff > 0 {
                    r.disagreeing_frames += 1;
                    r.unguarded_disagreements += u64::from(!in_dead_zone);
                }
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = EquivalenceReport::default();
    for p in &parts {
        total.absorb(p);
    }
    Ok(total)
}

/// Regenerates the frames [`compare_decoders`] would see at one SNR point.
pub fn frames_at(
    code: &PolarCode,
    snr_db: f64,
    snr_index: usize,
    chunks: u64,
    config: &SimConfig,
) -> Result<Vec<Frame>> {
    let sigma = ChannelConfig::for_code(code, snr_db)?.sigma;
    let source = FrameSource::new(code.clone(), sigma, config.l_max, config.seed);
    Ok((0..chunks)
        .flat_map(|c| source.chunk(chunk_key(snr_index, c), CHUNK_FRAMES))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub variant: String,
    pub batch: usize,
    pub reps: usize,
    pub median_ns_per_op: f64,
    /// Baseline time over this kernel's time; above 1 means faster.
    pub rel_speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,batch,reps,median_ns_per_op,rel_speed\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4}",
                r.variant, r.batch, r.reps, r.median_ns_per_op, r.rel_speed
            );
        }
        out
    }
}

/// A named elementwise kernel over LLR arrays.
pub type Kernel = fn(&[f64], &[f64], &mut [f64]);

fn apply_variant<const V: u8>(a: &[f64], b: &[f64], out: &mut [f64]) {
    let variant = FVariant::ALL[V as usize];
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = f_function(x, y, variant);
    }
}

/// The four `f` formulations as monomorphised kernels.
pub fn f_kernels() -> Vec<(&'static str, Kernel)> {
    vec![
        (FVariant::SignMin.name(), apply_variant::<0> as Kernel),
        (FVariant::MinMax.name(), apply_variant::<1> as Kernel),
        (FVariant::AbsHalf.name(), apply_variant::<2> as Kernel),
        (FVariant::Relu.name(), apply_variant::<3> as Kernel),
    ]
}

/// Times the `f` variants over contiguous LLR arrays.
pub fn bench_f_variants(batch: usize, reps: usize, seed: u64) -> Result<BenchReport> {
    bench_kernels(&f_kernels(), batch, reps, seed)
}

/// Times `kernels` after checking they agree within 1e-12 on the timed data.
///
/// The first kernel is the reference for both equivalence and speed.
pub fn bench_kernels(
    kernels: &[(&str, Kernel)],
    batch: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if batch == 0 || reps == 0 {
        return Err(param("batch and reps must be positive"));
    }
    let (_, reference) = kernels
        .first()
        .ok_or_else(|| param("no kernels to benchmark"))?;
    let mut rng = stream_rng(seed, 0);
    let a: Vec<f64> = (0..batch).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let b: Vec<f64> = (0..batch).map(|_| rng.gen_range(-50.0..50.0)).collect();
    let mut expected = vec![0.0; batch];
    reference(&a, &b, &mut expected);
    let mut out = vec![0.0; batch];
    for (name, kernel) in kernels {
        kernel(&a, &b, &mut out);
        if let Some(i) = (0..batch).find(|&i| (out[i] - expected[i]).abs() > 1e-12) {
            return Err(Error::Equivalence(format!(
                "kernel `{name}` gives {} at ({}, {}), reference gives {}",
                out[i], a[i], b[i], expected[i]
            )));
        }
    }
    let mut medians = Vec::with_capacity(kernels.len());
    for (_, kernel) in kernels {
        let mut samples: Vec<f64> = (0..reps)
            .map(|_| {
                let start = Instant::now();
                kernel(black_box(&a), black_box(&b), black_box(&mut out));
                start.elapsed().as_nanos() as f64 / batch as f64
            })
            .collect();
        samples.sort_by(f64::total_cmp);
        // Timer resolution can round very fast runs to zero.
        medians.push(samples[samples.len() / 2].max(f64::MIN_POSITIVE));
    }
    let base = medians[0];
    Ok(BenchReport {
        rows: kernels
            .iter()
            .zip(&medians)
            .map(|((name, _), &m)| BenchRow {
                variant: (*name).to_string(),
                batch,
                reps,
                median_ns_per_op: m,
                rel_speed: base / m,
            })
            .collect(),
    })
}
