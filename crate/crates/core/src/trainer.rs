//! Fine-tuning of constructed decoders.
//!
//! Datasets pair channel LLRs with ±1 message symbols. Hard cases are frames
//! the network gets wrong while ML gets them right. Training is minibatch
//! gradient descent on MSE; per-batch gradients are computed in parallel over
//! fixed sub-batches and summed in order, so runs are reproducible regardless
//! of thread count.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::builder::harden;
use crate::channel::FrameSource;
use crate::decoders::MlDecoder;
use crate::error::{param, Error, Result};
use crate::eval::CHUNK_FRAMES;
use crate::nn::{Activation, GradientSet, NeuralDecoder};
use crate::polar::PolarCode;
use crate::rng::stream_rng;

const SUB_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Random,
    Mined,
}

impl Provenance {
    pub fn name(self) -> &'static str {
        match self {
            Provenance::Random => "random",
            Provenance::Mined => "mined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub llrs: Vec<f64>,
    /// Message symbols, `+1` for bit 1 and `-1` for bit 0.
    pub target: Vec<f64>,
    pub provenance: Provenance,
}

impl Sample {
    pub fn new(llrs: Vec<f64>, message: &[u8], provenance: Provenance) -> Self {
        Self {
            llrs,
            target: message.iter().map(|&b| 2.0 * f64::from(b) - 1.0).collect(),
            provenance,
        }
    }

    pub fn message(&self) -> Vec<u8> {
        self.target.iter().map(|&t| u8::from(t > 0.0)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub items: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.items
            .iter()
            .filter(|s| s.provenance == provenance)
            .count()
    }

    pub fn extend(&mut self, other: Dataset) {
        self.items.extend(other.items);
    }

    /// CSV with a `provenance,llr_0,..,target_0,..` header.
    pub fn to_csv(&self) -> String {
        let (n, k) = self
            .items
            .first()
            .map_or((0, 0), |s| (s.llrs.len(), s.target.len()));
        let mut out = String::from("provenance");
        for i in 0..n {
            let _ = write!(out, ",llr_{i}");
        }
        for i in 0..k {
            let _ = write!(out, ",target_{i}");
        }
        out.push('\n');
        for s in &self.items {
            out.push_str(s.provenance.name());
            for v in s.llrs.iter().chain(&s.target) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`Dataset::to_csv`] output; `#` lines are skipped.
    pub fn from_csv(text: &str) -> Result<Dataset> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Format {
            line: 1,
            msg: "missing dataset header".into(),
        })?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"provenance") {
            return Err(Error::Format {
                line: 1,
                msg: "dataset header must start with `provenance`".into(),
            });
        }
        let n = cols.iter().filter(|c| c.starts_with("llr_")).count();
        let k = cols.iter().filter(|c| c.starts_with("target_")).count();
        let mut items = Vec::new();
        for (idx, line) in lines {
            let err = |msg: String| Error::Format { line: idx + 1, msg };
            let mut fields = line.split(',');
            let provenance = match fields.next() {
                Some("random") => Provenance::Random,
                Some("mined") => Provenance::Mined,
                other => return Err(err(format!("unknown provenance {other:?}"))),
            };
            let values = fields
                .map(str::parse::<f64>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(e.to_string()))?;
            if values.len() != n + k {
                return Err(err(format!(
                    "expected {} values, found {}",
                    n + k,
                    values.len()
                )));
            }
            if values[n..].iter().any(|&t| t != 1.0 && t != -1.0) {
                return Err(err("targets must be exactly +1 or -1".into()));
            }
            items.push(Sample {
                llrs: values[..n].to_vec(),
                target: values[n..].to_vec(),
                provenance,
            });
        }
        Ok(Dataset { items })
    }
}

/// `count` uniformly random frames, all tagged random.
pub fn gen_dataset(
    code: &PolarCode,
    sigma: f64,
    count: usize,
    l_max: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma >= 0.0) {
        return Err(param("sigma must be non-negative"));
    }
    let source = FrameSource::new(code.clone(), sigma, l_max, seed);
    let chunks = count.div_ceil(CHUNK_FRAMES);
    let items = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let take = (count - c * CHUNK_FRAMES).min(CHUNK_FRAMES);
            source
                .chunk(c as u64, take)
                .into_iter()
                .map(|f| Sample::new(f.llrs, &f.message, Provenance::Random))
        })
        .collect();
    Ok(Dataset { items })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiningReport {
    pub frames_drawn: u64,
    pub found: usize,
}

impl MiningReport {
    pub fn find_rate(&self) -> f64 {
        if self.frames_drawn == 0 {
            0.0
        } else {
            self.found as f64 / self.frames_drawn as f64
        }
    }
}

/// Whether `net` misdecodes `llrs` while ML recovers `message`.
pub fn is_hard_case(
    net: &NeuralDecoder,
    ml: &MlDecoder,
    llrs: &[f64],
    message: &[u8],
) -> Result<bool> {
    Ok(harden(&net.forward(llrs)?) != message && ml.decode(llrs)? == message)
}

/// Draws frames until `want` hard cases are found or `budget` frames are spent.
pub fn mine_hard_cases(
    code: &PolarCode,
    net: &NeuralDecoder,
    want: usize,
    sigma: f64,
    l_max: f64,
    seed: u64,
    budget: u64,
) -> Result<(Dataset, MiningReport)> {
    let ml = MlDecoder::new(code)?;
    let source = FrameSource::new(code.clone(), sigma, l_max, seed);
    let threads = rayon::current_num_threads().max(1);
    let mut items = Vec::new();
    let mut drawn = 0u64;
    let mut next_chunk = 0u64;
    while items.len() < want && drawn < budget {
        let round = (budget - drawn)
            .div_ceil(CHUNK_FRAMES as u64)
            .min(4 * threads as u64);
        let results = (next_chunk..next_chunk + round)
            .into_par_iter()
            .map(|c| {
                let offset = (c - next_chunk) * CHUNK_FRAMES as u64;
                let take = (budget - drawn - offset).min(CHUNK_FRAMES as u64) as usize;
                let mut finds = Vec::new();
                for (i, f) in source.chunk(c, take).into_iter().enumerate() {
                    if is_hard_case(net, &ml, &f.llrs, &f.message)? {
                        finds.push((i, Sample::new(f.llrs, &f.message, Provenance::Mined)));
                    }
                }
                Ok((take, finds))
            })
            .collect::<Result<Vec<_>>>()?;
        next_chunk += round;
        for (take, finds) in results {
            for (i, sample) in finds {
                if items.len() == want {
                    break;
                }
                items.push(sample);
                if items.len() == want {
                    drawn += i as u64 + 1;
                }
            }
            if items.len() == want {
                break;
            }
            drawn += take as u64;
        }
    }
    let found = items.len();
    Ok((
        Dataset { items },
        MiningReport {
            frames_drawn: drawn,
            found,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

impl FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Channel SNR the data was drawn at; recorded, not used by the loop.
    pub snr_db: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Share of each batch drawn from mined items, when there are any.
    pub mined_fraction: f64,
    pub seed: u64,
    /// Leave ramp-flagged layers untouched.
    pub freeze_ramp: bool,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Holdout BER is measured every this many iterations and at the end.
    pub eval_interval: usize,
    /// LLR width of the smooth surrogate used to backpropagate through
    /// hard-sign ramps; 0 uses the exact (almost everywhere zero) derivative.
    pub surrogate_width: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            snr_db: 1.0,
            batch_size: 64,
            iterations: 2000,
            learning_rate: 1e-7,
            optimizer: Optimizer::Sgd,
            mined_fraction: 0.25,
            seed: 0,
            freeze_ramp: true,
            clip_norm: 10.0,
            eval_interval: 100,
            surrogate_width: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mined_fraction) {
            return Err(Error::Config("mined_fraction must lie in [0, 1]".into()));
        }
        if self.iterations > 0 && self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate >= 0.0)
            || !(self.clip_norm >= 0.0)
            || !(self.surrogate_width >= 0.0)
        {
            return Err(Error::Config(
                "learning_rate, clip_norm and surrogate_width must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        match key {
            "snr_db" => self.snr_db = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "iterations" => self.iterations = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "mined_fraction" => self.mined_fraction = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "freeze_ramp" => self.freeze_ramp = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "surrogate_width" => self.surrogate_width = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }
}

/// Flat `key = value` lines; `#` starts a comment. Unset keys keep defaults.
impl FromStr for TrainConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got `{line}`")))?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "snr_db = {}", self.snr_db)?;
        writeln!(f, "batch_size = {}", self.batch_size)?;
        writeln!(f, "iterations = {}", self.iterations)?;
        writeln!(f, "learning_rate = {}", self.learning_rate)?;
        writeln!(f, "optimizer = {}", self.optimizer)?;
        writeln!(f, "mined_fraction = {}", self.mined_fraction)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "freeze_ramp = {}", self.freeze_ramp)?;
        writeln!(f, "clip_norm = {}", self.clip_norm)?;
        writeln!(f, "eval_interval = {}", self.eval_interval)?;
        writeln!(f, "surrogate_width = {}", self.surrogate_width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    /// Mean batch loss before the update.
    pub loss: f64,
    pub holdout_ber: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    /// Holdout BER of the untrained network, if a holdout was given.
    pub initial_holdout_ber: Option<f64>,
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn final_holdout_ber(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.holdout_ber)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss,holdout_ber\n");
        for r in &self.rows {
            let ber = r
                .holdout_ber
                .map(|b| format!("{b:.6e}"))
                .unwrap_or_default();
            let _ = writeln!(out, "{},{:.6e},{}", r.iteration, r.loss, ber);
        }
        out
    }
}

/// Bit error rate of hardened `net` outputs against the dataset targets.
pub fn dataset_ber(net: &NeuralDecoder, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let errors: u64 = data
        .items
        .par_iter()
        .map(|s| {
            let bits = harden(&net.forward(&s.llrs)?);
            Ok(bits
                .iter()
                .zip(s.message())
                .filter(|(a, b)| **a != *b)
                .count() as u64)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(errors as f64 / (data.len() * net.output_dim()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RampRow {
    Plain,
    Pair,
}

/// Marks rows of ramp-flagged layers that belong to a hard-sign pair
/// `relu(t + 1)`, `relu(t - 1)`: equal weight rows, biases two apart.
fn ramp_rows(net: &NeuralDecoder) -> Vec<Vec<RampRow>> {
    net.layers()
        .iter()
        .map(|layer| {
            let mut roles = vec![RampRow::Plain; layer.outputs()];
            if !layer.ramp || layer.activation != Activation::Relu {
                return roles;
            }
            let mut groups: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
            for r in 0..layer.outputs() {
                let key = layer.weights.row(r).iter().map(|w| w.to_bits()).collect();
                groups.entry(key).or_default().push(r);
            }
            for rows in groups.values() {
                for &a in rows {
                    for &b in rows {
                        let gap = layer.bias[a] - layer.bias[b];
                        if (gap - 2.0).abs() <= 1e-6 * (1.0 + layer.bias[a].abs()) {
                            roles[a] = RampRow::Pair;
                            roles[b] = RampRow::Pair;
                        }
                    }
                }
            }
            roles
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Batch {
    grads: GradientSet,
    loss: f64,
}

fn batch_gradients(
    net: &NeuralDecoder,
    data: &Dataset,
    indices: &[usize],
    roles: &[Vec<RampRow>],
    surrogate_scale: f64,
    iteration: usize,
) -> Result<Batch> {
    let parts = indices
        .par_chunks(SUB_BATCH)
        .enumerate()
        .map(|(chunk, idx)| {
            let mut grads = GradientSet::zeros_like(net);
            let mut loss = 0.0;
            for (offset, &i) in idx.iter().enumerate() {
                let s = &data.items[i];
                let (g, l) = if surrogate_scale > 0.0 {
                    net.gradients_with(&s.llrs, &s.target, |layer, row, z| {
                        match roles[layer][row] {
                            RampRow::Pair => logistic(z * surrogate_scale),
                            RampRow::Plain => net.layers()[layer].activation.derivative(z),
                        }
                    })?
                } else {
                    net.gradients(&s.llrs, &s.target)?
                };
                if !l.is_finite() || !g.is_finite() {
                    return Err(Error::NonFinite {
                        iteration,
                        batch_index: chunk * SUB_BATCH + offset,
                        detail: format!("dataset item {i} gives loss {l}"),
                    });
                }
                grads.add_scaled(&g, 1.0);
                loss += l;
            }
            Ok(Batch { grads, loss })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Batch {
        grads: GradientSet::zeros_like(net),
        loss: 0.0,
    };
    for p in &parts {
        total.grads.add_scaled(&p.grads, 1.0);
        total.loss += p.loss;
    }
    let n = indices.len() as f64;
    total.grads.scale(1.0 / n);
    total.loss /= n;
    Ok(total)
}

struct AdamState {
    m: GradientSet,
    v: GradientSet,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn apply_update(
    net: &mut NeuralDecoder,
    grads: &GradientSet,
    config: &TrainConfig,
    adam: &mut Option<AdamState>,
) {
    let lr = config.learning_rate;
    let frozen: Vec<bool> = net
        .layers()
        .iter()
        .map(|l| config.freeze_ramp && l.ramp)
        .collect();
    match adam {
        None => {
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                if frozen[l] {
                    continue;
                }
                for (w, g) in layer
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grads.weights[l].as_slice())
                {
                    *w -= lr * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(&grads.biases[l]) {
                    *b -= lr * g;
                }
            }
        }
        Some(state) => {
            state.t += 1;
            let c1 = 1.0 - BETA1.powi(state.t);
            let c2 = 1.0 - BETA2.powi(state.t);
            let step = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            };
            for (l, layer) in net.layers_mut().iter_mut().enumerate() {
                if frozen[l] {
                    continue;
                }
                let params = layer.weights.as_mut_slice().iter_mut();
                let grads_w = grads.weights[l].as_slice();
                let ms = state.m.weights[l].as_mut_slice().iter_mut();
                let vs = state.v.weights[l].as_mut_slice().iter_mut();
                for (((p, &g), m), v) in params.zip(grads_w).zip(ms).zip(vs) {
                    step(p, g, m, v);
                }
                let params = layer.bias.iter_mut();
                let ms = state.m.biases[l].iter_mut();
                let vs = state.v.biases[l].iter_mut();
                for (((p, &g), m), v) in params.zip(&grads.biases[l]).zip(ms).zip(vs) {
                    step(p, g, m, v);
                }
            }
        }
    }
}

fn draw_batch<R: Rng>(
    rng: &mut R,
    random: &[usize],
    mined: &[usize],
    size: usize,
    mined_fraction: f64,
) -> Vec<usize> {
    let from_mined = if mined.is_empty() {
        0
    } else if random.is_empty() {
        size
    } else {
        (size as f64 * mined_fraction).round() as usize
    };
    let mut out = Vec::with_capacity(size);
    out.extend((0..from_mined).map(|_| mined[rng.gen_range(0..mined.len())]));
    out.extend((from_mined..size).map(|_| random[rng.gen_range(0..random.len())]));
    out
}

/// Fine-tunes a copy of `net` on `data`, tracking BER on `holdout`.
pub fn train(
    net: &NeuralDecoder,
    data: &Dataset,
    holdout: &Dataset,
    config: &TrainConfig,
) -> Result<(NeuralDecoder, History)> {
    config.validate()?;
    let mut history = History::default();
    let mut net = net.clone();
    if config.iterations == 0 {
        return Ok((net, history));
    }
    if data.is_empty() {
        return Err(param("training needs a non-empty dataset"));
    }
    let has_holdout = !holdout.is_empty();
    if has_holdout {
        history.initial_holdout_ber = Some(dataset_ber(&net, holdout)?);
    }
    let (mined, random): (Vec<usize>, Vec<usize>) =
        (0..data.len()).partition(|&i| data.items[i].provenance == Provenance::Mined);
    let roles = ramp_rows(&net);
    let surrogate_scale = if config.surrogate_width > 0.0 {
        net.eps / config.surrogate_width
    } else {
        0.0
    };
    let mut adam = match config.optimizer {
        Optimizer::Sgd => None,
        Optimizer::Adam => Some(AdamState {
            m: GradientSet::zeros_like(&net),
            v: GradientSet::zeros_like(&net),
            t: 0,
        }),
    };
    for it in 1..=config.iterations {
        let mut rng = stream_rng(config.seed, it as u64);
        let indices = draw_batch(
            &mut rng,
            &random,
            &mined,
            config.batch_size,
            config.mined_fraction,
        );
        let Batch { mut grads, loss } =
            batch_gradients(&net, data, &indices, &roles, surrogate_scale, it)?;
        if config.freeze_ramp {
            for (l, layer) in net.layers().iter().enumerate() {
                if layer.ramp {
                    grads.weights[l].as_mut_slice().fill(0.0);
                    grads.biases[l].fill(0.0);
                }
            }
        }
        let norm = grads.norm();
        if config.clip_norm > 0.0 && norm > config.clip_norm {
            grads.scale(config.clip_norm / norm);
        }
        apply_update(&mut net, &grads, config, &mut adam);
        if net
            .layers()
            .iter()
            .any(|l| !l.weights.is_finite() || l.bias.iter().any(|b| !b.is_finite()))
        {
            return Err(Error::NonFinite {
                iteration: it,
                batch_index: 0,
                detail: "weights became non-finite after the update".into(),
            });
        }
        let evaluate = has_holdout
            && (it == config.iterations
                || (config.eval_interval > 0 && it % config.eval_interval == 0));
        history.rows.push(HistoryRow {
            iteration: it,
            loss,
            holdout_ber: if evaluate {
                Some(dataset_ber(&net, holdout)?)
            } else {
                None
            },
        });
    }
    Ok((net, history))
}
