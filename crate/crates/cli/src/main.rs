//! `polarnn`: polar codes, constructed neural decoders and BER experiments.

mod manifest;

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use manifest::{emit, RunManifest};
use polarnn::eval::{self, ber_csv, nn_sc_equivalence, SimConfig, StopRule};
use polarnn::nn::{read_weights, write_weights, WeightFile};
use polarnn::trainer::{self, Dataset, TrainConfig};
use polarnn::{
    build_decoder, sigma_from_snr, BuildOptions, Decoder, MlDecoder, NnDecoder, PolarCode,
    ScDecoder,
};

const WORKERS_ENV: &str = "POLARNN_WORKERS";
const EQUIVALENCE_LIMIT: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "polarnn",
    version,
    about = "Polar codes and constructed neural decoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the frozen mask and code descriptor.
    Code(CodeArgs),
    /// Construct a neural decoder and write its weight file.
    Build(BuildArgs),
    /// BER curves for SC, ML and neural decoders on common frames.
    Simulate(SimulateArgs),
    /// Fine-tune a weight file.
    Train(TrainArgs),
    /// Collect frames the network gets wrong but ML gets right.
    Mine(MineArgs),
    /// Time the four f-function formulations.
    Bench(BenchArgs),
    /// Check a weight file against SC decoding.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct CodeSpec {
    /// log2 of the code length.
    #[arg(long)]
    n: Option<u32>,
    /// Message bits.
    #[arg(long)]
    k: Option<usize>,
    /// Design SNR for frozen-set selection, dB.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    design_snr: f64,
}

impl CodeSpec {
    fn build(&self) -> Result<PolarCode> {
        match (self.n, self.k) {
            (Some(n), Some(k)) => Ok(PolarCode::build(n, k, self.design_snr)?),
            _ => bail!("both --n and --k are required"),
        }
    }

    fn is_set(&self) -> bool {
        self.n.is_some() || self.k.is_some()
    }
}

#[derive(Args)]
struct CodeArgs {
    #[command(flatten)]
    code: CodeSpec,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    code: CodeSpec,
    /// LLR saturation bound.
    #[arg(long, default_value_t = polarnn::builder::DEFAULT_L_MAX)]
    l_max: f64,
    /// Half-width of the hard-sign ramp.
    #[arg(long, default_value_t = polarnn::builder::DEFAULT_EPS)]
    eps: f64,
    /// Write the concatenated network without fusing identity layers.
    #[arg(long)]
    unmerged: bool,
    #[arg(long)]
    out: PathBuf,
    /// Construction log; defaults to `<out>.log`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DecoderKind {
    Sc,
    Ml,
    Nn,
}

impl DecoderKind {
    fn name(self) -> &'static str {
        match self {
            DecoderKind::Sc => "sc",
            DecoderKind::Ml => "ml",
            DecoderKind::Nn => "nn",
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, value_delimiter = ',', required = true)]
    decoder: Vec<DecoderKind>,
    #[command(flatten)]
    code: CodeSpec,
    /// Weight file; required for `nn` and supplies the code otherwise.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Eb/N0 points: `start:stop:step` (inclusive), a list, or one value.
    #[arg(long, allow_hyphen_values = true)]
    snr: String,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = StopRule::default().min_frames)]
    min_frames: u64,
    #[arg(long, default_value_t = StopRule::default().min_bit_errors)]
    min_errors: u64,
    #[arg(long, default_value_t = StopRule::default().max_frames)]
    max_frames: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Flat key=value training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra dataset files (e.g. from `mine`).
    #[arg(long)]
    data: Vec<PathBuf>,
    /// Random frames generated at the training SNR.
    #[arg(long, default_value_t = 200_000)]
    random_frames: usize,
    /// Holdout frames for BER tracking.
    #[arg(long, default_value_t = 100_000)]
    holdout_frames: usize,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 1000)]
    want: usize,
    #[arg(long, default_value_t = 1_000_000)]
    budget: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1 << 16)]
    batch: usize,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    frames: u64,
    #[arg(long, allow_negative_numbers = true)]
    snr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Failures that map to the usage exit code rather than the data one.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parses `start:stop:step` (inclusive), `a,b,c` or a single value.
fn parse_snr_range(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| usage(format!("bad SNR value `{s}`")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(usage(format!("bad SNR range `{text}`")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count)
                .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
                .collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(usage(format!("bad SNR range `{text}`"))),
    }
}

fn load_weights(path: &Path) -> Result<WeightFile> {
    let file = fs::File::open(path).with_context(|| format!("cannot read {}", path.display()))?;
    read_weights(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

fn code_of(file: &WeightFile, path: &Path) -> Result<PolarCode> {
    let text = file
        .meta("code")
        .ok_or_else(|| anyhow!("{} has no `meta code` line", path.display()))?;
    let code: PolarCode = text.parse()?;
    if code.len() != file.net.input_dim() || code.k() != file.net.output_dim() {
        bail!(
            "{}: network is {} -> {} but the code is ({}, {})",
            path.display(),
            file.net.input_dim(),
            file.net.output_dim(),
            code.len(),
            code.k()
        );
    }
    Ok(code)
}

fn save_weights(file: &WeightFile, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_weights(file, &mut buf)?;
    fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn code_cmd(args: CodeArgs) -> Result<()> {
    let code = args.code.build()?;
    let manifest = RunManifest::new("code")
        .param("n", code.log_len())
        .param("k", code.k())
        .param("design_snr_db", args.code.design_snr)
        .artifact(args.out.as_deref());
    let mask: String = code
        .frozen()
        .iter()
        .map(|&f| if f { '1' } else { '0' })
        .collect();
    let body = format!(
        "{code}\nfrozen_mask {mask}\ninfo_positions {:?}\n",
        code.info_positions()
    );
    emit(&manifest, &body, args.out.as_deref())
}

fn build_cmd(args: BuildArgs) -> Result<()> {
    let code = args.code.build()?;
    let options = BuildOptions {
        l_max: args.l_max,
        eps: args.eps,
        ..BuildOptions::default()
    };
    let construction = build_decoder(&code, &options)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let manifest = RunManifest::new("build")
        .param("code", &code)
        .param("l_max", args.l_max)
        .param("eps", args.eps)
        .param("unmerged", args.unmerged)
        .artifact(Some(&args.out))
        .artifact(Some(&log_path));
    let net = if args.unmerged {
        construction.unmerged.clone()
    } else {
        construction.net.clone()
    };
    let mut file = WeightFile::new(net);
    file.comments = manifest.lines();
    file.meta.push(("code".into(), code.to_string()));
    save_weights(&file, &args.out)?;
    emit(&manifest, &construction.log(), Some(&log_path))?;
    eprintln!(
        "wrote {} ({} layers, {} parameters)",
        args.out.display(),
        file.net.depth(),
        file.net.parameter_count()
    );
    Ok(())
}

fn simulate_cmd(args: SimulateArgs) -> Result<()> {
    let snrs = parse_snr_range(&args.snr)?;
    let weights = args.weights.as_deref().map(load_weights).transpose()?;
    let code = match (&weights, args.code.is_set()) {
        (Some(w), false) => code_of(w, args.weights.as_deref().expect("weights given"))?,
        (Some(w), true) => {
            let code = args.code.build()?;
            let from_file = code_of(w, args.weights.as_deref().expect("weights given"))?;
            if code != from_file {
                bail!("--n/--k/--design-snr disagree with the code stored in the weight file");
            }
            code
        }
        (None, _) => args.code.build()?,
    };
    let mut decoders: Vec<(&str, Box<dyn Decoder>)> = Vec::new();
    for &kind in &args.decoder {
        let dec: Box<dyn Decoder> = match kind {
            DecoderKind::Sc => Box::new(ScDecoder::new(code.clone())),
            DecoderKind::Ml => Box::new(MlDecoder::new(&code)?),
            DecoderKind::Nn => {
                let w = weights
                    .as_ref()
                    .ok_or_else(|| usage("decoder `nn` needs --weights"))?;
                Box::new(NnDecoder::new(w.net.clone()))
            }
        };
        decoders.push((kind.name(), dec));
    }
    let refs: Vec<(&str, &dyn Decoder)> = decoders.iter().map(|(n, d)| (*n, d.as_ref())).collect();
    let stop = StopRule {
        min_frames: args.min_frames,
        min_bit_errors: args.min_errors,
        max_frames: args.max_frames,
    };
    let points = eval::compare_decoders(&code, &refs, &snrs, &SimConfig::new(stop, args.seed))?;
    let names: Vec<&str> = args.decoder.iter().map(|d| d.name()).collect();
    let manifest = RunManifest::new("simulate")
        .seed(args.seed)
        .param("code", &code)
        .param("decoders", names.join(","))
        .param("snr", &args.snr)
        .param("min_frames", args.min_frames)
        .param("min_errors", args.min_errors)
        .param("max_frames", args.max_frames)
        .param(
            "weights",
            args.weights
                .as_deref()
                .map_or("-".into(), |p| p.display().to_string()),
        )
        .artifact(args.out.as_deref());
    emit(&manifest, &ber_csv(&points), args.out.as_deref())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let code = code_of(&weights, &args.weights)?;
    let mut config = match &args.config {
        Some(p) => fs::read_to_string(p)
            .with_context(|| format!("cannot read {}", p.display()))?
            .parse::<TrainConfig>()
            .with_context(|| format!("in {}", p.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(it) = args.iterations {
        config.iterations = it;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let sigma = sigma_from_snr(config.snr_db, code.rate())?;
    let l_max = weights.net.l_max;
    let mut data = trainer::gen_dataset(&code, sigma, args.random_frames, l_max, config.seed)?;
    for path in &args.data {
        let text =
            fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let extra = Dataset::from_csv(&text).with_context(|| format!("in {}", path.display()))?;
        if extra
            .items
            .iter()
            .any(|s| s.llrs.len() != code.len() || s.target.len() != code.k())
        {
            bail!(
                "{}: items do not match the ({}, {}) code",
                path.display(),
                code.len(),
                code.k()
            );
        }
        data.extend(extra);
    }
    let holdout = trainer::gen_dataset(
        &code,
        sigma,
        args.holdout_frames,
        l_max,
        config.seed ^ 0x686f_6c64,
    )?;
    let (net, history) = trainer::train(&weights.net, &data, &holdout, &config)?;

    let data_files: Vec<String> = args.data.iter().map(|p| p.display().to_string()).collect();
    let mut manifest = RunManifest::new("train")
        .seed(config.seed)
        .param("code", &code)
        .param("weights", args.weights.display())
        .param(
            "data",
            if data_files.is_empty() {
                "-".into()
            } else {
                data_files.join(",")
            },
        )
        .param("random_frames", args.random_frames)
        .param("holdout_frames", args.holdout_frames);
    for line in config.to_string().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            manifest = manifest.param(k, v);
        }
    }
    let manifest = manifest
        .artifact(Some(&args.out))
        .artifact(args.history.as_deref());
    let mut file = WeightFile::new(net);
    file.comments = manifest.lines();
    file.meta.push(("code".into(), code.to_string()));
    save_weights(&file, &args.out)?;
    if let Some(path) = &args.history {
        emit(&manifest, &history.to_csv(), Some(path))?;
    }
    if let (Some(before), Some(after)) = (history.initial_holdout_ber, history.final_holdout_ber())
    {
        eprintln!("holdout BER {before:.6e} -> {after:.6e}");
    }
    Ok(())
}

fn mine_cmd(args: MineArgs) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let code = code_of(&weights, &args.weights)?;
    let sigma = sigma_from_snr(args.snr, code.rate())?;
    let (data, report) = trainer::mine_hard_cases(
        &code,
        &weights.net,
        args.want,
        sigma,
        weights.net.l_max,
        args.seed,
        args.budget,
    )?;
    let manifest = RunManifest::new("mine")
        .seed(args.seed)
        .param("code", &code)
        .param("weights", args.weights.display())
        .param("snr_db", args.snr)
        .param("want", args.want)
        .param("budget", args.budget)
        .param("frames_drawn", report.frames_drawn)
        .param("found", report.found)
        .param("find_rate", format!("{:.6e}", report.find_rate()))
        .artifact(args.out.as_deref());
    eprintln!(
        "found {} hard cases in {} frames (rate {:.3e})",
        report.found,
        report.frames_drawn,
        report.find_rate()
    );
    emit(&manifest, &data.to_csv(), args.out.as_deref())
}

fn bench_cmd(args: BenchArgs) -> Result<()> {
    let report = eval::bench_f_variants(args.batch, args.reps, args.seed)?;
    let manifest = RunManifest::new("bench")
        .seed(args.seed)
        .param("batch", args.batch)
        .param("reps", args.reps)
        .artifact(args.out.as_deref());
    emit(&manifest, &report.to_csv(), args.out.as_deref())
}

fn verify_cmd(args: VerifyArgs) -> Result<()> {
    let weights = load_weights(&args.weights)?;
    let code = code_of(&weights, &args.weights)?;
    let config = SimConfig {
        l_max: weights.net.l_max,
        ..SimConfig::new(StopRule::fixed(args.frames), args.seed)
    };
    let r = nn_sc_equivalence(&code, &weights.net, args.snr, args.frames, &config)?;
    println!(
        "frames={} bits={} disagreeing_bits={} rate={:.3e} disagreeing_frames={} unguarded={} dead_zone_frames={}",
        r.frames,
        r.bits,
        r.disagreeing_bits,
        r.disagreement_rate(),
        r.disagreeing_frames,
        r.unguarded_disagreements,
        r.dead_zone_frames
    );
    if r.disagreement_rate() > EQUIVALENCE_LIMIT {
        bail!(
            "disagreement rate {:.3e} exceeds {EQUIVALENCE_LIMIT:e}",
            r.disagreement_rate()
        );
    }
    if r.unguarded_disagreements > 0 {
        bail!(
            "{} disagreements outside the dead zone",
            r.unguarded_disagreements
        );
    }
    println!("PASS");
    Ok(())
}

fn configure_workers() -> Result<()> {
    if let Ok(value) = std::env::var(WORKERS_ENV) {
        let n: usize = value.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            usage(format!(
                "{WORKERS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Code(a) => code_cmd(a),
        Command::Build(a) => build_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Mine(a) => mine_cmd(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Verify(a) => verify_cmd(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let is_usage = err.chain().any(|e| {
        e.is::<UsageError>()
            || matches!(
                e.downcast_ref::<polarnn::Error>(),
                Some(polarnn::Error::Parameter(_) | polarnn::Error::Config(_))
            )
    });
    if is_usage {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("polarnn: error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
