//! Command-line front end: analysis, reconstruction, evaluation, parameter
//! sweeps and synthetic test signals.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phaseflow::signal_io::{
    read_specfile, read_wav, write_specfile, write_wav, AudioBuffer, PayloadKind, SpecHeader, SpecPayload,
};
use phaseflow::synth::{generate, SignalKind, SynthParams};
use phaseflow::{
    magnitude_snr_db, run_offline, spectral_convergence, stream_reconstruct, Algorithm, AlgorithmSpec,
    MagnitudeSpectrogram, Spectrogram, Stft, StftConfig,
};

pub mod sweep;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, invalid parameters or unusable input files.
    #[error("{0}")]
    Usage(String),
    /// Failures after validation: output files, external programs.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Errors while reading or validating inputs.
pub(crate) fn input_err(e: phaseflow::Error) -> CliError {
    CliError::Usage(e.to_string())
}

/// Errors while producing outputs.
pub(crate) fn output_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "phaseflow", version, about = "Iterative STFT phase retrieval, offline and streaming")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the magnitude (or complex) spectrogram of a WAV file
    Analyze(AnalyzeArgs),
    /// Rebuild a signal from a spectrogram file's magnitude
    Reconstruct(ReconstructArgs),
    /// Spectral convergence between a reference and a reconstruction
    Eval(EvalArgs),
    /// Run a parameter grid over a directory of WAV files
    Sweep(sweep::SweepArgs),
    /// Generate a seeded synthetic test signal
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone)]
pub struct StftArgs {
    /// Frame length in milliseconds
    #[arg(long, default_value_t = 32.0)]
    pub frame_ms: f64,
    /// Hop size in milliseconds
    #[arg(long, default_value_t = 8.0)]
    pub hop_ms: f64,
    /// Expected sample rate; the input's rate when omitted
    #[arg(long)]
    pub rate: Option<u32>,
}

impl StftArgs {
    /// Hann STFT for audio at `file_rate`.
    pub fn config(&self, file_rate: u32) -> CliResult<StftConfig<f64>> {
        if let Some(rate) = self.rate {
            if rate != file_rate {
                return Err(CliError::Usage(format!(
                    "--rate {rate} does not match the input's sample rate {file_rate}; resampling is not supported"
                )));
            }
        }
        StftConfig::from_millis(self.frame_ms, self.hop_ms, file_rate).map_err(input_err)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlgoName {
    Gla,
    Fgla,
    Agla,
    Raar,
    Dm,
}

impl AlgoName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgoName::Gla => "gla",
            AlgoName::Fgla => "fgla",
            AlgoName::Agla => "agla",
            AlgoName::Raar => "raar",
            AlgoName::Dm => "dm",
        }
    }

    /// Parameter flags this variant accepts.
    pub fn params(self) -> &'static [&'static str] {
        match self {
            AlgoName::Gla => &[],
            AlgoName::Fgla => &["alpha"],
            AlgoName::Agla => &["alpha1", "alpha2", "gamma"],
            AlgoName::Raar | AlgoName::Dm => &["beta"],
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Parameters tuned for no look-ahead
    #[value(name = "table1-b0")]
    NoLookahead,
    /// Parameters tuned for look-ahead
    #[value(name = "table1-la")]
    Lookahead,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Offline,
    Online,
}

/// Explicit parameter values; `None` falls back to the preset.
#[derive(Debug, Clone, Copy, Default)]
pub struct ParamValues {
    pub alpha: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
}

impl ParamValues {
    fn given(&self) -> Vec<&'static str> {
        [
            ("alpha", self.alpha),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("gamma", self.gamma),
            ("beta", self.beta),
        ]
        .into_iter()
        .filter_map(|(name, v)| v.map(|_| name))
        .collect()
    }
}

/// Preset values for `name` overridden by `params`, validated. Without an
/// explicit preset the look-ahead preset is used when `lookahead` is set.
pub fn build_algorithm(
    name: AlgoName,
    preset: Option<Preset>,
    lookahead: bool,
    params: &ParamValues,
) -> CliResult<Algorithm<f64>> {
    if let Some(p) = params.given().into_iter().find(|p| !name.params().contains(p)) {
        return Err(CliError::Usage(format!("--{p} does not apply to {}", name.as_str())));
    }
    let with_la = preset.map_or(lookahead, |p| p == Preset::Lookahead);
    let base = Algorithm::preset(name.as_str(), with_la).expect("every variant has a preset");
    let alg = match base {
        Algorithm::Gla => Algorithm::Gla,
        Algorithm::Fgla { alpha } => Algorithm::Fgla {
            alpha: params.alpha.unwrap_or(alpha),
        },
        Algorithm::Agla { alpha1, alpha2, gamma } => Algorithm::Agla {
            alpha1: params.alpha1.unwrap_or(alpha1),
            alpha2: params.alpha2.unwrap_or(alpha2),
            gamma: params.gamma.unwrap_or(gamma),
        },
        Algorithm::Raar { beta } => Algorithm::Raar {
            beta: params.beta.unwrap_or(beta),
        },
        Algorithm::Dm { beta } => Algorithm::Dm {
            beta: params.beta.unwrap_or(beta),
        },
    };
    alg.validate().map_err(input_err)?;
    Ok(alg)
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[command(flatten)]
    pub stft: StftArgs,
    /// Store the complex spectrogram instead of the magnitude
    #[arg(long)]
    pub complex: bool,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Offline)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = AlgoName::Gla)]
    pub algo: AlgoName,
    #[arg(long)]
    pub preset: Option<Preset>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha1: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub alpha2: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    /// Iterations per run (offline) or per frame (online)
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Look-ahead frames (online mode)
    #[arg(short = 'B', long = "lookahead", default_value_t = 0)]
    pub lookahead: usize,
    /// Write spectral convergence per iteration (offline) or per frame (online)
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub reference: PathBuf,
    pub estimate: PathBuf,
    #[command(flatten)]
    pub stft: StftArgs,
    /// Program called as `<exe> <reference.wav> <estimate.wav>` that prints a score
    #[arg(long)]
    pub external_scorer: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    pub output: PathBuf,
    #[arg(long, default_value = "speechlike")]
    pub kind: String,
    #[arg(long, default_value_t = 1.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 16000)]
    pub rate: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tone frequency in Hz for `--kind sine`
    #[arg(long, default_value_t = 440.0)]
    pub freq: f64,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Analyze(a) => analyze(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep::run(&a),
        Command::Synth(a) => synth(&a),
    }
}

pub(crate) fn load_signal(path: &Path) -> CliResult<(Vec<f64>, u32)> {
    let audio = read_wav(path).map_err(input_err)?;
    if audio.is_empty() {
        return Err(CliError::Usage(format!("{} has no samples", path.display())));
    }
    Ok((audio.to_real(), audio.sample_rate()))
}

pub(crate) fn save_signal(path: &Path, samples: &[f64], rate: u32) -> CliResult<()> {
    let audio = AudioBuffer::from_real(samples, rate).map_err(output_err)?;
    write_wav(path, &audio).map_err(output_err)
}

fn analyze(args: &AnalyzeArgs) -> CliResult<()> {
    let (x, rate) = load_signal(&args.input)?;
    let config = args.stft.config(rate)?;
    let stft = Stft::new(config.clone());
    let spec = stft.stft(&x).map_err(input_err)?;
    let payload = if args.complex {
        SpecPayload::Complex(spec)
    } else {
        SpecPayload::Magnitude(spec.magnitude())
    };
    let (k, l) = payload.dims();
    let header = SpecHeader::for_config(&config, l, payload.kind()).map_err(input_err)?;
    write_specfile(&args.output, &header, &payload).map_err(output_err)?;
    println!("N={} H={} K={k} L={l} rate={rate}", config.frame_len(), config.hop());
    Ok(())
}

/// Per-column spectral convergence; empty where the target column is silent.
fn per_frame_sc(target: &MagnitudeSpectrogram<f64>, estimate: &Spectrogram<f64>) -> Vec<Option<f64>> {
    (0..target.frames())
        .map(|l| {
            let a = target.column(l);
            let x = estimate.column(l);
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm > 0.0).then(|| {
                a.iter().zip(x.iter()).map(|(a, x)| (a - x.norm()).powi(2)).sum::<f64>().sqrt() / norm
            })
        })
        .collect()
}

fn write_trace(path: &Path, label: &str, first: usize, values: &[Option<f64>]) -> CliResult<()> {
    let mut out = format!("{label},SC\n");
    for (i, v) in (first..).zip(values) {
        match v {
            Some(v) => out.push_str(&format!("{i},{v}\n")),
            None => out.push_str(&format!("{i},\n")),
        }
    }
    fs::write(path, out).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn reconstruct(args: &ReconstructArgs) -> CliResult<()> {
    if args.mode == Mode::Offline && args.lookahead != 0 {
        return Err(CliError::Usage("-B/--lookahead applies to --mode online only".into()));
    }
    let params = ParamValues {
        alpha: args.alpha,
        alpha1: args.alpha1,
        alpha2: args.alpha2,
        gamma: args.gamma,
        beta: args.beta,
    };
    let alg = build_algorithm(args.algo, args.preset, args.lookahead > 0, &params)?;
    let spec = AlgorithmSpec::new(alg, args.iters).map_err(input_err)?;

    let (header, payload) = read_specfile(&args.input).map_err(input_err)?;
    let config = header.stft_config::<f64>().map_err(input_err)?;
    let stft = Stft::new(config);
    let mag = payload.magnitude();
    let (signal, trace) = match args.mode {
        Mode::Offline => {
            let res = run_offline(&mag, &stft, &spec, None).map_err(input_err)?;
            (res.signal, res.trace.into_iter().map(Some).collect())
        }
        Mode::Online => {
            let y = stream_reconstruct(&mag, &spec, &stft, args.lookahead).map_err(input_err)?;
            let trace = per_frame_sc(&mag, &stft.analyze(&y, mag.frames()));
            (y, trace)
        }
    };
    save_signal(&args.output, &signal, header.sample_rate)?;
    if let Some(path) = &args.trace {
        match args.mode {
            Mode::Offline => write_trace(path, "iteration", 1, &trace)?,
            Mode::Online => write_trace(path, "frame", 0, &trace)?,
        }
    }
    Ok(())
}

/// Runs `exe reference estimate` and parses the first token of its stdout.
pub(crate) fn external_score(exe: &Path, reference: &Path, estimate: &Path) -> CliResult<f64> {
    let out = Process::new(exe)
        .arg(reference)
        .arg(estimate)
        .output()
        .map_err(|e| CliError::Runtime(format!("cannot run {}: {e}", exe.display())))?;
    if !out.status.success() {
        return Err(CliError::Runtime(format!("{} exited with {}", exe.display(), out.status)));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    text.split_whitespace()
        .next()
        .and_then(|t| t.parse::<f64>().ok())
        .ok_or_else(|| CliError::Runtime(format!("{} printed no number: {text:?}", exe.display())))
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let (reference, rate) = load_signal(&args.reference)?;
    let (estimate, est_rate) = load_signal(&args.estimate)?;
    if rate != est_rate {
        return Err(CliError::Usage(format!(
            "sample rates differ: {rate} (reference) vs {est_rate} (estimate)"
        )));
    }
    let stft = Stft::new(args.stft.config(rate)?);
    let target = stft.stft(&reference).map_err(input_err)?.magnitude();
    let recon = stft.analyze(&estimate, target.frames());
    let sc = spectral_convergence(&target, &recon).map_err(input_err)?;
    let snr = magnitude_snr_db(&target, &recon).map_err(input_err)?;
    let ext = match &args.external_scorer {
        Some(exe) => Some(external_score(exe, &args.reference, &args.estimate)?),
        None => None,
    };
    let mut csv = csv::Writer::from_writer(std::io::stdout().lock());
    csv.write_record(["reference", "estimate", "SC", "magnitude_snr_db", "external_score"])
        .and_then(|_| {
            csv.write_record([
                args.reference.display().to_string(),
                args.estimate.display().to_string(),
                sc.to_string(),
                snr.to_string(),
                ext.map(|v| v.to_string()).unwrap_or_default(),
            ])
        })
        .and_then(|_| csv.flush().map_err(csv::Error::from))
        .map_err(output_err)
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let kind: SignalKind = args.kind.parse().map_err(input_err)?;
    let x = generate(&SynthParams {
        kind,
        seconds: args.seconds,
        sample_rate: args.rate,
        seed: args.seed,
        freq: args.freq,
    })
    .map_err(input_err)?;
    save_signal(&args.output, &x, args.rate)
}

/// Specfile header for a magnitude payload; used by tests and tooling.
pub fn magnitude_header(config: &StftConfig<f64>, frames: usize) -> CliResult<SpecHeader> {
    SpecHeader::for_config(config, frames, PayloadKind::Magnitude).map_err(input_err)
}
