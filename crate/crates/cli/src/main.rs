use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use melp_core::audio::{self, read_wav_8k, write_wav};
use melp_core::config::Settings;
use melp_core::corpus;
use melp_core::metrics::{count_flops, PipelineKind};
use melp_core::nn::{count_params, ModelSpec, NetworkWeights, PRESETS};
use melp_core::pipeline::{self, Models, PairKind, PipelineConfig, Placement, Variant};
use melp_core::train::{format_log, train_from_manifests, write_feature_manifest};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] melp_core::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "melp", version, about = "MELP 2.4 kbit/s codec with vocoder-parameter enhancement")]
struct Cli {
    /// key = value file overriding analysis, synthesis and training defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode an 8 kHz WAV file into a bitstream.
    Encode {
        input: PathBuf,
        output: PathBuf,
        /// Encoder-side parameter enhancement model.
        #[arg(long, value_name = "MODEL")]
        enhance: Option<PathBuf>,
    },
    /// Decode a bitstream into an 8 kHz WAV file.
    Decode {
        input: PathBuf,
        output: PathBuf,
        /// Decoder-side parameter enhancement model.
        #[arg(long, value_name = "MODEL")]
        enhance: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Mix one speech file with noise at a given SNR.
    Mix {
        speech: PathBuf,
        noise: PathBuf,
        output: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a mixture manifest for every speech file, noise file and SNR.
    Manifest {
        #[arg(long)]
        speech_dir: PathBuf,
        #[arg(long)]
        noise_dir: PathBuf,
        /// Comma-separated SNRs in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        snr: Vec<f64>,
        output: PathBuf,
    },
    /// Generate a synthetic speech and noise corpus.
    Corpus {
        output_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        utterances: usize,
        #[arg(long, default_value_t = 60.0)]
        noise_seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Extract aligned noisy/clean feature pairs for training.
    Extract {
        manifest: PathBuf,
        output_dir: PathBuf,
        #[arg(long, value_enum)]
        target: Target,
    },
    /// Train a network on feature-pair manifests.
    Train {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        output: PathBuf,
        /// CSV training log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a system variant on a mixture manifest.
    Eval {
        manifest: PathBuf,
        #[arg(long, value_enum)]
        variant: EvalVariant,
        /// Model for the learned variants (param-enc, param-dec, irm).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print parameter count, footprint and FLOPs of a preset.
    Flops { preset: String },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Target {
    ParamEnc,
    ParamDec,
    Irm,
}

impl From<Target> for PairKind {
    fn from(t: Target) -> Self {
        match t {
            Target::ParamEnc => PairKind::Param(Placement::Encoder),
            Target::ParamDec => PairKind::Param(Placement::Decoder),
            Target::Irm => PairKind::Irm,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum EvalVariant {
    Clean,
    Noisy,
    Irm,
    IrmOracle,
    ParamEnc,
    ParamDec,
}

impl From<EvalVariant> for Variant {
    fn from(v: EvalVariant) -> Self {
        match v {
            EvalVariant::Clean => Variant::Clean,
            EvalVariant::Noisy => Variant::Noisy,
            EvalVariant::Irm => Variant::Irm,
            EvalVariant::IrmOracle => Variant::IrmOracle,
            EvalVariant::ParamEnc => Variant::ParamEnc,
            EvalVariant::ParamDec => Variant::ParamDec,
        }
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

fn require_dir(path: &Path) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such directory: {}", path.display())))
    }
}

fn require_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            Err(CliError::Usage(format!("output directory does not exist: {}", p.display())))
        }
        _ => Ok(()),
    }
}

fn resolve_preset(name: &str) -> CliResult<ModelSpec> {
    if !PRESETS.contains(&name) {
        return Err(CliError::Usage(format!("unknown preset '{name}' (one of {})", PRESETS.join(", "))));
    }
    Ok(ModelSpec::preset(name)?)
}

fn load_model(path: Option<&PathBuf>) -> CliResult<Option<NetworkWeights>> {
    Ok(path.map(NetworkWeights::load).transpose()?)
}

fn settings(cli: &Cli) -> CliResult<Settings> {
    let mut s = Settings::default();
    if let Some(path) = &cli.config {
        require_file(path)?;
        s.apply_file(path).map_err(|e| match e {
            melp_core::Error::Config(m) => CliError::Usage(format!("{}: {m}", path.display())),
            e => e.into(),
        })?;
    }
    Ok(s)
}

/// Checks every path a command reads or writes before any work starts.
fn validate_paths(command: &Command) -> CliResult<()> {
    match command {
        Command::Encode { input, output, enhance } | Command::Decode { input, output, enhance, .. } => {
            require_file(input)?;
            enhance.iter().try_for_each(|m| require_file(m))?;
            require_parent(output)
        }
        Command::Mix { speech, noise, output, .. } => {
            require_file(speech)?;
            require_file(noise)?;
            require_parent(output)
        }
        Command::Manifest { speech_dir, noise_dir, output, .. } => {
            require_dir(speech_dir)?;
            require_dir(noise_dir)?;
            require_parent(output)
        }
        Command::Corpus { .. } => Ok(()),
        Command::Extract { manifest, .. } => require_file(manifest),
        Command::Train { train, valid, output, log, .. } => {
            require_file(train)?;
            require_file(valid)?;
            require_parent(output)?;
            log.iter().try_for_each(|l| require_parent(l))
        }
        Command::Eval { manifest, model, csv, .. } => {
            require_file(manifest)?;
            model.iter().try_for_each(|m| require_file(m))?;
            csv.iter().try_for_each(|c| require_parent(c))
        }
        Command::Flops { .. } => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    validate_paths(&cli.command)?;
    let settings = settings(&cli)?;
    match cli.command {
        Command::Encode { input, output, enhance } => {
            let signal = read_wav_8k(&input)?;
            let net = load_model(enhance.as_ref())?;
            let bytes = pipeline::encode_to_bytes(&signal, &settings.analysis, net.as_ref())?;
            std::fs::write(&output, &bytes).map_err(melp_core::Error::from)?;
            info!("{} frames, {} bytes", signal.len() / melp_core::frame::FRAME_LEN, bytes.len());
        }
        Command::Decode { input, output, enhance, seed } => {
            let bytes = std::fs::read(&input).map_err(melp_core::Error::from)?;
            let net = load_model(enhance.as_ref())?;
            let signal = pipeline::decode_bytes(&bytes, &settings.synth, net.as_ref(), seed)?;
            write_wav(&signal, &output)?;
        }
        Command::Mix { speech, noise, output, snr, seed } => {
            let mixed = audio::mix_at_snr(&read_wav_8k(&speech)?, &read_wav_8k(&noise)?, snr, seed)?;
            write_wav(&mixed, &output)?;
        }
        Command::Manifest { speech_dir, noise_dir, snr, output } => {
            let entries = audio::build_manifest(&speech_dir, &noise_dir, &snr)?;
            audio::write_manifest(&entries, &output)?;
            println!("{} mixtures", entries.len());
        }
        Command::Corpus { output_dir, utterances, noise_seconds, seed } => {
            let files = corpus::write_corpus(&output_dir, utterances, noise_seconds, seed)?;
            println!("{} speech files, {} noise files in {}", files.speech.len(), files.noise.len(), output_dir.display());
        }
        Command::Extract { manifest, output_dir, target } => {
            let entries = audio::read_manifest(&manifest)?;
            std::fs::create_dir_all(&output_dir).map_err(melp_core::Error::from)?;
            let files: Vec<PathBuf> = entries
                .par_iter()
                .map(|entry| -> CliResult<PathBuf> {
                    let item = pipeline::EvalItem::load(entry)?;
                    let pair = pipeline::extract_pair(target.into(), &item, &settings.analysis)?;
                    let name = PathBuf::from(format!("{}.mpfp", pair.id));
                    pair.save(output_dir.join(&name))?;
                    Ok(name)
                })
                .collect::<CliResult<_>>()?;
            write_feature_manifest(&files, output_dir.join("pairs.list"))?;
            println!("{} feature pairs in {}", files.len(), output_dir.display());
        }
        Command::Train { preset, train, valid, output, log } => {
            let spec = resolve_preset(&preset)?;
            let outcome = train_from_manifests(&spec, &train, &valid, &settings.train)?;
            outcome.weights.save(&output)?;
            if let Some(path) = log {
                std::fs::write(path, format_log(&outcome.log)).map_err(melp_core::Error::from)?;
            }
            let best = &outcome.log[outcome.best_epoch - 1];
            println!("best epoch {} valid mse {:.6}", outcome.best_epoch, best.valid_mse);
        }
        Command::Eval { manifest, variant, model, csv, seed } => {
            let variant = Variant::from(variant);
            let net = load_model(model.as_ref())?;
            let mut models = Models::default();
            match variant {
                Variant::ParamEnc => models.param_enc = net,
                Variant::ParamDec => models.param_dec = net,
                Variant::Irm => models.irm = net,
                _ => {}
            }
            models.check(variant)?;
            let items = pipeline::load_items(&audio::read_manifest(&manifest)?)?;
            let cfg = PipelineConfig { analysis: settings.analysis, synth: settings.synth, synth_seed: seed };
            let report = pipeline::evaluate(variant, &items, &models, &cfg)?;
            print!("{}", report.to_table());
            if let Some(path) = csv {
                std::fs::write(path, report.to_csv()).map_err(melp_core::Error::from)?;
            }
        }
        Command::Flops { preset } => {
            let spec = resolve_preset(&preset)?;
            let kind = if preset.starts_with("irm") { PipelineKind::Irm } else { PipelineKind::Parameter };
            let flops = count_flops(&spec, kind);
            let params = count_params(&spec);
            println!("preset       {preset}");
            println!("parameters   {params}");
            println!("footprint    {:.2} KB", params as f64 * 4.0 / 1024.0);
            for (name, f) in &flops.layers {
                println!("  {name:<16} {f:>10.0} FLOPs/frame");
            }
            if flops.fft_per_frame > 0.0 {
                println!("  {:<16} {:>10.0} FLOPs/frame", "fft", flops.fft_per_frame);
            }
            println!("total        {:.2} MFLOPs", flops.total_mflops);
        }
    }
    Ok(())
}

fn init_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("MELP_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("MELP_THREADS must be a positive integer, got '{value}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

