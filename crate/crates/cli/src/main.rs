//! `contextnet` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use contextnet::analysis::count_params;
use contextnet::encoder::{default_config, Reduction};
use contextnet::frontend::{decode_features, log_mel_filterbank, parse_wav, write_features, AcousticFeatures};
use contextnet::par::Execution;
use contextnet::training::{train_toy, ToyRunConfig};
use contextnet::transducer::{DecoderConfig, TransducerModel, Vocab};

mod selftest;

#[derive(Parser, Debug)]
#[command(name = "contextnet", version, about = "ContextNet encoder analysis, features, toy training and decoding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReductionArg {
    #[value(name = "2x")]
    X2,
    #[value(name = "8x")]
    X8,
}

impl From<ReductionArg> for Reduction {
    fn from(r: ReductionArg) -> Self {
        match r {
            ReductionArg::X2 => Reduction::X2,
            ReductionArg::X8 => Reduction::X8,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parameter count, FLOPs per second of audio and receptive field.
    Analyze {
        /// Width multiplier.
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Depthwise kernel size (odd).
        #[arg(long, default_value_t = 5)]
        kernel: usize,
        #[arg(long, value_enum, default_value = "8x")]
        reduction: ReductionArg,
        /// Vocabulary size of the reference decoder counted in the total.
        #[arg(long, default_value_t = 1024)]
        decoder_vocab: usize,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Convert a 16 kHz mono 16-bit WAV file to a log-mel feature file.
    Features {
        input: PathBuf,
        output: PathBuf,
    },
    /// Train on the synthetic tone task.
    TrainToy {
        /// JSON run configuration (task, model, train); missing fields take
        /// their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint, metrics, vocabulary and config.
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.max_steps`.
        #[arg(long)]
        max_steps: Option<u64>,
    },
    /// Greedy-decode a WAV or feature file.
    Decode {
        checkpoint: PathBuf,
        /// `.wav` audio or a feature file.
        input: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
    },
    /// Quick internal consistency checks.
    Selftest,
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("CONTEXTNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("CONTEXTNET_THREADS must be a positive integer, got {v:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn analyze(alpha: f64, kernel: usize, reduction: Reduction, vocab: usize, json: bool) -> anyhow::Result<()> {
    let config = default_config(alpha, kernel, reduction)?;
    let report = count_params(&config, Some(&DecoderConfig::reference(vocab)));
    if json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn features(input: &Path, output: &Path) -> anyhow::Result<()> {
    let bytes = std::fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let wave = parse_wav(&bytes).with_context(|| format!("{} is not a usable WAV file", input.display()))?;
    let feats = log_mel_filterbank(&wave)?;
    if feats.num_frames() == 0 {
        eprintln!("warning: {} is shorter than one analysis window; writing 0 frames", input.display());
    }
    write_features(output, &feats).with_context(|| format!("writing {}", output.display()))?;
    println!("T={} duration={:.3}s", feats.num_frames(), wave.duration_secs());
    Ok(())
}

fn load_input(path: &Path) -> anyhow::Result<AcousticFeatures> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"RIFF") {
        Ok(log_mel_filterbank(&parse_wav(&bytes)?)?)
    } else {
        Ok(decode_features(&bytes).with_context(|| format!("{} is neither WAV nor a feature file", path.display()))?)
    }
}

fn decode(checkpoint: &Path, input: &Path, vocab: &Path) -> anyhow::Result<()> {
    let vocab = Vocab::load(vocab).with_context(|| format!("loading vocabulary {}", vocab.display()))?;
    let model = TransducerModel::<f32>::load(checkpoint, vocab)
        .with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let feats = load_input(input)?;
    let expected = model.config().encoder.input_dim;
    if feats.dim() != expected {
        bail!("feature dimension {} does not match the model input dimension {expected}", feats.dim());
    }
    if feats.num_frames() == 0 {
        println!();
        return Ok(());
    }
    println!("{}", model.transcribe(&feats.frames.cast())?);
    Ok(())
}

fn train(config: Option<&Path>, out: &Path, seed: Option<u64>, max_steps: Option<u64>) -> anyhow::Result<()> {
    let mut run = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            ToyRunConfig::from_json(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ToyRunConfig::default(),
    };
    if let Some(s) = seed {
        run.train.seed = s;
    }
    if let Some(m) = max_steps {
        run.train.max_steps = m;
    }
    run.validate()?;
    let outcome = train_toy(&run, Execution::Parallel, Some(out), |r| {
        eprintln!(
            "step {:>6}  lr {:.6}  loss {:.4}  dev TER {:.4}",
            r.step, r.lr, r.train_loss, r.dev_token_error_rate
        );
    })
    .map_err(|e| anyhow!(e))?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "finished at step {} with dev token error rate {:.4}; outputs in {}",
            last.step,
            last.dev_token_error_rate,
            out.display()
        );
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Analyze {
            alpha,
            kernel,
            reduction,
            decoder_vocab,
            json,
        } => analyze(alpha, kernel, reduction.into(), decoder_vocab, json),
        Command::Features { input, output } => features(&input, &output),
        Command::TrainToy {
            config,
            out,
            seed,
            max_steps,
        } => train(config.as_deref(), &out, seed, max_steps),
        Command::Decode {
            checkpoint,
            input,
            vocab,
        } => decode(&checkpoint, &input, &vocab),
        Command::Selftest => selftest::run(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    // argument values that parse but make no sense are usage errors too
    if let Command::Analyze { alpha, kernel, .. } = &cli.command {
        if !(*alpha > 0.0) || kernel % 2 == 0 {
            eprintln!("error: --alpha must be positive and --kernel odd (got {alpha}, {kernel})");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
