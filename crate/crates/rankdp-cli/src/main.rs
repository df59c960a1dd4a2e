use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rankdp_cli::commands;
use rankdp_cli::config::RunConfig;
use rankdp_cli::exit_code_for;

/// Ranked-differential-privacy sanitization of grayscale face images.
#[derive(Parser)]
#[command(name = "rankdp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the eigenbasis, estimate sensitivities and calibrate noise scales.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// key=value overrides applied on top of the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Sanitize one image with the calibrated mechanism.
    Sanitize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output path (default: <output_dir>/<stem>.<method>.pgm).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Randomness stream index (one stream per image in batch use).
        #[arg(long, default_value_t = 0)]
        stream: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run the full method x budget grid and emit per-draw and summary CSVs.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Replay-attack report: false negative rate per method and matcher.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Quick built-in sanity checks.
    Selftest,
    /// Timing check of the weight computation across problem sizes.
    #[command(hide = true)]
    ComplexitySmoke,
    /// Regenerate a synthetic demo gallery with a manifest.
    #[command(hide = true)]
    GenGallery {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 15)]
        identities: usize,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, set: &[String]) -> Result<RunConfig, i32> {
    RunConfig::load(path, set).map_err(|e| {
        eprintln!("{}", e);
        2
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Calibrate { config, set } => match load_config(config, set) {
            Err(c) => c,
            Ok(cfg) => commands::cmd_calibrate(&cfg).unwrap_or_else(|e| {
                eprintln!("{}", e);
                exit_code_for(&e)
            }),
        },
        Command::Sanitize {
            config,
            image,
            out,
            stream,
            set,
        } => match load_config(config, set) {
            Err(c) => c,
            Ok(cfg) => commands::cmd_sanitize(&cfg, image, out.as_deref(), *stream)
                .unwrap_or_else(|e| {
                    eprintln!("{}", e);
                    exit_code_for(&e)
                }),
        },
        Command::Evaluate { config, set } => match load_config(config, set) {
            Err(c) => c,
            Ok(cfg) => commands::cmd_evaluate(&cfg).unwrap_or_else(|e| {
                eprintln!("{}", e);
                exit_code_for(&e)
            }),
        },
        Command::Attack { config, set } => match load_config(config, set) {
            Err(c) => c,
            Ok(cfg) => commands::cmd_attack(&cfg).unwrap_or_else(|e| {
                eprintln!("{}", e);
                exit_code_for(&e)
            }),
        },
        Command::Selftest => commands::cmd_selftest().unwrap_or_else(|e| {
            eprintln!("{}", e);
            exit_code_for(&e)
        }),
        Command::ComplexitySmoke => commands::cmd_complexity_smoke().unwrap_or_else(|e| {
            eprintln!("{}", e);
            exit_code_for(&e)
        }),
        Command::GenGallery {
            out,
            side,
            identities,
            seed,
        } => commands::cmd_gen_gallery(out, *side, *identities, *seed).unwrap_or_else(|e| {
            eprintln!("{}", e);
            exit_code_for(&e)
        }),
    };
    ExitCode::from(code.clamp(0, 255) as u8)
}
