//! `fishcore` command-line front end. Every command prints one JSON document
//! on standard output; diagnostics go to standard error.

mod commands;
mod failure;
mod io;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fishcore", version, about = "GFSQ codec, Dual-AR generator and tooling")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// JSON config for the command (quantizer, training, synthesis or model config)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed override for anything random
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Record per-frame timestamps during generation
    #[arg(long, global = true)]
    pub trace: bool,
    /// Compact one-line JSON on stdout and JSON error objects on stderr
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a multi-sine dataset as raw f32 with a shape sidecar
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        signals: usize,
        #[arg(long, default_value_t = 128)]
        length: usize,
        #[arg(long, default_value_t = 3)]
        tones: usize,
    },
    /// Train the toy codec on a raw f32 dataset
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Quantizer JSON ({"groups","levels","hop"})
        #[arg(long)]
        quantizer: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        hidden: usize,
        /// Write the loss curve as CSV
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Quantize a raw f32 tensor into a .ffc code stream
    Encode {
        input: PathBuf,
        out: PathBuf,
        /// Trained codec weights (.ffm with a .json architecture sidecar)
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Reconstruct a raw f32 tensor from a .ffc code stream
    Decode {
        input: PathBuf,
        out: PathBuf,
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Write seeded random generator weights (.ffm plus config sidecar)
    InitModel {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quantizer: Option<PathBuf>,
        /// Added to the EOS logit bias; large positive values force empty streams
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        eos_bias: f64,
    },
    /// Stream generated frames as JSON lines
    Generate {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated text token ids
        #[arg(long, value_delimiter = ',', required = true)]
        text: Vec<u32>,
        /// Sampler spec: inline JSON or a path to a JSON file
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_frames: usize,
    },
    /// Utilization, histogram and entropy report for a .ffc stream
    Stats { input: PathBuf },
    /// Median real-time factor and first-packet latency over repeated runs
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        text: Vec<u32>,
        #[arg(long)]
        sampler: Option<String>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 32)]
        max_frames: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.global.json;
    match commands::run(&cli) {
        Ok(report) => {
            let text = if json {
                serde_json::to_string(&report)
            } else {
                serde_json::to_string_pretty(&report)
            };
            // A closed stdout (e.g. piped into `head`) is not an error worth reporting.
            let _ = writeln!(std::io::stdout().lock(), "{}", text.expect("reports serialize"));
            ExitCode::SUCCESS
        }
        Err(f) => {
            if json {
                let obj = serde_json::json!({ "error": format!("{:#}", f.error), "exit_code": f.code });
                eprintln!("{obj}");
            } else {
                eprintln!("error: {:#}", f.error);
            }
            ExitCode::from(f.code as u8)
        }
    }
}
