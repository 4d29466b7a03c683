use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use corrdiff::schedule::ScheduleKind;
use corrdiff_cli::commands::{
    cmd_bd_rate, cmd_compress, cmd_decompress, cmd_eval, cmd_rd_curve, load_weights,
    DEFAULT_KEEP_RATIOS,
};
use corrdiff_cli::pipeline::CodecOptions;
use corrdiff_cli::verify::{run_verify, VerifyOptions};
use corrdiff_cli::exit_code_for;

#[derive(Parser)]
#[command(name = "corrdiff", version, about = "Diffusion-decoder codec with transmitted blend corrections", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CodecArgs {
    /// Fraction of transform coefficients kept by the linear-dct pair
    #[arg(long, default_value_t = 0.25)]
    keep_ratio: f32,
    /// Uniform quantization step of the linear-dct pair
    #[arg(long, default_value_t = 0.02)]
    qstep: f32,
    /// Number of reverse steps
    #[arg(long = "T", default_value_t = 8)]
    t_steps: u16,
    /// Noise seed shared by encoder and decoder
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Schedule kind: vp-cosine or vp-linear-beta
    #[arg(long, default_value = "vp-cosine")]
    schedule: String,
    /// Autoencoder pair: linear-dct or tiny-mlp
    #[arg(long = "ae", default_value = "linear-dct")]
    ae_id: String,
    /// Blend-factor metric: mse or feature-mse
    #[arg(long, default_value = "mse")]
    metric: String,
    /// Width of the analytic prior anchored at the end-to-end decode;
    /// must match between compress and decompress
    #[arg(long, default_value_t = 1.0)]
    prior_width: f64,
    /// Weights file for the tiny-mlp pair
    #[arg(long)]
    weights: Option<PathBuf>,
}

impl CodecArgs {
    fn to_options(&self) -> corrdiff::error::Result<CodecOptions> {
        Ok(CodecOptions {
            keep_ratio: self.keep_ratio,
            qstep: self.qstep,
            t_steps: self.t_steps,
            seed: self.seed,
            schedule: ScheduleKind::parse(&self.schedule)?,
            ae_id: self.ae_id.clone(),
            metric: self.metric.clone(),
            prior_width: self.prior_width,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress a raw tensor file into a .crdf stream
    Compress {
        /// Input tensor file (.cdt)
        #[arg(long)]
        input: PathBuf,
        /// Output stream file (.crdf)
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Decompress a .crdf stream into a raw tensor file
    Decompress {
        /// Input stream file (.crdf)
        #[arg(long)]
        input: PathBuf,
        /// Output tensor file (.cdt)
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        prior_width: f64,
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Distortion metrics between two tensor files (and bpp given a stream)
    Eval {
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        reconstruction: PathBuf,
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        dynamic_range: f64,
    },
    /// Sweep the rate knob and write a rate-distortion CSV
    RdCurve {
        /// Input tensor files (repeatable)
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Output CSV path
        #[arg(long)]
        output: PathBuf,
        /// Comma-separated keep ratios
        #[arg(long, value_delimiter = ',')]
        keep_ratios: Option<Vec<f32>>,
        #[command(flatten)]
        codec: CodecArgs,
    },
    /// Bjontegaard delta rate between two CSV curves
    BdRate {
        #[arg(long)]
        curve_a: PathBuf,
        #[arg(long)]
        curve_b: PathBuf,
        #[arg(long, default_value = "bpp")]
        rate_col: String,
        #[arg(long, default_value = "psnr")]
        quality_col: String,
        /// Treat the quality column as lower-is-better (e.g. mse)
        #[arg(long, default_value_t = false)]
        lower_is_better: bool,
    },
    /// Run the seeded verification suite
    Verify {
        /// Override the gamma search tolerance (test hook)
        #[arg(long)]
        gamma_tol: Option<f64>,
    },
}

fn run(cli: Cli) -> corrdiff::error::Result<bool> {
    match cli.command {
        Command::Compress { input, output, codec } => {
            let opts = codec.to_options()?;
            let weights = load_weights(codec.weights.as_deref())?;
            cmd_compress(&input, &output, &opts, weights.as_ref())?;
            Ok(true)
        }
        Command::Decompress { input, output, prior_width, weights } => {
            let weights = load_weights(weights.as_deref())?;
            cmd_decompress(&input, &output, prior_width, weights.as_ref())?;
            Ok(true)
        }
        Command::Eval { original, reconstruction, stream, dynamic_range } => {
            cmd_eval(&original, &reconstruction, stream.as_deref(), dynamic_range)?;
            Ok(true)
        }
        Command::RdCurve { input, output, keep_ratios, codec } => {
            let opts = codec.to_options()?;
            let ratios = keep_ratios.unwrap_or_else(|| DEFAULT_KEEP_RATIOS.to_vec());
            cmd_rd_curve(&input, &output, &ratios, &opts)?;
            Ok(true)
        }
        Command::BdRate { curve_a, curve_b, rate_col, quality_col, lower_is_better } => {
            cmd_bd_rate(&curve_a, &curve_b, &rate_col, &quality_col, lower_is_better)?;
            Ok(true)
        }
        Command::Verify { gamma_tol } => {
            let items = run_verify(&VerifyOptions { gamma_tol });
            let mut all_pass = true;
            for item in &items {
                println!("{} {} ({})", if item.pass { "PASS" } else { "FAIL" }, item.name, item.detail);
                all_pass &= item.pass;
            }
            println!("verify: {}/{} checks passed", items.iter().filter(|i| i.pass).count(), items.len());
            Ok(all_pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        // A completed run with failed checks (verify) exits as a numeric failure.
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
