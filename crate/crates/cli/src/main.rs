//! `gausshead`: render, animate, benchmark, bake, validate and serve
//! avatars.
//!
//! Every path, size and thread flag can also come from the environment
//! (`GAUSSHEAD_ASSET`, `GAUSSHEAD_TRACK`, `GAUSSHEAD_SIZE`,
//! `GAUSSHEAD_THREADS`, `GAUSSHEAD_SEED`, `GAUSSHEAD_OUT`,
//! `GAUSSHEAD_PORT`); flags take precedence.
//!
//! Exit codes: 0 success, 1 failure or validation violations, 2 missing
//! input file, 3 malformed track line, 4 corrupt file, 5 invalid parameter,
//! 64 usage error.

mod bench;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "gausshead", version, about = "CPU runtime for animatable Gaussian head avatars")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the procedural head model and avatar asset.
    Fixture(commands::FixtureArgs),
    /// Render one frame to PNG.
    Render(commands::RenderArgs),
    /// Render every record of a parameter track to a numbered PNG sequence.
    Animate(commands::AnimateArgs),
    /// Time the per-frame path and print a JSON report.
    Bench(bench::BenchArgs),
    /// Bake the shape conditioning map and render the expression cue.
    Bake(commands::BakeArgs),
    /// Check every asset invariant.
    Validate(commands::ValidateArgs),
    /// Print the regularizer metrics of an asset.
    Metrics(commands::MetricsArgs),
    /// Serve frames over HTTP and WebSocket.
    Serve(commands::ServeArgs),
}

/// `WxH` image size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Size {
    pub width: u32,
    pub height: u32,
}

impl FromStr for Size {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<u32>().map_err(|e| format!("bad size {s:?}: {e}"));
        let size = Size {
            width: parse(w)?,
            height: parse(h)?,
        };
        if size.width == 0 || size.height == 0 {
            return Err(format!("size must be positive, got {s:?}"));
        }
        Ok(size)
    }
}

/// Expression and jaw given on the command line.
#[derive(Debug, Clone, Args)]
pub struct ExpressionArgs {
    /// Comma-separated expression coefficients; missing ones are zero.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub psi: Vec<f32>,
    /// Jaw axis-angle `x,y,z` in radians.
    #[arg(long, allow_hyphen_values = true, default_value = "0,0,0")]
    pub jaw: Triple,
}

/// Three comma-separated numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple(pub [f32; 3]);

impl FromStr for Triple {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("expected x,y,z, got {s:?}"));
        }
        let mut out = [0.0; 3];
        for (o, p) in out.iter_mut().zip(parts) {
            *o = p.trim().parse().map_err(|e| format!("bad number {p:?}: {e}"))?;
        }
        Ok(Triple(out))
    }
}

#[derive(Debug, Clone, Args)]
pub struct AssetArg {
    /// Avatar asset (`.agav`).
    #[arg(long, env = "GAUSSHEAD_ASSET")]
    pub asset: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ThreadsArg {
    /// Worker threads; defaults to one per core.
    #[arg(long, env = "GAUSSHEAD_THREADS")]
    pub threads: Option<usize>,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_MISSING_INPUT: u8 = 2;
pub const EXIT_BAD_TRACK: u8 = 3;
pub const EXIT_CORRUPT_FILE: u8 = 4;
pub const EXIT_BAD_PARAMETER: u8 = 5;
pub const EXIT_USAGE: u8 = 64;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<gausshead_core::Error> for Failure {
    fn from(e: gausshead_core::Error) -> Self {
        use gausshead_core::Error;
        let code = match &e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_INPUT,
            Error::Track { .. } => EXIT_BAD_TRACK,
            Error::Format(_) => EXIT_CORRUPT_FILE,
            Error::Parameter(_) | Error::Config(_) => EXIT_BAD_PARAMETER,
            _ => EXIT_FAILURE,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        gausshead_core::Error::from(e).into()
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Fixture(a) => commands::fixture(a),
        Command::Render(a) => commands::render(a),
        Command::Animate(a) => commands::animate(a),
        Command::Bench(a) => bench::run(a),
        Command::Bake(a) => commands::bake(a),
        Command::Validate(a) => commands::validate(a),
        Command::Metrics(a) => commands::metrics(a),
        Command::Serve(a) => commands::serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn sizes_parse() {
        assert_eq!("640x480".parse(), Ok(Size { width: 640, height: 480 }));
        assert!("640".parse::<Size>().is_err());
        assert!("0x4".parse::<Size>().is_err());
        assert_eq!("0.2,-1,0".parse(), Ok(Triple([0.2, -1.0, 0.0])));
        assert!("1,2".parse::<Triple>().is_err());
    }
}
