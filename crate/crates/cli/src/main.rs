//! `lipro`: exact Lipschitz, Prokhorov and Lipschitz-Prokhorov distances,
//! certificates, and convergence studies on circle families.
//!
//! Exit codes: 0 success, 2 invalid input, 3 a checked property failed,
//! 64 usage error. Every run that writes a file also writes a manifest.

mod context;
mod pairs;
mod studies;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::Serialize;

use context::{manifest_path, write_manifest, Context, Failure};

const EXIT_INVALID: u8 = 2;
const EXIT_CHECK: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "lipro", version, about = "Lipschitz-Prokhorov distances and convergence studies")]
struct Cli {
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Manifest path; defaults to `<first output>.manifest.json`.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(untagged)]
enum Command {
    /// Lipschitz distance between two finite metric spaces.
    Dl(pairs::DlArgs),
    /// Prokhorov distance between two path measures on one space.
    Dp(pairs::DpArgs),
    /// Lipschitz-Prokhorov distance, exact or as an upper bound from given maps.
    Dlp(pairs::DlpArgs),
    /// Check an (eps, delta)-isomorphism certificate.
    Verify(pairs::VerifyArgs),
    /// Compose two certificates.
    Compose(pairs::ComposeArgs),
    /// Sample paths of a circle family.
    Simulate(studies::SimulateArgs),
    /// Heat-kernel modulus bounds, optionally against sampled paths.
    Tightness(studies::TightnessArgs),
    /// Resolvent convergence of cycle forms to a reference cycle.
    Mosco(studies::MoscoArgs),
    /// Convergence of finite-dimensional distributions.
    Fdd(studies::FddArgs),
    /// Certified Lipschitz-Prokhorov bounds along a sequence.
    Converge(studies::ConvergeArgs),
    /// Limit of a Lipschitz-Cauchy sequence of spaces.
    CauchyLimit(pairs::CauchyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dl(_) => "dl",
            Command::Dp(_) => "dp",
            Command::Dlp(_) => "dlp",
            Command::Verify(_) => "verify",
            Command::Compose(_) => "compose",
            Command::Simulate(_) => "simulate",
            Command::Tightness(_) => "tightness",
            Command::Mosco(_) => "mosco",
            Command::Fdd(_) => "fdd",
            Command::Converge(_) => "converge",
            Command::CauchyLimit(_) => "cauchy-limit",
        }
    }

    fn run(&self, ctx: &mut Context) -> context::Result<()> {
        match self {
            Command::Dl(a) => pairs::dl(a, ctx),
            Command::Dp(a) => pairs::dp(a, ctx),
            Command::Dlp(a) => pairs::dlp(a, ctx),
            Command::Verify(a) => pairs::verify(a, ctx),
            Command::Compose(a) => pairs::compose(a, ctx),
            Command::Simulate(a) => studies::simulate(a, ctx),
            Command::Tightness(a) => studies::tightness(a, ctx),
            Command::Mosco(a) => studies::mosco(a, ctx),
            Command::Fdd(a) => studies::fdd(a, ctx),
            Command::Converge(a) => studies::converge(a, ctx),
            Command::CauchyLimit(a) => pairs::cauchy(a, ctx),
        }
    }
}

fn execute(cli: &Cli) -> context::Result<Option<String>> {
    if cli.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global()
            .map_err(Failure::invalid)?;
    }
    let mut ctx = Context::new(cli.jobs);
    cli.command.run(&mut ctx)?;
    if let Some(path) = manifest_path(cli.manifest.as_deref(), &ctx) {
        let params = serde_json::to_value(&cli.command)?;
        write_manifest(&path, cli.command.name(), params, &ctx)?;
    }
    Ok(ctx.check_failure)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match execute(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(EXIT_CHECK)
        }
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
