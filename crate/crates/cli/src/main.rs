//! Command-line workbench for the semi-device-independent randomness toolkit:
//! model tables, trial simulation and ingestion, certified entropy bounds,
//! parameter sweeps, and randomness extraction.

mod artifacts;
mod commands;
mod config;
mod timestamps;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "sdiqrng", version, about = "Certified randomness from untrusted detectors")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Evaluate the model probability table
    Tabulate(commands::TabulateArgs),
    /// Simulate detector trials into timestamp + input files
    Simulate(commands::SimulateArgs),
    /// Build an empirical table from timestamp + input files
    Ingest(commands::IngestArgs),
    /// Certify a guessing-probability bound (or re-verify a certificate)
    Certify(commands::CertifyArgs),
    /// Export a certified-rate curve over μ, η, or the input count
    Sweep(commands::SweepArgs),
    /// Find the μ maximizing the certified rate
    OptimalMu(commands::OptimalMuArgs),
    /// Hash ingested trials into certified output bits
    Extract(commands::ExtractArgs),
    /// Full run: acquire, verify energy claim, certify, extract
    Pipeline(commands::PipelineArgs),
    /// Inspect a packed bit file
    InspectBits(commands::InspectBitsArgs),
}

fn main() {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Commands::Tabulate(args) => commands::tabulate(args),
        Commands::Simulate(args) => commands::simulate(args),
        Commands::Ingest(args) => commands::ingest(args),
        Commands::Certify(args) => commands::certify_cmd(args),
        Commands::Sweep(args) => commands::sweep(args),
        Commands::OptimalMu(args) => commands::optimal_mu_cmd(args),
        Commands::Extract(args) => commands::extract(args),
        Commands::Pipeline(args) => commands::pipeline(args),
        Commands::InspectBits(args) => commands::inspect_bits(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            let payload = serde_json::json!({ "error": format!("{err:#}") });
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}
