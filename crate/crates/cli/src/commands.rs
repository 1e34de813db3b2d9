//! Subcommand implementations. Each returns a process exit code; results go
//! to stdout as JSON, diagnostics ride the error chain.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::Args;
use sdiqrng::assembly::{slack_radii, DataMode};
use sdiqrng::certify::{
    certify, check_energy_bound, hmin_from_pguess, optimal_mu, sweep_efficiency, sweep_mu,
    CertResult, CertStatus, CertifyOptions, SweepAxis, SweepCurve,
};
use sdiqrng::detection::{
    chi_square_gof, empirical_table, model_table, simulate_trials, Config, ExperimentParams,
    GofReport, LossFold, ProbTable, TrialRecord,
};
use sdiqrng::engine::certify_with_certificate;
use sdiqrng::extract::{extract_trials, output_length};
use serde_json::json;

use crate::artifacts::{
    parse_power_records, read_bits_file, write_bits_file, write_curve_csv, write_json,
    CertArtifact, PipelineReport, TableArtifact, ARTIFACT_VERSION,
};
use crate::config::{config_name, fold_name, model_name, ModelFlags, Resolved};
use crate::timestamps::{
    inputs_to_text, outcomes_from_patterns, parse_inputs, parse_timestamps,
    timestamps_from_trials, BinningConfig,
};

fn emit<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).context("serializing output")?);
    Ok(())
}

/// Input/outcome alphabet sizes implied by the receiver configuration.
fn table_shape(params: &ExperimentParams) -> (usize, usize) {
    match params.config {
        Config::I => (params.n_inputs, params.n_inputs + 1),
        Config::II => (3, 7),
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Binning from a file when given, otherwise the canonical one for the
/// resolved configuration; a file binning must agree on the configuration.
fn load_binning(path: Option<&PathBuf>, config: Config) -> Result<BinningConfig> {
    match path {
        Some(p) => {
            let binning = BinningConfig::from_kv(&read_text(p)?, p)?;
            ensure!(
                binning.config == config,
                "{}: binning is for configuration {}, run uses {}",
                p.display(),
                config_name(binning.config),
                config_name(config)
            );
            Ok(binning)
        }
        None => Ok(BinningConfig::default_for(config)),
    }
}

struct Ingested {
    trials: Vec<TrialRecord>,
    discarded_clicks: u64,
}

/// Pair a timestamp file with its inputs file into per-trial records.
fn load_trials(
    timestamps: &Path,
    inputs: &Path,
    binning: &BinningConfig,
    n_inputs: usize,
) -> Result<Ingested> {
    let xs = parse_inputs(&read_text(inputs)?, inputs)?;
    if let Some(bad) = xs.iter().position(|&x| x as usize >= n_inputs) {
        bail!(
            "{}:{}: input symbol {} out of range (n = {n_inputs})",
            inputs.display(),
            bad + 2,
            xs[bad]
        );
    }
    let (patterns, discarded_clicks) =
        parse_timestamps(&read_text(timestamps)?, binning, xs.len(), timestamps)?;
    let outcomes = outcomes_from_patterns(&patterns, binning.config);
    let trials = xs
        .iter()
        .zip(&outcomes)
        .map(|(&x, &b)| TrialRecord { x, b })
        .collect();
    Ok(Ingested {
        trials,
        discarded_clicks,
    })
}

fn certify_options(r: &Resolved, mode: DataMode, keep_certificate: bool) -> CertifyOptions {
    CertifyOptions {
        engine: r.engine,
        mode,
        allow_reduction: true,
        keep_certificate,
    }
}

// ---------------------------------------------------------------- tabulate

/// Evaluate the model probability table and write it as an artifact.
#[derive(Args, Debug)]
pub struct TabulateArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Output path; prints the artifact to stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn tabulate(args: &TabulateArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let table = model_table(&r.params)?;
    let artifact = TableArtifact::new(table, None, None);
    match &args.out {
        Some(path) => {
            artifact.save(path)?;
            emit(&json!({
                "out": path,
                "n": artifact.table.n,
                "d": artifact.table.d,
                "content_hash": artifact.content_hash,
            }))?;
        }
        None => emit(&artifact)?,
    }
    Ok(0)
}

// ---------------------------------------------------------------- simulate

/// Simulate trials from the model and write timestamp + input files.
#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Detector timestamp output file
    #[arg(long)]
    out_timestamps: PathBuf,
    /// Input-symbol output file
    #[arg(long)]
    out_inputs: PathBuf,
    /// Binning description to use (defaults to the canonical layout)
    #[arg(long)]
    binning: Option<PathBuf>,
    /// Also write the binning description used
    #[arg(long)]
    out_binning: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let table = model_table(&r.params)?;
    let binning = load_binning(args.binning.as_ref(), r.params.config)?;
    let trials = simulate_trials(&table, r.trials, r.seed);

    std::fs::write(&args.out_timestamps, timestamps_from_trials(&trials, &binning)?)
        .with_context(|| format!("writing {}", args.out_timestamps.display()))?;
    std::fs::write(&args.out_inputs, inputs_to_text(&trials))
        .with_context(|| format!("writing {}", args.out_inputs.display()))?;
    if let Some(path) = &args.out_binning {
        std::fs::write(path, binning.to_kv())
            .with_context(|| format!("writing {}", path.display()))?;
    }

    emit(&json!({
        "config": config_name(r.params.config),
        "n_inputs": table.n,
        "mu": r.params.mu,
        "eta": r.params.eta,
        "eps": r.params.epsilon,
        "fold": fold_name(r.params.fold),
        "trials": r.trials,
        "seed": r.seed,
        "timestamps": args.out_timestamps,
        "inputs": args.out_inputs,
    }))?;
    Ok(0)
}

// ---------------------------------------------------------------- ingest

/// Parse timestamp + input files into an empirical table artifact.
#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Detector timestamp file
    #[arg(long)]
    timestamps: PathBuf,
    /// Input-symbol file
    #[arg(long)]
    inputs: PathBuf,
    /// Binning description (defaults to the canonical layout)
    #[arg(long)]
    binning: Option<PathBuf>,
    /// Output table artifact
    #[arg(long)]
    out: PathBuf,
}

pub fn ingest(args: &IngestArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let (n, d) = table_shape(&r.params);
    let binning = load_binning(args.binning.as_ref(), r.params.config)?;
    let ingested = load_trials(&args.timestamps, &args.inputs, &binning, n)?;
    let (table, counts) = empirical_table(&ingested.trials, n, d)?;
    let artifact = TableArtifact::new(table, Some(counts), Some(ingested.discarded_clicks));
    artifact.save(&args.out)?;
    emit(&json!({
        "out": args.out,
        "trials": ingested.trials.len(),
        "discarded_clicks": ingested.discarded_clicks,
        "n": artifact.table.n,
        "d": artifact.table.d,
        "content_hash": artifact.content_hash,
    }))?;
    Ok(0)
}

// ---------------------------------------------------------------- certify

/// Certify a table (model or artifact) or re-verify a stored certificate.
#[derive(Args, Debug)]
pub struct CertifyArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Table artifact to certify (defaults to the model table)
    #[arg(long)]
    table: Option<PathBuf>,
    /// Claimed mean photon number (defaults to the table's own μ, then --mu)
    #[arg(long)]
    claim_mu: Option<f64>,
    /// Treat an empirical table as exact (ignore stored counts)
    #[arg(long)]
    exact: bool,
    /// Drop the dual certificate from the output
    #[arg(long)]
    drop_certificate: bool,
    /// Write the full result artifact here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-verify this stored certificate instead of solving
    #[arg(long)]
    verify_certificate: Option<PathBuf>,
}

fn certify_inputs(args: &CertifyArgs, r: &Resolved) -> Result<(ProbTable, Option<Vec<u64>>, f64)> {
    let (table, row_counts) = match &args.table {
        Some(path) => {
            let artifact = TableArtifact::load(path)?;
            let counts = artifact.row_counts();
            (artifact.table, counts)
        }
        None => (model_table(&r.params)?, None),
    };
    let claim = args
        .claim_mu
        .or_else(|| table.params.map(|p| p.mu))
        .unwrap_or(r.params.mu);
    Ok((table, row_counts, claim))
}

pub fn certify_cmd(args: &CertifyArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let (table, row_counts, claim) = certify_inputs(args, &r)?;

    if let Some(cert_path) = &args.verify_certificate {
        let artifact = CertArtifact::load(cert_path)?;
        let Some(cert) = &artifact.result.certificate else {
            bail!("{}: no embedded certificate to verify", cert_path.display());
        };
        let slack = match (&row_counts, args.exact) {
            (Some(counts), false) => slack_radii(&table, r.slack_sigma, counts),
            _ => vec![vec![0.0; table.d]; table.n],
        };
        let bound = certify_with_certificate(cert, &table, &slack, r.engine.feas_tol)?;
        let p = bound.value.min(1.0);
        emit(&json!({
            "verified": true,
            "certified_pguess": p,
            "h_min": hmin_from_pguess(p)?,
            "worst_eigenvalue": bound.worst_eigenvalue,
            "repair_shift": bound.shift,
            "slack_term": bound.slack_term,
            "table_hash_match": cert.table_hash == table.content_hash(),
        }))?;
        return Ok(0);
    }

    let mode = match (&row_counts, args.exact) {
        (Some(counts), false) => DataMode::Slack {
            sigma: r.slack_sigma,
            row_counts: counts.clone(),
        },
        _ => DataMode::Exact,
    };
    let keep = args.out.is_some() && !args.drop_certificate;
    let result = certify(&table, claim, r.model, &certify_options(&r, mode, keep))?;
    if let Some(path) = &args.out {
        CertArtifact::new(result.clone()).save(path)?;
    }
    emit(&result.without_certificate())?;
    Ok(0)
}

// ---------------------------------------------------------------- sweep

/// Certified-rate curve over μ, η, or the number of inputs.
#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Swept axis: mu, eta, or n_inputs
    #[arg(long, default_value = "mu")]
    axis: String,
    /// Axis start (defaults: μ 0.02, η 0.5, n 2)
    #[arg(long)]
    from: Option<f64>,
    /// Axis end inclusive (defaults: μ 0.5, η 1.0, n 5)
    #[arg(long)]
    to: Option<f64>,
    /// Number of grid points (defaults: μ 25, η 11)
    #[arg(long)]
    points: Option<usize>,
    /// μ bracket lower edge for inner optimization (eta / n_inputs axes)
    #[arg(long, default_value_t = 0.02)]
    mu_lo: f64,
    /// μ bracket upper edge for inner optimization
    #[arg(long, default_value_t = 0.5)]
    mu_hi: f64,
    /// Inner optimization tolerance on μ
    #[arg(long, default_value_t = 2e-3)]
    tol: f64,
    /// Output CSV path
    #[arg(long)]
    out: PathBuf,
}

fn linear_grid(from: f64, to: f64, points: usize) -> Result<Vec<f64>> {
    ensure!(points >= 2 && from < to, "grid needs at least 2 increasing points");
    let step = (to - from) / (points - 1) as f64;
    Ok((0..points).map(|i| from + step * i as f64).collect())
}

pub fn sweep(args: &SweepArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let axis: SweepAxis = args
        .axis
        .parse()
        .map_err(|_| anyhow::anyhow!("axis must be mu, eta, or n_inputs, got {:?}", args.axis))?;
    let opts = certify_options(&r, DataMode::Exact, false);

    let curve = match axis {
        SweepAxis::Mu => {
            let grid = linear_grid(
                args.from.unwrap_or(0.02),
                args.to.unwrap_or(0.5),
                args.points.unwrap_or(25),
            )?;
            sweep_mu(&r.params, &grid, r.model, &opts)?
        }
        SweepAxis::Eta => {
            let grid = linear_grid(
                args.from.unwrap_or(0.5),
                args.to.unwrap_or(1.0),
                args.points.unwrap_or(11),
            )?;
            sweep_efficiency(&r.params, &grid, r.model, (args.mu_lo, args.mu_hi), args.tol, &opts)?
        }
        SweepAxis::NInputs => {
            let lo = args.from.unwrap_or(2.0) as usize;
            let hi = args.to.unwrap_or(5.0) as usize;
            ensure!(
                r.params.config == Config::I,
                "the n_inputs axis applies to configuration I only"
            );
            ensure!(lo >= 2 && lo < hi, "n_inputs range must start at ≥ 2");
            let mut points = Vec::new();
            let mut results = Vec::new();
            for n in lo..=hi {
                let mut at = r.params;
                at.n_inputs = n;
                let (_, result) = optimal_mu(&at, r.model, (args.mu_lo, args.mu_hi), args.tol, &opts)?;
                points.push(n as f64);
                results.push(result);
            }
            SweepCurve::new(SweepAxis::NInputs, points, results)?
        }
    };

    write_curve_csv(&args.out, &curve)?;
    let (at, best) = curve.peak();
    emit(&json!({
        "axis": axis.to_string(),
        "points": curve.points.len(),
        "out": args.out,
        "peak": { "value": at, "mu": best.mu, "h_min": best.h_min, "p_guess": best.p_guess },
    }))?;
    Ok(0)
}

// ---------------------------------------------------------------- optimal-mu

/// Locate the μ maximizing the certified rate.
#[derive(Args, Debug)]
pub struct OptimalMuArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Bracket lower edge
    #[arg(long, default_value_t = 0.02)]
    mu_lo: f64,
    /// Bracket upper edge
    #[arg(long, default_value_t = 0.5)]
    mu_hi: f64,
    /// Tolerance on μ
    #[arg(long, default_value_t = 2e-4)]
    tol: f64,
    /// Run every detector-loss convention and report each result
    #[arg(long)]
    report_loss_variants: bool,
}

pub fn optimal_mu_cmd(args: &OptimalMuArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let opts = certify_options(&r, DataMode::Exact, false);
    let bracket = (args.mu_lo, args.mu_hi);

    let point = |fold: LossFold| -> Result<serde_json::Value> {
        let mut params = r.params;
        params.fold = fold;
        let (mu_star, best) = optimal_mu(&params, r.model, bracket, args.tol, &opts)?;
        Ok(json!({
            "fold": fold_name(fold),
            "mu_star": mu_star,
            "h_min": best.h_min,
            "p_guess": best.p_guess,
            "status": best.status.to_string(),
        }))
    };

    let base = json!({
        "config": config_name(r.params.config),
        "n_inputs": r.params.n_inputs,
        "eta": r.params.eta,
        "eps": r.params.epsilon,
        "model": model_name(r.model),
    });
    let mut report = base;
    if args.report_loss_variants {
        let variants: Vec<_> = [LossFold::Exponent, LossFold::Thinning]
            .into_iter()
            .map(point)
            .collect::<Result<_>>()?;
        report["loss_variants"] = json!(variants);
    } else {
        let single = point(r.params.fold)?;
        for (k, v) in single.as_object().expect("object").iter() {
            report[k] = v.clone();
        }
    }
    emit(&report)?;
    Ok(0)
}

// ---------------------------------------------------------------- extract

/// Hash ingested trials into certified output bits.
#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Detector timestamp file
    #[arg(long)]
    timestamps: PathBuf,
    /// Input-symbol file
    #[arg(long)]
    inputs: PathBuf,
    /// Binning description (defaults to the canonical layout)
    #[arg(long)]
    binning: Option<PathBuf>,
    /// Certification artifact supplying the entropy rate
    #[arg(long)]
    cert: Option<PathBuf>,
    /// Entropy rate per symbol (alternative to --cert)
    #[arg(long)]
    h: Option<f64>,
    /// Output bit file
    #[arg(long)]
    out: PathBuf,
}

pub fn extract(args: &ExtractArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let (n, d) = table_shape(&r.params);
    let h = match (&args.cert, args.h) {
        (Some(path), None) => {
            let artifact = CertArtifact::load(path)?;
            ensure!(
                artifact.result.status == CertStatus::Ok,
                "{}: certification status is {}, nothing to extract",
                path.display(),
                artifact.result.status
            );
            artifact.result.h_min
        }
        (None, Some(h)) => h,
        _ => bail!("exactly one of --cert or --h is required"),
    };

    let binning = load_binning(args.binning.as_ref(), r.params.config)?;
    let ingested = load_trials(&args.timestamps, &args.inputs, &binning, n)?;
    let extraction = extract_trials(&ingested.trials, d, h, r.eps_sec, r.seed)?;
    write_bits_file(&args.out, &extraction.bits)?;
    emit(&json!({
        "out": args.out,
        "output_bits": extraction.bits.len(),
        "report": extraction.report,
    }))?;
    Ok(0)
}

// ---------------------------------------------------------------- pipeline

/// Full run: acquire trials, verify the energy claim, certify, extract.
#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    model: ModelFlags,
    /// Claimed mean photon number the certificate assumes (defaults to --mu)
    #[arg(long)]
    claim_mu: Option<f64>,
    /// Detector timestamp file (switches from simulation to ingestion)
    #[arg(long, requires = "inputs", requires = "power_records")]
    timestamps: Option<PathBuf>,
    /// Input-symbol file
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Binning description (defaults to the canonical layout)
    #[arg(long)]
    binning: Option<PathBuf>,
    /// Power-monitor photon-number estimates, one per input symbol
    #[arg(long)]
    power_records: Option<PathBuf>,
    /// Output bit file (written only on certified success)
    #[arg(long)]
    out_bits: PathBuf,
    /// Also write the run report here
    #[arg(long)]
    out_report: Option<PathBuf>,
}

fn fail_closed(mu: f64, r: &Resolved, note: String) -> CertResult {
    CertResult {
        p_guess: 1.0,
        h_min: 0.0,
        mu,
        model: r.model,
        slack_used: 0.0,
        status: CertStatus::FailClosed,
        certificate_hash: None,
        certificate: None,
        note: Some(note),
    }
}

pub fn pipeline(args: &PipelineArgs) -> Result<i32> {
    let r = args.model.resolve()?;
    let (n, d) = table_shape(&r.params);
    let claim = args.claim_mu.unwrap_or(r.params.mu);

    // Acquire trials plus per-input power-monitor estimates. Simulated runs
    // report the source's true mean photon number for every input.
    let (trials, power, source, model_reference) = match &args.timestamps {
        Some(ts) => {
            let inputs = args.inputs.as_ref().expect("clap requires inputs");
            let records_path = args.power_records.as_ref().expect("clap requires power_records");
            let binning = load_binning(args.binning.as_ref(), r.params.config)?;
            let ingested = load_trials(ts, inputs, &binning, n)?;
            let power = parse_power_records(&read_text(records_path)?, records_path)?;
            ensure!(
                power.len() == n,
                "{}: expected {n} power records, got {}",
                records_path.display(),
                power.len()
            );
            (ingested.trials, power, "ingest", None)
        }
        None => {
            let table = model_table(&r.params)?;
            let trials = simulate_trials(&table, r.trials, r.seed);
            (trials, vec![r.params.mu; n], "simulate", Some(table))
        }
    };

    let energy = check_energy_bound(&power, claim)?;
    let (table, counts) = empirical_table(&trials, n, d)?;
    let gof: Option<GofReport> = model_reference.as_ref().map(|m| chi_square_gof(&counts, m));
    let row_counts: Vec<u64> = counts.iter().map(|row| row.iter().sum()).collect();

    let certification = if energy.pass {
        let mode = DataMode::Slack {
            sigma: r.slack_sigma,
            row_counts,
        };
        certify(&table, claim, r.model, &certify_options(&r, mode, false))?
    } else {
        fail_closed(
            claim,
            &r,
            format!("energy bound violated for inputs {:?}", energy.offenders),
        )
    };

    let certified = energy.pass && certification.status == CertStatus::Ok && certification.h_min > 0.0;
    let budget = if certified {
        output_length(trials.len(), certification.h_min, r.eps_sec)?
    } else {
        0
    };

    let (extraction, bits_file) = if certified && budget > 0 {
        let ex = extract_trials(&trials, d, certification.h_min, r.eps_sec, r.seed)?;
        write_bits_file(&args.out_bits, &ex.bits)?;
        (Some(ex.report), Some(args.out_bits.display().to_string()))
    } else {
        (None, None)
    };

    let mut report = serde_json::to_value(PipelineReport {
        version: ARTIFACT_VERSION,
        source: source.to_string(),
        trials: trials.len(),
        table_hash: table.content_hash(),
        energy,
        certification,
        output_budget_bits: budget,
        extraction,
        bits_file,
        certified_success: certified,
    })?;
    if let Some(g) = gof {
        report["gof"] = serde_json::to_value(g)?;
    }
    if let Some(path) = &args.out_report {
        write_json(path, &report)?;
    }
    emit(&report)?;
    Ok(if certified { 0 } else { 2 })
}

// ---------------------------------------------------------------- inspect

/// Print the bit count and a preview of a packed bit file.
#[derive(Args, Debug)]
pub struct InspectBitsArgs {
    /// Packed bit file
    #[arg(long)]
    bits: PathBuf,
    /// Preview length in bits
    #[arg(long, default_value_t = 64)]
    preview: usize,
}

pub fn inspect_bits(args: &InspectBitsArgs) -> Result<i32> {
    let bits = read_bits_file(&args.bits)?;
    let preview: String = bits
        .iter()
        .take(args.preview)
        .map(|&b| if b == 1 { '1' } else { '0' })
        .collect();
    let ones = bits.iter().filter(|&&b| b == 1).count();
    emit(&json!({
        "bits": bits.len(),
        "ones": ones,
        "preview": preview,
    }))?;
    Ok(0)
}
