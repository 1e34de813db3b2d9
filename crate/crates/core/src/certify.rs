//! Min-entropy certification: guessing-probability bounds converted to bits,
//! parameter sweeps, optimal mean-photon-number search, and the energy-bound
//! check on monitored data.
//!
//! Every path fails closed: when the solver, the certificate verification, or
//! a sanity check rejects a point, the result is zero certified entropy, never
//! an optimistic guess.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assembly::{assemble_primal, assemble_reduced, DataMode};
use crate::detection::{model_table, ExperimentParams, ProbTable};
use crate::engine::{solve, CertificateScope, DualCertificate, EngineOptions, SolveStatus};
use crate::error::{Error, Result};
use crate::states::{build_states, overlap_from_model, OverlapKind};

/// Outcome classification of one certification attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertStatus {
    /// A dual certificate was produced and independently verified.
    Ok,
    /// The overlap is degenerate (δ=0 or δ=1); zero entropy holds analytically.
    Trivial,
    /// Solver or verification failure; the result was clamped to zero entropy.
    FailClosed,
}

impl std::fmt::Display for CertStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CertStatus::Ok => "ok",
            CertStatus::Trivial => "trivial",
            CertStatus::FailClosed => "fail_closed",
        })
    }
}

impl std::str::FromStr for CertStatus {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(CertStatus::Ok),
            "trivial" => Ok(CertStatus::Trivial),
            "fail_closed" => Ok(CertStatus::FailClosed),
            _ => Err(Error::BadParameter {
                name: "status",
                value: f64::NAN,
                range: "one of ok|trivial|fail_closed",
            }),
        }
    }
}

/// One certified point: a guessing-probability bound and its entropy rate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertResult {
    /// Verified upper bound on the guessing probability, in (0, 1].
    pub p_guess: f64,
    /// Certified min-entropy per measurement, −log2(p_guess).
    pub h_min: f64,
    pub mu: f64,
    pub model: OverlapKind,
    /// Slack allowance included in the bound (0 for exact data rows).
    pub slack_used: f64,
    pub status: CertStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certificate: Option<DualCertificate>,
    /// Human-readable diagnostic (solver status, fallback reason).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl CertResult {
    fn zero(mu: f64, model: OverlapKind, status: CertStatus, note: Option<String>) -> Self {
        CertResult {
            p_guess: 1.0,
            h_min: 0.0,
            mu,
            model,
            slack_used: 0.0,
            status,
            certificate_hash: None,
            certificate: None,
            note,
        }
    }

    /// Copy without the (possibly large) embedded certificate.
    pub fn without_certificate(&self) -> Self {
        let mut r = self.clone();
        r.certificate = None;
        r
    }
}

/// Options threaded through a certification run.
#[derive(Clone, Debug)]
pub struct CertifyOptions {
    pub engine: EngineOptions,
    /// Exact equality rows (model tables) or slack rows (empirical tables).
    pub mode: DataMode,
    /// Use the symmetry-reduced assembly when the table admits it.
    pub allow_reduction: bool,
    /// Keep the full dual certificate in the result (sweeps drop it).
    pub keep_certificate: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            engine: EngineOptions::default(),
            mode: DataMode::Exact,
            allow_reduction: true,
            keep_certificate: true,
        }
    }
}

/// Min-entropy of a guessing probability, in bits.
pub fn hmin_from_pguess(p: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 || p > 1.0 {
        return Err(Error::BadPguess { p });
    }
    Ok((-p.log2()).max(0.0))
}

/// Best deterministic guessing probability (1/n)·Σ_x max_b p(b|x): an
/// unconditional lower bound every certified upper bound must respect.
pub fn best_deterministic(table: &ProbTable) -> f64 {
    let n = table.n as f64;
    table
        .p
        .iter()
        .map(|row| row.iter().cloned().fold(0.0, f64::max))
        .sum::<f64>()
        / n
}

fn sha256_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("certificate serializes");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Certify a table at a claimed mean photon number under the given overlap
/// model. The pipeline: overlap bound → state family → assembly (reduced when
/// admissible) → interior-point solve → independent dual verification.
pub fn certify(
    table: &ProbTable,
    mu: f64,
    kind: OverlapKind,
    opts: &CertifyOptions,
) -> Result<CertResult> {
    table.validate()?;
    let delta = overlap_from_model(kind, mu)?;

    // Degenerate overlaps admit a deterministic adversary model for any
    // table: identical states carry no input information, orthogonal states
    // are perfectly distinguishable. Either way nothing is certifiable.
    if delta <= 0.0 || delta >= 1.0 {
        return Ok(CertResult::zero(mu, kind, CertStatus::Trivial, None));
    }

    let states = build_states(table.n, delta)?;
    let assembled = if opts.allow_reduction && matches!(opts.mode, DataMode::Exact) {
        assemble_reduced(&states, table, &opts.mode)
            .or_else(|_| assemble_primal(&states, table, &opts.mode))?
    } else {
        assemble_primal(&states, table, &opts.mode)?
    };

    let outcome = solve(&assembled, &opts.engine)?;
    let verified = outcome.certificate.scope != CertificateScope::Universal;
    if !verified {
        return Ok(CertResult::zero(
            mu,
            kind,
            CertStatus::FailClosed,
            Some(format!("solver fallback, status {:?}", outcome.status)),
        ));
    }

    let p = outcome.certified_pguess;
    // An upper bound below the deterministic floor means the verification
    // chain is broken; trust nothing.
    if p < best_deterministic(table) - 1e-9 {
        return Ok(CertResult::zero(
            mu,
            kind,
            CertStatus::FailClosed,
            Some(format!("bound {p} below deterministic floor")),
        ));
    }

    let note = match outcome.status {
        SolveStatus::Optimal => None,
        other => Some(format!("solver status {other:?}; bound still verified")),
    };
    let mut certificate = outcome.certificate;
    certificate.mu = Some(mu);
    Ok(CertResult {
        p_guess: p,
        h_min: hmin_from_pguess(p)?,
        mu,
        model: kind,
        slack_used: outcome.bound.slack_term,
        status: CertStatus::Ok,
        certificate_hash: Some(sha256_json(&certificate)),
        certificate: opts.keep_certificate.then_some(certificate),
        note,
    })
}

/// Sweep axis for exported curves.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Mu,
    Eta,
    NInputs,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::Mu => "mu",
            SweepAxis::Eta => "eta",
            SweepAxis::NInputs => "n_inputs",
        })
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepAxis::Mu),
            "eta" => Ok(SweepAxis::Eta),
            "n_inputs" => Ok(SweepAxis::NInputs),
            _ => Err(Error::BadGrid),
        }
    }
}

/// A certified curve over one swept parameter.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepCurve {
    pub axis: SweepAxis,
    pub points: Vec<f64>,
    pub results: Vec<CertResult>,
}

pub const CURVE_CSV_HEADER: &str = "axis,value,h_min,p_guess,status,slack";

impl SweepCurve {
    pub fn new(axis: SweepAxis, points: Vec<f64>, results: Vec<CertResult>) -> Result<Self> {
        if points.is_empty() || points.len() != results.len() {
            return Err(Error::BadGrid);
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadGrid);
        }
        Ok(SweepCurve { axis, points, results })
    }

    pub fn h_values(&self) -> Vec<f64> {
        self.results.iter().map(|r| r.h_min).collect()
    }

    /// Axis point and result with the highest certified rate.
    pub fn peak(&self) -> (f64, &CertResult) {
        let (i, r) = self
            .results
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.h_min.total_cmp(&b.1.h_min))
            .expect("curve is nonempty");
        (self.points[i], r)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_CSV_HEADER);
        out.push('\n');
        for (v, r) in self.points.iter().zip(&self.results) {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.axis, v, r.h_min, r.p_guess, r.status, r.slack_used
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.starts_with('#'));
        if lines.next() != Some(CURVE_CSV_HEADER) {
            return Err(Error::BadGrid);
        }
        let mut axis = None;
        let mut points = Vec::new();
        let mut results = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let [ax, value, h_min, p_guess, status, slack] = fields.as_slice() else {
                return Err(Error::BadGrid);
            };
            let ax: SweepAxis = ax.parse()?;
            if *axis.get_or_insert(ax) != ax {
                return Err(Error::BadGrid);
            }
            let value: f64 = value.parse().map_err(|_| Error::BadGrid)?;
            let mu = if ax == SweepAxis::Mu { value } else { f64::NAN };
            points.push(value);
            results.push(CertResult {
                p_guess: p_guess.parse().map_err(|_| Error::BadGrid)?,
                h_min: h_min.parse().map_err(|_| Error::BadGrid)?,
                mu,
                model: OverlapKind::EnergyBound,
                slack_used: slack.parse().map_err(|_| Error::BadGrid)?,
                status: status.parse()?,
                certificate_hash: None,
                certificate: None,
                note: None,
            });
        }
        SweepCurve::new(axis.ok_or(Error::BadGrid)?, points, results)
    }
}

/// Evaluate the model table at one μ and certify it, folding any error into
/// a fail-closed zero point so sweeps keep going.
fn certified_point(
    params: &ExperimentParams,
    mu: f64,
    kind: OverlapKind,
    opts: &CertifyOptions,
) -> CertResult {
    let mut at = *params;
    at.mu = mu;
    let point = model_table(&at).and_then(|t| certify(&t, mu, kind, opts));
    match point {
        Ok(r) => r.without_certificate(),
        Err(e) => CertResult::zero(mu, kind, CertStatus::FailClosed, Some(e.to_string())),
    }
}

/// Certified rate as a function of the mean photon number (model tables).
pub fn sweep_mu(
    params: &ExperimentParams,
    grid: &[f64],
    kind: OverlapKind,
    opts: &CertifyOptions,
) -> Result<SweepCurve> {
    if grid.is_empty() || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadGrid);
    }
    let results = grid
        .iter()
        .map(|&mu| certified_point(params, mu, kind, opts))
        .collect();
    SweepCurve::new(SweepAxis::Mu, grid.to_vec(), results)
}

const INVPHI: f64 = 0.618_033_988_749_894_8;
const PRESCAN_POINTS: usize = 10;
const FALLBACK_GRID: usize = 64;

/// Locate the μ maximizing the certified rate by golden-section search after
/// a coarse unimodality pre-scan; falls back to a plain grid scan when the
/// pre-scan peak sits on a bracket endpoint or the shape is not unimodal.
pub fn optimal_mu(
    params: &ExperimentParams,
    kind: OverlapKind,
    bracket: (f64, f64),
    tol: f64,
    opts: &CertifyOptions,
) -> Result<(f64, CertResult)> {
    let (lo, hi) = bracket;
    if !(lo >= 0.0 && lo < hi && tol > 0.0) {
        return Err(Error::BadBracket { lo, hi });
    }

    let eval = |mu: f64| certified_point(params, mu, kind, opts);

    let mut best: Option<(f64, CertResult)> = None;
    let mut consider = |mu: f64, r: CertResult| -> f64 {
        let h = r.h_min;
        if best.as_ref().is_none_or(|(_, b)| h > b.h_min) {
            best = Some((mu, r));
        }
        h
    };

    let step = (hi - lo) / (PRESCAN_POINTS - 1) as f64;
    let scan: Vec<(f64, f64)> = (0..PRESCAN_POINTS)
        .map(|i| {
            let mu = lo + step * i as f64;
            (mu, consider(mu, eval(mu)))
        })
        .collect();

    let peak = scan
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .expect("prescan is nonempty");

    if scan[peak].1 < 1e-12 {
        // Flat-zero curve (e.g. η=0): nothing to refine.
        return Ok(best.expect("at least one point evaluated"));
    }

    let unimodal = scan.windows(2).enumerate().all(|(i, w)| {
        if i < peak {
            w[1].1 >= w[0].1 - 1e-9
        } else {
            w[1].1 <= w[0].1 + 1e-9
        }
    });

    if peak == 0 || peak == PRESCAN_POINTS - 1 || !unimodal {
        let fine = (hi - lo) / (FALLBACK_GRID - 1) as f64;
        for i in 0..FALLBACK_GRID {
            let mu = lo + fine * i as f64;
            let _ = consider(mu, eval(mu));
        }
        return Ok(best.expect("grid evaluated"));
    }

    let (mut a, mut b) = (scan[peak - 1].0, scan[peak + 1].0);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = consider(c, eval(c));
    let mut fd = consider(d, eval(d));
    while b - a > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = consider(c, eval(c));
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = consider(d, eval(d));
        }
    }
    Ok(best.expect("golden section evaluated"))
}

/// Certified rate versus detector efficiency, maximizing over μ at each point.
pub fn sweep_efficiency(
    params: &ExperimentParams,
    eta_grid: &[f64],
    kind: OverlapKind,
    bracket: (f64, f64),
    tol: f64,
    opts: &CertifyOptions,
) -> Result<SweepCurve> {
    if eta_grid.is_empty() || eta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::BadGrid);
    }
    let results = eta_grid
        .iter()
        .map(|&eta| {
            let mut at = *params;
            at.eta = eta;
            match optimal_mu(&at, kind, bracket, tol, opts) {
                Ok((_, r)) => r,
                Err(e) => {
                    CertResult::zero(f64::NAN, kind, CertStatus::FailClosed, Some(e.to_string()))
                }
            }
        })
        .collect();
    SweepCurve::new(SweepAxis::Eta, eta_grid.to_vec(), results)
}

/// Energy-bound verification report for monitored per-input photon estimates.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub pass: bool,
    pub mu: f64,
    /// μ − estimate, per input symbol; negative entries are violations.
    pub margins: Vec<f64>,
    /// Input symbols whose estimate exceeds μ.
    pub offenders: Vec<usize>,
}

/// Check the monitored per-input mean photon estimates against the claimed μ.
pub fn check_energy_bound(estimates: &[f64], mu: f64) -> Result<EnergyReport> {
    if estimates.is_empty() {
        return Err(Error::NoTrials);
    }
    if mu < 0.0 {
        return Err(Error::NegativeMu(mu));
    }
    for &e in estimates {
        if !e.is_finite() || e < 0.0 {
            return Err(Error::BadParameter {
                name: "photon estimate",
                value: e,
                range: "finite and ≥ 0",
            });
        }
    }
    let margins: Vec<f64> = estimates.iter().map(|e| mu - e).collect();
    let offenders: Vec<usize> = margins
        .iter()
        .enumerate()
        .filter_map(|(x, &m)| (m < 0.0).then_some(x))
        .collect();
    Ok(EnergyReport {
        pass: offenders.is_empty(),
        mu,
        margins,
        offenders,
    })
}
