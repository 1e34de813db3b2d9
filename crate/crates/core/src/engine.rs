//! Solving the assembled SDP and verifying dual certificates.
//!
//! The security-relevant output is always a *verified* dual bound: the
//! multipliers returned by the interior-point solver are reassembled into
//! (ν, H^Λ), every LMI block is checked by eigenvalue decomposition with a
//! conservative margin, and small violations are repaired by a uniform ν
//! shift before the bound −Σ ν_bx p(b|x) (plus slack allowance) is
//! reported. The primal value is diagnostic only.

use crate::assembly::{trace_free_basis, Assembled, DualProblem};
use crate::detection::ProbTable;
use crate::error::{Error, Result};
use crate::states::build_states;
use crate::symmetry::strategy_orbits;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use blocksdp::SolveStatus;

/// Solver tolerances.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EngineOptions {
    pub gap_tol: f64,
    pub feas_tol: f64,
    pub max_iters: usize,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            gap_tol: 1e-8,
            feas_tol: 1e-9,
            max_iters: 200,
        }
    }
}

/// Which strategies the stored (ν, H) pairs cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateScope {
    /// One H block per strategy, all d^n listed.
    Full,
    /// One H block per orbit representative of the structural relabeling
    /// group; the remaining LMI blocks are permutation conjugates of the
    /// listed ones, which requires ν to be class-invariant.
    OrbitReps,
    /// No H blocks; valid for every strategy because all ν_bx ≤ −1/n makes
    /// each LMI a nonpositive combination of the ρ_x. Certifies P_g ≤ 1.
    Universal,
}

/// A dual feasible point: the portable artifact that upper-bounds the
/// guessing probability for any table (re-weighted by −Σ ν p).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DualCertificate {
    pub scope: CertificateScope,
    /// `nu[x][b]`: multiplier of the (b, x) data constraint.
    pub nu: Vec<Vec<f64>>,
    /// Trace-free H^Λ parts, row-major n×n, aligned with `strategies`.
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub strategies: Vec<Vec<u8>>,
    pub n: usize,
    pub d: usize,
    /// Claimed mean photon number, when known (provenance only: verification
    /// rests on `delta_model`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    pub delta_model: f64,
    pub table_hash: String,
}

/// Outcome of verifying a certificate against a table.
#[derive(Debug, Clone, Copy)]
pub struct CertifiedBound {
    /// Verified upper bound on the guessing probability.
    pub value: f64,
    /// Worst LMI eigenvalue found before any repair.
    pub worst_eigenvalue: f64,
    /// Uniform ν shift applied by the repair (0 when none was needed).
    pub shift: f64,
    /// Σ s_bx |ν_bx| slack allowance included in `value`.
    pub slack_term: f64,
}

/// Solve result with the verified bound attached.
#[derive(Debug, Clone)]
pub struct Certified {
    pub status: SolveStatus,
    /// Feasible-side estimate of the guessing probability (diagnostic).
    pub primal_value: f64,
    /// Solver's dual objective before independent verification.
    pub dual_value: f64,
    /// Verified upper bound on the guessing probability, clamped to 1.
    pub certified_pguess: f64,
    pub gap: f64,
    pub iterations: usize,
    pub certificate: DualCertificate,
    pub bound: CertifiedBound,
}

/// The always-valid P_g ≤ 1 certificate (ν ≡ −1/n, H ≡ 0).
pub fn trivial_certificate(n: usize, d: usize, mu: Option<f64>, delta: f64, table_hash: &str) -> DualCertificate {
    DualCertificate {
        scope: CertificateScope::Universal,
        nu: vec![vec![-1.0 / n as f64; d]; n],
        h: Vec::new(),
        strategies: Vec::new(),
        n,
        d,
        mu,
        delta_model: delta,
        table_hash: table_hash.to_string(),
    }
}

fn certificate_from_multipliers(assembled: &Assembled, y: &[f64], mu: Option<f64>) -> DualCertificate {
    let (n, d) = (assembled.n, assembled.d);
    let mut nu = vec![vec![0.0; d]; n];
    for x in 0..n {
        for b in 0..d {
            nu[x][b] = assembled.nu_rows[x][b].iter().map(|&r| y[r]).sum();
        }
    }
    let basis = trace_free_basis(n);
    let t_free = assembled.norm_rows_per_group;
    let h = (0..assembled.strategies.len())
        .map(|g| {
            let mut k = DMatrix::zeros(n, n);
            for (j, f) in basis.iter().enumerate() {
                k += f * y[g * t_free + j];
            }
            k /= assembled.multiplicities[g] as f64;
            k.iter().copied().collect()
        })
        .collect();
    DualCertificate {
        scope: if assembled.reduced {
            CertificateScope::OrbitReps
        } else {
            CertificateScope::Full
        },
        nu,
        h,
        strategies: assembled.strategies.clone(),
        n,
        d,
        mu,
        delta_model: assembled.states.delta,
        table_hash: assembled.table.content_hash(),
    }
}

/// Largest eigenvalue over all LMI blocks
/// G_{Λ,b} = Σ_x ρ_x (δ_{λ_x,b}/n + ν_bx) + H^Λ.
fn worst_block_eigenvalue(dual: &DualProblem, cert: &DualCertificate) -> f64 {
    let n = dual.n;
    let rho: Vec<DMatrix<f64>> = (0..n).map(|x| dual.states.density(x)).collect();
    let mut worst = f64::NEG_INFINITY;
    for (g, lambda) in cert.strategies.iter().enumerate() {
        let k = DMatrix::from_iterator(n, n, cert.h[g].iter().copied());
        for b in 0..dual.d {
            let mut gmat = k.clone();
            for x in 0..n {
                let hit = if lambda[x] as usize == b { 1.0 / n as f64 } else { 0.0 };
                gmat += &rho[x] * (hit + cert.nu[x][b]);
            }
            let eig = gmat.symmetric_eigenvalues();
            worst = worst.max(eig.max());
        }
    }
    worst
}

/// ν invariance deviation under the structural group; the conjugation
/// argument extending orbit-representative LMIs to the whole strategy space
/// needs ν_bx = ν_{π(b),π(x)}.
fn nu_class_deviation(dual: &DualProblem, cert: &DualCertificate) -> Result<f64> {
    let group = crate::assembly::structural_group(&dual.table)?;
    let mut dev: f64 = 0.0;
    for g in &group {
        for x in 0..dual.n {
            for b in 0..dual.d {
                let image = cert.nu[g.px[x] as usize][g.pb[b] as usize];
                dev = dev.max((cert.nu[x][b] - image).abs());
            }
        }
    }
    Ok(dev)
}

fn check_shapes(dual: &DualProblem, cert: &DualCertificate) -> Result<()> {
    let shape_err = |what: &str| Err(Error::CertificateShape(what.to_string()));
    if cert.n != dual.n || cert.d != dual.d {
        return shape_err("certificate (n, d) does not match problem");
    }
    if cert.nu.len() != dual.n || cert.nu.iter().any(|row| row.len() != dual.d) {
        return shape_err("nu matrix has wrong shape");
    }
    match cert.scope {
        CertificateScope::Universal => Ok(()),
        _ => {
            if cert.h.len() != cert.strategies.len() {
                return shape_err("one H block per strategy required");
            }
            if cert.h.iter().any(|h| h.len() != dual.n * dual.n) {
                return shape_err("H block has wrong dimension");
            }
            if cert.strategies.iter().any(|s| {
                s.len() != dual.n || s.iter().any(|&b| b as usize >= dual.d)
            }) {
                return shape_err("strategy tuple out of range");
            }
            Ok(())
        }
    }
}

/// Verify a candidate dual point and return the certified bound
/// −Σ ν_bx p(b|x) + Σ s_bx |ν_bx|.
///
/// Accepts immediately when the worst LMI eigenvalue is ≤ −1e−12;
/// otherwise applies `repair_dual` sized to push the violation at least
/// `feas_tol` into the feasible side, and rejects if even the repaired
/// point fails.
pub fn certify_dual_bound(
    dual: &DualProblem,
    cert: &DualCertificate,
    feas_tol: f64,
) -> Result<CertifiedBound> {
    check_shapes(dual, cert)?;

    if cert.scope == CertificateScope::Universal {
        let ok = cert.nu.iter().flatten().all(|&v| v <= -1.0 / dual.n as f64 + 1e-15)
            && cert.h.iter().flatten().all(|&v| v == 0.0);
        if !ok {
            return Err(Error::CertificateShape(
                "universal certificate requires nu ≤ -1/n and H = 0".into(),
            ));
        }
        let (value, slack_term) = bound_value(dual, &cert.nu);
        return Ok(CertifiedBound {
            value,
            worst_eigenvalue: f64::NEG_INFINITY,
            shift: 0.0,
            slack_term,
        });
    }

    // Orbit-representative certificates must list exactly the canonical
    // (lexicographically minimal) representatives, and ν must be
    // class-invariant up to a deviation folded into the margin.
    let mut margin_extra = 0.0;
    if cert.scope == CertificateScope::OrbitReps {
        let group = crate::assembly::structural_group(&dual.table)?;
        let orbits = strategy_orbits(dual.n, dual.d, &group)?;
        if orbits.reps != cert.strategies {
            return Err(Error::CertificateShape(
                "strategy list is not the canonical orbit representatives".into(),
            ));
        }
        margin_extra = nu_class_deviation(dual, cert)? * dual.n as f64;
    }

    let vmax = worst_block_eigenvalue(dual, cert) + margin_extra;
    if vmax + 1e-12 <= 0.0 {
        let (value, slack_term) = bound_value(dual, &cert.nu);
        return Ok(CertifiedBound {
            value,
            worst_eigenvalue: vmax,
            shift: 0.0,
            slack_term,
        });
    }

    let repaired = repair_dual(cert, vmax + feas_tol.max(1e-12), &dual.states)?;
    let vmax_after = worst_block_eigenvalue(dual, &repaired) + margin_extra;
    if vmax_after + 1e-12 > 0.0 {
        return Err(Error::CertificateInfeasible(vmax_after));
    }
    let (value, slack_term) = bound_value(dual, &repaired.nu);
    Ok(CertifiedBound {
        value,
        worst_eigenvalue: vmax,
        shift: repaired.nu[0][0] - cert.nu[0][0],
        slack_term,
    })
}

fn bound_value(dual: &DualProblem, nu: &[Vec<f64>]) -> (f64, f64) {
    let mut value = 0.0;
    let mut slack_term = 0.0;
    for x in 0..dual.n {
        for b in 0..dual.d {
            value -= nu[x][b] * dual.table.p[x][b];
            slack_term += dual.slack[x][b] * nu[x][b].abs();
        }
    }
    (value + slack_term, slack_term)
}

/// Restore feasibility of a violated candidate by shifting every ν_bx down
/// uniformly. Each LMI block gains −shift·Σ_x ρ_x ⪯ −shift·λ_min(Σρ)·I, so
/// shift = violation / λ_min(Σ_x ρ_x) suffices; the certified objective
/// grows by shift per input (conservative, still a valid bound).
pub fn repair_dual(
    cert: &DualCertificate,
    violation: f64,
    states: &crate::states::StateFamily,
) -> Result<DualCertificate> {
    if violation <= 0.0 {
        return Ok(cert.clone());
    }
    let mut gram_sum = DMatrix::zeros(states.n, states.n);
    for x in 0..states.n {
        gram_sum += states.density(x);
    }
    let lambda_min = gram_sum.symmetric_eigenvalues().min();
    if lambda_min <= 1e-14 {
        return Err(Error::CertificateInfeasible(violation));
    }
    let shift = violation / lambda_min;
    let mut repaired = cert.clone();
    for row in &mut repaired.nu {
        for v in row.iter_mut() {
            *v -= shift;
        }
    }
    Ok(repaired)
}

/// Solve the assembled problem and independently verify the dual bound.
///
/// Always returns a *valid* certificate: when the solver fails or the
/// verification rejects its multipliers, the result degrades to the
/// universal P_g ≤ 1 certificate with a non-`Optimal` status.
pub fn solve(assembled: &Assembled, opts: &EngineOptions) -> Result<Certified> {
    let bopts = blocksdp::SolveOptions {
        max_iters: opts.max_iters,
        tol_gap: opts.gap_tol,
        tol_feas: opts.feas_tol,
        ..Default::default()
    };
    let mu = assembled.table.params.map(|p| p.mu);
    let sol = blocksdp::solve(&assembled.problem, &bopts)?;
    let dual_view = assembled.dual_view();

    let fallback = |status: SolveStatus, sol_gap: f64, iters: usize| -> Result<Certified> {
        let cert = trivial_certificate(
            assembled.n,
            assembled.d,
            mu,
            assembled.states.delta,
            &assembled.table.content_hash(),
        );
        let bound = certify_dual_bound(&dual_view, &cert, opts.feas_tol)?;
        Ok(Certified {
            status,
            primal_value: f64::NAN,
            dual_value: f64::NAN,
            certified_pguess: bound.value.min(1.0),
            gap: sol_gap,
            iterations: iters,
            certificate: cert,
            bound,
        })
    };

    match sol.status {
        SolveStatus::Infeasible | SolveStatus::NumericalFailure => {
            return fallback(sol.status, sol.gap, sol.iterations);
        }
        SolveStatus::Optimal | SolveStatus::MaxIters => {}
    }

    let cert = certificate_from_multipliers(assembled, &sol.y, mu);
    match certify_dual_bound(&dual_view, &cert, opts.feas_tol) {
        Ok(bound) => Ok(Certified {
            status: sol.status,
            primal_value: -sol.primal_objective,
            dual_value: -sol.dual_objective,
            certified_pguess: bound.value.min(1.0),
            gap: sol.gap,
            iterations: sol.iterations,
            certificate: cert,
            bound,
        }),
        Err(_) => fallback(SolveStatus::NumericalFailure, sol.gap, sol.iterations),
    }
}

/// Re-certify a stored certificate against a fresh table (same n, d and
/// overlap model), without running an optimization.
pub fn certify_with_certificate(
    cert: &DualCertificate,
    table: &ProbTable,
    slack: &[Vec<f64>],
    feas_tol: f64,
) -> Result<CertifiedBound> {
    let states = build_states(cert.n, cert.delta_model)?;
    let dual = DualProblem {
        n: cert.n,
        d: cert.d,
        strategies: cert.strategies.clone(),
        states,
        table: table.clone(),
        slack: slack.to_vec(),
    };
    certify_dual_bound(&dual, cert, feas_tol)
}
