//! Assembly of the adversary's guessing-probability SDP.
//!
//! For each deterministic strategy Λ = (λ_0, …, λ_{n−1}) the adversary holds
//! a sub-measurement {M_b^Λ}; the optimization is
//!
//!   maximize (1/n) Σ_x Σ_Λ ⟨ψ_x| M^Λ_{λ_x} |ψ_x⟩
//!   subject to M_b^Λ ⪰ 0,
//!              Σ_b M_b^Λ = (1/n) tr[Σ_b M_b^Λ] · I        per Λ,
//!              Σ_Λ ⟨ψ_x| M_b^Λ |ψ_x⟩ = p(b|x)             per (b, x).
//!
//! This maps onto a block SDP in standard minimization form with objective
//! blocks C_{Λ,b} = −(1/n) Σ_{x: λ_x = b} ρ_x; the solver's dual multipliers
//! on the data rows are the ν_bx of the dual program and the multipliers on
//! the normalization rows build the trace-free H^Λ matrices.

use crate::detection::ProbTable;
use crate::error::{Error, Result};
use crate::states::StateFamily;
use crate::symmetry::{
    config1_group, config2_group, pair_classes, strategy_orbits, table_asymmetry, GroupElement,
};
use blocksdp::{sym, Entry, Problem, Row, Scope};
use nalgebra::DMatrix;
use std::collections::HashMap;

/// Default ceiling on d^n before full enumeration refuses.
pub const STRATEGY_CAP: u64 = 100_000;

/// Tolerance for the table-invariance check guarding symmetry reduction.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// All d^n adversarial outcome assignments in lexicographic order.
pub fn enumerate_strategies(n: usize, d: usize) -> Result<Vec<Vec<u8>>> {
    enumerate_strategies_with_cap(n, d, STRATEGY_CAP)
}

pub fn enumerate_strategies_with_cap(n: usize, d: usize, cap: u64) -> Result<Vec<Vec<u8>>> {
    if n < 1 {
        return Err(Error::TooFewInputs(n));
    }
    if !(2..=12).contains(&d) || n > 8 {
        return Err(Error::BadParameter {
            name: "(n, d)",
            value: d as f64,
            range: "n ≤ 8, 2 ≤ d ≤ 12",
        });
    }
    let count = (d as u128).pow(n as u32);
    if count > cap as u128 {
        return Err(Error::StrategyCapExceeded { count, cap });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut lambda = vec![0u8; n];
    loop {
        out.push(lambda.clone());
        // lexicographic increment, most significant digit first
        let mut pos = n;
        while pos > 0 {
            pos -= 1;
            lambda[pos] += 1;
            if lambda[pos] < d as u8 {
                break;
            }
            lambda[pos] = 0;
            if pos == 0 {
                return Ok(out);
            }
        }
    }
}

/// How the data constraints bind to the table.
#[derive(Debug, Clone)]
pub enum DataMode {
    /// Exact equalities (model tables; row sums are exactly 1).
    Exact,
    /// ℓ∞ relaxation for finite-sample tables: each entry may deviate by
    /// σ·√(p̂(1−p̂)/N_x) + σ/N_x, where N_x is the trial count of row x.
    Slack { sigma: f64, row_counts: Vec<u64> },
}

/// The dual program's data: one LMI block per (strategy, outcome) pair,
/// variables (ν, H^Λ), objective −Σ ν_bx p(b|x).
#[derive(Debug, Clone)]
pub struct DualProblem {
    pub n: usize,
    pub d: usize,
    pub strategies: Vec<Vec<u8>>,
    pub states: StateFamily,
    pub table: ProbTable,
    /// Per-entry ℓ∞ slack radii (zero in exact mode).
    pub slack: Vec<Vec<f64>>,
}

impl DualProblem {
    pub fn lmi_block_count(&self) -> usize {
        self.strategies.len() * self.d
    }
}

/// Assembled primal/dual pair in solver form plus the bookkeeping needed to
/// read a dual certificate back out of the solver's multipliers.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub n: usize,
    pub d: usize,
    /// Orbit representatives when reduced, otherwise all d^n strategies.
    pub strategies: Vec<Vec<u8>>,
    /// Orbit sizes (all 1 when not reduced).
    pub multiplicities: Vec<u64>,
    pub reduced: bool,
    pub states: StateFamily,
    pub table: ProbTable,
    /// Per-entry slack radii s_bx (zeros in exact mode).
    pub slack: Vec<Vec<f64>>,
    pub problem: Problem,
    /// `nu_rows[x][b]`: solver rows whose multipliers sum to ν_bx.
    pub nu_rows: Vec<Vec<Vec<usize>>>,
    /// Normalization rows per strategy group; row g·t + k carries basis
    /// matrix F_k for group g.
    pub norm_rows_per_group: usize,
}

impl Assembled {
    pub fn dual_view(&self) -> DualProblem {
        DualProblem {
            n: self.n,
            d: self.d,
            strategies: self.strategies.clone(),
            states: self.states.clone(),
            table: self.table.clone(),
            slack: self.slack.clone(),
        }
    }
}

/// Trace-free symmetric basis for the normalization constraints:
/// E_ij + E_ji for i < j, then E_ii − E_{i+1,i+1}.
pub(crate) fn trace_free_basis(n: usize) -> Vec<DMatrix<f64>> {
    let mut basis = Vec::new();
    for j in 0..n {
        for i in j + 1..n {
            let mut f = DMatrix::zeros(n, n);
            f[(i, j)] = 1.0;
            f[(j, i)] = 1.0;
            basis.push(f);
        }
    }
    for i in 0..n - 1 {
        let mut f = DMatrix::zeros(n, n);
        f[(i, i)] = 1.0;
        f[(i + 1, i + 1)] = -1.0;
        basis.push(f);
    }
    basis
}

/// Slack radius per table entry: σ binomial standard errors plus a σ/N
/// floor so zero-count entries keep a nonzero window.
pub fn slack_radii(table: &ProbTable, sigma: f64, row_counts: &[u64]) -> Vec<Vec<f64>> {
    let mut s = vec![vec![0.0; table.d]; table.n];
    for x in 0..table.n {
        let nx = row_counts[x].max(1) as f64;
        for b in 0..table.d {
            let p = table.p[x][b].clamp(0.0, 1.0);
            s[x][b] = sigma * (p * (1.0 - p) / nx).sqrt() + sigma / nx;
        }
    }
    s
}

struct CoeffPool {
    coeffs: Vec<Vec<f64>>,
    /// input-subset bitmask → index of Σ_{x∈mask} svec(ρ_x)
    masks: HashMap<u32, usize>,
    rho: Vec<Vec<f64>>,
}

impl CoeffPool {
    fn new(states: &StateFamily) -> Self {
        let rho: Vec<Vec<f64>> = (0..states.n)
            .map(|x| sym::svec(&states.density(x)))
            .collect();
        let mut coeffs = rho.clone();
        let mut masks = HashMap::new();
        for x in 0..states.n {
            masks.insert(1u32 << x, x);
        }
        coeffs.extend(trace_free_basis(states.n).iter().map(sym::svec));
        CoeffPool {
            coeffs,
            masks,
            rho,
        }
    }

    fn basis_idx(&self, n: usize, k: usize) -> usize {
        n + k
    }

    fn mask_idx(&mut self, mask: u32) -> usize {
        if let Some(&idx) = self.masks.get(&mask) {
            return idx;
        }
        let dim = self.rho[0].len();
        let mut sum = vec![0.0; dim];
        for x in 0..32 {
            if mask >> x & 1 == 1 {
                for (s, r) in sum.iter_mut().zip(&self.rho[x as usize]) {
                    *s += r;
                }
            }
        }
        let idx = self.coeffs.len();
        self.coeffs.push(sum);
        self.masks.insert(mask, idx);
        idx
    }

    fn unit_idx(&mut self) -> usize {
        let idx = self.coeffs.len();
        self.coeffs.push(vec![1.0]);
        idx
    }
}

fn build(
    states: &StateFamily,
    table: &ProbTable,
    strategies: Vec<Vec<u8>>,
    multiplicities: Vec<u64>,
    classes: Option<&crate::symmetry::PairClasses>,
    mode: &DataMode,
) -> Result<Assembled> {
    let (n, d) = (table.n, table.d);
    if states.n != n {
        return Err(Error::DimensionMismatch {
            table_n: n,
            states_n: states.n,
        });
    }
    table.validate()?;

    let n_strat = strategies.len();
    let t_free = n * (n + 1) / 2 - 1;
    let mut pool = CoeffPool::new(states);

    // Objective: C_{Λ,b} = −(mult/n) Σ_{x: λ_x=b} ρ_x.
    let mut objective = Vec::new();
    for (g, lambda) in strategies.iter().enumerate() {
        let mut mask_of_b = vec![0u32; d];
        for (x, &b) in lambda.iter().enumerate() {
            mask_of_b[b as usize] |= 1 << x;
        }
        for (b, &mask) in mask_of_b.iter().enumerate() {
            if mask != 0 {
                objective.push(Entry {
                    block: g * d + b,
                    coeff: pool.mask_idx(mask),
                    scale: -(multiplicities[g] as f64) / n as f64,
                });
            }
        }
    }

    // Normalization rows, grouped per strategy: ⟨F_k, Σ_b M_b⟩ = 0.
    let mut rows = Vec::new();
    for g in 0..n_strat {
        for k in 0..t_free {
            rows.push(Row {
                scope: Scope::Group(g),
                rhs: 0.0,
                entries: (0..d)
                    .map(|b| Entry {
                        block: g * d + b,
                        coeff: pool.basis_idx(n, k),
                        scale: 1.0,
                    })
                    .collect(),
            });
        }
    }

    let mut nu_rows = vec![vec![Vec::new(); d]; n];
    let mut slack = vec![vec![0.0; d]; n];
    let mut slack_blocks = 0usize;
    let slack_base = n_strat * d;

    match (mode, classes) {
        (DataMode::Exact, None) => {
            // Row sums make one data row per input redundant given the
            // normalization rows; drop the inconclusive-outcome row for all
            // inputs but the first to keep the row set linearly independent.
            for b in 0..d {
                for x in 0..n {
                    if b == d - 1 && x > 0 {
                        continue;
                    }
                    let row = rows.len();
                    rows.push(Row {
                        scope: Scope::Global,
                        rhs: table.p[x][b],
                        entries: (0..n_strat)
                            .map(|g| Entry {
                                block: g * d + b,
                                coeff: x,
                                scale: 1.0,
                            })
                            .collect(),
                    });
                    nu_rows[x][b].push(row);
                }
            }
        }
        (DataMode::Exact, Some(pc)) => {
            // One class-summed row per orbit class of (b, x) pairs.
            for members in pc.members.iter() {
                let row = rows.len();
                let rhs = members
                    .iter()
                    .map(|&(b, x)| table.p[x as usize][b as usize])
                    .sum();
                let mut entries = Vec::new();
                for g in 0..n_strat {
                    let mut mask_of_b = vec![0u32; d];
                    for &(b, x) in members {
                        mask_of_b[b as usize] |= 1 << x;
                    }
                    for (b, &mask) in mask_of_b.iter().enumerate() {
                        if mask != 0 {
                            entries.push(Entry {
                                block: g * d + b,
                                coeff: pool.mask_idx(mask),
                                scale: multiplicities[g] as f64,
                            });
                        }
                    }
                }
                rows.push(Row {
                    scope: Scope::Global,
                    rhs,
                    entries,
                });
                for &(b, x) in members {
                    nu_rows[x as usize][b as usize].push(row);
                }
            }
        }
        (DataMode::Slack { sigma, row_counts }, None) => {
            slack = slack_radii(table, *sigma, row_counts);
            let unit = pool.unit_idx();
            for b in 0..d {
                for x in 0..n {
                    let m_entries: Vec<Entry> = (0..n_strat)
                        .map(|g| Entry {
                            block: g * d + b,
                            coeff: x,
                            scale: 1.0,
                        })
                        .collect();
                    let u_block = slack_base + slack_blocks;
                    let v_block = slack_base + slack_blocks + 1;
                    slack_blocks += 2;
                    let s = slack[x][b];
                    let plus = rows.len();
                    let mut e = m_entries.clone();
                    e.push(Entry {
                        block: u_block,
                        coeff: unit,
                        scale: 1.0,
                    });
                    rows.push(Row {
                        scope: Scope::Global,
                        rhs: table.p[x][b] + s,
                        entries: e,
                    });
                    let minus = rows.len();
                    let mut e = m_entries;
                    e.push(Entry {
                        block: v_block,
                        coeff: unit,
                        scale: -1.0,
                    });
                    rows.push(Row {
                        scope: Scope::Global,
                        rhs: table.p[x][b] - s,
                        entries: e,
                    });
                    nu_rows[x][b] = vec![plus, minus];
                }
            }
        }
        (DataMode::Slack { .. }, Some(_)) => {
            return Err(Error::NotSymmetric(f64::NAN));
        }
    }

    let mut block_dims = vec![n; n_strat * d];
    let mut group_of: Vec<usize> = (0..n_strat * d).map(|i| i / d).collect();
    let mut n_groups = n_strat;
    if slack_blocks > 0 {
        block_dims.extend(std::iter::repeat_n(1, slack_blocks));
        group_of.extend(std::iter::repeat_n(n_strat, slack_blocks));
        n_groups += 1;
    }

    let problem = Problem {
        block_dims,
        group_of,
        n_groups,
        coeffs: pool.coeffs,
        objective,
        rows,
    };
    problem.validate()?;

    Ok(Assembled {
        n,
        d,
        strategies,
        multiplicities,
        reduced: classes.is_some(),
        states: states.clone(),
        table: table.clone(),
        slack,
        problem,
        nu_rows,
        norm_rows_per_group: t_free,
    })
}

/// Assemble the full primal over all d^n strategies.
pub fn assemble_primal(states: &StateFamily, table: &ProbTable, mode: &DataMode) -> Result<Assembled> {
    let strategies = enumerate_strategies(table.n, table.d)?;
    let mult = vec![1u64; strategies.len()];
    build(states, table, strategies, mult, None, mode)
}

/// The dual program's data for certificate verification.
pub fn assemble_dual(states: &StateFamily, table: &ProbTable, mode: &DataMode) -> Result<DualProblem> {
    let strategies = enumerate_strategies(table.n, table.d)?;
    let slack = match mode {
        DataMode::Exact => vec![vec![0.0; table.d]; table.n],
        DataMode::Slack { sigma, row_counts } => slack_radii(table, *sigma, row_counts),
    };
    if states.n != table.n {
        return Err(Error::DimensionMismatch {
            table_n: table.n,
            states_n: states.n,
        });
    }
    Ok(DualProblem {
        n: table.n,
        d: table.d,
        strategies,
        states: states.clone(),
        table: table.clone(),
        slack,
    })
}

/// Relabeling group matching the table's structure: the one-occupied-bin
/// layout when d = n + 1, the two-occupied-bins layout for (n, d) = (3, 7).
pub fn structural_group(table: &ProbTable) -> Result<Vec<GroupElement>> {
    use crate::detection::Config;
    match table.params.map(|p| p.config) {
        Some(Config::I) => Ok(config1_group(table.n, table.d)),
        Some(Config::II) => Ok(config2_group()),
        None if table.d == table.n + 1 => Ok(config1_group(table.n, table.d)),
        None if table.n == 3 && table.d == 7 => Ok(config2_group()),
        None => Err(Error::NotSymmetric(f64::INFINITY)),
    }
}

/// Assemble the orbit-reduced primal. Refuses when the table is not
/// invariant under the structural group within `SYMMETRY_TOL`.
pub fn assemble_reduced(states: &StateFamily, table: &ProbTable, mode: &DataMode) -> Result<Assembled> {
    if matches!(mode, DataMode::Slack { .. }) {
        return Err(Error::NotSymmetric(f64::NAN));
    }
    let group = structural_group(table)?;
    let dev = table_asymmetry(table, &group);
    if dev > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(dev));
    }
    let orbits = strategy_orbits(table.n, table.d, &group)?;
    let classes = pair_classes(table.n, table.d, &group);
    build(
        states,
        table,
        orbits.reps,
        orbits.sizes,
        Some(&classes),
        &DataMode::Exact,
    )
}

/// Rebuild an assembled problem in orbit-reduced form.
pub fn reduce_by_symmetry(assembled: &Assembled) -> Result<Assembled> {
    if assembled.slack.iter().flatten().any(|&s| s != 0.0) {
        return Err(Error::NotSymmetric(f64::NAN));
    }
    assemble_reduced(&assembled.states, &assembled.table, &DataMode::Exact)
}
