//! Detection models for the two receiver configurations and finite-trial
//! simulation.
//!
//! Config I: the source occupies one of `n` time bins; conclusive outcome
//! `b = k` means exactly one click, in bin `k`; `b = n` absorbs no-click and
//! multi-click events. Config II: the source occupies the two bins other
//! than `x`; outcomes distinguish the double-click pair (`b ∈ {0,1,2}`),
//! single clicks (`b ∈ {3,4,5}`), and a remainder (`b = 6`).
//!
//! Detector efficiency is folded into the source term as `ξ = e^{−η·μ}`
//! (Poissonian thinning of coherent light is exactly equivalent to
//! attenuation); `ε` is an independent per-bin spurious-click probability.

use crate::error::{Error, Result};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Receiver configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Config {
    /// One occupied bin out of n; d = n + 1 outcomes.
    I,
    /// Two occupied bins out of 3; d = 7 outcomes.
    II,
}

/// How detector efficiency enters the no-click probability.
///
/// `Exponent` thins the Poisson click rate (equivalent to attenuating the
/// pulse before an ideal detector); `Thinning` applies η as a Bernoulli
/// filter after a threshold detector. Both appear in the literature; curves
/// report which one they used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossFold {
    #[default]
    Exponent,
    Thinning,
}

/// Physical parameters of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub config: Config,
    /// Number of input symbols (3 for Config II; ≥ 2 for Config I).
    pub n_inputs: usize,
    /// Mean photon number per pulse.
    pub mu: f64,
    /// Detector efficiency.
    pub eta: f64,
    /// Per-bin spurious-click probability (dark counts + leakage).
    pub epsilon: f64,
    #[serde(default)]
    pub fold: LossFold,
}

impl ExperimentParams {
    pub fn validate(&self) -> Result<()> {
        if self.mu.is_nan() || self.mu < 0.0 {
            return Err(Error::NegativeMu(self.mu));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::BadParameter {
                name: "eta",
                value: self.eta,
                range: "[0, 1]",
            });
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::BadParameter {
                name: "epsilon",
                value: self.epsilon,
                range: "[0, 1)",
            });
        }
        match self.config {
            Config::I if self.n_inputs < 2 => Err(Error::TooFewInputs(self.n_inputs)),
            Config::II if self.n_inputs != 3 => Err(Error::BadParameter {
                name: "n_inputs",
                value: self.n_inputs as f64,
                range: "{3} for Config II",
            }),
            _ => Ok(()),
        }
    }

    /// Source no-click probability with detector loss folded in.
    pub fn xi(&self) -> f64 {
        match self.fold {
            LossFold::Exponent => (-self.eta * self.mu).exp(),
            LossFold::Thinning => 1.0 - self.eta * (1.0 - (-self.mu).exp()),
        }
    }
}

/// Row-stochastic conditional probability table p(b|x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbTable {
    pub n: usize,
    pub d: usize,
    /// `p[x][b]`, rows indexed by input.
    pub p: Vec<Vec<f64>>,
    pub params: Option<ExperimentParams>,
}

impl ProbTable {
    pub fn new(p: Vec<Vec<f64>>, params: Option<ExperimentParams>) -> Result<Self> {
        let n = p.len();
        let d = p.first().map_or(0, Vec::len);
        let table = ProbTable { n, d, p, params };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::NoTrials);
        }
        for (x, row) in self.p.iter().enumerate() {
            if row.len() != self.d {
                return Err(Error::NotStochastic {
                    row: x,
                    sum: f64::NAN,
                });
            }
            for (b, &v) in row.iter().enumerate() {
                if !(-1e-12..=1.0 + 1e-12).contains(&v) {
                    return Err(Error::BadProbability {
                        row: x,
                        col: b,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::NotStochastic { row: x, sum });
            }
        }
        Ok(())
    }

    /// SHA-256 over the exact bit patterns of the entries (plus shape),
    /// used to tie dual certificates to the table they were solved for.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for row in &self.p {
            for &v in row {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Single trial: input sent, outcome observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRecord {
    pub x: u8,
    pub b: u8,
}

/// Config I model table, generalized to `n` inputs (d = n + 1).
///
/// Per row x: p(b=x|x) = (1−ξ+ξε)(1−ε)^{n−1}, wrong-bin conclusive clicks
/// ξε(1−ε)^{n−1} each, and the inconclusive outcome b = n absorbs the
/// remainder.
pub fn config1_table(params: &ExperimentParams) -> Result<ProbTable> {
    params.validate()?;
    let n = params.n_inputs;
    let (xi, eps) = (params.xi(), params.epsilon);
    let quiet = (1.0 - eps).powi(n as i32 - 1);
    let diag = (1.0 - xi + xi * eps) * quiet;
    let wrong = xi * eps * quiet;

    let mut p = vec![vec![0.0; n + 1]; n];
    for (x, row) in p.iter_mut().enumerate() {
        let mut conclusive = 0.0;
        for (b, v) in row.iter_mut().enumerate().take(n) {
            *v = if b == x { diag } else { wrong };
            conclusive += *v;
        }
        row[n] = 1.0 - conclusive;
    }
    ProbTable::new(p, Some(*params))
}

/// Outcome symbol for a Config II click pattern (bitmask over bins 0..2).
///
/// Double clicks map to the complementary input symbol, single clicks to
/// 5 − bin, everything else (none or all three) to 6.
pub fn config2_outcome(pattern: u8) -> u8 {
    match pattern & 0b111 {
        0b110 => 0, // bins 1,2
        0b101 => 1, // bins 0,2
        0b011 => 2, // bins 0,1
        0b100 => 3, // bin 2
        0b010 => 4, // bin 1
        0b001 => 5, // bin 0
        _ => 6,
    }
}

/// Config II model table (3 inputs, 7 outcomes).
///
/// Input x leaves bin x empty and occupies the other two; the closed forms
/// follow from independent per-bin clicks.
pub fn config2_table(params: &ExperimentParams) -> Result<ProbTable> {
    params.validate()?;
    if params.config != Config::II {
        return Err(Error::BadParameter {
            name: "config",
            value: 0.0,
            range: "Config II",
        });
    }
    let (xi, eps) = (params.xi(), params.epsilon);
    let occ = 1.0 - xi + xi * eps; // occupied bin clicks
    let miss = xi * (1.0 - eps); // occupied bin silent

    let mut p = vec![vec![0.0; 7]; 3];
    for (x, row) in p.iter_mut().enumerate() {
        // Enumerate the 8 click patterns; bins other than x are occupied.
        for pattern in 0u8..8 {
            let mut prob = 1.0;
            for bin in 0..3 {
                let clicked = pattern >> bin & 1 == 1;
                prob *= match (bin == x, clicked) {
                    (true, true) => eps,
                    (true, false) => 1.0 - eps,
                    (false, true) => occ,
                    (false, false) => miss,
                };
            }
            row[config2_outcome(pattern) as usize] += prob;
        }
    }
    ProbTable::new(p, Some(*params))
}

/// Model table for whichever configuration `params` selects.
pub fn model_table(params: &ExperimentParams) -> Result<ProbTable> {
    match params.config {
        Config::I => config1_table(params),
        Config::II => config2_table(params),
    }
}

/// Draw `count` i.i.d. trials: x uniform, b from row x of the table.
/// Deterministic for a fixed seed.
pub fn simulate_trials(table: &ProbTable, count: usize, seed: u64) -> Vec<TrialRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let input = Uniform::new(0, table.n);
    (0..count)
        .map(|_| {
            let x = input.sample(&mut rng);
            let u: f64 = rng.gen();
            let row = &table.p[x];
            let mut acc = 0.0;
            let mut b = table.d - 1;
            for (k, &v) in row.iter().enumerate() {
                acc += v;
                if u < acc {
                    b = k;
                    break;
                }
            }
            TrialRecord {
                x: x as u8,
                b: b as u8,
            }
        })
        .collect()
}

/// Maximum-likelihood table plus raw counts from a trial sequence.
///
/// Rows sum to 1 exactly: the last outcome is assigned the remainder of its
/// row, which coincides with the ML estimate up to roundoff.
pub fn empirical_table(trials: &[TrialRecord], n: usize, d: usize) -> Result<(ProbTable, Vec<Vec<u64>>)> {
    if trials.is_empty() {
        return Err(Error::NoTrials);
    }
    let mut counts = vec![vec![0u64; d]; n];
    for t in trials {
        counts[t.x as usize][t.b as usize] += 1;
    }
    let mut p = vec![vec![0.0; d]; n];
    for x in 0..n {
        let total: u64 = counts[x].iter().sum();
        if total == 0 {
            return Err(Error::MissingInput { x });
        }
        let mut head = 0.0;
        for b in 0..d - 1 {
            p[x][b] = counts[x][b] as f64 / total as f64;
            head += p[x][b];
        }
        p[x][d - 1] = (1.0 - head).max(0.0);
    }
    Ok((ProbTable::new(p, None)?, counts))
}

/// χ² goodness-of-fit result.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GofReport {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson χ² test of observed counts against a model table.
///
/// Cells with expected count < 5 are pooled per row (the asymptotic χ²
/// approximation is unreliable below that); degrees of freedom are
/// (cells − 1) per row after pooling.
pub fn chi_square_gof(counts: &[Vec<u64>], model: &ProbTable) -> GofReport {
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (x, row) in counts.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            continue;
        }
        let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
        let mut cells = 0usize;
        for (b, &c) in row.iter().enumerate() {
            let expected = total as f64 * model.p[x][b];
            if expected < 5.0 {
                pooled_obs += c as f64;
                pooled_exp += expected;
            } else {
                stat += (c as f64 - expected).powi(2) / expected;
                cells += 1;
            }
        }
        if pooled_exp > 0.0 {
            stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
            cells += 1;
        }
        dof += cells.saturating_sub(1);
    }
    if dof == 0 {
        return GofReport {
            statistic: stat,
            dof,
            p_value: 1.0,
        };
    }
    let chi = ChiSquared::new(dof as f64).expect("dof > 0");
    GofReport {
        statistic: stat,
        dof,
        p_value: 1.0 - chi.cdf(stat),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params(config: Config, n: usize, mu: f64, eta: f64, eps: f64) -> ExperimentParams {
        ExperimentParams {
            config,
            n_inputs: n,
            mu,
            eta,
            epsilon: eps,
            fold: LossFold::default(),
        }
    }

    #[test]
    fn loss_folds_agree_only_at_unit_efficiency() {
        let mut p = params(Config::I, 3, 0.3, 0.8, 0.0);
        assert!((p.xi() - (-0.8f64 * 0.3).exp()).abs() < 1e-15);
        p.fold = LossFold::Thinning;
        assert!((p.xi() - (1.0 - 0.8 * (1.0 - (-0.3f64).exp()))).abs() < 1e-15);
        // Thinning keeps more no-click mass than the exponent fold at η<1…
        assert!(p.xi() > (-0.8f64 * 0.3).exp());
        // …and the two coincide for a lossless detector.
        let ideal = params(Config::I, 3, 0.3, 1.0, 0.0);
        let mut ideal_thin = ideal;
        ideal_thin.fold = LossFold::Thinning;
        assert!((ideal.xi() - ideal_thin.xi()).abs() < 1e-15);
    }

    /// Independent oracle: enumerate all 2^n click patterns with per-bin
    /// probabilities and apply the outcome rule, instead of the closed forms.
    fn config1_oracle(n: usize, mu: f64, eta: f64, eps: f64) -> Vec<Vec<f64>> {
        let xi = (-eta * mu).exp();
        let mut p = vec![vec![0.0; n + 1]; n];
        for x in 0..n {
            for pattern in 0u32..1 << n {
                let mut prob = 1.0;
                for bin in 0..n {
                    let clicked = pattern >> bin & 1 == 1;
                    let click_prob = if bin == x { 1.0 - xi * (1.0 - eps) } else { eps };
                    prob *= if clicked { click_prob } else { 1.0 - click_prob };
                }
                let b = if pattern.count_ones() == 1 {
                    pattern.trailing_zeros() as usize
                } else {
                    n
                };
                p[x][b] += prob;
            }
        }
        p
    }

    #[test]
    fn config1_vacuum_never_clicks() {
        let t = config1_table(&params(Config::I, 3, 0.0, 1.0, 0.0)).unwrap();
        for x in 0..3 {
            assert_eq!(t.p[x][3], 1.0);
        }
    }

    #[test]
    fn config1_bright_always_conclusive() {
        let t = config1_table(&params(Config::I, 3, 800.0, 1.0, 0.0)).unwrap();
        for x in 0..3 {
            assert_eq!(t.p[x][x], 1.0);
        }
    }

    #[test]
    fn config1_paper_point() {
        let t = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
        let xi = (-0.18f64).exp();
        let want = (1.0 - xi + xi * 1e-5) * (1.0 - 1e-5) * (1.0 - 1e-5);
        for x in 0..3 {
            assert_abs_diff_eq!(t.p[x][x], want, epsilon = 1e-15);
            assert_abs_diff_eq!(t.p[x].iter().sum::<f64>(), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn config1_matches_pattern_oracle() {
        for &n in &[2usize, 3, 5] {
            for &mu in &[0.05, 0.18, 0.5] {
                for &eta in &[1.0, 0.9] {
                    for &eps in &[0.0, 1e-5, 1e-3] {
                        let t = config1_table(&params(Config::I, n, mu, eta, eps)).unwrap();
                        let oracle = config1_oracle(n, mu, eta, eps);
                        for x in 0..n {
                            for b in 0..=n {
                                assert_abs_diff_eq!(t.p[x][b], oracle[x][b], epsilon = 1e-14);
                            }
                        }
                    }
                }
            }
        }
    }

    /// Closed forms straight out of the model definition, coded separately
    /// from the pattern enumeration used by `config2_table`.
    fn config2_closed_form(mu: f64, eta: f64, eps: f64) -> Vec<Vec<f64>> {
        let xi = (-eta * mu).exp();
        let occ = 1.0 - xi + xi * eps;
        let diag = occ * occ * (1.0 - eps);
        let single = occ * xi * (1.0 - eps) * (1.0 - eps);
        let empty_single = eps * xi * xi * (1.0 - eps) * (1.0 - eps);
        let wrong = occ * eps * xi * (1.0 - eps);
        let empty_sets: [[usize; 2]; 3] = [[3, 4], [3, 5], [4, 5]];
        let empty_only = [5usize, 4, 3];
        let mut p = vec![vec![0.0; 7]; 3];
        for x in 0..3 {
            p[x][x] = diag;
            for &b in &empty_sets[x] {
                p[x][b] = single;
            }
            p[x][empty_only[x]] = empty_single;
            for b in 0..3 {
                if b != x {
                    p[x][b] = wrong;
                }
            }
            p[x][6] = 1.0 - p[x].iter().take(6).sum::<f64>();
        }
        p
    }

    #[test]
    fn config2_vacuum_never_clicks() {
        let t = config2_table(&params(Config::II, 3, 0.0, 1.0, 0.0)).unwrap();
        for x in 0..3 {
            assert_eq!(t.p[x][6], 1.0);
        }
    }

    #[test]
    fn config2_no_noise_kills_empty_bin_single() {
        let t = config2_table(&params(Config::II, 3, 0.164, 1.0, 0.0)).unwrap();
        let empty_only = [5usize, 4, 3];
        for x in 0..3 {
            assert_eq!(t.p[x][empty_only[x]], 0.0);
        }
    }

    #[test]
    fn config2_matches_closed_form() {
        for &(mu, eta, eps) in &[
            (0.164, 0.75, 1e-4),
            (0.164, 1.0, 1e-4),
            (0.3, 0.9, 1e-3),
            (0.05, 1.0, 0.0),
        ] {
            let t = config2_table(&params(Config::II, 3, mu, eta, eps)).unwrap();
            let oracle = config2_closed_form(mu, eta, eps);
            for x in 0..3 {
                for b in 0..7 {
                    assert_abs_diff_eq!(t.p[x][b], oracle[x][b], epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn row_stochastic_over_grid() {
        let mut points = 0;
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let mu = 0.05 * (i + 1) as f64;
                    let eta = 0.1 * (j + 1) as f64;
                    let eps = 1e-4 * k as f64;
                    for table in [
                        config1_table(&params(Config::I, 3, mu, eta, eps)).unwrap(),
                        config2_table(&params(Config::II, 3, mu, eta, eps)).unwrap(),
                    ] {
                        table.validate().unwrap();
                        points += 1;
                    }
                }
            }
        }
        assert!(points >= 1000);
    }

    #[test]
    fn config1_diagonal_monotone_in_mu_and_eta() {
        let mut prev = -1.0;
        for i in 0..=40 {
            let mu = i as f64 * 0.05;
            let t = config1_table(&params(Config::I, 3, mu, 1.0, 0.0)).unwrap();
            assert!(t.p[0][0] >= prev);
            prev = t.p[0][0];
        }
        prev = -1.0;
        for j in 0..=20 {
            let eta = j as f64 / 20.0;
            let t = config1_table(&params(Config::I, 3, 0.2, eta, 0.0)).unwrap();
            assert!(t.p[1][1] >= prev);
            prev = t.p[1][1];
        }
    }

    #[test]
    fn simulate_is_deterministic_and_degenerate_table_is_constant() {
        let t = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
        let a = simulate_trials(&t, 5000, 7);
        let b = simulate_trials(&t, 5000, 7);
        assert_eq!(a, b);
        let c = simulate_trials(&t, 5000, 8);
        assert_ne!(a, c);

        let degenerate = ProbTable::new(vec![vec![1.0, 0.0]; 2], None).unwrap();
        assert!(simulate_trials(&degenerate, 1000, 1).iter().all(|r| r.b == 0));
    }

    #[test]
    fn empirical_counting_examples() {
        let trials = [(0, 0), (0, 3), (1, 1), (2, 2)]
            .map(|(x, b)| TrialRecord { x, b });
        let (t, counts) = empirical_table(&trials, 3, 4).unwrap();
        assert_eq!(t.p[0][0], 0.5);
        assert_eq!(t.p[0][3], 0.5);
        assert_eq!(t.p[1][1], 1.0);
        assert_eq!(t.p[2][2], 1.0);
        assert_eq!(counts[0][3], 1);

        let missing = [TrialRecord { x: 0, b: 3 }];
        assert!(matches!(
            empirical_table(&missing, 3, 4),
            Err(Error::MissingInput { x: 1 })
        ));
        assert!(empirical_table(&[], 3, 4).is_err());
    }

    #[test]
    fn table_hash_tracks_content() {
        let a = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
        let b = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
        let c = config1_table(&params(Config::I, 3, 0.19, 1.0, 1e-5)).unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }
}
