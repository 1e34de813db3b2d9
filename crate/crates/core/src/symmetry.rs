//! Joint input/outcome relabeling symmetry of the guessing-probability SDP.
//!
//! When the table is invariant under a permutation group acting jointly on
//! inputs and outcomes, adversarial strategies fall into orbits and the SDP
//! only needs one variable set per orbit representative. The optimum is
//! preserved: symmetrizing any feasible point over the group keeps it
//! feasible with the same objective.

use crate::detection::ProbTable;
use crate::error::{Error, Result};
use itertools::Itertools;

/// One group element: `px` permutes inputs, `pb` permutes outcomes.
#[derive(Debug, Clone)]
pub struct GroupElement {
    pub px: Vec<u8>,
    pub pb: Vec<u8>,
}

/// Relabeling group for the one-occupied-bin receiver: any permutation of
/// the `n` inputs, applied identically to the conclusive outcomes `b < n`;
/// outcomes `b ≥ n` are fixed.
pub fn config1_group(n: usize, d: usize) -> Vec<GroupElement> {
    (0..n as u8)
        .permutations(n)
        .map(|px| {
            let mut pb: Vec<u8> = (0..d as u8).collect();
            pb[..n].copy_from_slice(&px);
            GroupElement { px, pb }
        })
        .collect()
}

/// Relabeling group for the two-occupied-bins receiver (3 inputs, 7
/// outcomes). A permutation π of the bins sends double-click outcome x to
/// π(x) and single-click outcome o ∈ {3,4,5} (a click in bin 5−o) to
/// 5 − π(5−o); the remainder outcome 6 is fixed.
pub fn config2_group() -> Vec<GroupElement> {
    (0..3u8)
        .permutations(3)
        .map(|px| {
            let mut pb = vec![0u8; 7];
            pb[..3].copy_from_slice(&px[..3]);
            for o in 3..6 {
                pb[o] = 5 - px[5 - o];
            }
            pb[6] = 6;
            GroupElement { px, pb }
        })
        .collect()
}

/// Largest deviation |p(b|x) − p(pb(b)|px(x))| over the group; zero for an
/// exactly invariant table.
pub fn table_asymmetry(table: &ProbTable, group: &[GroupElement]) -> f64 {
    let mut dev: f64 = 0.0;
    for g in group {
        for x in 0..table.n {
            for b in 0..table.d {
                let image = table.p[g.px[x] as usize][g.pb[b] as usize];
                dev = dev.max((table.p[x][b] - image).abs());
            }
        }
    }
    dev
}

/// Orbit decomposition of the d^n strategy space.
#[derive(Debug, Clone)]
pub struct Orbits {
    /// Lexicographically smallest member of each orbit.
    pub reps: Vec<Vec<u8>>,
    /// Number of distinct strategies in each orbit.
    pub sizes: Vec<u64>,
}

/// Partition of the (b, x) pairs into classes equivalent under the group.
#[derive(Debug, Clone)]
pub struct PairClasses {
    /// `class_of[x][b]` = class id.
    pub class_of: Vec<Vec<usize>>,
    /// `members[cid]` = the (b, x) pairs of the class.
    pub members: Vec<Vec<(u8, u8)>>,
}

fn strategy_index(lambda: &[u8], d: u64) -> u64 {
    lambda.iter().fold(0, |acc, &c| acc * d + c as u64)
}

fn decode_strategy(mut code: u64, n: usize, d: u64) -> Vec<u8> {
    let mut t = vec![0u8; n];
    for slot in t.iter_mut().rev() {
        *slot = (code % d) as u8;
        code /= d;
    }
    t
}

/// Enumerate strategy orbits under the group action
/// Λ'_{px(x)} = pb(Λ_x), scanning lexicographically so each orbit is
/// represented by its smallest member.
pub fn strategy_orbits(n: usize, d: usize, group: &[GroupElement]) -> Result<Orbits> {
    let total = (d as u64).checked_pow(n as u32).filter(|&t| t <= 1 << 27).ok_or(
        Error::StrategyCapExceeded {
            count: (d as u128).pow(n as u32),
            cap: 1 << 27,
        },
    )?;

    let mut visited = vec![0u64; (total as usize).div_ceil(64)];
    let mut reps = Vec::new();
    let mut sizes = Vec::new();
    let mut orbit = Vec::new();

    for code in 0..total {
        if visited[(code / 64) as usize] >> (code % 64) & 1 == 1 {
            continue;
        }
        let lambda = decode_strategy(code, n, d as u64);
        orbit.clear();
        let mut image = vec![0u8; n];
        for g in group {
            for x in 0..n {
                image[g.px[x] as usize] = g.pb[lambda[x] as usize];
            }
            orbit.push(strategy_index(&image, d as u64));
        }
        orbit.sort_unstable();
        orbit.dedup();
        for &c in orbit.iter() {
            visited[(c / 64) as usize] |= 1 << (c % 64);
        }
        reps.push(lambda);
        sizes.push(orbit.len() as u64);
    }
    Ok(Orbits { reps, sizes })
}

/// Group the (b, x) pairs into equivalence classes under
/// (b, x) ↦ (pb(b), px(x)).
pub fn pair_classes(n: usize, d: usize, group: &[GroupElement]) -> PairClasses {
    let mut class_of = vec![vec![usize::MAX; d]; n];
    let mut members = Vec::new();
    for b in 0..d {
        for x in 0..n {
            if class_of[x][b] != usize::MAX {
                continue;
            }
            let cid = members.len();
            let mut mem: Vec<(u8, u8)> = group
                .iter()
                .map(|g| (g.pb[b], g.px[x]))
                .collect();
            mem.sort_unstable();
            mem.dedup();
            for &(bb, xx) in &mem {
                class_of[xx as usize][bb as usize] = cid;
            }
            members.push(mem);
        }
    }
    PairClasses { class_of, members }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::{config1_table, config2_table, Config, ExperimentParams};

    fn c1_params(n: usize, mu: f64) -> ExperimentParams {
        ExperimentParams {
            config: Config::I,
            n_inputs: n,
            mu,
            eta: 1.0,
            epsilon: 1e-5,
            fold: Default::default(),
        }
    }

    #[test]
    fn config1_group_has_n_factorial_elements() {
        assert_eq!(config1_group(3, 4).len(), 6);
        assert_eq!(config1_group(5, 6).len(), 120);
        for g in config1_group(3, 4) {
            assert_eq!(g.pb[3], 3);
        }
    }

    #[test]
    fn config2_group_closure_on_outcomes() {
        let group = config2_group();
        assert_eq!(group.len(), 6);
        for g in &group {
            let mut seen = [false; 7];
            for &b in &g.pb {
                assert!(!seen[b as usize]);
                seen[b as usize] = true;
            }
            assert_eq!(g.pb[6], 6);
        }
    }

    #[test]
    fn model_tables_are_symmetric() {
        let t1 = config1_table(&c1_params(3, 0.18)).unwrap();
        assert!(table_asymmetry(&t1, &config1_group(3, 4)) < 1e-15);

        let t2 = config2_table(&ExperimentParams {
            config: Config::II,
            n_inputs: 3,
            mu: 0.164,
            eta: 0.75,
            epsilon: 1e-4,
            fold: Default::default(),
        })
        .unwrap();
        assert!(table_asymmetry(&t2, &config2_group()) < 1e-15);
    }

    #[test]
    fn perturbed_table_is_detected() {
        let mut t = config1_table(&c1_params(3, 0.18)).unwrap();
        t.p[0][0] += 1e-6;
        t.p[0][3] -= 1e-6;
        assert!(table_asymmetry(&t, &config1_group(3, 4)) > 5e-7);
    }

    #[test]
    fn orbit_counts_partition_strategy_space() {
        let orbits = strategy_orbits(3, 4, &config1_group(3, 4)).unwrap();
        assert_eq!(orbits.sizes.iter().sum::<u64>(), 64);
        assert!(orbits.reps.len() < 64);

        let orbits2 = strategy_orbits(3, 7, &config2_group()).unwrap();
        assert_eq!(orbits2.sizes.iter().sum::<u64>(), 343);
        assert!(orbits2.reps.len() < 343);
    }

    #[test]
    fn orbit_reps_are_lex_minimal_and_unique() {
        let group = config1_group(2, 3);
        let orbits = strategy_orbits(2, 3, &group).unwrap();
        let mut seen = std::collections::HashSet::new();
        for rep in &orbits.reps {
            assert!(seen.insert(rep.clone()));
            let code = strategy_index(rep, 3);
            let mut image = vec![0u8; 2];
            for g in &group {
                for x in 0..2 {
                    image[g.px[x] as usize] = g.pb[rep[x] as usize];
                }
                assert!(strategy_index(&image, 3) >= code);
            }
        }
    }

    #[test]
    fn pair_classes_cover_all_pairs() {
        let pc = pair_classes(3, 4, &config1_group(3, 4));
        let covered: usize = pc.members.iter().map(Vec::len).sum();
        assert_eq!(covered, 12);
        // diagonal, off-diagonal conclusive, inconclusive
        assert_eq!(pc.members.len(), 3);
        assert_eq!(pc.class_of[0][0], pc.class_of[1][1]);
        assert_ne!(pc.class_of[0][0], pc.class_of[0][1]);
        assert_eq!(pc.class_of[0][3], pc.class_of[2][3]);
    }
}
