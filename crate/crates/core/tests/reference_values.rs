//! Cross-solver reference values and structural equalities for the
//! guessing-probability SDP.

use sdiqrng::assembly::{assemble_primal, assemble_reduced, DataMode};
use sdiqrng::detection::{config1_table, config2_table, Config, ExperimentParams};
use sdiqrng::engine::{solve, EngineOptions, SolveStatus};
use sdiqrng::states::build_states;

fn params(config: Config, n: usize, mu: f64, eta: f64, eps: f64) -> ExperimentParams {
    ExperimentParams {
        config,
        n_inputs: n,
        mu,
        eta,
        epsilon: eps,
        fold: Default::default(),
    }
}

/// Config I at μ = 0.18, η = 1, ε = 1e−5 under the energy bound
/// (δ = 0.64): the guessing probability is 0.83920774, a value pinned by
/// two independent convex solvers on the identical program.
#[test]
fn config1_reference_point() {
    let table = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
    let states = build_states(3, 0.64).unwrap();
    let a = assemble_primal(&states, &table, &DataMode::Exact).unwrap();
    let out = solve(&a, &EngineOptions::default()).unwrap();

    assert_eq!(out.status, SolveStatus::Optimal);
    assert!((out.certified_pguess - 0.83920774).abs() < 1e-6,
        "certified {} vs reference 0.83920774", out.certified_pguess);
    // weak duality in the maximization convention: feasible value never
    // exceeds the certified bound
    assert!(out.primal_value <= out.certified_pguess + 1e-6);
    let h = -out.certified_pguess.log2();
    assert!((h - 0.252900).abs() < 2e-5, "h_min {}", h);
}

/// The orbit-reduced assembly must reproduce the full optimum.
#[test]
fn reduced_matches_full_config1() {
    let table = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
    let states = build_states(3, 0.64).unwrap();
    let full = solve(
        &assemble_primal(&states, &table, &DataMode::Exact).unwrap(),
        &EngineOptions::default(),
    )
    .unwrap();
    let red = solve(
        &assemble_reduced(&states, &table, &DataMode::Exact).unwrap(),
        &EngineOptions::default(),
    )
    .unwrap();
    assert_eq!(red.status, SolveStatus::Optimal);
    assert!(
        (full.certified_pguess - red.certified_pguess).abs() < 1e-7,
        "full {} vs reduced {}",
        full.certified_pguess,
        red.certified_pguess
    );
}

/// Same check on the 343-strategy Config II program at a non-trivial point.
#[test]
fn reduced_matches_full_config2() {
    let table = config2_table(&params(Config::II, 3, 0.25, 1.0, 1e-4)).unwrap();
    let states = build_states(3, 0.5).unwrap();
    let full = solve(
        &assemble_primal(&states, &table, &DataMode::Exact).unwrap(),
        &EngineOptions::default(),
    )
    .unwrap();
    let red = solve(
        &assemble_reduced(&states, &table, &DataMode::Exact).unwrap(),
        &EngineOptions::default(),
    )
    .unwrap();
    assert_eq!(full.status, SolveStatus::Optimal);
    assert_eq!(red.status, SolveStatus::Optimal);
    assert!(
        (full.certified_pguess - red.certified_pguess).abs() < 1e-7,
        "full {} vs reduced {}",
        full.certified_pguess,
        red.certified_pguess
    );
}

/// Identical inputs and options give bit-identical certified values.
#[test]
fn solve_is_deterministic() {
    let table = config1_table(&params(Config::I, 3, 0.18, 1.0, 1e-5)).unwrap();
    let states = build_states(3, 0.64).unwrap();
    let a = assemble_primal(&states, &table, &DataMode::Exact).unwrap();
    let r1 = solve(&a, &EngineOptions::default()).unwrap();
    let r2 = solve(&a, &EngineOptions::default()).unwrap();
    assert_eq!(r1.certified_pguess.to_bits(), r2.certified_pguess.to_bits());
    assert_eq!(r1.primal_value.to_bits(), r2.primal_value.to_bits());
    assert_eq!(r1.iterations, r2.iterations);
}
