//! Cross-module run-level properties that do not fit a single module's
//! unit tests.

use std::sync::Arc;

use qcgas::ensemble::{dilute_correlation, EnsembleParams, MethodPolicy};
use qcgas::geometry::{Configuration, CubePartition, SimBox};
use qcgas::manybody::{CubeTuple, ManyBodyFamily};
use qcgas::potential::{AssumptionA, IdealGas, PairPotential};

fn unit_box() -> SimBox {
    SimBox::cube(1, 1.0).unwrap()
}

#[test]
fn dilute_correlation_stays_bounded_under_refinement() {
    // For fixed eta, z and beta, the dilute correlation over a dyadic edge
    // sweep stays below one constant — no blow-up as the cubes shrink.
    let eta = Configuration::new(1, vec![0.5]).unwrap();
    let policy = MethodPolicy { tolerance: 1e-6, ..Default::default() };
    // The exact subset enumeration advises Monte Carlo once the cube count
    // outgrows it, which for the unpruned ideal gas happens past N = 16.
    let edges_ideal: &[f64] = &[0.5, 0.25, 0.125, 0.0625];
    let edges_rods: &[f64] = &[0.5, 0.25, 0.125, 0.0625, 0.03125];
    let models: Vec<(&str, Arc<dyn qcgas::potential::EnergyModel>, &[f64])> = vec![
        ("ideal", Arc::new(IdealGas), edges_ideal),
        ("rods", Arc::new(PairPotential::hard_core(1, 0.3).unwrap()), edges_rods),
    ];
    for (name, model, edges) in models {
        let params = EnsembleParams::new(1.0, 1.0, unit_box(), model, 0.0).unwrap();
        let mut values = Vec::new();
        for &a in edges {
            let part = CubePartition::new(unit_box(), a).unwrap();
            let est = dilute_correlation(&params, &eta, &part, &policy, 5).unwrap();
            values.push(est.value);
        }
        // One constant covers the whole sweep: the continuum value plus
        // every fugacity-scale fluctuation. For these models rho <= z = 1.
        let bound = 1.5;
        assert!(
            values.iter().all(|&v| (0.0..bound).contains(&v)),
            "{name}: {values:?} escaped [0, {bound})"
        );
    }
}

#[test]
fn cube_suprema_are_translation_invariant() {
    // I_p over a cube pair depends only on the relative offset.
    let pot = PairPotential::new_unchecked(
        1,
        AssumptionA {
            phi0: 1.0,
            phi1: 4.0 * (-2.0f64).exp(),
            r0: 0.1,
            r_attr: 1.0,
            s: 1.0,
            eps0: 1.0,
        },
        0.0,
        true,
        "exp_attraction",
        Arc::new(|r| -(-r).exp()),
    )
    .unwrap();
    let fam = ManyBodyFamily::pair_only(pot).unwrap();
    let part = CubePartition::new(SimBox::cube(1, 4.0).unwrap(), 1.0).unwrap();
    let near_origin = fam
        .i_sup(&CubeTuple::new(vec![0, 2], vec![1, 1]).unwrap(), &part)
        .unwrap();
    let shifted = fam
        .i_sup(&CubeTuple::new(vec![1, 3], vec![1, 1]).unwrap(), &part)
        .unwrap();
    assert!(
        (near_origin.value - shifted.value).abs() < 1e-12,
        "{} vs {}",
        near_origin.value,
        shifted.value
    );
}

#[test]
fn sweep_ratio_rows_never_exceed_one() {
    use qcgas::convergence::sweep;
    let eta = Configuration::new(1, vec![0.5]).unwrap();
    let policy = MethodPolicy { tolerance: 1e-6, ..Default::default() };
    let models: Vec<Arc<dyn qcgas::potential::EnergyModel>> = vec![
        Arc::new(IdealGas),
        Arc::new(PairPotential::hard_core(1, 0.3).unwrap()),
    ];
    for model in models {
        let params = EnsembleParams::new(1.0, 1.0, unit_box(), model, 0.0).unwrap();
        let result = sweep(&params, &eta, &[0.5, 0.25, 0.125], &policy, 5, 64).unwrap();
        for row in &result.rows {
            assert!(
                row.ratio <= 1.0 + row.ratio_err,
                "a = {}: ratio {} exceeds 1 beyond its error {}",
                row.a,
                row.ratio,
                row.ratio_err
            );
        }
    }
}
