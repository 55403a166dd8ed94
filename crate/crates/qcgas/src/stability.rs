//! Randomized verification of the stability hierarchy.
//!
//! Three lower bounds on the energy are checked against sampled
//! configurations:
//!
//! * (S)    `U(γ) ≥ −B|γ|`
//! * (SS)   `U(γ) ≥ A Σ_Δ |γ_Δ|² − B|γ|`
//! * (SSS)  `U(γ) ≥ A Σ_{Δ: |γ_Δ|≥2} |γ_Δ|^m − B|γ|`
//!
//! Verification is falsification only: a clean report over N samples is
//! evidence, not proof, and every report says so.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{Configuration, CubePartition, SimBox};
use crate::numeric::{stream, substream_rng};
use crate::potential::{EnergyModel, StabilityConstants};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityKind {
    Stable,
    Superstable,
    StrongSuperstable,
}

impl StabilityKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityKind::Stable => "S",
            StabilityKind::Superstable => "SS",
            StabilityKind::StrongSuperstable => "SSS",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "S" | "s" => Ok(StabilityKind::Stable),
            "SS" | "ss" => Ok(StabilityKind::Superstable),
            "SSS" | "sss" => Ok(StabilityKind::StrongSuperstable),
            other => Err(Error::invalid(format!("unknown stability kind {other:?}"))),
        }
    }
}

/// One failed sample: both sides of the inequality.
#[derive(Debug, Clone, Copy)]
pub struct Violation {
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub kind: StabilityKind,
    pub big_a: f64,
    pub big_b: f64,
    pub m: u32,
    pub samples: usize,
    pub violations: Vec<Violation>,
    /// Minimum of `U(γ) − rhs(γ)` over samples with finite energy.
    pub worst_margin: f64,
    pub note: &'static str,
}

const FALSIFICATION_NOTE: &str =
    "randomized falsification only: passing samples are evidence, not proof";

impl StabilityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reproducible configuration stream: `|γ|` uniform on `{0, …, max_n}`,
/// points i.i.d. uniform in the box. Sample `i` draws from its own RNG
/// substream, so the stream is identical no matter how consumers batch it.
pub fn sample_configs(
    sim_box: &SimBox,
    max_n: usize,
    samples: usize,
    seed: u64,
) -> Vec<Configuration> {
    (0..samples)
        .map(|i| one_config(sim_box, max_n, seed, i as u64))
        .collect()
}

fn one_config(sim_box: &SimBox, max_n: usize, seed: u64, index: u64) -> Configuration {
    let mut rng = substream_rng(seed, stream::SAMPLE_CONFIGS, 0, index);
    loop {
        let n = rng.gen_range(0..=max_n);
        let coords: Vec<f64> = (0..n)
            .flat_map(|_| sim_box.sides().iter().map(|&s| s * rng.gen::<f64>()).collect::<Vec<_>>())
            .collect();
        // Coinciding draws have probability zero; retry on the off chance.
        if let Ok(cfg) = Configuration::new(sim_box.dim(), coords) {
            return cfg;
        }
    }
}

/// As [`sample_configs`], but rejection-samples to configurations of finite
/// energy, keeping hard-core reports informative (an infinite energy
/// satisfies every lower bound trivially).
pub fn sample_finite_configs(
    sim_box: &SimBox,
    max_n: usize,
    samples: usize,
    seed: u64,
    model: &dyn EnergyModel,
) -> Result<Vec<Configuration>> {
    let mut out = Vec::with_capacity(samples);
    for i in 0..samples as u64 {
        let mut rng = substream_rng(seed, stream::SAMPLE_CONFIGS, 1, i);
        let mut found = None;
        for _ in 0..10_000 {
            let n = rng.gen_range(0..=max_n);
            let coords: Vec<f64> = (0..n)
                .flat_map(|_| {
                    sim_box.sides().iter().map(|&s| s * rng.gen::<f64>()).collect::<Vec<_>>()
                })
                .collect();
            let Ok(cfg) = Configuration::new(sim_box.dim(), coords) else { continue };
            if model.energy(&cfg).is_finite() {
                found = Some(cfg);
                break;
            }
        }
        out.push(found.ok_or_else(|| {
            Error::numerical(
                "could not draw a finite-energy configuration in 10000 attempts; \
                 the box is too dense for the hard core",
            )
        })?);
    }
    Ok(out)
}

/// Checks the selected inequality on every configuration and collects the
/// violations. (SS) and (SSS) need the cube partition; (S) ignores it.
pub fn verify_bound(
    model: &dyn EnergyModel,
    consts: &StabilityConstants,
    kind: StabilityKind,
    part: Option<&CubePartition>,
    configs: &[Configuration],
) -> Result<StabilityReport> {
    if kind != StabilityKind::Stable && part.is_none() {
        return Err(Error::invalid(format!(
            "{} verification needs a cube partition",
            kind.as_str()
        )));
    }
    let mut violations = Vec::new();
    let mut worst = f64::INFINITY;
    for (index, gamma) in configs.iter().enumerate() {
        let lhs = model.energy(gamma);
        if lhs == f64::INFINITY {
            // Hard-core overlap: every lower bound holds trivially.
            continue;
        }
        let n = gamma.len() as f64;
        let occupancy_term = match kind {
            StabilityKind::Stable => 0.0,
            StabilityKind::Superstable => {
                let occ = part.unwrap().occupancy(gamma)?;
                occ.values().map(|&c| (c * c) as f64).sum()
            }
            StabilityKind::StrongSuperstable => {
                let occ = part.unwrap().occupancy(gamma)?;
                occ.values()
                    .filter(|&&c| c >= 2)
                    .map(|&c| (c as f64).powi(consts.m as i32))
                    .sum()
            }
        };
        // Avoid 0 · ∞ when A is infinite but no cube is multiply occupied.
        let rhs = if occupancy_term > 0.0 {
            consts.big_a * occupancy_term - consts.big_b * n
        } else {
            -consts.big_b * n
        };
        if rhs == f64::INFINITY {
            // An infinite bound with finite energy is an automatic failure.
            violations.push(Violation { index, lhs, rhs });
            worst = f64::NEG_INFINITY;
            continue;
        }
        let margin = lhs - rhs;
        if margin < worst {
            worst = margin;
        }
        if lhs < rhs {
            violations.push(Violation { index, lhs, rhs });
        }
    }
    Ok(StabilityReport {
        kind,
        big_a: consts.big_a,
        big_b: consts.big_b,
        m: consts.m,
        samples: configs.len(),
        violations,
        worst_margin: worst,
        note: FALSIFICATION_NOTE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{IdealGas, PairPotential};

    fn unit_box() -> SimBox {
        SimBox::cube(1, 1.0).unwrap()
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_configs(&unit_box(), 5, 200, 42);
        let b = sample_configs(&unit_box(), 5, 200, 42);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.coords(), y.coords());
        }
        let c = sample_configs(&unit_box(), 5, 200, 43);
        assert!(a.iter().zip(&c).any(|(x, y)| x.coords() != y.coords()));
    }

    #[test]
    fn zero_samples_give_empty_stream() {
        assert!(sample_configs(&unit_box(), 5, 0, 1).is_empty());
    }

    #[test]
    fn sample_sizes_match_uniform_statistics() {
        // |γ| is uniform on {0..8}: mean 4, variance 80/12. Over 1e5
        // samples the mean sits within 3 standard errors.
        let max_n = 8usize;
        let samples = 100_000usize;
        let configs = sample_configs(&unit_box(), max_n, samples, 7);
        let mean: f64 =
            configs.iter().map(|c| c.len() as f64).sum::<f64>() / samples as f64;
        let var = ((max_n * (max_n + 2)) as f64) / 12.0;
        let three_sigma = 3.0 * (var / samples as f64).sqrt();
        assert!((mean - 4.0).abs() < three_sigma, "mean {mean}, 3σ {three_sigma}");
    }

    #[test]
    fn ideal_gas_is_stable_with_zero_b() {
        let consts = StabilityConstants {
            edge: 1.0,
            big_a: 0.0,
            big_b: 0.0,
            m: 2,
            b: None,
            upsilon0: None,
            delta_branch: None,
        };
        let configs = sample_configs(&unit_box(), 6, 2_000, 3);
        let report =
            verify_bound(&IdealGas, &consts, StabilityKind::Stable, None, &configs).unwrap();
        assert!(report.passed());
        assert!(report.worst_margin >= 0.0);
        assert!(report.note.contains("not proof"));
    }

    #[test]
    fn sss_holds_for_inverse_power_constants() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let consts = pot.sss_constants(0.5).unwrap();
        let part = CubePartition::new(unit_box(), 0.5).unwrap();
        let configs = sample_configs(&unit_box(), 8, 10_000, 11);
        let report = verify_bound(
            &pot,
            &consts,
            StabilityKind::StrongSuperstable,
            Some(&part),
            &configs,
        )
        .unwrap();
        assert!(report.passed(), "violations: {:?}", &report.violations[..3.min(report.violations.len())]);
    }

    #[test]
    fn inflated_constants_are_falsified() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let mut consts = pot.sss_constants(0.5).unwrap();
        consts.big_a *= 100.0;
        let part = CubePartition::new(unit_box(), 0.5).unwrap();
        let configs = sample_configs(&unit_box(), 8, 10_000, 11);
        let report = verify_bound(
            &pot,
            &consts,
            StabilityKind::StrongSuperstable,
            Some(&part),
            &configs,
        )
        .unwrap();
        assert!(!report.passed());
        assert!(report.worst_margin < 0.0);
        let v = &report.violations[0];
        assert!(v.lhs < v.rhs);
    }

    #[test]
    fn sss_implies_ss_with_same_constants() {
        // Any sample passing (SSS) at edge a also passes (SS) with A(a),
        // B(a): singly-occupied cubes add A per particle to the bound but
        // the pair repulsion covers it. Checked empirically.
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let consts = pot.sss_constants(0.5).unwrap();
        let part = CubePartition::new(unit_box(), 0.5).unwrap();
        let configs = sample_configs(&unit_box(), 8, 5_000, 13);
        let sss = verify_bound(
            &pot,
            &consts,
            StabilityKind::StrongSuperstable,
            Some(&part),
            &configs,
        )
        .unwrap();
        assert!(sss.passed());
        // (SS) differs by counting singleton cubes; with B adjusted by A
        // (each singleton contributes A·1), the bound transfers:
        // Σ_all c² ≤ Σ_{c≥2} c² + |γ|.
        let ss_consts = StabilityConstants {
            big_b: consts.big_b + consts.big_a,
            ..consts.clone()
        };
        let ss = verify_bound(
            &pot,
            &ss_consts,
            StabilityKind::Superstable,
            Some(&part),
            &configs,
        )
        .unwrap();
        assert!(ss.passed());
    }

    #[test]
    fn ss_transfers_to_compatible_refinements() {
        // A configuration passing (SS) at edge a passes at any compatible
        // finer edge with unchanged constants: refining can only split
        // per-cube counts, shrinking the occupancy sum.
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let consts = pot.sss_constants(0.5).unwrap();
        let ss_consts = StabilityConstants {
            big_b: consts.big_b + consts.big_a,
            ..consts.clone()
        };
        let configs = sample_configs(&unit_box(), 8, 5_000, 17);
        let coarse = CubePartition::new(unit_box(), 0.5).unwrap();
        let fine = CubePartition::new(unit_box(), 0.125).unwrap();
        assert!(coarse.is_refined_by(&fine));
        let at_coarse =
            verify_bound(&pot, &ss_consts, StabilityKind::Superstable, Some(&coarse), &configs)
                .unwrap();
        let at_fine =
            verify_bound(&pot, &ss_consts, StabilityKind::Superstable, Some(&fine), &configs)
                .unwrap();
        assert!(at_coarse.passed());
        assert!(at_fine.passed());
        assert!(at_fine.worst_margin >= at_coarse.worst_margin - 1e-12);
    }

    #[test]
    fn finite_sampler_avoids_hard_core_overlaps() {
        let pot = PairPotential::hard_core(1, 0.2).unwrap();
        let configs = sample_finite_configs(&unit_box(), 4, 300, 5, &pot).unwrap();
        assert_eq!(configs.len(), 300);
        assert!(configs.iter().all(|c| pot.pair_energy(c).is_finite()));
    }

    #[test]
    fn ss_requires_partition() {
        let consts = StabilityConstants {
            edge: 0.5,
            big_a: 1.0,
            big_b: 0.0,
            m: 2,
            b: None,
            upsilon0: None,
            delta_branch: None,
        };
        let configs = sample_configs(&unit_box(), 3, 10, 1);
        assert!(verify_bound(&IdealGas, &consts, StabilityKind::Superstable, None, &configs)
            .is_err());
    }
}
