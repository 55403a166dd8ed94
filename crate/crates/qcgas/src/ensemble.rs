//! Grand-canonical quantities by truncated expansion in particle number.
//!
//! Every quantity is a sum `Σ_n z^n/n! · I_n` where `I_n` integrates the
//! Boltzmann weight of `n` free particles (plus a fixed configuration η for
//! correlation numerators) over `Λ^n`, optionally filtered to dilute
//! configurations of a cube partition. Terms are evaluated by tensor
//! midpoint quadrature for small `n·d` and by Monte Carlo otherwise, and
//! the truncation carries the stability tail bound
//! `Σ_{n>n_max} (z|Λ|e^{βB})^n / n! ≤ (z|Λ|e^{βB})^{n_max+1}/(n_max+1)! ·
//! e^{z|Λ|e^{βB}}`, valid whenever the energy satisfies `U ≥ −B|γ|`.
//!
//! Dilute integrals decompose exactly over sets of distinct occupied cubes,
//! which both removes the occupancy indicator from the integrand and lets
//! hard-core models prune provably-zero cube sets before integrating.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Configuration, CubePartition, SimBox};
use crate::numeric::{midpoint_product, midpoint_symmetric, mc_integral, stream, KahanSum};
use crate::potential::EnergyModel;

/// Quadrature is refused above this many integration dimensions.
pub const MAX_QUAD_DIMS: usize = 12;

/// Largest joined coordinate count (fixed particles + integrated ones).
const MAX_COORDS: usize = 256;

/// Upper limit on enumerated cube subsets per expansion term.
const MAX_SUBSETS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Quadrature,
    MonteCarlo,
    ClosedForm,
    LatticeSum,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Quadrature => "quadrature",
            Method::MonteCarlo => "monte-carlo",
            Method::ClosedForm => "closed-form",
            Method::LatticeSum => "lattice-sum",
        }
    }
}

/// One expansion term `z^n/n! · I_n` with its error share.
#[derive(Debug, Clone, Copy)]
pub struct TermEstimate {
    pub n: usize,
    pub value: f64,
    pub error: f64,
    pub method: Method,
}

/// A numeric value with an explicit absolute error bound and its origin.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub value: f64,
    /// Total absolute error: discretization/statistical error plus the
    /// truncation tail.
    pub error: f64,
    pub method: Method,
    /// Weighted per-n contributions.
    pub per_n: Vec<TermEstimate>,
    /// Stability truncation tail included in `error`.
    pub tail_bound: f64,
    /// Monte Carlo share of `error`, quoted at 3 sigma.
    pub statistical_error: f64,
    /// Set when the tail bound exceeds the requested tolerance.
    pub tail_warning: bool,
}

impl Estimate {
    pub fn exact(value: f64, method: Method) -> Self {
        Estimate {
            value,
            error: 0.0,
            method,
            per_n: Vec::new(),
            tail_bound: 0.0,
            statistical_error: 0.0,
            tail_warning: false,
        }
    }

    pub fn lattice(value: f64, tail: f64) -> Self {
        Estimate {
            value,
            error: tail,
            method: Method::LatticeSum,
            per_n: Vec::new(),
            tail_bound: tail,
            statistical_error: 0.0,
            tail_warning: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodMode {
    /// Quadrature while `n·d` stays within [`MAX_QUAD_DIMS`], Monte Carlo
    /// beyond.
    Auto,
    Quadrature,
    MonteCarlo,
}

/// How expansion terms are evaluated and where the series is cut.
#[derive(Debug, Clone, Copy)]
pub struct MethodPolicy {
    pub mode: MethodMode,
    /// Point budget per expansion term.
    pub budget: usize,
    /// Requested accuracy: drives the default `n_max` through the tail rule
    /// and raises the tail warning when unreachable.
    pub tolerance: f64,
    /// Explicit series cut; `None` picks the smallest `n` whose tail bound
    /// drops below `tolerance`.
    pub n_max: Option<usize>,
}

impl Default for MethodPolicy {
    fn default() -> Self {
        MethodPolicy { mode: MethodMode::Auto, budget: 4_000_000, tolerance: 1e-8, n_max: None }
    }
}

/// Ensemble parameters: fugacity, inverse temperature, box, energy model,
/// and the stability constant `B` (with `U ≥ −B|γ|`) feeding the tail
/// bounds. `B` must come from a bound the energy actually satisfies —
/// pair it with a passing stability report.
#[derive(Clone)]
pub struct EnsembleParams {
    pub z: f64,
    pub beta: f64,
    pub sim_box: SimBox,
    pub model: Arc<dyn EnergyModel>,
    pub stability_b: f64,
}

impl EnsembleParams {
    pub fn new(
        z: f64,
        beta: f64,
        sim_box: SimBox,
        model: Arc<dyn EnergyModel>,
        stability_b: f64,
    ) -> Result<Self> {
        if !(z >= 0.0) || !z.is_finite() {
            return Err(Error::invalid(format!("fugacity z = {z} must be finite and >= 0")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::invalid(format!("beta = {beta} must be finite and positive")));
        }
        if !(stability_b >= 0.0) {
            return Err(Error::invalid("stability constant B must be nonnegative"));
        }
        Ok(EnsembleParams { z, beta, sim_box, model, stability_b })
    }

    /// `z |Λ| e^{βB}`: the growth constant of the expansion terms.
    fn tail_base(&self) -> f64 {
        self.z * self.sim_box.volume() * (self.beta * self.stability_b).exp()
    }
}

/// `Σ_{n > n_max} c^n/n! ≤ c^{n_max+1}/(n_max+1)! · e^c`.
fn tail_after(c: f64, n_max: usize) -> f64 {
    if c == 0.0 {
        return 0.0;
    }
    let mut term = 1.0f64;
    for n in 1..=(n_max + 1) {
        term *= c / n as f64;
    }
    term * c.exp()
}

fn resolve_n_max(c: f64, policy: &MethodPolicy, prefactor: f64) -> (usize, f64, bool) {
    const HARD_CAP: usize = 200;
    if let Some(n) = policy.n_max {
        let tail = prefactor * tail_after(c, n);
        return (n, tail, tail > policy.tolerance);
    }
    for n in 0..=HARD_CAP {
        let tail = prefactor * tail_after(c, n);
        if tail < policy.tolerance {
            return (n, tail, false);
        }
    }
    let tail = prefactor * tail_after(c, HARD_CAP);
    (HARD_CAP, tail, true)
}

fn term_method(mode: MethodMode, dims: usize) -> Result<Method> {
    match mode {
        MethodMode::Auto => Ok(if dims <= MAX_QUAD_DIMS {
            Method::Quadrature
        } else {
            Method::MonteCarlo
        }),
        MethodMode::Quadrature => {
            if dims > MAX_QUAD_DIMS {
                Err(Error::invalid(format!(
                    "quadrature requested for {dims} integration dimensions \
                     (limit {MAX_QUAD_DIMS}); use mc"
                )))
            } else {
                Ok(Method::Quadrature)
            }
        }
        MethodMode::MonteCarlo => Ok(Method::MonteCarlo),
    }
}

#[inline]
fn boltzmann(model: &dyn EnergyModel, beta: f64, dim: usize, extra: &[f64], x: &[f64]) -> f64 {
    let mut buf = [0.0f64; MAX_COORDS];
    let len = extra.len() + x.len();
    buf[..extra.len()].copy_from_slice(extra);
    buf[extra.len()..len].copy_from_slice(x);
    let u = model.energy_flat(dim, &buf[..len]);
    if u == f64::INFINITY {
        0.0
    } else {
        (-beta * u).exp()
    }
}

/// Max distance between the closed cube at `corner` (edge `a`) and a point.
fn cube_point_max_dist(corner: &[f64], a: f64, p: &[f64]) -> f64 {
    corner
        .iter()
        .zip(p)
        .map(|(&c, &x)| {
            let lo = (x - c).abs();
            let hi = (x - (c + a)).abs();
            let m = lo.max(hi);
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// Max distance between two closed cubes of edge `a` at the given corners.
fn cube_cube_max_dist(c1: &[f64], c2: &[f64], a: f64) -> f64 {
    c1.iter()
        .zip(c2)
        .map(|(&x, &y)| {
            let m = (x - y).abs() + a;
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// Enumerates `n`-subsets of the free cubes whose integrals can be nonzero:
/// any subset containing a cube pair (or a cube and a fixed point) whose
/// maximal separation is below the hard-core diameter integrates to zero
/// and is pruned before it is built.
fn dilute_subsets(
    part: &CubePartition,
    free: &[usize],
    n: usize,
    hard_core: f64,
    extra: &Configuration,
) -> Result<Vec<Vec<usize>>> {
    // Prune with the same slack the potential classification uses, so only
    // provably-zero cells are dropped.
    let hard_core = hard_core * (1.0 - crate::potential::HARD_CORE_SLACK);
    let a = part.edge();
    let corners: Vec<Vec<f64>> = free.iter().map(|&c| part.cube_lower_corner(c)).collect();
    // Cubes entirely inside the hard core of a fixed point never contribute.
    let viable: Vec<usize> = (0..free.len())
        .filter(|&i| {
            hard_core == 0.0
                || extra
                    .points()
                    .all(|p| cube_point_max_dist(&corners[i], a, p) >= hard_core)
        })
        .collect();
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::with_capacity(n);
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        viable: &[usize],
        corners: &[Vec<f64>],
        free: &[usize],
        a: f64,
        hard_core: f64,
        n: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) -> Result<()> {
        if chosen.len() == n {
            if out.len() >= MAX_SUBSETS {
                return Err(Error::invalid(format!(
                    "more than {MAX_SUBSETS} cube subsets in a dilute term; use mc"
                )));
            }
            out.push(chosen.iter().map(|&i| free[viable[i]]).collect());
            return Ok(());
        }
        let remaining = n - chosen.len();
        for i in start..viable.len() {
            if viable.len() - i < remaining {
                break;
            }
            let cand = viable[i];
            if hard_core > 0.0
                && chosen.iter().any(|&j| {
                    cube_cube_max_dist(&corners[viable[j]], &corners[cand], a) < hard_core
                })
            {
                continue;
            }
            chosen.push(i);
            recurse(viable, corners, free, a, hard_core, n, i + 1, chosen, out)?;
            chosen.pop();
        }
        Ok(())
    }
    recurse(&viable, &corners, free, a, hard_core, n, 0, &mut chosen, &mut out)?;
    Ok(out)
}

struct TermResult {
    value: f64,
    error: f64,
    statistical: f64,
    method: Method,
}

/// The n-particle integral `I_n = ∫_{Λ^n} e^{−βU(extra ∪ x)} [χ̃₋] dx`.
#[allow(clippy::too_many_arguments)]
fn term_integral(
    params: &EnsembleParams,
    n: usize,
    extra: &Configuration,
    dilute: Option<&CubePartition>,
    method: Method,
    budget: usize,
    seed: u64,
    op: u32,
) -> Result<TermResult> {
    let dim = params.sim_box.dim();
    let model = params.model.as_ref();
    let beta = params.beta;
    if n == 0 {
        let u = model.energy(extra);
        let value = if u == f64::INFINITY { 0.0 } else { (-beta * u).exp() };
        return Ok(TermResult { value, error: 0.0, statistical: 0.0, method: Method::ClosedForm });
    }
    if (extra.len() + n) * dim > MAX_COORDS {
        return Err(Error::invalid(format!(
            "configuration too large: {} coordinates exceed the {MAX_COORDS} limit",
            (extra.len() + n) * dim
        )));
    }

    match (method, dilute) {
        (Method::Quadrature, None) => {
            let est = midpoint_symmetric(params.sim_box.sides(), n, budget, 1, &|x: &[f64]| {
                boltzmann(model, beta, dim, extra.coords(), x)
            });
            Ok(TermResult {
                value: est.value,
                error: est.error,
                statistical: 0.0,
                method: Method::Quadrature,
            })
        }
        (Method::Quadrature, Some(part)) => {
            let extra_cubes = part.occupancy_vec(extra)?;
            let free: Vec<usize> =
                (0..part.cube_count()).filter(|&c| extra_cubes[c] == 0).collect();
            if n > free.len() {
                return Ok(TermResult {
                    value: 0.0,
                    error: 0.0,
                    statistical: 0.0,
                    method: Method::ClosedForm,
                });
            }
            let subsets =
                dilute_subsets(part, &free, n, model.hard_core_diameter(), extra)?;
            if subsets.is_empty() {
                return Ok(TermResult {
                    value: 0.0,
                    error: 0.0,
                    statistical: 0.0,
                    method: Method::ClosedForm,
                });
            }
            let a = part.edge();
            let per_budget = (budget / subsets.len()).max(16);
            let results: Vec<(f64, f64)> = subsets
                .par_iter()
                .map(|cubes| {
                    let mut axes = Vec::with_capacity(n * dim);
                    for &c in cubes {
                        for corner in part.cube_lower_corner(c) {
                            axes.push((corner, corner + a));
                        }
                    }
                    let est = midpoint_product(&axes, per_budget, &|x: &[f64]| {
                        boltzmann(model, beta, dim, extra.coords(), x)
                    });
                    (est.value, est.error)
                })
                .collect();
            let mut value = KahanSum::default();
            let mut error = KahanSum::default();
            for (v, e) in results {
                value.add(v);
                error.add(e);
            }
            let factorial: f64 = (1..=n).map(|i| i as f64).product();
            Ok(TermResult {
                value: factorial * value.value(),
                error: factorial * error.value(),
                statistical: 0.0,
                method: Method::Quadrature,
            })
        }
        (Method::MonteCarlo, dilute) => {
            let axes: Vec<(f64, f64)> = (0..n)
                .flat_map(|_| params.sim_box.sides().iter().map(|&s| (0.0, s)))
                .collect();
            let extra_cube_list: Vec<usize> = match dilute {
                Some(part) => extra
                    .points()
                    .map(|p| part.cube_index(p))
                    .collect::<Result<Vec<_>>>()?,
                None => Vec::new(),
            };
            let f = |x: &[f64]| {
                if let Some(part) = dilute {
                    let mut cubes = [0usize; 32];
                    for (i, pt) in x.chunks_exact(dim).enumerate() {
                        // MC points are interior by construction.
                        cubes[i] = part.cube_index(pt).expect("sample inside box");
                    }
                    let cubes = &cubes[..n];
                    for i in 0..n {
                        for j in (i + 1)..n {
                            if cubes[i] == cubes[j] {
                                return 0.0;
                            }
                        }
                        if extra_cube_list.iter().any(|&c| c == cubes[i]) {
                            return 0.0;
                        }
                    }
                }
                boltzmann(model, beta, dim, extra.coords(), x)
            };
            if dilute.is_some() && n > 32 {
                return Err(Error::invalid("dilute Monte Carlo supports at most 32 particles"));
            }
            let est = mc_integral(&axes, budget, seed, op, n as u64, &f);
            Ok(TermResult {
                value: est.value,
                error: est.error3,
                statistical: est.error3,
                method: Method::MonteCarlo,
            })
        }
        (Method::ClosedForm | Method::LatticeSum, _) => {
            Err(Error::invalid("term integrals are evaluated by quadrature or mc"))
        }
    }
}

/// Shared expansion engine: `Σ_{n ≤ n_max} z^n/n! · I_n(extra, dilute)`.
fn expansion(
    params: &EnsembleParams,
    extra: &Configuration,
    dilute: Option<&CubePartition>,
    policy: &MethodPolicy,
    seed: u64,
    op: u32,
) -> Result<Estimate> {
    if extra.dim() != params.sim_box.dim() {
        return Err(Error::invalid("configuration dimension does not match the box"));
    }
    if !extra.inside(&params.sim_box) {
        return Err(Error::invalid("fixed configuration has points outside the box"));
    }
    if let Some(part) = dilute {
        if part.sim_box() != &params.sim_box {
            return Err(Error::invalid("partition box does not match the ensemble box"));
        }
        if !part.is_dilute(extra)? {
            return Ok(Estimate::exact(0.0, Method::ClosedForm));
        }
    }

    let prefactor = (params.beta * params.stability_b * extra.len() as f64).exp();
    let (n_max, mut tail, mut warn) = resolve_n_max(params.tail_base(), policy, prefactor);

    // Dilute expansions cut off exactly at the number of unoccupied cubes.
    let mut n_top = n_max;
    if let Some(part) = dilute {
        let occupied = part.occupancy(extra)?.len();
        let free = part.cube_count() - occupied;
        if n_max >= free {
            n_top = free;
            tail = 0.0;
            warn = false;
        }
    }

    let mut value = KahanSum::default();
    let mut error = KahanSum::default();
    let mut statistical = KahanSum::default();
    let mut per_n = Vec::with_capacity(n_top + 1);
    let mut weight = 1.0f64; // z^n / n!
    let mut any_mc = false;
    let mut any_quad = false;
    for n in 0..=n_top {
        if n > 0 {
            weight *= params.z / n as f64;
        }
        if weight == 0.0 {
            // z = 0: only the empty term contributes.
            if n > 0 {
                break;
            }
        }
        let method = if n == 0 {
            Method::ClosedForm
        } else {
            term_method(policy.mode, n * params.sim_box.dim())?
        };
        let term = term_integral(params, n, extra, dilute, method, policy.budget, seed, op)?;
        match term.method {
            Method::MonteCarlo => any_mc = true,
            Method::Quadrature => any_quad = true,
            _ => {}
        }
        value.add(weight * term.value);
        error.add(weight * term.error);
        statistical.add(weight * term.statistical);
        per_n.push(TermEstimate {
            n,
            value: weight * term.value,
            error: weight * term.error,
            method: term.method,
        });
    }

    let method = if any_mc {
        Method::MonteCarlo
    } else if any_quad {
        Method::Quadrature
    } else {
        Method::ClosedForm
    };
    Ok(Estimate {
        value: value.value(),
        error: error.value() + tail,
        method,
        per_n,
        tail_bound: tail,
        statistical_error: statistical.value(),
        tail_warning: warn,
    })
}

/// One expansion term: `I_n = ∫_{Λ^n} e^{−βU(extra ∪ {x₁..x_n})} Π χ̃₋ dx`
/// (the indicator only when `dilute_part` is given). `n = 0` returns
/// `e^{−βU(extra)}` exactly.
#[allow(clippy::too_many_arguments)]
pub fn canonical_integral(
    params: &EnsembleParams,
    n: usize,
    extra: &Configuration,
    dilute_part: Option<&CubePartition>,
    method: MethodMode,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    if budget < 1 {
        return Err(Error::invalid("budget must be at least 1"));
    }
    if !extra.inside(&params.sim_box) {
        return Err(Error::invalid("fixed configuration has points outside the box"));
    }
    if let Some(part) = dilute_part {
        if !part.is_dilute(extra)? {
            return Ok(Estimate::exact(0.0, Method::ClosedForm));
        }
    }
    let method = if n == 0 { Method::ClosedForm } else { term_method(method, n * params.sim_box.dim())? };
    let term = term_integral(params, n, extra, dilute_part, method, budget, seed, stream::MC_PARTITION)?;
    Ok(Estimate {
        value: term.value,
        error: term.error,
        method: term.method,
        per_n: vec![TermEstimate { n, value: term.value, error: term.error, method: term.method }],
        tail_bound: 0.0,
        statistical_error: term.statistical,
        tail_warning: false,
    })
}

/// `Z_Λ(z, β)`: the full partition function.
pub fn partition_function(
    params: &EnsembleParams,
    policy: &MethodPolicy,
    seed: u64,
) -> Result<Estimate> {
    expansion(params, &Configuration::empty(params.sim_box.dim()), None, policy, seed, stream::MC_PARTITION)
}

/// `Z_Λ⁻(z, β, a)`: the expansion restricted to dilute configurations of
/// the partition. Evaluated by the exact decomposition over sets of
/// distinct occupied cubes (which doubles as the small-cube-count
/// closed-form cross-check) or, under the Monte Carlo mode, by sampling
/// `Λ^n` against the dilute indicator.
pub fn dilute_partition_function(
    params: &EnsembleParams,
    part: &CubePartition,
    policy: &MethodPolicy,
    seed: u64,
) -> Result<Estimate> {
    expansion(params, &Configuration::empty(params.sim_box.dim()), Some(part), policy, seed, stream::MC_PARTITION)
}

fn ratio_estimate(prefactor: f64, num: Estimate, den: &Estimate) -> Result<Estimate> {
    let den_low = den.value - den.error;
    if !(den_low > 0.0) {
        return Err(Error::numerical(format!(
            "denominator {:.6e} ± {:.6e} is not bounded away from zero",
            den.value, den.error
        )));
    }
    let value = prefactor * num.value / den.value;
    let error = prefactor * (num.error / den_low + num.value.abs() * den.error / (den.value * den_low));
    Ok(Estimate {
        value,
        error,
        method: if num.method == Method::MonteCarlo || den.method == Method::MonteCarlo {
            Method::MonteCarlo
        } else {
            num.method
        },
        per_n: num.per_n,
        tail_bound: num.tail_bound,
        statistical_error: prefactor
            * (num.statistical_error / den_low
                + num.value.abs() * den.statistical_error / (den.value * den_low)),
        tail_warning: num.tail_warning || den.tail_warning,
    })
}

/// `ρ_Λ(η; z, β) = z^{|η|}/Z_Λ · Σ_n z^n/n! ∫ e^{−βU(η∪{x})} dx`.
///
/// The `z^{|η|}` prefactor makes the ideal gas come out at exactly
/// `z^{|η|}`, the convention used consistently by the decomposition
/// identity machinery.
pub fn correlation(
    params: &EnsembleParams,
    eta: &Configuration,
    policy: &MethodPolicy,
    seed: u64,
) -> Result<Estimate> {
    if !eta.inside(&params.sim_box) {
        return Err(Error::invalid("eta has points outside the box"));
    }
    if eta.is_empty() {
        return Ok(Estimate::exact(1.0, Method::ClosedForm));
    }
    let num = expansion(params, eta, None, policy, seed, stream::MC_NUMERATOR)?;
    let den = partition_function(params, policy, seed)?;
    ratio_estimate(params.z.powi(eta.len() as i32), num, &den)
}

/// `ρ_Λ⁻(η; z, β, a)`: exactly 0 when η itself is not dilute, otherwise
/// `z^{|η|}/Z⁻ · Σ_n z^n/n! ∫ e^{−βU(η∪{x})} χ̃₋(η∪{x}) dx`.
pub fn dilute_correlation(
    params: &EnsembleParams,
    eta: &Configuration,
    part: &CubePartition,
    policy: &MethodPolicy,
    seed: u64,
) -> Result<Estimate> {
    if !eta.inside(&params.sim_box) {
        return Err(Error::invalid("eta has points outside the box"));
    }
    if !part.is_dilute(eta)? {
        return Ok(Estimate::exact(0.0, Method::ClosedForm));
    }
    if eta.is_empty() {
        return Ok(Estimate::exact(1.0, Method::ClosedForm));
    }
    let num = expansion(params, eta, Some(part), policy, seed, stream::MC_NUMERATOR)?;
    let den = dilute_partition_function(params, part, policy, seed)?;
    ratio_estimate(params.z.powi(eta.len() as i32), num, &den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{IdealGas, PairPotential};

    fn ideal_params(z: f64) -> EnsembleParams {
        EnsembleParams::new(z, 1.0, SimBox::cube(1, 1.0).unwrap(), Arc::new(IdealGas), 0.0)
            .unwrap()
    }

    fn tonks_params() -> EnsembleParams {
        let pot = PairPotential::hard_core(1, 0.3).unwrap();
        EnsembleParams::new(1.0, 1.0, SimBox::cube(1, 1.0).unwrap(), Arc::new(pot), 0.0).unwrap()
    }

    fn tonks_z(z: f64, l: f64, sigma: f64) -> f64 {
        // Sum over n of z^n (L - (n-1) sigma)_+^n / n!.
        let mut total = 1.0;
        let mut weight = 1.0;
        for n in 1..64 {
            weight *= z / n as f64;
            let reach = l - (n as f64 - 1.0) * sigma;
            if reach <= 0.0 {
                break;
            }
            total += weight * reach.powi(n);
        }
        total
    }

    #[test]
    fn canonical_integral_volume() {
        let params = ideal_params(1.0);
        let est = canonical_integral(
            &params,
            2,
            &Configuration::empty(1),
            None,
            MethodMode::Quadrature,
            100_000,
            1,
        )
        .unwrap();
        assert!((est.value - 1.0).abs() < 1e-12, "{}", est.value);
    }

    #[test]
    fn canonical_integral_dilute_combinatorics() {
        // Two particles in two distinct cubes of edge 1/2, both orders:
        // 2! * C(2,2) * (1/2)^2 = 0.5.
        let params = ideal_params(1.0);
        let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        let est = canonical_integral(
            &params,
            2,
            &Configuration::empty(1),
            Some(&part),
            MethodMode::Quadrature,
            100_000,
            1,
        )
        .unwrap();
        assert!((est.value - 0.5).abs() < 1e-12, "{}", est.value);
    }

    #[test]
    fn canonical_integral_tonks_pair() {
        let params = tonks_params();
        let est = canonical_integral(
            &params,
            2,
            &Configuration::empty(1),
            None,
            MethodMode::Quadrature,
            1_000_000,
            1,
        )
        .unwrap();
        assert!((est.value - 0.49).abs() < 1e-6, "{}", est.value);
    }

    #[test]
    fn quadrature_dimension_limit() {
        let params = ideal_params(1.0);
        let err = canonical_integral(
            &params,
            13,
            &Configuration::empty(1),
            None,
            MethodMode::Quadrature,
            1000,
            1,
        )
        .unwrap_err();
        assert!(err.to_string().contains("use mc"), "{err}");
    }

    #[test]
    fn ideal_partition_function() {
        let params = ideal_params(1.0);
        let est = partition_function(&params, &MethodPolicy::default(), 7).unwrap();
        assert!(
            (est.value - std::f64::consts::E).abs() < 1e-8,
            "{} (err {})",
            est.value,
            est.error
        );
        assert!(!est.tail_warning);
        // The tail rule lands on n_max = 11 for tolerance 1e-8 at c = 1.
        assert_eq!(est.per_n.len(), 12);
    }

    #[test]
    fn zero_fugacity() {
        let params = ideal_params(0.0);
        let est = partition_function(&params, &MethodPolicy::default(), 7).unwrap();
        assert_eq!(est.value, 1.0);
    }

    #[test]
    fn tonks_partition_function_quadrature() {
        let params = tonks_params();
        let policy = MethodPolicy { tolerance: 1e-4, ..Default::default() };
        let est = partition_function(&params, &policy, 7).unwrap();
        let oracle = tonks_z(1.0, 1.0, 0.3);
        assert!(
            (est.value - oracle).abs() < 1e-4,
            "{} vs {} (err {})",
            est.value,
            oracle,
            est.error
        );
    }

    #[test]
    fn tonks_partition_function_mc() {
        let params = tonks_params();
        let policy = MethodPolicy {
            mode: MethodMode::MonteCarlo,
            budget: 400_000,
            tolerance: 1e-4,
            n_max: Some(5),
        };
        let est = partition_function(&params, &policy, 11).unwrap();
        let oracle = tonks_z(1.0, 1.0, 0.3);
        assert!(
            (est.value - oracle).abs() < est.error,
            "{} vs {} (err {})",
            est.value,
            oracle,
            est.error
        );
        assert!(est.statistical_error > 0.0);
    }

    #[test]
    fn dilute_partition_closed_form() {
        let params = ideal_params(1.0);
        for &(a, n_cubes) in &[(0.5, 2usize), (0.25, 4), (0.125, 8), (0.0625, 16)] {
            let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), a).unwrap();
            assert_eq!(part.cube_count(), n_cubes);
            let est = dilute_partition_function(&params, &part, &MethodPolicy::default(), 7)
                .unwrap();
            let oracle = (1.0 + a).powi(n_cubes as i32);
            assert!(
                (est.value - oracle).abs() < 1e-8,
                "a={a}: {} vs {oracle}",
                est.value
            );
        }
    }

    #[test]
    fn dilute_below_full() {
        let params = tonks_params();
        let policy = MethodPolicy { tolerance: 1e-6, ..Default::default() };
        let z_full = partition_function(&params, &policy, 7).unwrap();
        for &a in &[0.5, 0.25] {
            let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), a).unwrap();
            let z_dilute = dilute_partition_function(&params, &part, &policy, 7).unwrap();
            assert!(
                z_dilute.value <= z_full.value + z_dilute.error + z_full.error,
                "a={a}: dominance violated"
            );
        }
    }

    #[test]
    fn ideal_correlation_is_fugacity_power() {
        let params = ideal_params(1.0);
        let eta = Configuration::new(1, vec![0.5]).unwrap();
        let est = correlation(&params, &eta, &MethodPolicy::default(), 7).unwrap();
        assert!((est.value - 1.0).abs() < 1e-12, "{}", est.value);

        let params2 = ideal_params(2.0);
        let eta2 = Configuration::new(1, vec![0.25, 0.75]).unwrap();
        let est2 = correlation(&params2, &eta2, &MethodPolicy::default(), 7).unwrap();
        assert!((est2.value - 4.0).abs() < 1e-9, "{}", est2.value);

        let empty = correlation(&params, &Configuration::empty(1), &MethodPolicy::default(), 7)
            .unwrap();
        assert_eq!(empty.value, 1.0);
    }

    #[test]
    fn dilute_correlation_ideal_closed_form() {
        // rho^- for the ideal gas: z (1 + z a^d)^{N-1} / (1 + z a^d)^N =
        // z / (1 + z a^d).
        let params = ideal_params(1.0);
        let eta = Configuration::new(1, vec![0.5]).unwrap();
        for &(a, expect) in &[(0.5, 1.0 / 1.5), (0.0625, 16.0 / 17.0)] {
            let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), a).unwrap();
            let est = dilute_correlation(&params, &eta, &part, &MethodPolicy::default(), 7)
                .unwrap();
            assert!(
                (est.value - expect).abs() < 1e-9,
                "a={a}: {} vs {expect}",
                est.value
            );
        }
    }

    #[test]
    fn dilute_correlation_vanishes_for_dense_eta() {
        let params = ideal_params(1.0);
        let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        let eta = Configuration::new(1, vec![0.1, 0.2]).unwrap();
        let est = dilute_correlation(&params, &eta, &part, &MethodPolicy::default(), 7).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.error, 0.0);
    }

    #[test]
    fn correlation_rejects_outside_eta() {
        let params = ideal_params(1.0);
        let eta = Configuration::new(1, vec![1.5]).unwrap();
        assert!(correlation(&params, &eta, &MethodPolicy::default(), 7).is_err());
    }

    #[test]
    fn tail_soundness_under_extension() {
        // Extending the cut by two terms moves the value by less than the
        // previously reported tail bound.
        let params = tonks_params();
        let policy = MethodPolicy { n_max: Some(4), tolerance: 1e-12, ..Default::default() };
        let base = partition_function(&params, &policy, 7).unwrap();
        assert!(base.tail_warning);
        let extended = MethodPolicy { n_max: Some(6), tolerance: 1e-12, ..Default::default() };
        let more = partition_function(&params, &extended, 7).unwrap();
        assert!(
            (more.value - base.value).abs() <= base.tail_bound,
            "extension moved by {} > tail {}",
            (more.value - base.value).abs(),
            base.tail_bound
        );
    }

    #[test]
    fn quadrature_and_mc_agree() {
        let params = tonks_params();
        let quad = canonical_integral(
            &params,
            2,
            &Configuration::empty(1),
            None,
            MethodMode::Quadrature,
            500_000,
            3,
        )
        .unwrap();
        let mc = canonical_integral(
            &params,
            2,
            &Configuration::empty(1),
            None,
            MethodMode::MonteCarlo,
            500_000,
            3,
        )
        .unwrap();
        assert!(
            (quad.value - mc.value).abs() <= quad.error + mc.error,
            "{} vs {}",
            quad.value,
            mc.value
        );
    }

    #[test]
    fn dilute_mc_matches_subset_quadrature() {
        let params = tonks_params();
        let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.25).unwrap();
        let policy_q = MethodPolicy { tolerance: 1e-6, ..Default::default() };
        let policy_mc = MethodPolicy {
            mode: MethodMode::MonteCarlo,
            budget: 300_000,
            tolerance: 1e-6,
            n_max: Some(4),
        };
        let q = dilute_partition_function(&params, &part, &policy_q, 5).unwrap();
        let m = dilute_partition_function(&params, &part, &policy_mc, 5).unwrap();
        assert!(
            (q.value - m.value).abs() <= q.error + m.error,
            "{} ± {} vs {} ± {}",
            q.value,
            q.error,
            m.value,
            m.error
        );
    }
}
