//! Truncated many-body interaction families.
//!
//! A family holds evaluators `V_p(x₁,…,x_p)` for `2 ≤ p ≤ p_max` together
//! with per-order decay metadata for the attraction lattice sums. Energies
//! sum `V_p` over all point subsets; the cube quantities
//!
//! * `I_p^{k₁…k_N}(Δ₁;…;Δ_N)` — supremum of `V_p⁻` over placements with
//!   `k_j` points in cube `Δ_j`,
//! * `I_p^{1|p−1}(a; ε)` — its `(p−1)`-fold lattice sum around a reference
//!   cube, position independent by translation invariance,
//! * `v_p^{k₁…k_N}` — the matching infimum of the repulsive part,
//!
//! feed the superstability constants and the attraction budget
//! `Ī(a) = Σ_p 2^p I_p^{1|p−1}(a, 0)`.
//!
//! Distance weights use the convention `(1 + dist^ε)` for `ε > 0` and
//! weight 1 at `ε = 0`, matching the unweighted `ε = 0` lattice sums the
//! constants are built from.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::ensemble::Estimate;
use crate::error::{Error, Result};
use crate::geometry::{Configuration, CubePartition};
use crate::numeric::{
    refine_inf, refine_sup, stream, substream_rng, KahanSum, Refined, REFINE_RTOL,
};
use crate::potential::{dist, EdgeConstants, EnergyModel, PairPotential, StabilityConstants};

/// Evaluator of one interaction order: flat `p·dim` coordinates in, energy
/// out (`+∞` allowed).
pub type VpEval = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Lattice-sum decay metadata for the attraction `V_p⁻` of one order.
#[derive(Debug, Clone, Copy)]
pub enum LatticeDecay {
    /// `V_p ≥ 0` everywhere: no attraction sums at all.
    Repulsive,
    /// `V_p⁻` vanishes once any two arguments are farther apart than
    /// `range`; `amplitude` bounds `V_p⁻` globally.
    FiniteRange { range: f64, amplitude: f64 },
    /// `V_p⁻(…) ≤ phi1 / r^{d+eps0}` for pair distances `r ≥ r_attr`
    /// (two-body tails).
    PowerTail { phi1: f64, eps0: f64, r_attr: f64 },
}

/// A tuple of cubes with point multiplicities, `Σ k_j = p`.
#[derive(Debug, Clone)]
pub struct CubeTuple {
    cubes: Vec<usize>,
    multiplicities: Vec<usize>,
}

impl CubeTuple {
    pub fn new(cubes: Vec<usize>, multiplicities: Vec<usize>) -> Result<Self> {
        if cubes.is_empty() || cubes.len() != multiplicities.len() {
            return Err(Error::invalid(
                "cube tuple needs matching, nonempty cube and multiplicity lists",
            ));
        }
        if multiplicities.contains(&0) {
            return Err(Error::invalid("cube multiplicities must be at least 1"));
        }
        Ok(CubeTuple { cubes, multiplicities })
    }

    pub fn order(&self) -> usize {
        self.multiplicities.iter().sum()
    }

    pub fn cubes(&self) -> &[usize] {
        &self.cubes
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }
}

/// Truncated family `{V_p}`, `2 ≤ p ≤ p_max`.
#[derive(Clone)]
pub struct ManyBodyFamily {
    dim: usize,
    p_max: usize,
    evaluators: Vec<VpEval>,
    decay: Vec<LatticeDecay>,
    hard_core: f64,
    name: String,
}

impl std::fmt::Debug for ManyBodyFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ManyBodyFamily")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("p_max", &self.p_max)
            .finish()
    }
}

/// Extremum searches refuse product domains beyond this many axes.
const MAX_EXTREMUM_DIMS: usize = 6;

impl ManyBodyFamily {
    /// Builds a family and spot-checks permutation symmetry and translation
    /// invariance of every order on random tuples.
    pub fn new(
        dim: usize,
        evaluators: Vec<VpEval>,
        decay: Vec<LatticeDecay>,
        hard_core: f64,
        name: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if evaluators.is_empty() {
            return Err(Error::invalid("a family needs at least the pair order V_2"));
        }
        if evaluators.len() != decay.len() {
            return Err(Error::invalid("one decay entry per interaction order is required"));
        }
        let fam = ManyBodyFamily {
            dim,
            p_max: evaluators.len() + 1,
            evaluators,
            decay,
            hard_core,
            name: name.into(),
        };
        fam.spot_check_symmetry()?;
        Ok(fam)
    }

    /// `pair_only {potential}`: `V₂ = φ(|x−y|)`, all higher orders zero.
    pub fn pair_only(pot: PairPotential) -> Result<Self> {
        let dim = pot.dim();
        let decay = pair_decay(&pot);
        let hard_core = pot.hard_core_diameter();
        let name = format!("pair_only({})", pot.name());
        ManyBodyFamily::new(dim, vec![pair_eval(&pot)], vec![decay], hard_core, name)
    }

    /// `pair_plus_triple {potential, triple_strength, triple_range}`:
    /// the pair order of `potential` plus
    /// `V₃ = strength · Π_{pairs} max(0, 1 − r/range)`, a symmetric,
    /// translation-invariant hat supported on mutually close triples.
    pub fn pair_plus_triple(
        pot: PairPotential,
        triple_strength: f64,
        triple_range: f64,
    ) -> Result<Self> {
        if !(triple_range > 0.0) {
            return Err(Error::invalid("triple_range must be positive"));
        }
        let dim = pot.dim();
        let triple_decay = if triple_strength >= 0.0 {
            LatticeDecay::Repulsive
        } else {
            LatticeDecay::FiniteRange { range: triple_range, amplitude: -triple_strength }
        };
        let hard_core = pot.hard_core_diameter();
        let name = format!(
            "pair_plus_triple({}, strength={triple_strength}, range={triple_range})",
            pot.name()
        );
        let triple_eval: VpEval = Arc::new(move |x: &[f64]| {
            let d = x.len() / 3;
            let w = |r: f64| (1.0 - r / triple_range).max(0.0);
            triple_strength
                * w(dist(&x[0..d], &x[d..2 * d]))
                * w(dist(&x[0..d], &x[2 * d..3 * d]))
                * w(dist(&x[d..2 * d], &x[2 * d..3 * d]))
        });
        ManyBodyFamily::new(
            dim,
            vec![pair_eval(&pot), triple_eval],
            vec![pair_decay(&pot), triple_decay],
            hard_core,
            name,
        )
    }

    fn spot_check_symmetry(&self) -> Result<()> {
        let mut rng = substream_rng(0xA2A3, 0, self.dim as u64, self.p_max as u64);
        for p in 2..=self.p_max {
            for _ in 0..20 {
                let coords: Vec<f64> =
                    (0..p * self.dim).map(|_| rng.gen::<f64>() * 2.0).collect();
                let v = self.eval_p(p, &coords);
                let i = rng.gen_range(0..p);
                let j = rng.gen_range(0..p);
                let mut swapped = coords.clone();
                for ax in 0..self.dim {
                    swapped.swap(i * self.dim + ax, j * self.dim + ax);
                }
                let vs = self.eval_p(p, &swapped);
                if !same_extended(v, vs, 1e-9) {
                    return Err(Error::invalid(format!(
                        "V_{p} is not permutation symmetric: {v} vs {vs}"
                    )));
                }
                let shift: Vec<f64> = (0..self.dim).map(|_| rng.gen::<f64>() - 0.5).collect();
                let moved: Vec<f64> = coords
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c + shift[k % self.dim])
                    .collect();
                let vm = self.eval_p(p, &moved);
                if !same_extended(v, vm, 1e-9) {
                    return Err(Error::invalid(format!(
                        "V_{p} is not translation invariant: {v} vs {vm}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p_max(&self) -> usize {
        self.p_max
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `V_p` on flat coordinates of exactly `p` points.
    pub fn eval_p(&self, p: usize, coords: &[f64]) -> f64 {
        debug_assert_eq!(coords.len(), p * self.dim);
        (self.evaluators[p - 2])(coords)
    }

    fn v_p_minus(&self, p: usize, coords: &[f64]) -> f64 {
        (-self.eval_p(p, coords).min(0.0)).max(0.0)
    }

    fn v_p_plus(&self, p: usize, coords: &[f64]) -> f64 {
        self.eval_p(p, coords).max(0.0)
    }

    /// `U(γ) = Σ_p Σ_{p-subsets} V_p`, exact over all subset orders up to
    /// `min(|γ|, p_max)`.
    pub fn mb_energy(&self, gamma: &Configuration) -> f64 {
        self.energy_flat(gamma.dim(), gamma.coords())
    }

    /// `W(η; γ) = U(η∪γ) − U(η) − U(γ)`. When a part carries an infinite
    /// hard-core energy the defining difference is indeterminate and the
    /// explicit mixed-subset sum is used instead.
    pub fn mb_interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64> {
        <Self as EnergyModel>::interaction(self, eta, gamma)
    }

    /// Mixed-subset form of `W`: sums `V_p` over subsets taking at least
    /// one point from each side.
    pub fn mixed_interaction(&self, eta: &Configuration, gamma: &Configuration) -> f64 {
        let ne = eta.len();
        let ng = gamma.len();
        let d = self.dim;
        let mut total = 0.0f64;
        let mut buf: Vec<f64> = Vec::new();
        for p in 2..=(ne + ng).min(self.p_max) {
            let mut acc = 0.0f64;
            for i in 1..p {
                let j = p - i;
                if i > ne || j > ng {
                    continue;
                }
                let mut eta_idx: Vec<usize> = Vec::new();
                for_combinations(ne, i, &mut eta_idx, &mut |ei| {
                    let mut gamma_idx: Vec<usize> = Vec::new();
                    let mut inner = 0.0f64;
                    for_combinations(ng, j, &mut gamma_idx, &mut |gi| {
                        buf.clear();
                        for &a in ei {
                            buf.extend_from_slice(eta.point(a));
                        }
                        for &b in gi {
                            buf.extend_from_slice(gamma.point(b));
                        }
                        inner += self.eval_p(p, &buf[..p * d]);
                    });
                    acc += inner;
                });
            }
            total += acc;
            if total == f64::INFINITY {
                return f64::INFINITY;
            }
        }
        total
    }

    /// `I_p^{k₁…k_N}(Δ₁;…;Δ_N)`: supremum of `V_p⁻` over grid-refined
    /// placements with `k_j` points in cube `Δ_j`. Nondecreasing under grid
    /// refinement (nested dyadic grids); the final resolution is reported.
    pub fn i_sup(&self, tuple: &CubeTuple, part: &CubePartition) -> Result<Refined> {
        let p = tuple.order();
        if p > self.p_max {
            return Err(Error::invalid(format!(
                "tuple order {p} exceeds p_max = {}",
                self.p_max
            )));
        }
        if p < 2 {
            return Err(Error::invalid("tuple order must be at least 2"));
        }
        let corners: Vec<Vec<f64>> =
            tuple.cubes().iter().map(|&c| part.cube_lower_corner(c)).collect();
        self.i_sup_at_corners(p, &corners, tuple.multiplicities(), part.edge())
    }

    fn i_sup_at_corners(
        &self,
        p: usize,
        corners: &[Vec<f64>],
        multiplicities: &[usize],
        edge: f64,
    ) -> Result<Refined> {
        let dims = p * self.dim;
        if dims > MAX_EXTREMUM_DIMS {
            return Err(Error::invalid(format!(
                "extremum search over {dims} axes exceeds the {MAX_EXTREMUM_DIMS}-axis limit"
            )));
        }
        let mut domain = Vec::with_capacity(dims);
        for (corner, &k) in corners.iter().zip(multiplicities) {
            for _ in 0..k {
                for &c in corner {
                    domain.push((c, c + edge));
                }
            }
        }
        Ok(refine_sup(&domain, REFINE_RTOL, 12, |x| self.v_p_minus(p, x)))
    }

    /// `v_p^{k₁…k_N}`: infimum of the repulsive part over the same kind of
    /// placement.
    pub fn v_inf(&self, tuple: &CubeTuple, part: &CubePartition) -> Result<Refined> {
        let p = tuple.order();
        if p > self.p_max || p < 2 {
            return Err(Error::invalid(format!("tuple order {p} outside 2..=p_max")));
        }
        let dims = p * self.dim;
        if dims > MAX_EXTREMUM_DIMS {
            return Err(Error::invalid(format!(
                "extremum search over {dims} axes exceeds the {MAX_EXTREMUM_DIMS}-axis limit"
            )));
        }
        let edge = part.edge();
        let mut domain = Vec::with_capacity(dims);
        for (&cube, &k) in tuple.cubes().iter().zip(tuple.multiplicities()) {
            let corner = part.cube_lower_corner(cube);
            for _ in 0..k {
                for &c in &corner {
                    domain.push((c, c + edge));
                }
            }
        }
        Ok(refine_inf(&domain, REFINE_RTOL, 12, |x| self.v_p_plus(p, x)))
    }

    /// Shell count for an exact-or-bounded order-`p` lattice sum at edge `a`.
    fn shells_for(&self, p: usize, a: f64, cutoff: usize) -> Result<usize> {
        match self.decay[p - 2] {
            LatticeDecay::Repulsive => Ok(0),
            LatticeDecay::FiniteRange { range, .. } => {
                // Beyond range/a + 1 shells the closed-cube distance exceeds
                // the support, so the truncation there is exact.
                Ok(((range / a).ceil() as usize + 1).min(cutoff.max(1)))
            }
            LatticeDecay::PowerTail { r_attr, .. } => {
                if a * (cutoff as f64) < r_attr {
                    let needed = (r_attr / a).ceil() as usize;
                    return Err(Error::invalid(format!(
                        "cutoff {cutoff} too small for a sound order-{p} tail at a = {a}: \
                         need {needed} shells to reach the decay radius"
                    )));
                }
                Ok(cutoff)
            }
        }
    }

    /// Tail bound for one summed cube of the order-`p` lattice sum
    /// truncated at `shells`.
    fn lattice_tail(&self, p: usize, a: f64, shells: usize) -> f64 {
        match self.decay[p - 2] {
            LatticeDecay::Repulsive => 0.0,
            LatticeDecay::FiniteRange { range, amplitude } => {
                let needed = (range / a).ceil() + 1.0;
                if shells as f64 >= needed {
                    0.0
                } else {
                    // Truncated inside the support: bound the missing cells
                    // by the global amplitude.
                    let axes = self.dim as f64;
                    let all = (2.0 * needed + 1.0).powf(axes);
                    let kept = (2.0 * shells as f64 + 1.0).powf(axes);
                    amplitude * (all - kept).max(0.0)
                }
            }
            LatticeDecay::PowerTail { phi1, eps0, .. } => {
                power_tail_bound(self.dim, a, 0.0, shells, phi1, eps0)
            }
        }
    }

    /// `I_p^{1|p−1}(a; 0)`: the `(p−1)`-fold lattice sum of suprema around
    /// a reference cube, truncated at `cutoff` shells per summed cube.
    /// Returns (value, tail bound).
    fn i_lattice(&self, p: usize, a: f64, cutoff: usize) -> Result<(f64, f64)> {
        if matches!(self.decay[p - 2], LatticeDecay::Repulsive) {
            return Ok((0.0, 0.0));
        }
        let d = self.dim;
        if p * d > MAX_EXTREMUM_DIMS {
            return Err(Error::invalid(format!(
                "order-{p} lattice sums in dimension {d} exceed the extremum-search limit"
            )));
        }
        let shells = self.shells_for(p, a, cutoff)?;
        let k_bar = p - 1;
        let width = 2 * shells + 1;
        let cells = width.pow((d * k_bar) as u32);
        let contributions: Vec<f64> = (0..cells)
            .into_par_iter()
            .map(|flat| {
                let mut rest = flat;
                let mut corners: Vec<Vec<f64>> = Vec::with_capacity(1 + k_bar);
                corners.push(vec![0.0; d]);
                for _ in 0..k_bar {
                    let mut corner = Vec::with_capacity(d);
                    for _ in 0..d {
                        let k = (rest % width) as i64 - shells as i64;
                        rest /= width;
                        corner.push(k as f64 * a);
                    }
                    corners.push(corner);
                }
                let mults = vec![1usize; 1 + k_bar];
                self.i_sup_at_corners(p, &corners, &mults, a)
                    .expect("dimension checked before the lattice loop")
                    .value
            })
            .collect();
        let mut sum = KahanSum::default();
        for c in contributions {
            sum.add(c);
        }
        // One summed cube escaping the cutoff is bounded by the per-cube
        // tail times the retained cell count of the others, per cube.
        let per_cube_tail = self.lattice_tail(p, a, shells);
        let others = width.pow((d * (k_bar - 1)) as u32) as f64;
        Ok((sum.value(), per_cube_tail * others * k_bar as f64))
    }

    /// `Ī(a) = Σ_{p≥2} 2^p I_p^{1|p−1}(a, 0)`, truncated at `p_max` and
    /// `cutoff` lattice shells, with the decay-metadata tail attached.
    pub fn i_bar(&self, a: f64, cutoff: usize) -> Result<Estimate> {
        if cutoff < 1 {
            return Err(Error::invalid("cutoff must be at least 1 shell"));
        }
        if !(a > 0.0) {
            return Err(Error::invalid("edge must be positive"));
        }
        let mut value = 0.0f64;
        let mut tail = 0.0f64;
        for p in 2..=self.p_max {
            let (v, t) = self.i_lattice(p, a, cutoff)?;
            let w = 2.0f64.powi(p as i32);
            value += w * v;
            tail += w * t;
        }
        Ok(Estimate::lattice(value, tail))
    }

    /// Superstability constants from the cube quantities:
    /// `A(a) = v₂²(a)/4 − 2 Σ_p 4^p I_p^{1|p−1}(a; 0)`,
    /// `B(a) = Σ_p I_p^{1|p−1}(a; 0)`, `m = 2`. Lattice sums enter through
    /// their upper estimates. The `v₂²/4` normalization comes from the
    /// in-cube pair count `C(n,2) ≥ n²/4`, the same normalization the
    /// two-body constants carry.
    pub fn sss_constants(&self, a: f64, cutoff: usize) -> Result<StabilityConstants> {
        let v2 = self.in_cube_pair_infimum(a)?;
        let mut attract = 0.0f64;
        let mut b_sum = 0.0f64;
        for p in 2..=self.p_max {
            let (v, t) = self.i_lattice(p, a, cutoff)?;
            let upper = v + t;
            attract += 4.0f64.powi(p as i32) * upper;
            b_sum += upper;
        }
        let big_a = if v2.is_infinite() { f64::INFINITY } else { v2 / 4.0 - 2.0 * attract };
        if !(big_a > 0.0) {
            return Err(Error::numerical(format!(
                "A(a) = v₂²/4 − 2Σ4^p I_p = {big_a:.6e} is not positive at a = {a} \
                 (v₂² = {v2:.6e}, attraction sum = {attract:.6e}); shrink the edge"
            )));
        }
        Ok(StabilityConstants {
            edge: a,
            big_a,
            big_b: b_sum,
            m: 2,
            b: Some(v2),
            upsilon0: None,
            delta_branch: None,
        })
    }

    /// `v₂²(a)`: infimum of the pair repulsion over one cube.
    fn in_cube_pair_infimum(&self, a: f64) -> Result<f64> {
        let dims = 2 * self.dim;
        if dims > MAX_EXTREMUM_DIMS {
            return Err(Error::invalid("pair infimum search dimension too large"));
        }
        let domain: Vec<(f64, f64)> = (0..dims).map(|_| (0.0, a)).collect();
        Ok(refine_inf(&domain, REFINE_RTOL, 12, |x| self.v_p_plus(2, x)).value)
    }

    /// Samples `p`-tuples inside single cubes and reports every negative
    /// `V_p` (in-cube positivity), then evaluates both sides of the
    /// attraction–repulsion inequality on the given small instances.
    /// Violations are data, not errors.
    pub fn check_assumptions(
        &self,
        part: &CubePartition,
        samples: usize,
        seed: u64,
        instances: &[BalanceInstance],
    ) -> Result<AssumptionReport> {
        if samples < 1 {
            return Err(Error::invalid("at least one sample is required"));
        }
        let mut negative = Vec::new();
        let a = part.edge();
        for idx in 0..samples as u64 {
            let mut rng = substream_rng(seed, stream::CHECK_ASSUMPTIONS, 0, idx);
            let cube = rng.gen_range(0..part.cube_count());
            let corner = part.cube_lower_corner(cube);
            let p = rng.gen_range(2..=self.p_max);
            let mut coords = Vec::with_capacity(p * self.dim);
            for _ in 0..p {
                for &c in &corner {
                    coords.push(c + a * rng.gen::<f64>());
                }
            }
            let v = self.eval_p(p, &coords);
            if v < 0.0 {
                negative.push(InCubeViolation { p, cube, value: v, coords });
            }
        }
        let mut margins = Vec::with_capacity(instances.len());
        for inst in instances {
            margins.push(self.check_attraction_repulsion(part, inst)?);
        }
        Ok(AssumptionReport { samples, negative_in_cube: negative, balance: margins })
    }

    /// One attraction–repulsion instance: compares `v_p^{k₁…k_N}(Δ₁…Δ_N)`
    /// against `2 Σ_{l≤l_max} Σ_{m,n} Π C(k_i, m_i) (2p)^n I_{p+l}^{m|n}`,
    /// with the summed-cube index map cycling over the fixed cubes.
    pub fn check_attraction_repulsion(&self, part: &CubePartition, inst: &BalanceInstance) -> Result<BalanceMargin> {
        let tuple = CubeTuple::new(inst.cubes.clone(), inst.multiplicities.clone())?;
        let p = tuple.order();
        if p != inst.p {
            return Err(Error::invalid(format!(
                "instance order mismatch: multiplicities sum to {p}, p = {}",
                inst.p
            )));
        }
        let n_cubes = tuple.cubes().len();
        if n_cubes >= p {
            return Err(Error::invalid("the inequality applies to N < p cube tuples"));
        }
        let lhs = self.v_inf(&tuple, part)?.value;

        let mut rhs = 0.0f64;
        for l in 0..=inst.l_max {
            let p_body = p + l;
            if p_body > self.p_max {
                break; // higher orders are identically zero in the family
            }
            // Compositions m_1..m_N >= 1, n >= 1 with sum = p + l.
            for_compositions(n_cubes, p_body - 1, &mut |m| {
                let m_sum: usize = m.iter().sum();
                let n = p_body - m_sum;
                let mut coeff = 2.0f64 * (2.0 * p as f64).powi(n as i32);
                for (mi, ki) in m.iter().zip(tuple.multiplicities()) {
                    coeff *= binomial(*ki, *mi);
                }
                if coeff > 0.0 {
                    let i_val = self
                        .i_general(part, p_body, tuple.cubes(), m, n, inst.eps, inst.cutoff)
                        .unwrap_or(f64::INFINITY);
                    rhs += coeff * i_val;
                }
            });
        }
        Ok(BalanceMargin { p: inst.p, lhs, rhs, margin: lhs - rhs })
    }

    /// `I_{p_body}^{m₁…m_N|n}(Δ₁…Δ_N; ε, (Δ)_π)` with π cycling through the
    /// fixed cubes. At `ε = 0` every summed cube carries weight 1.
    #[allow(clippy::too_many_arguments)]
    fn i_general(
        &self,
        part: &CubePartition,
        p_body: usize,
        cubes: &[usize],
        mults: &[usize],
        n_summed: usize,
        eps: f64,
        cutoff: usize,
    ) -> Result<f64> {
        if p_body * self.dim > MAX_EXTREMUM_DIMS {
            return Err(Error::invalid(format!(
                "order-{p_body} instance exceeds the extremum-search limit"
            )));
        }
        if n_summed > 3 {
            return Err(Error::invalid("at most 3 summed cubes are supported per instance"));
        }
        if matches!(self.decay[p_body - 2], LatticeDecay::Repulsive) {
            return Ok(0.0);
        }
        let shells = self.shells_for(p_body, part.edge(), cutoff)?;
        let a = part.edge();
        let d = self.dim;
        let width = 2 * shells + 1;
        let cells = width.pow((d * n_summed) as u32);
        let fixed_corners: Vec<Vec<f64>> =
            cubes.iter().map(|&c| part.cube_lower_corner(c)).collect();
        let mut sum = 0.0f64;
        for flat in 0..cells {
            let mut rest = flat;
            let mut corners = fixed_corners.clone();
            let mut weight = 1.0f64;
            for i in 0..n_summed {
                let target = &fixed_corners[i % cubes.len()];
                let mut corner = Vec::with_capacity(d);
                let mut gap2 = 0.0f64;
                for &t in target.iter().take(d) {
                    let k = (rest % width) as i64 - shells as i64;
                    rest /= width;
                    corner.push(t + k as f64 * a);
                    let g = (k.abs() - 1).max(0) as f64 * a;
                    gap2 += g * g;
                }
                if eps > 0.0 {
                    weight *= 1.0 + gap2.sqrt().powf(eps);
                }
                corners.push(corner);
            }
            let mut mult_all: Vec<usize> = mults.to_vec();
            mult_all.extend(std::iter::repeat_n(1, n_summed));
            let sup = self.i_sup_at_corners(p_body, &corners, &mult_all, a)?.value;
            sum += weight * sup;
        }
        Ok(sum)
    }
}

fn pair_eval(pot: &PairPotential) -> VpEval {
    let pot = pot.clone();
    Arc::new(move |x: &[f64]| {
        let d = pot.dim();
        pot.phi(dist(&x[0..d], &x[d..2 * d]))
    })
}

fn pair_decay(pot: &PairPotential) -> LatticeDecay {
    let p = pot.params();
    if pot.has_attraction() {
        LatticeDecay::PowerTail { phi1: p.phi1, eps0: p.eps0, r_attr: p.r_attr }
    } else {
        LatticeDecay::Repulsive
    }
}

fn same_extended(a: f64, b: f64, rtol: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= rtol * a.abs().max(1.0)
}

fn binomial(k: usize, m: usize) -> f64 {
    if m > k {
        return 0.0;
    }
    let mut v = 1.0f64;
    for i in 0..m {
        v = v * (k - i) as f64 / (i + 1) as f64;
    }
    v
}

/// Calls `f` with every ascending `m`-combination of `0..n`.
fn for_combinations(n: usize, m: usize, idx: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if m > n {
        return;
    }
    idx.clear();
    idx.extend(0..m);
    loop {
        f(idx);
        let mut pos = m;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            if idx[pos] + (m - pos) < n {
                idx[pos] += 1;
                for q in (pos + 1)..m {
                    idx[q] = idx[q - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Calls `f` with every vector `m ∈ {1,…}^parts` with `Σ m ≤ total`.
fn for_compositions(parts: usize, total: usize, f: &mut dyn FnMut(&[usize])) {
    let mut m = vec![1usize; parts];
    if parts > total {
        return;
    }
    loop {
        if m.iter().sum::<usize>() <= total {
            f(&m);
        }
        let mut pos = 0;
        loop {
            if pos == parts {
                return;
            }
            if m[pos] < total {
                m[pos] += 1;
                for q in m.iter_mut().take(pos) {
                    *q = 1;
                }
                break;
            }
            pos += 1;
        }
    }
}

/// Power-law lattice tail: bounds the sum of `sup φ⁻ r^ε` over cubes beyond
/// `shells`, assuming `φ⁻(r) ≤ phi1/r^{d+eps0}` out there.
pub(crate) fn power_tail_bound(
    dim: usize,
    a: f64,
    eps: f64,
    shells: usize,
    phi1: f64,
    eps0: f64,
) -> f64 {
    let df = dim as f64;
    let q = eps0 - eps;
    let c = phi1
        * a.powf(eps - df - eps0)
        * df.powf(eps / 2.0)
        * 2.0
        * df
        * 3.0f64.powf(df - 1.0)
        * 2.0f64.powf(eps + df + eps0);
    let j = (shells + 1) as f64;
    c * (j.powf(-1.0 - q) + j.powf(-q) / q)
}

/// A negative interaction among points sharing a cube.
#[derive(Debug, Clone)]
pub struct InCubeViolation {
    pub p: usize,
    pub cube: usize,
    pub value: f64,
    pub coords: Vec<f64>,
}

/// One attraction–repulsion comparison instance.
#[derive(Debug, Clone)]
pub struct BalanceInstance {
    pub p: usize,
    /// Cube indices Δ₁…Δ_N in the partition, N < p.
    pub cubes: Vec<usize>,
    /// Point multiplicities k₁…k_N, summing to p.
    pub multiplicities: Vec<usize>,
    pub eps: f64,
    pub l_max: usize,
    pub cutoff: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BalanceMargin {
    pub p: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs − rhs`; nonnegative means the instance satisfies the relation.
    pub margin: f64,
}

/// Sampled assumption report; violations are listed, not raised.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub samples: usize,
    pub negative_in_cube: Vec<InCubeViolation>,
    pub balance: Vec<BalanceMargin>,
}

impl EnergyModel for ManyBodyFamily {
    fn energy_flat(&self, dim: usize, coords: &[f64]) -> f64 {
        debug_assert_eq!(dim, self.dim);
        let n = coords.len() / dim;
        if n < 2 {
            return 0.0;
        }
        let mut total = 0.0f64;
        let mut idx: Vec<usize> = Vec::new();
        let mut buf: Vec<f64> = Vec::with_capacity(self.p_max * dim);
        for p in 2..=n.min(self.p_max) {
            let mut acc = 0.0f64;
            for_combinations(n, p, &mut idx, &mut |subset| {
                buf.clear();
                for &i in subset {
                    buf.extend_from_slice(&coords[i * dim..(i + 1) * dim]);
                }
                acc += self.eval_p(p, &buf[..p * dim]);
            });
            total += acc;
            if total == f64::INFINITY {
                return f64::INFINITY;
            }
        }
        total
    }

    fn interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64> {
        let union = eta.union(gamma)?; // also rejects overlap
        let u_eta = self.energy(eta);
        let u_gamma = self.energy(gamma);
        if u_eta.is_finite() && u_gamma.is_finite() {
            Ok(self.energy(&union) - u_eta - u_gamma)
        } else {
            Ok(self.mixed_interaction(eta, gamma))
        }
    }

    fn hard_core_diameter(&self) -> f64 {
        self.hard_core
    }

    fn edge_constants(&self, a: f64, cutoff: usize) -> Result<EdgeConstants> {
        let constants = self.sss_constants(a, cutoff)?;
        let i_bar = self.i_bar(a, cutoff)?;
        Ok(EdgeConstants { constants, upsilon_star: i_bar.value + i_bar.error })
    }
}
