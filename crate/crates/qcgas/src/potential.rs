//! Two-body potentials and their superstability characteristics.
//!
//! A potential `φ(r)` is admitted with a repulsive-core bound
//! `φ(r) ≥ φ₀/r^s` (s ≥ d) for `r ≤ r₀` and an attraction-decay bound
//! `φ(r) ≥ −φ₁/r^{d+ε₀}` for `r ≥ R`. Both are spot-checked on a log-spaced
//! radius sample at construction; a potential violating them between sample
//! points is the caller's responsibility. The extended value `+∞` encodes
//! hard cores, with `e^{-β·∞} ≡ 0`.
//!
//! From a potential and a cube edge `a` the module computes
//!
//! * `b(a)`   — infimum of `φ⁺` over point pairs inside one cube,
//! * `υ_ε(a)` — lattice sum over cubes Δ′ of `sup φ⁻(|x−y|)·|x−y|^ε`,
//!   truncated at a shell cutoff with a rigorous power-law tail bound,
//! * the strong-superstability constants `A(a) = (b − 2υ₀)/4`,
//!   `B(a) = υ₀/2`, `m = 2`,
//! * the split `φ = (1−δ)φ⁺ + (δφ⁺ − φ⁻)` and the edge `a*` where
//!   `δ·b(a)/4 = υ₀(a)/2`.

use std::sync::Arc;

use crate::ensemble::{Estimate, Method};
use crate::error::{Error, Result};
use crate::geometry::Configuration;
use crate::numeric::{
    first_root_bisect, refine_inf, refine_sup, Refined, REFINE_MAX_LEVEL_1D, REFINE_RTOL,
};

/// Euclidean distance between two points given as flat slices.
#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        (a[0] - b[0]).abs()
    } else {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Declared assumption parameters of a potential: the repulsive-core bound
/// `φ(r) ≥ phi0/r^s` for `r ≤ r0` and the attraction-decay bound
/// `φ(r) ≥ −phi1/r^{d+eps0}` for `r ≥ r_attr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionA {
    pub phi0: f64,
    pub phi1: f64,
    pub r0: f64,
    pub r_attr: f64,
    pub s: f64,
    pub eps0: f64,
}

/// Record of the constructor's sampled validation of the declared bounds.
#[derive(Debug, Clone, Copy)]
pub struct AssumptionCheck {
    pub core_samples: usize,
    pub tail_samples: usize,
}

/// Superstability constants at a fixed cube edge, in the bound
/// `U(γ) ≥ A·Σ_{|γ_Δ|≥2} |γ_Δ|^m − B·|γ|`.
#[derive(Debug, Clone)]
pub struct StabilityConstants {
    pub edge: f64,
    pub big_a: f64,
    pub big_b: f64,
    pub m: u32,
    /// In-cube repulsion infimum b(a), when derived via the pair route.
    pub b: Option<f64>,
    /// Upper bound on the lattice attraction sum υ₀(a) (pair route).
    pub upsilon0: Option<f64>,
    pub delta_branch: Option<DeltaBranch>,
}

/// δ-split stability data: the edge `a*` solving `δ b(a)/4 = υ₀(a)/2` and
/// the resulting stability constant `B_δ = υ₀(a*)/2` of `φ_δ^st`.
#[derive(Debug, Clone, Copy)]
pub struct DeltaBranch {
    pub delta: f64,
    pub a_star: f64,
    pub b_delta: f64,
    /// |δ b(a*)/4 − υ₀(a*)/2| at the returned root.
    pub residual: f64,
}

/// Constants feeding the ε₁ series and the remainder bound at edge `a`:
/// the stability pair (A, B) plus υ*, which is υ₀(a) for two-body models
/// and Ī(a) for many-body families.
#[derive(Debug, Clone)]
pub struct EdgeConstants {
    pub constants: StabilityConstants,
    pub upsilon_star: f64,
}

/// A configuration-energy model: the interface the ensemble and stability
/// layers consume. Implementations must be pure and re-entrant.
pub trait EnergyModel: Send + Sync {
    /// `U` of the points in the flat coordinate slice (`dim`-major).
    fn energy_flat(&self, dim: usize, coords: &[f64]) -> f64;

    fn energy(&self, config: &Configuration) -> f64 {
        self.energy_flat(config.dim(), config.coords())
    }

    /// Interaction energy `W(η; γ) = U(η∪γ) − U(η) − U(γ)`; rejects
    /// overlapping configurations.
    fn interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64>;

    /// Pair distance below which the energy is `+∞` no matter the rest of
    /// the configuration; 0 when there is no hard core.
    fn hard_core_diameter(&self) -> f64 {
        0.0
    }

    /// Stability/tail constants at cube edge `a` (lattice sums truncated at
    /// `cutoff` shells). `A` may come out 0 for interaction-free or purely
    /// flat models; negative `A` is reported as-is and rejected downstream.
    fn edge_constants(&self, a: f64, cutoff: usize) -> Result<EdgeConstants>;
}

/// The zero interaction. Its partition function and correlation functions
/// have closed forms, which makes it the primary exact oracle.
#[derive(Debug, Clone, Copy)]
pub struct IdealGas;

impl EnergyModel for IdealGas {
    fn energy_flat(&self, _dim: usize, _coords: &[f64]) -> f64 {
        0.0
    }

    fn interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64> {
        eta.union(gamma)?;
        Ok(0.0)
    }

    fn edge_constants(&self, a: f64, _cutoff: usize) -> Result<EdgeConstants> {
        Ok(EdgeConstants {
            constants: StabilityConstants {
                edge: a,
                big_a: 0.0,
                big_b: 0.0,
                m: 2,
                b: Some(0.0),
                upsilon0: Some(0.0),
                delta_branch: None,
            },
            upsilon_star: 0.0,
        })
    }
}

/// Radial two-body potential under the declared assumption parameters.
#[derive(Clone)]
pub struct PairPotential {
    dim: usize,
    params: AssumptionA,
    eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    hard_core: f64,
    has_attraction: bool,
    name: String,
    check: AssumptionCheck,
}

impl std::fmt::Debug for PairPotential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairPotential")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("params", &self.params)
            .field("hard_core", &self.hard_core)
            .finish()
    }
}

const ASSUMPTION_SAMPLES: usize = 500;

/// Relative slack of the hard-core classification in [`PairPotential::phi`].
pub const HARD_CORE_SLACK: f64 = 1e-12;

impl PairPotential {
    /// Builds a potential and spot-checks the declared bounds on a
    /// log-spaced sample of radii (500 in the core region, 500 in the tail
    /// region).
    pub fn new(
        dim: usize,
        params: AssumptionA,
        hard_core: f64,
        has_attraction: bool,
        name: impl Into<String>,
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        let mut pot = Self::new_unchecked(dim, params, hard_core, has_attraction, name, eval)?;
        pot.validate_assumption()?;
        pot.check = AssumptionCheck {
            core_samples: ASSUMPTION_SAMPLES,
            tail_samples: ASSUMPTION_SAMPLES,
        };
        Ok(pot)
    }

    /// Builds without the sampled assumption check. Intended for
    /// experimentation with potentials outside the assumption class; the
    /// lattice tail bounds still use the declared parameters.
    pub fn new_unchecked(
        dim: usize,
        params: AssumptionA,
        hard_core: f64,
        has_attraction: bool,
        name: impl Into<String>,
        eval: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if !(params.phi0 > 0.0 && params.phi1 > 0.0 && params.r0 > 0.0 && params.eps0 > 0.0) {
            return Err(Error::invalid(
                "assumption parameters phi0, phi1, r0, eps0 must be positive",
            ));
        }
        if params.r_attr <= params.r0 {
            return Err(Error::invalid("attraction radius R must exceed r0"));
        }
        if params.s < dim as f64 {
            return Err(Error::invalid(format!(
                "core exponent s = {} must be at least the dimension {dim}",
                params.s
            )));
        }
        if hard_core < 0.0 {
            return Err(Error::invalid("hard core diameter cannot be negative"));
        }
        Ok(PairPotential {
            dim,
            params,
            eval,
            hard_core,
            has_attraction,
            name: name.into(),
            check: AssumptionCheck { core_samples: 0, tail_samples: 0 },
        })
    }

    fn validate_assumption(&self) -> Result<()> {
        let p = &self.params;
        let log_span = |lo: f64, hi: f64, i: usize| {
            lo * (hi / lo).powf(i as f64 / (ASSUMPTION_SAMPLES - 1) as f64)
        };
        // The core region is sampled on [r0/1000, r0): hard cores sit at
        // exactly r0 and satisfy the bound only below it.
        for i in 0..ASSUMPTION_SAMPLES {
            let r = log_span(p.r0 * 1e-3, p.r0 * (1.0 - 1e-9), i);
            let bound = p.phi0 / r.powf(p.s);
            let v = self.phi(r);
            if v < bound * (1.0 - 1e-12) {
                return Err(Error::invalid(format!(
                    "core bound violated at r = {r:.6e}: phi = {v:.6e} < phi0/r^s = {bound:.6e}"
                )));
            }
        }
        for i in 0..ASSUMPTION_SAMPLES {
            let r = log_span(p.r_attr, p.r_attr * 1e3, i);
            let bound = -p.phi1 / r.powf(self.dim as f64 + p.eps0);
            let v = self.phi(r);
            if v < bound * (1.0 + 1e-12) - 1e-300 {
                return Err(Error::invalid(format!(
                    "decay bound violated at r = {r:.6e}: phi = {v:.6e} < -phi1/r^(d+eps0) = {bound:.6e}"
                )));
            }
        }
        Ok(())
    }

    /// `inverse_power {phi0, s}`: `φ(r) = φ₀ / r^s`, purely repulsive.
    pub fn inverse_power(dim: usize, phi0: f64, s: f64) -> Result<Self> {
        if !(phi0 > 0.0) {
            return Err(Error::invalid("phi0 must be positive"));
        }
        let params = AssumptionA { phi0, phi1: 1.0, r0: 1.0, r_attr: 2.0, s, eps0: 1.0 };
        PairPotential::new(
            dim,
            params,
            0.0,
            false,
            format!("inverse_power(phi0={phi0}, s={s})"),
            Arc::new(move |r| phi0 / r.powf(s)),
        )
    }

    /// `hard_core {sigma}`: `+∞` below the diameter, 0 beyond.
    pub fn hard_core(dim: usize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma must be positive"));
        }
        let params = AssumptionA {
            phi0: 1.0,
            phi1: 1.0,
            r0: sigma,
            r_attr: 2.0 * sigma,
            s: dim as f64,
            eps0: 1.0,
        };
        PairPotential::new(
            dim,
            params,
            sigma,
            false,
            format!("hard_core(sigma={sigma})"),
            Arc::new(|_| 0.0),
        )
    }

    /// `hard_core_plus_well {sigma, depth, range}`: `+∞` below `sigma`,
    /// `−depth` on `[sigma, range)`, 0 beyond.
    pub fn hard_core_plus_well(dim: usize, sigma: f64, depth: f64, range: f64) -> Result<Self> {
        if !(sigma > 0.0 && depth >= 0.0 && range > sigma) {
            return Err(Error::invalid(
                "need sigma > 0, depth >= 0 and range > sigma for the square well",
            ));
        }
        let eps0 = 1.0;
        let params = AssumptionA {
            phi0: 1.0,
            phi1: (depth * range.powf(dim as f64 + eps0)).max(1e-12),
            r0: sigma,
            r_attr: range,
            s: dim as f64,
            eps0,
        };
        PairPotential::new(
            dim,
            params,
            sigma,
            depth > 0.0,
            format!("hard_core_plus_well(sigma={sigma}, depth={depth}, range={range})"),
            Arc::new(move |r| if r < range { -depth } else { 0.0 }),
        )
    }

    /// `power_core_exp_tail {phi0, s, phi1, kappa}`:
    /// `φ(r) = φ₀/r^s − φ₁ e^{−κ r}`.
    ///
    /// The declared parameters are derived so the bounds hold everywhere:
    /// the attraction obeys `φ₁ e^{−κr} ≤ φ₁ ((d+1)/(κe))^{d+1} / r^{d+1}`
    /// for all r, and the core radius is the largest radius below which
    /// `φ(r) ≥ φ₀/(2 r^s)`.
    pub fn power_core_exp_tail(dim: usize, phi0: f64, s: f64, phi1: f64, kappa: f64) -> Result<Self> {
        if !(phi0 > 0.0 && phi1 > 0.0 && kappa > 0.0) {
            return Err(Error::invalid("phi0, phi1, kappa must be positive"));
        }
        if s < dim as f64 {
            return Err(Error::invalid(format!(
                "core exponent s = {s} must be at least the dimension {dim}"
            )));
        }
        // phi1 e^{-kr} r^s <= phi0/2 defines the core region. The left side
        // peaks at r = s/kappa; scan for the first crossing below the peak.
        let margin = move |r: f64| phi1 * (-kappa * r).exp() * r.powf(s) - phi0 / 2.0;
        let peak = s / kappa;
        let r0 = if margin(peak) <= 0.0 {
            // Never crosses: the core bound holds out to the peak and beyond.
            peak
        } else {
            let mut lo = peak * 1e-9;
            let mut hi = peak;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if margin(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            lo
        };
        let q = dim as f64 + 1.0;
        let phi1_decl = phi1 * (q / (kappa * std::f64::consts::E)).powf(q);
        let params = AssumptionA {
            phi0: phi0 / 2.0,
            phi1: phi1_decl,
            r0,
            r_attr: 2.0 * r0,
            s,
            eps0: 1.0,
        };
        PairPotential::new(
            dim,
            params,
            0.0,
            true,
            format!("power_core_exp_tail(phi0={phi0}, s={s}, phi1={phi1}, kappa={kappa})"),
            Arc::new(move |r| phi0 / r.powf(s) - phi1 * (-kappa * r).exp()),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &AssumptionA {
        &self.params
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Whether φ takes negative values anywhere (as declared at
    /// construction; drives the attraction lattice sums).
    pub fn has_attraction(&self) -> bool {
        self.has_attraction
    }

    /// Sample counts of the constructor's bound validation; zero for
    /// potentials built with [`new_unchecked`](Self::new_unchecked).
    pub fn assumption_check(&self) -> AssumptionCheck {
        self.check
    }

    /// φ(r); `+∞` encodes a hard core. The core test carries a 1e-12
    /// relative slack so that distances meant to sit exactly on the
    /// diameter (quadrature grids aligned with it) classify consistently
    /// under floating-point noise.
    pub fn phi(&self, r: f64) -> f64 {
        if self.hard_core > 0.0 && r < self.hard_core * (1.0 - HARD_CORE_SLACK) {
            return f64::INFINITY;
        }
        (self.eval)(r)
    }

    /// The split `φ = φ⁺ − φ⁻` with both parts nonnegative and at most one
    /// nonzero at any radius.
    pub fn phi_split(&self, r: f64) -> Result<(f64, f64)> {
        if !(r > 0.0) {
            return Err(Error::invalid(format!("radius must be positive, got {r}")));
        }
        let v = self.phi(r);
        Ok((v.max(0.0), (-v.min(0.0)).max(0.0)))
    }

    fn phi_plus(&self, r: f64) -> f64 {
        self.phi(r).max(0.0)
    }

    fn phi_minus(&self, r: f64) -> f64 {
        (-self.phi(r).min(0.0)).max(0.0)
    }

    /// In-cube repulsion infimum `b(a) = inf φ⁺(|x−y|)` over point pairs in
    /// one cube. Separations of a pair inside a closed cube of edge `a`
    /// cover `(0, a√d]`, so the infimum reduces to a 1-d search; monotone
    /// decreasing repulsion lands on `φ⁺(a√d)` exactly.
    pub fn b_of_a(&self, a: f64) -> Result<f64> {
        Ok(self.b_of_a_refined(a)?.value)
    }

    /// As [`b_of_a`](Self::b_of_a), reporting the final grid resolution.
    pub fn b_of_a_refined(&self, a: f64) -> Result<Refined> {
        let d = self.dim as f64;
        let max_edge = self.params.r0 / d.sqrt();
        if !(a > 0.0 && a <= max_edge * (1.0 + 1e-12)) {
            return Err(Error::invalid(format!(
                "edge a = {a} outside (0, r0/sqrt(d)] = (0, {max_edge:.6e}]"
            )));
        }
        let r_hi = a * d.sqrt();
        let r_lo = r_hi * 1e-6;
        Ok(refine_inf(&[(r_lo, r_hi)], REFINE_RTOL, REFINE_MAX_LEVEL_1D, |x| {
            self.phi_plus(x[0])
        }))
    }

    /// Truncated lattice sum `υ_ε(a) = Σ_{Δ′} sup φ⁻(|x−y|)|x−y|^ε` over
    /// cubes Δ′ within `cutoff` shells (Chebyshev radius in cube units) of a
    /// reference cube, position-independent by translation invariance. The
    /// error field carries the power-law tail bound from the declared decay
    /// parameters; it is sound only when the excluded shells lie in the
    /// decay region, i.e. `a·cutoff ≥ R`.
    pub fn upsilon_eps(&self, a: f64, eps: f64, cutoff: usize) -> Result<Estimate> {
        if !(a > 0.0) {
            return Err(Error::invalid("edge must be positive"));
        }
        if cutoff < 1 {
            return Err(Error::invalid("cutoff must be at least 1 shell"));
        }
        if !(0.0..self.params.eps0).contains(&eps) {
            return Err(Error::invalid(format!(
                "weight exponent eps = {eps} must lie in [0, eps0 = {})",
                self.params.eps0
            )));
        }
        if !self.has_attraction {
            return Ok(Estimate::exact(0.0, Method::LatticeSum));
        }
        if a * (cutoff as f64) < self.params.r_attr {
            let needed = (self.params.r_attr / a).ceil() as usize;
            return Err(Error::invalid(format!(
                "cutoff {cutoff} too small for a sound tail at a = {a}: need at least {needed} \
                 shells to cover the declared decay radius R = {}",
                self.params.r_attr
            )));
        }

        let d = self.dim;
        let width = 2 * cutoff + 1;
        let total = width.pow(d as u32);
        use rayon::prelude::*;
        let contributions: Vec<f64> = (0..total)
            .into_par_iter()
            .map(|flat| {
                let mut rest = flat;
                let mut low2 = 0.0f64;
                let mut high2 = 0.0f64;
                for _ in 0..d {
                    let k = (rest % width) as i64 - cutoff as i64;
                    rest /= width;
                    let gap = (k.abs() - 1).max(0) as f64;
                    low2 += gap * gap;
                    let reach = (k.abs() + 1) as f64;
                    high2 += reach * reach;
                }
                let r_lo = (a * low2.sqrt()).max(1e-12);
                let r_hi = a * high2.sqrt();
                refine_sup(&[(r_lo, r_hi)], REFINE_RTOL, REFINE_MAX_LEVEL_1D, |x| {
                    self.phi_minus(x[0]) * x[0].powf(eps)
                })
                .value
            })
            .collect();
        let mut sum = crate::numeric::KahanSum::default();
        for c in contributions {
            sum.add(c);
        }

        // Tail: for shells j > cutoff the cube-pair distance is >= a(j-1) >= R,
        // so sup phi^- r^eps <= phi1 (a(j+1)sqrt(d))^eps / (a(j-1))^{d+eps0},
        // and the shell population is (2j+1)^d - (2j-1)^d <= 2d(2j+1)^{d-1}.
        // Bounding (j+1) <= 2j, (j-1) >= j/2, (2j+1) <= 3j gives a constant
        // times j^{-1-q} with q = eps0 - eps, summable by integral comparison.
        let p = &self.params;
        let q = p.eps0 - eps;
        let df = d as f64;
        let c = p.phi1
            * a.powf(eps - df - p.eps0)
            * df.powf(eps / 2.0)
            * 2.0
            * df
            * 3.0f64.powf(df - 1.0)
            * 2.0f64.powf(eps + df + p.eps0);
        let j = (cutoff + 1) as f64;
        let tail = c * (j.powf(-1.0 - q) + j.powf(-q) / q);

        Ok(Estimate::lattice(sum.value(), tail))
    }

    /// `φ_δ⁺ = (1−δ)φ⁺` and `φ_δ^st = δφ⁺ − φ⁻`; the two sum back to φ.
    #[allow(clippy::type_complexity)]
    pub fn delta_decompose(
        &self,
        delta: f64,
    ) -> Result<(Arc<dyn Fn(f64) -> f64 + Send + Sync>, Arc<dyn Fn(f64) -> f64 + Send + Sync>)>
    {
        if !(0.0 < delta && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} outside (0, 1)")));
        }
        let plus = self.clone();
        let stab = self.clone();
        Ok((
            Arc::new(move |r| (1.0 - delta) * plus.phi_plus(r)),
            Arc::new(move |r| delta * stab.phi_plus(r) - stab.phi_minus(r)),
        ))
    }

    fn default_cutoff(&self, a: f64) -> usize {
        let needed = (self.params.r_attr / a).ceil() as usize + 1;
        needed.max(64)
    }

    /// Strong-superstability constants at edge `a`:
    /// `A(a) = (b(a) − 2υ₀(a))/4 > 0`, `B(a) = υ₀(a)/2`, `m = 2`, requiring
    /// `b(a) > 2υ₀(a)`. The lattice sum uses its upper estimate (value plus
    /// tail), so the returned constants stay on the safe side.
    pub fn sss_constants(&self, a: f64) -> Result<StabilityConstants> {
        let b = self.b_of_a(a)?;
        let ups = self.upsilon_eps(a, 0.0, self.default_cutoff(a))?;
        let upsilon0 = ups.value + ups.error;
        if !(b > 2.0 * upsilon0) {
            return Err(Error::numerical(format!(
                "b(a) = {b:.6e} does not exceed 2 upsilon_0(a) = {:.6e} at a = {a}; \
                 shrink the edge",
                2.0 * upsilon0
            )));
        }
        Ok(StabilityConstants {
            edge: a,
            big_a: (b - 2.0 * upsilon0) / 4.0,
            big_b: upsilon0 / 2.0,
            m: 2,
            b: Some(b),
            upsilon0: Some(upsilon0),
            delta_branch: None,
        })
    }

    /// Smallest root `a*` of `δ·b(a)/4 − υ₀(a)/2 = 0` on a geometric scan of
    /// `(r0/√d · 2^-12, r0/√d]`, bisected to relative tolerance 1e-6.
    /// Purely repulsive potentials have no root and are rejected.
    pub fn find_a_star(&self, delta: f64) -> Result<f64> {
        self.find_a_star_with(delta, 1e-6)
    }

    pub fn find_a_star_with(&self, delta: f64, rtol: f64) -> Result<f64> {
        if !(0.0 < delta && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} outside (0, 1)")));
        }
        let hi = self.params.r0 / (self.dim as f64).sqrt();
        let lo = hi / 4096.0;
        first_root_bisect(lo, hi, 48, rtol, |a| {
            let b = self.b_of_a(a)?;
            let ups = self.upsilon_eps(a, 0.0, self.default_cutoff(a))?;
            Ok(delta * b / 4.0 - (ups.value + ups.error) / 2.0)
        })
    }

    /// `a*` together with the stability constant `B_δ = υ₀(a*)/2` of the
    /// split part `φ_δ^st`.
    pub fn delta_stability(&self, delta: f64) -> Result<DeltaBranch> {
        let a_star = self.find_a_star(delta)?;
        let b = self.b_of_a(a_star)?;
        let ups = self.upsilon_eps(a_star, 0.0, self.default_cutoff(a_star))?;
        let upsilon0 = ups.value + ups.error;
        Ok(DeltaBranch {
            delta,
            a_star,
            b_delta: upsilon0 / 2.0,
            residual: (delta * b / 4.0 - upsilon0 / 2.0).abs(),
        })
    }

    /// Pair energy `U(γ) = Σ_{pairs} φ(|x−y|)`, `+∞` on hard-core overlap.
    pub fn pair_energy(&self, gamma: &Configuration) -> f64 {
        self.energy_flat(gamma.dim(), gamma.coords())
    }

    /// `W(η; γ) = Σ_{x∈η, y∈γ} φ(|x−y|)`; rejects overlapping inputs.
    pub fn pair_interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64> {
        <Self as EnergyModel>::interaction(self, eta, gamma)
    }
}

impl EnergyModel for PairPotential {
    fn energy_flat(&self, dim: usize, coords: &[f64]) -> f64 {
        debug_assert_eq!(dim, self.dim);
        let n = coords.len() / dim;
        let mut total = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let r = dist(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]);
                let v = self.phi(r);
                if v == f64::INFINITY {
                    return f64::INFINITY;
                }
                total += v;
            }
        }
        total
    }

    fn interaction(&self, eta: &Configuration, gamma: &Configuration) -> Result<f64> {
        if eta.dim() != gamma.dim() {
            return Err(Error::invalid("configurations have different dimensions"));
        }
        let mut total = 0.0f64;
        for x in eta.points() {
            for y in gamma.points() {
                if x == y {
                    return Err(Error::invalid(format!(
                        "configurations overlap at {x:?}"
                    )));
                }
                let v = self.phi(dist(x, y));
                if v == f64::INFINITY {
                    return Ok(f64::INFINITY);
                }
                total += v;
            }
        }
        Ok(total)
    }

    fn hard_core_diameter(&self) -> f64 {
        self.hard_core
    }

    fn edge_constants(&self, a: f64, cutoff: usize) -> Result<EdgeConstants> {
        let b = match self.b_of_a(a) {
            Ok(b) => b,
            // Beyond the core-certified edge range a nonnegative potential
            // still satisfies the trivial bounds (U >= 0), which is what an
            // unconstrained infimum would report anyway.
            Err(_) if !self.has_attraction => 0.0,
            Err(e) => return Err(e),
        };
        let ups = self.upsilon_eps(a, 0.0, cutoff.max(self.default_cutoff(a)))?;
        let upsilon0 = ups.value + ups.error;
        Ok(EdgeConstants {
            constants: StabilityConstants {
                edge: a,
                big_a: if b.is_infinite() { f64::INFINITY } else { (b - 2.0 * upsilon0) / 4.0 },
                big_b: upsilon0 / 2.0,
                m: 2,
                b: Some(b),
                upsilon0: Some(upsilon0),
                delta_branch: None,
            },
            upsilon_star: upsilon0,
        })
    }
}

/// Pair energy of a point list under an arbitrary radial function. Used to
/// probe the δ-split parts, which are not potentials in their own right.
pub fn radial_pair_energy(dim: usize, coords: &[f64], phi: &dyn Fn(f64) -> f64) -> f64 {
    let n = coords.len() / dim;
    let mut total = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = phi(dist(&coords[i * dim..(i + 1) * dim], &coords[j * dim..(j + 1) * dim]));
            if v == f64::INFINITY {
                return f64::INFINITY;
            }
            total += v;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CubePartition, SimBox};
    use crate::numeric::substream_rng;
    use rand::Rng;

    fn exp_attraction() -> PairPotential {
        // phi(r) = -e^{-r}: no repulsive core, so the assumption sample
        // check is skipped; the declared decay e^{-r} <= (4/e^2)/r^2 is
        // valid for all r.
        PairPotential::new_unchecked(
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
        .unwrap()
    }

    fn sticky() -> PairPotential {
        // 1/r^2 core with a genuine attractive region: 4 r^2 e^{-r} > 1 on
        // roughly (0.57, 8.6).
        PairPotential::power_core_exp_tail(1, 1.0, 2.0, 4.0, 1.0).unwrap()
    }

    #[test]
    fn phi_split_examples() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        assert_eq!(pot.phi_split(0.5).unwrap(), (2.0, 0.0));
        assert!(pot.phi_split(0.0).is_err());
        assert!(pot.phi_split(-1.0).is_err());

        let att = exp_attraction();
        let (p, m) = att.phi_split(1.0).unwrap();
        assert_eq!(p, 0.0);
        assert!((m - (-1.0f64).exp()).abs() < 1e-15);

        // phi(r) = 1/r - 1 changes sign at r = 1.
        let mixed = PairPotential::new_unchecked(
            1,
            AssumptionA { phi0: 0.5, phi1: 1.0, r0: 0.5, r_attr: 1.0, s: 1.0, eps0: 1.0 },
            0.0,
            true,
            "shifted",
            Arc::new(|r| 1.0 / r - 1.0),
        )
        .unwrap();
        let (p, m) = mixed.phi_split(2.0).unwrap();
        assert_eq!(p, 0.0);
        assert!((m - 0.5).abs() < 1e-15);
        // Split invariants at scattered radii.
        for &r in &[0.1, 0.5, 0.9, 1.0, 1.5, 3.0] {
            let (plus, minus) = mixed.phi_split(r).unwrap();
            assert!(plus >= 0.0 && minus >= 0.0);
            assert!(plus * minus == 0.0);
            assert!((plus - minus - mixed.phi(r)).abs() < 1e-14);
        }
    }

    #[test]
    fn b_of_a_monotone_core() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let b = pot.b_of_a(0.5).unwrap();
        assert!((b - 2.0).abs() < 1e-10, "{b}");
        // Out-of-range edges are rejected.
        assert!(pot.b_of_a(0.0).is_err());
        assert!(pot.b_of_a(1.5).is_err());
    }

    #[test]
    fn b_of_a_diagonal_in_2d() {
        // inf over the cube diagonal: 1/(0.1 sqrt(2))^2 = 50.
        let pot = PairPotential::inverse_power(2, 1.0, 2.0).unwrap();
        let b = pot.b_of_a(0.1).unwrap();
        assert!((b - 50.0).abs() < 50.0 * 1e-9, "{b}");
    }

    #[test]
    fn b_of_a_vanishes_without_repulsion() {
        let att = exp_attraction();
        let b = att.b_of_a(0.05).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn b_scaling_law() {
        // For phi = phi0/r^s the infimum sits on the cube diagonal, so
        // b(a) a^s / phi0 = d^{-s/2} at every edge.
        let pot = PairPotential::inverse_power(2, 3.0, 3.0).unwrap();
        for &a in &[0.5, 0.25, 0.125, 0.0625] {
            let b = pot.b_of_a(a).unwrap();
            let scaled = b * a.powi(3) / 3.0;
            assert!((scaled - 2.0f64.powf(-1.5)).abs() < 1e-6, "a={a}: {scaled}");
        }
    }

    #[test]
    fn upsilon_zero_for_repulsive() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let est = pot.upsilon_eps(0.5, 0.0, 8).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.error, 0.0);
    }

    #[test]
    fn upsilon_exact_exponential_sum() {
        // Per-cube suprema of e^{-r} sit at the smallest distance, so the
        // truncated sum has the closed form 1 + 2 sum_{j=0}^{c-1} e^{-ja}.
        let att = exp_attraction();
        let (a, cutoff) = (0.5, 40usize);
        let est = att.upsilon_eps(a, 0.0, cutoff).unwrap();
        let mut oracle = 1.0;
        for k in 1..=cutoff {
            oracle += 2.0 * (-(k as f64 - 1.0) * a).exp();
        }
        assert!((est.value - oracle).abs() < 1e-9, "{} vs {oracle}", est.value);
        assert!(est.error > 0.0);
    }

    #[test]
    fn upsilon_tail_bound_is_sound() {
        let att = exp_attraction();
        let base = att.upsilon_eps(0.5, 0.0, 8).unwrap();
        let double = att.upsilon_eps(0.5, 0.0, 16).unwrap();
        assert!((double.value - base.value).abs() <= base.error,
            "doubling the cutoff moved the value by {} > tail {}",
            (double.value - base.value).abs(), base.error);
        // Same soundness for a positive weight exponent.
        let base = att.upsilon_eps(0.5, 0.5, 8).unwrap();
        let double = att.upsilon_eps(0.5, 0.5, 16).unwrap();
        assert!((double.value - base.value).abs() <= base.error);
    }

    #[test]
    fn upsilon_rejects_bad_arguments() {
        let att = exp_attraction();
        assert!(att.upsilon_eps(0.5, 1.0, 8).is_err()); // eps >= eps0
        assert!(att.upsilon_eps(0.5, -0.1, 8).is_err());
        assert!(att.upsilon_eps(0.5, 0.0, 0).is_err());
        // One shell at a = 0.5 does not reach R = 1.
        assert!(att.upsilon_eps(0.5, 0.0, 1).is_err());
    }

    #[test]
    fn delta_decompose_examples() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let (plus, stab) = pot.delta_decompose(0.5).unwrap();
        assert!((plus(1.0) - 0.5).abs() < 1e-15);
        assert!((stab(1.0) - 0.5).abs() < 1e-15);

        let att = exp_attraction();
        let (plus, stab) = att.delta_decompose(0.5).unwrap();
        // At r where phi = -e^{-1}: plus part 0, stabilized part carries it.
        assert_eq!(plus(1.0), 0.0);
        assert!((stab(1.0) + (-1.0f64).exp()).abs() < 1e-15);

        assert!(pot.delta_decompose(0.0).is_err());
        assert!(pot.delta_decompose(1.0).is_err());

        let mixed = sticky();
        let (plus, stab) = mixed.delta_decompose(0.37).unwrap();
        for &r in &[0.2, 0.5, 0.8, 1.3, 2.9, 7.0, 11.0] {
            assert!(
                (plus(r) + stab(r) - mixed.phi(r)).abs() <= 1e-14 * mixed.phi(r).abs().max(1.0),
                "split does not recompose at r = {r}"
            );
        }
    }

    #[test]
    fn sss_constants_pure_repulsion() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let c = pot.sss_constants(0.5).unwrap();
        assert!((c.big_a - 0.5).abs() < 1e-9, "{}", c.big_a);
        assert_eq!(c.big_b, 0.0);
        assert_eq!(c.m, 2);
    }

    #[test]
    fn sss_constants_reject_attraction_dominated() {
        let att = exp_attraction();
        let err = att.b_of_a(0.05).map(|_| ()).unwrap();
        assert_eq!(err, ()); // b computes fine (zero)...
        let err = att.sss_constants(0.05).unwrap_err();
        let msg = err.to_string();
        // ...but the constants are rejected, reporting both quantities.
        assert!(msg.contains("b(a)") && msg.contains("upsilon_0"), "{msg}");
    }

    #[test]
    fn sss_constants_accept_steep_core_at_small_edge() {
        let pot = sticky();
        // b(a) ~ phi0/a^2 dominates the attraction sum for small edges.
        let c = pot.sss_constants(0.02).unwrap();
        assert!(c.big_a > 0.0);
        assert!(c.big_b > 0.0);
        // At a coarse edge the attraction wins and the constants vanish.
        assert!(pot.sss_constants(0.4).is_err());
    }

    #[test]
    fn a_star_rejected_for_pure_repulsion() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        let err = pot.find_a_star(0.5).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn a_star_located_and_consistent_with_sign_scan() {
        let pot = sticky();
        let delta = 0.6;
        let a_star = pot.find_a_star(delta).unwrap();
        // Sign-scan oracle: g changes sign inside the bracketing cells.
        let g = |a: f64| {
            let b = pot.b_of_a(a).unwrap();
            let u = pot.upsilon_eps(a, 0.0, pot.default_cutoff(a)).unwrap();
            delta * b / 4.0 - (u.value + u.error) / 2.0
        };
        assert!(g(a_star * 0.98) > 0.0, "g just below a* should be positive");
        assert!(g(a_star * 1.02) < 0.0, "g just above a* should be negative");
        // Tolerance refinement barely moves the root.
        let finer = pot.find_a_star_with(delta, 1e-7).unwrap();
        assert!((finer - a_star).abs() / a_star < 1e-5);
        // Residual at the root is small on the scale of the two terms.
        let branch = pot.delta_stability(delta).unwrap();
        assert!(branch.residual < 1e-4 * branch.b_delta.max(1.0), "{branch:?}");
        assert!((branch.a_star - a_star).abs() < 1e-12);
    }

    #[test]
    fn pair_energy_examples() {
        let pot = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        assert_eq!(pot.pair_energy(&Configuration::empty(1)), 0.0);
        assert_eq!(pot.pair_energy(&Configuration::new(1, vec![0.3]).unwrap()), 0.0);
        let two = Configuration::new(1, vec![0.0, 0.5]).unwrap();
        assert!((pot.pair_energy(&two) - 2.0).abs() < 1e-15);
        let three = Configuration::new(1, vec![0.0, 0.5, 1.0]).unwrap();
        assert!((pot.pair_energy(&three) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn hard_core_energy_is_infinite_on_overlap() {
        let pot = PairPotential::hard_core(1, 0.3).unwrap();
        let cfg = Configuration::new(1, vec![0.1, 0.2]).unwrap();
        assert_eq!(pot.pair_energy(&cfg), f64::INFINITY);
        let ok = Configuration::new(1, vec![0.1, 0.6]).unwrap();
        assert_eq!(pot.pair_energy(&ok), 0.0);
    }

    #[test]
    fn pair_interaction_identity() {
        let pot = sticky();
        assert_eq!(
            pot.pair_interaction(&Configuration::empty(1), &Configuration::new(1, vec![0.2]).unwrap())
                .unwrap(),
            0.0
        );
        let eta = Configuration::new(1, vec![0.0]).unwrap();
        let gamma = Configuration::new(1, vec![0.5]).unwrap();
        let ip = PairPotential::inverse_power(1, 1.0, 1.0).unwrap();
        assert!((ip.pair_interaction(&eta, &gamma).unwrap() - 2.0).abs() < 1e-15);

        // W(eta; gamma) = U(eta ∪ gamma) - U(eta) - U(gamma) on random triples.
        let mut rng = substream_rng(17, 99, 0, 0);
        for _ in 0..50 {
            let eta = Configuration::new(1, (0..3).map(|_| rng.gen::<f64>()).collect()).unwrap();
            let gamma =
                Configuration::new(1, (0..3).map(|_| 2.0 + rng.gen::<f64>()).collect()).unwrap();
            let w = pot.pair_interaction(&eta, &gamma).unwrap();
            let u_all = pot.pair_energy(&eta.union(&gamma).unwrap());
            let direct = u_all - pot.pair_energy(&eta) - pot.pair_energy(&gamma);
            // 1e-12 relative to the energy scale: the identity cancels the
            // (possibly large) internal energies.
            assert!(
                (w - direct).abs() < 1e-12 * u_all.abs().max(1.0),
                "{w} vs {direct}"
            );
        }
        // Overlap is rejected.
        let dup = Configuration::new(1, vec![0.0]).unwrap();
        assert!(pot.pair_interaction(&dup, &dup.clone()).is_err());
    }

    #[test]
    fn delta_split_is_stable_at_a_star() {
        // U_{phi_delta^st}(gamma) >= -B_delta |gamma| on sampled
        // configurations, with B_delta = upsilon_0(a*)/2.
        let pot = sticky();
        let delta = 0.6;
        let branch = pot.delta_stability(delta).unwrap();
        let (_, stab) = pot.delta_decompose(delta).unwrap();
        let mut worst = f64::INFINITY;
        for idx in 0..10_000u64 {
            let mut rng = substream_rng(5, 77, 0, idx);
            let n = rng.gen_range(0..=8usize);
            let coords: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let u = radial_pair_energy(1, &coords, &*stab);
            let bound = -branch.b_delta * n as f64;
            worst = worst.min(u - bound);
            assert!(
                u >= bound - 1e-9,
                "stability violated: U = {u}, bound = {bound}, n = {n}"
            );
        }
        assert!(worst.is_finite());
    }

    #[test]
    fn delta_split_per_cube_lower_bound() {
        // U_{phi_delta^st}(gamma) >= sum_{|gamma_D|>=2} |gamma_D|^2 (delta b/4
        // - upsilon_0/2) - (upsilon_0/2)|gamma| at an edge below a*.
        let pot = sticky();
        let delta = 0.6;
        let a_star = pot.find_a_star(delta).unwrap();
        let mut a = 1.0;
        while a > a_star {
            a /= 2.0;
        }
        let part = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), a).unwrap();
        let b = pot.b_of_a(a).unwrap();
        let ups = pot.upsilon_eps(a, 0.0, pot.default_cutoff(a)).unwrap();
        let u0 = ups.value + ups.error;
        let coeff = delta * b / 4.0 - u0 / 2.0;
        assert!(coeff > 0.0, "below a* the per-cube coefficient is positive");
        let (_, stab) = pot.delta_decompose(delta).unwrap();
        for idx in 0..2_000u64 {
            let mut rng = substream_rng(6, 78, 0, idx);
            let n = rng.gen_range(0..=8usize);
            let coords: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let Ok(cfg) = Configuration::new(1, coords.clone()) else { continue };
            let u = radial_pair_energy(1, &coords, &*stab);
            let occ = part.occupancy(&cfg).unwrap();
            let quad: f64 = occ
                .values()
                .filter(|&&c| c >= 2)
                .map(|&c| (c * c) as f64)
                .sum();
            let rhs = quad * coeff - (u0 / 2.0) * n as f64;
            assert!(u >= rhs - 1e-9, "U = {u} < bound {rhs} for n = {n}");
        }
    }

    #[test]
    fn builtin_assumption_checks_pass() {
        PairPotential::inverse_power(3, 2.0, 4.0).unwrap();
        PairPotential::hard_core(2, 0.4).unwrap();
        PairPotential::hard_core_plus_well(1, 0.3, 0.5, 0.8).unwrap();
        PairPotential::power_core_exp_tail(1, 1.0, 2.0, 4.0, 1.0).unwrap();
        // s below the dimension is rejected.
        assert!(PairPotential::inverse_power(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn assumption_check_catches_violations() {
        // Declared core exponent too steep for the actual potential.
        let bad = PairPotential::new(
            1,
            AssumptionA { phi0: 1.0, phi1: 1.0, r0: 1.0, r_attr: 2.0, s: 3.0, eps0: 1.0 },
            0.0,
            false,
            "bad_core",
            Arc::new(|r| 1.0 / r),
        );
        assert!(bad.is_err());
    }
}
