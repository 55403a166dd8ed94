//! Shared numerical machinery: nested-grid extrema, tensor midpoint
//! quadrature at two resolutions, batched Monte Carlo means, and the
//! substream RNG derivation that keeps every estimator reproducible
//! independently of how work is split across threads.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Operation tags entering the RNG substream derivation. Distinct tags keep
/// independent estimators on independent streams even under a shared seed.
pub mod stream {
    pub const MC_PARTITION: u32 = 1;
    pub const MC_NUMERATOR: u32 = 2;
    pub const SAMPLE_CONFIGS: u32 = 3;
    pub const CHECK_ASSUMPTIONS: u32 = 4;
    pub const TRIALS: u32 = 5;
}

/// Deterministic per-(seed, operation, n, batch) RNG. Work scheduled on any
/// number of threads draws from the same substreams, so results are
/// bit-identical across worker counts.
pub fn substream_rng(seed: u64, op: u32, n: u64, batch: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"qcgas.stream.v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(op.to_le_bytes());
    hasher.update(n.to_le_bytes());
    hasher.update(batch.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Compensated (Kahan) accumulator for long sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Outcome of a nested-grid extremum search.
#[derive(Debug, Clone, Copy)]
pub struct Refined {
    pub value: f64,
    /// Final grid spacing along the widest axis.
    pub resolution: f64,
    pub evaluations: usize,
}

/// Default relative tolerance for nested-grid extrema.
pub const REFINE_RTOL: f64 = 1e-4;
/// Default level cap for 1-d extremum searches.
pub const REFINE_MAX_LEVEL_1D: u32 = 18;

/// Supremum of `f` over a product of closed intervals by nested dyadic
/// grids: level `l` places `2^l + 1` points per axis (endpoints included),
/// so each level contains the previous one and the running maximum is
/// monotone nondecreasing. Stops when a level improves the value by less
/// than `rtol` relative, or at `max_level`.
pub fn refine_sup<F>(domain: &[(f64, f64)], rtol: f64, max_level: u32, f: F) -> Refined
where
    F: Fn(&[f64]) -> f64,
{
    let dims = domain.len();
    assert!(dims > 0, "empty domain");
    // Below this level a non-improving sweep is not yet evidence of
    // convergence (the maximizer may simply sit on a coarse grid point).
    let min_level = match dims {
        1 => 6,
        2 | 3 => 4,
        _ => 3,
    };
    let mut best = f64::NEG_INFINITY;
    let mut evaluations = 0usize;
    let mut spacing;
    let mut point = vec![0.0; dims];
    let mut level = 2u32;
    // A single non-improving level can be a grid coincidence (the running
    // argmax sitting on a shared coarse point); require two in a row.
    let mut quiet_levels = 0u32;
    loop {
        let k = (1usize << level) + 1;
        // Full tensor sweep; coarser-level points are re-evaluated, which
        // keeps the loop simple at less than 2x cost.
        let total = k.pow(dims as u32);
        let mut level_best = f64::NEG_INFINITY;
        for flat in 0..total {
            let mut rest = flat;
            for (i, (lo, hi)) in domain.iter().enumerate() {
                let idx = rest % k;
                rest /= k;
                point[i] = if hi > lo {
                    lo + (hi - lo) * idx as f64 / (k - 1) as f64
                } else {
                    *lo
                };
            }
            let v = f(&point);
            evaluations += 1;
            if v > level_best {
                level_best = v;
            }
        }
        spacing = domain
            .iter()
            .map(|(lo, hi)| (hi - lo) / (k - 1) as f64)
            .fold(0.0f64, f64::max);
        let prev = best;
        best = best.max(level_best);
        let quiet = if best == f64::NEG_INFINITY || best.is_infinite() {
            prev == best
        } else {
            prev.is_finite() && (best - prev).abs() <= rtol * best.abs().max(1e-300)
        };
        quiet_levels = if quiet { quiet_levels + 1 } else { 0 };
        let converged = level >= min_level && quiet_levels >= 2;
        if converged || level >= max_level {
            return Refined { value: best, resolution: spacing, evaluations };
        }
        // Guard against runaway tensor sizes in multi-axis searches.
        let next_k = (1usize << (level + 1)) + 1;
        if next_k.checked_pow(dims as u32).is_none_or(|t| t > 8_000_000) {
            return Refined { value: best, resolution: spacing, evaluations };
        }
        level += 1;
    }
}

/// Infimum via `-sup(-f)`.
pub fn refine_inf<F>(domain: &[(f64, f64)], rtol: f64, max_level: u32, f: F) -> Refined
where
    F: Fn(&[f64]) -> f64,
{
    let r = refine_sup(domain, rtol, max_level, |x| -f(x));
    Refined { value: -r.value, ..r }
}

/// Hard cap on midpoint points per axis.
const MAX_AXIS_POINTS: usize = 100_000;

/// Points per axis for a tensor midpoint rule over `dims` axes under a
/// total point budget. When the count admits it, it is rounded down to a
/// multiple of `align_round` so that the fine grid and the half-rate
/// coarse grid both stay commensurate with decimal-scale discontinuities
/// (hard-core diameters) and cube walls.
fn points_per_axis(dims: usize, budget: usize, align_round: usize) -> usize {
    let k = (budget.max(1) as f64).powf(1.0 / dims as f64).floor() as usize;
    let k = k.clamp(2, MAX_AXIS_POINTS);
    if k >= align_round && align_round > 1 {
        (k - k % align_round).max(align_round)
    } else {
        k
    }
}

/// Two-resolution midpoint estimate of an integral.
#[derive(Debug, Clone, Copy)]
pub struct QuadEstimate {
    /// First-order Richardson extrapolation of the two grids, clamped to be
    /// nonnegative (every integrand here is nonnegative).
    pub value: f64,
    /// |fine − coarse|: the reported error estimate.
    pub error: f64,
    pub k_fine: usize,
    pub k_coarse: usize,
    pub evaluations: usize,
}

fn richardson(fine: f64, coarse: f64) -> (f64, f64) {
    ((2.0 * fine - coarse).max(0.0), (fine - coarse).abs())
}

/// Midpoint tensor rule over `Λ^n`, `Λ = Π [0, side_i)`, for an integrand
/// symmetric under exchange of the `n` particles. The sum runs over
/// non-decreasing particle-cell tuples with multinomial multiplicities,
/// which reproduces the full tensor sum at ~1/n! of the cost. `f` receives
/// the flat `n·dim` coordinate slice.
///
/// `align` is a per-axis divisor the resolution must respect (pass the cube
/// count per axis when the integrand involves cube-occupancy indicators;
/// 1 otherwise).
pub fn midpoint_symmetric<F>(
    sides: &[f64],
    n: usize,
    budget: usize,
    align: usize,
    f: &F,
) -> QuadEstimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert!(n >= 1);
    let dim = sides.len();
    let dims = n * dim;
    let mut k = points_per_axis(dims, budget, 20);
    if align > 1 {
        k = (k - k % align).max(align);
    }
    let k_coarse = if align > 1 {
        let half = k / 2;
        (half - half % align).max(align).min(k)
    } else {
        (k / 2).max(1)
    };
    let (fine, e1) = midpoint_symmetric_at(sides, n, k, f);
    let (coarse, e2) = if k_coarse == k {
        (fine, 0)
    } else {
        midpoint_symmetric_at(sides, n, k_coarse, f)
    };
    let (value, error) = richardson(fine, coarse);
    QuadEstimate { value, error, k_fine: k, k_coarse, evaluations: e1 + e2 }
}

/// Single-resolution symmetric midpoint sum; returns (integral, evaluations).
fn midpoint_symmetric_at<F>(sides: &[f64], n: usize, k: usize, f: &F) -> (f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dim = sides.len();
    let axis_coords: Vec<Vec<f64>> = sides
        .iter()
        .map(|&s| (0..k).map(|i| s * (i as f64 + 0.5) / k as f64).collect())
        .collect();
    let cells = k.pow(dim as u32);
    let cell_vol: f64 = sides.iter().map(|&s| s / k as f64).product();
    let factorials: Vec<f64> = {
        let mut v = vec![1.0f64; n + 1];
        for i in 1..=n {
            v[i] = v[i - 1] * i as f64;
        }
        v
    };

    let decode = |cell: usize, out: &mut [f64]| {
        let mut rest = cell;
        for (ax, coords) in axis_coords.iter().enumerate() {
            out[ax] = coords[rest % k];
            rest /= k;
        }
    };

    // Parallelize over the first (smallest) particle cell; enumerate
    // non-decreasing suffixes sequentially inside each task. Partial sums
    // are combined in task order, so the result is thread-count invariant.
    let partials: Vec<(f64, usize)> = (0..cells)
        .into_par_iter()
        .map(|first| {
            let mut tuple = vec![first; n];
            let mut coords = vec![0.0f64; n * dim];
            decode(first, &mut coords[0..dim]);
            for p in 1..n {
                let (head, tail) = coords.split_at_mut(p * dim);
                tail[0..dim].copy_from_slice(&head[(p - 1) * dim..]);
            }
            let mut sum = KahanSum::default();
            let mut evals = 0usize;
            loop {
                // Multiplicity n!/prod(run lengths!).
                let mut mult = factorials[n];
                let mut run = 1usize;
                for p in 1..n {
                    if tuple[p] == tuple[p - 1] {
                        run += 1;
                    } else {
                        mult /= factorials[run];
                        run = 1;
                    }
                }
                mult /= factorials[run];
                sum.add(mult * f(&coords));
                evals += 1;
                if n == 1 {
                    break;
                }
                // Advance to the next non-decreasing tuple with fixed head.
                let mut pos = n - 1;
                while pos > 0 && tuple[pos] + 1 >= cells {
                    pos -= 1;
                }
                if pos == 0 {
                    break;
                }
                tuple[pos] += 1;
                decode(tuple[pos], &mut coords[pos * dim..(pos + 1) * dim]);
                for q in (pos + 1)..n {
                    tuple[q] = tuple[pos];
                    let (head, tail) = coords.split_at_mut(q * dim);
                    tail[0..dim].copy_from_slice(&head[(q - 1) * dim..]);
                }
            }
            (sum.value(), evals)
        })
        .collect();

    let mut total = KahanSum::default();
    let mut evals = 0usize;
    for (s, e) in partials {
        total.add(s);
        evals += e;
    }
    (total.value() * cell_vol.powi(n as i32), evals)
}

/// Midpoint tensor rule over an explicit product of intervals (no particle
/// symmetry). Used for integrals over products of distinct cubes.
pub fn midpoint_product<F>(axes: &[(f64, f64)], budget: usize, f: &F) -> QuadEstimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let k = points_per_axis(axes.len(), budget, 10);
    let k_coarse = (k / 2).max(1);
    let (fine, e1) = midpoint_product_at(axes, k, f);
    let (coarse, e2) =
        if k_coarse == k { (fine, 0) } else { midpoint_product_at(axes, k_coarse, f) };
    let (value, error) = richardson(fine, coarse);
    QuadEstimate { value, error, k_fine: k, k_coarse, evaluations: e1 + e2 }
}

fn midpoint_product_at<F>(axes: &[(f64, f64)], k: usize, f: &F) -> (f64, usize)
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = axes.len();
    let total = k.pow(dims as u32);
    let cell_vol: f64 = axes.iter().map(|(lo, hi)| (hi - lo) / k as f64).product();
    let chunk = 1usize << 14;
    let chunks = total.div_ceil(chunk);
    let partials: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut point = vec![0.0f64; dims];
            let mut sum = KahanSum::default();
            for flat in (c * chunk)..((c + 1) * chunk).min(total) {
                let mut rest = flat;
                for (i, (lo, hi)) in axes.iter().enumerate() {
                    let idx = rest % k;
                    rest /= k;
                    point[i] = lo + (hi - lo) * (idx as f64 + 0.5) / k as f64;
                }
                sum.add(f(&point));
            }
            sum.value()
        })
        .collect();
    let mut sum = KahanSum::default();
    for p in partials {
        sum.add(p);
    }
    (sum.value() * cell_vol, total)
}

/// Monte Carlo estimate with a 3-sigma statistical error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    /// 3-sigma standard error of the mean, scaled by the domain volume.
    pub error3: f64,
    pub samples: usize,
}

const MC_BATCH: usize = 8192;

/// Uniform Monte Carlo estimate of `∫ f` over a product of intervals.
/// Batch `b` draws from `substream_rng(seed, op, n_tag, b)`; per-batch sums
/// are combined in batch order, so the estimate does not depend on the
/// number of worker threads.
pub fn mc_integral<F>(
    axes: &[(f64, f64)],
    budget: usize,
    seed: u64,
    op: u32,
    n_tag: u64,
    f: &F,
) -> McEstimate
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let dims = axes.len();
    let volume: f64 = axes.iter().map(|(lo, hi)| hi - lo).product();
    let budget = budget.max(1);
    let batches = budget.div_ceil(MC_BATCH);
    let partials: Vec<(f64, f64, usize)> = (0..batches as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream_rng(seed, op, n_tag, b);
            let mut point = vec![0.0f64; dims];
            let start = b as usize * MC_BATCH;
            let in_batch = MC_BATCH.min(budget - start);
            let mut s1 = KahanSum::default();
            let mut s2 = KahanSum::default();
            for _ in 0..in_batch {
                for (i, (lo, hi)) in axes.iter().enumerate() {
                    point[i] = lo + (hi - lo) * rng.gen::<f64>();
                }
                let v = f(&point);
                s1.add(v);
                s2.add(v * v);
            }
            (s1.value(), s2.value(), in_batch)
        })
        .collect();
    let mut s1 = KahanSum::default();
    let mut s2 = KahanSum::default();
    let mut m = 0usize;
    for (a, b, c) in partials {
        s1.add(a);
        s2.add(b);
        m += c;
    }
    let mf = m as f64;
    let mean = s1.value() / mf;
    let var = if m > 1 {
        ((s2.value() - s1.value() * s1.value() / mf) / (mf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        value: volume * mean,
        error3: 3.0 * volume * (var / mf).sqrt(),
        samples: m,
    }
}

/// Geometric scan followed by bisection: returns the smallest root of `g`
/// in `(lo, hi]`, assuming `g(lo) > 0`. The first sign change along the
/// geometric scan is bisected to `rtol` relative width.
pub fn first_root_bisect<G>(lo: f64, hi: f64, scan: usize, rtol: f64, mut g: G) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    assert!(lo > 0.0 && hi > lo && scan >= 2);
    let ratio = (hi / lo).powf(1.0 / (scan - 1) as f64);
    let mut prev_x = lo;
    let mut prev_g = g(lo)?;
    if prev_g <= 0.0 {
        return Err(Error::numerical(format!(
            "no bracket: g({lo:.6e}) = {prev_g:.6e} is not positive at the lower end"
        )));
    }
    let mut bracket = None;
    for i in 1..scan {
        let x = if i == scan - 1 { hi } else { lo * ratio.powi(i as i32) };
        let gx = g(x)?;
        if gx <= 0.0 {
            bracket = Some((prev_x, x));
            break;
        }
        prev_x = x;
        prev_g = gx;
    }
    let (mut a, mut b) = bracket.ok_or_else(|| {
        Error::numerical(format!(
            "no sign change on ({lo:.6e}, {hi:.6e}]: g stays positive (last value {prev_g:.6e})"
        ))
    })?;
    while (b - a) > rtol * b {
        let mid = 0.5 * (a + b);
        if g(mid)? > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}
