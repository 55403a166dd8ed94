//! Boxes, cube partitions, finite configurations and occupancy.
//!
//! The box Λ is anchored at the origin and required to be an exact union of
//! cubes of the active edge `a`, so the cube count `N_Λ = |Λ|/a^d` is an
//! integer. Cubes are half-open, `[l, l + a)` per axis: a point exactly on a
//! cube's upper face belongs to the next cube. Only the relative geometry of
//! points and cube walls enters any computed quantity, so anchoring at the
//! origin instead of centering cubes on a lattice is a pure convention.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Relative tolerance for the "box side is an integer multiple of `a`"
/// divisibility check. Tight enough that only representation noise passes;
/// anything looser would silently admit partial cubes.
pub const DIVISIBILITY_RTOL: f64 = 1e-12;

/// Axis-aligned box `[0, s_1) × … × [0, s_d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimBox {
    sides: Vec<f64>,
}

impl SimBox {
    pub fn new(sides: Vec<f64>) -> Result<Self> {
        if sides.is_empty() {
            return Err(Error::invalid("box must have at least one axis"));
        }
        for (i, &s) in sides.iter().enumerate() {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!(
                    "box side on axis {i} must be finite and positive, got {s}"
                )));
            }
        }
        Ok(SimBox { sides })
    }

    /// Cube of side `s` in dimension `d`.
    pub fn cube(dim: usize, side: f64) -> Result<Self> {
        SimBox::new(vec![side; dim])
    }

    pub fn dim(&self) -> usize {
        self.sides.len()
    }

    pub fn sides(&self) -> &[f64] {
        &self.sides
    }

    pub fn volume(&self) -> f64 {
        self.sides.iter().product()
    }

    /// Half-open membership test: `0 ≤ x_i < s_i` on every axis.
    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dim()
            && point
                .iter()
                .zip(&self.sides)
                .all(|(&x, &s)| (0.0..s).contains(&x))
    }
}

/// Finite set of pairwise-distinct points in ℝ^d, stored flat
/// (`coords.len() == dim * len`).
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    dim: usize,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("configuration dimension must be positive"));
        }
        if !coords.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!(
                "coordinate count {} is not a multiple of the dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("configuration coordinates must be finite"));
        }
        let cfg = Configuration { dim, coords };
        for i in 0..cfg.len() {
            for j in (i + 1)..cfg.len() {
                if cfg.point(i) == cfg.point(j) {
                    return Err(Error::invalid(format!(
                        "points {i} and {j} coincide at {:?}",
                        cfg.point(i)
                    )));
                }
            }
        }
        Ok(cfg)
    }

    pub fn empty(dim: usize) -> Self {
        Configuration { dim, coords: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Disjoint union η ∪ γ; rejects shared points.
    pub fn union(&self, other: &Configuration) -> Result<Configuration> {
        if self.dim != other.dim {
            return Err(Error::invalid("configurations have different dimensions"));
        }
        for p in self.points() {
            for q in other.points() {
                if p == q {
                    return Err(Error::invalid(format!(
                        "configurations overlap at {p:?}"
                    )));
                }
            }
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Configuration { dim: self.dim, coords })
    }

    pub fn inside(&self, sim_box: &SimBox) -> bool {
        self.points().all(|p| sim_box.contains(p))
    }
}

/// Partition of a box into hyper-cubes of edge `a`.
///
/// Cube `(i_1, …, i_d)` covers `[i_k a, (i_k + 1) a)` on axis `k`; flat
/// indices run in row-major order with axis 0 fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CubePartition {
    sim_box: SimBox,
    edge: f64,
    cubes_per_axis: Vec<usize>,
}

impl CubePartition {
    /// Builds the partition, rejecting any axis whose side is not an
    /// integer multiple of `a` (relative tolerance [`DIVISIBILITY_RTOL`]).
    pub fn new(sim_box: SimBox, edge: f64) -> Result<Self> {
        if !(edge > 0.0) || !edge.is_finite() {
            return Err(Error::invalid(format!(
                "cube edge must be finite and positive, got {edge}"
            )));
        }
        let mut cubes_per_axis = Vec::with_capacity(sim_box.dim());
        for (axis, &side) in sim_box.sides().iter().enumerate() {
            let ratio = side / edge;
            let rounded = ratio.round();
            if rounded < 1.0 || (ratio - rounded).abs() > DIVISIBILITY_RTOL * ratio {
                return Err(Error::invalid(format!(
                    "box side {side} on axis {axis} is not an integer multiple of edge {edge}"
                )));
            }
            cubes_per_axis.push(rounded as usize);
        }
        Ok(CubePartition { sim_box, edge, cubes_per_axis })
    }

    pub fn sim_box(&self) -> &SimBox {
        &self.sim_box
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn dim(&self) -> usize {
        self.sim_box.dim()
    }

    pub fn cubes_per_axis(&self) -> &[usize] {
        &self.cubes_per_axis
    }

    /// Number of cubes `N_Λ = |Λ| / a^d`.
    pub fn cube_count(&self) -> usize {
        self.cubes_per_axis.iter().product()
    }

    /// Cube volume `a^d`.
    pub fn cube_volume(&self) -> f64 {
        self.edge.powi(self.dim() as i32)
    }

    /// Flat index of the cube containing `point`; total on the box.
    pub fn cube_index(&self, point: &[f64]) -> Result<usize> {
        if point.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has {} coordinates, partition lives in dimension {}",
                point.len(),
                self.dim()
            )));
        }
        let mut index = 0usize;
        let mut stride = 1usize;
        for (axis, (&x, &n)) in point.iter().zip(&self.cubes_per_axis).enumerate() {
            if !(0.0..self.sim_box.sides()[axis]).contains(&x) {
                return Err(Error::invalid(format!(
                    "point {point:?} lies outside the box on axis {axis}"
                )));
            }
            let i = ((x / self.edge).floor() as usize).min(n - 1);
            index += i * stride;
            stride *= n;
        }
        Ok(index)
    }

    /// Lower corner of the cube with the given flat index.
    pub fn cube_lower_corner(&self, mut index: usize) -> Vec<f64> {
        let mut corner = Vec::with_capacity(self.dim());
        for &n in &self.cubes_per_axis {
            corner.push((index % n) as f64 * self.edge);
            index /= n;
        }
        corner
    }

    /// Axis index tuple of the cube with the given flat index.
    pub fn cube_multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut mi = Vec::with_capacity(self.dim());
        for &n in &self.cubes_per_axis {
            mi.push(index % n);
            index /= n;
        }
        mi
    }

    /// True when `finer` refines this partition compatibly: same box and
    /// `self.edge / finer.edge ∈ ℕ`, so every coarse cube is an exact union
    /// of fine cubes.
    pub fn is_refined_by(&self, finer: &CubePartition) -> bool {
        if self.sim_box != finer.sim_box {
            return false;
        }
        let ratio = self.edge / finer.edge;
        let rounded = ratio.round();
        rounded >= 1.0 && (ratio - rounded).abs() <= DIVISIBILITY_RTOL * ratio
    }

    /// Per-cube occupation counts `|γ_Δ|`; absent indices mean zero.
    pub fn occupancy(&self, config: &Configuration) -> Result<BTreeMap<usize, usize>> {
        let mut counts = BTreeMap::new();
        for p in config.points() {
            *counts.entry(self.cube_index(p)?).or_insert(0) += 1;
        }
        Ok(counts)
    }

    /// Occupation counts as a dense vector over all `N_Λ` cubes.
    pub fn occupancy_vec(&self, config: &Configuration) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; self.cube_count()];
        for p in config.points() {
            counts[self.cube_index(p)?] += 1;
        }
        Ok(counts)
    }

    /// Dilute indicator: true iff every cube holds 0 or 1 points, i.e. the
    /// product of the per-cube indicators `χ_-^Δ` equals 1.
    pub fn is_dilute(&self, config: &Configuration) -> Result<bool> {
        let mut seen: Vec<usize> = Vec::with_capacity(config.len());
        for p in config.points() {
            seen.push(self.cube_index(p)?);
        }
        seen.sort_unstable();
        Ok(seen.windows(2).all(|w| w[0] != w[1]))
    }
}

/// One term of the partition of unity over cube subsets: given per-cube
/// occupation `counts`, returns `χ̃₊^X · χ̃₋^{Λ∖X}` where `dense[i]` marks
/// cube `i ∈ X`. Exactly one subset yields 1 for any fixed configuration.
pub fn unity_term(counts: &[usize], dense: &[bool]) -> bool {
    debug_assert_eq!(counts.len(), dense.len());
    counts
        .iter()
        .zip(dense)
        .all(|(&c, &d)| if d { c >= 2 } else { c <= 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config_1d(points: &[f64]) -> Configuration {
        Configuration::new(1, points.to_vec()).unwrap()
    }

    #[test]
    fn partition_cube_counts() {
        let p = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!(p.cube_count(), 2);
        let p = CubePartition::new(SimBox::cube(2, 1.0).unwrap(), 0.25).unwrap();
        assert_eq!(p.cube_count(), 16);
    }

    #[test]
    fn partition_rejects_non_divisible_edge() {
        let err = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.3).unwrap_err();
        assert!(err.to_string().contains("axis 0"), "{err}");
        assert!(CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.0).is_err());
        assert!(CubePartition::new(SimBox::cube(1, 1.0).unwrap(), -0.5).is_err());
        // Mixed sides: only axis 1 fails.
        let b = SimBox::new(vec![1.0, 0.8]).unwrap();
        let err = CubePartition::new(b, 0.5).unwrap_err();
        assert!(err.to_string().contains("axis 1"), "{err}");
    }

    #[test]
    fn occupancy_counts_and_errors() {
        let p = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        let occ = p.occupancy(&config_1d(&[0.1, 0.9])).unwrap();
        assert_eq!(occ, BTreeMap::from([(0, 1), (1, 1)]));

        assert!(p.occupancy(&Configuration::empty(1)).unwrap().is_empty());

        let occ = p.occupancy(&config_1d(&[0.1, 0.2, 0.9])).unwrap();
        assert_eq!(occ, BTreeMap::from([(0, 2), (1, 1)]));
        assert_eq!(occ.values().sum::<usize>(), 3);

        let err = p.occupancy(&config_1d(&[0.1, 1.2])).unwrap_err();
        assert!(err.to_string().contains("1.2"), "{err}");
    }

    #[test]
    fn upper_face_belongs_to_next_cube() {
        // Half-open cubes: x = 0.5 with a = 0.5 sits in cube 1, and the top
        // of the box is outside.
        let p = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        assert_eq!(p.cube_index(&[0.5]).unwrap(), 1);
        assert_eq!(p.cube_index(&[0.0]).unwrap(), 0);
        assert!(p.cube_index(&[1.0]).is_err());
    }

    #[test]
    fn dilute_indicator() {
        let p = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.5).unwrap();
        assert!(p.is_dilute(&config_1d(&[0.1, 0.9])).unwrap());
        assert!(!p.is_dilute(&config_1d(&[0.1, 0.2])).unwrap());
        // The same two points separate once the cubes are small enough.
        let fine = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.0625).unwrap();
        assert!(fine.is_dilute(&config_1d(&[0.1, 0.2])).unwrap());
        assert_eq!(fine.cube_index(&[0.1]).unwrap(), 1);
        assert_eq!(fine.cube_index(&[0.2]).unwrap(), 3);
    }

    #[test]
    fn refinement_preserves_diluteness() {
        // If a configuration is dilute at edge a it stays dilute at any
        // compatible finer edge: a coarse cube is a disjoint union of fine
        // cubes, so per-cube counts can only split.
        let sim_box = SimBox::cube(1, 1.0).unwrap();
        let mut state = 0x2458_9f1du64;
        let mut rnd = move || {
            // Small xorshift; plenty for scattering test points.
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for trial in 0..200 {
            let n = trial % 6;
            let mut pts = Vec::new();
            for _ in 0..n {
                pts.push(rnd());
            }
            let Ok(cfg) = Configuration::new(1, pts) else { continue };
            let coarse = CubePartition::new(sim_box.clone(), 0.25).unwrap();
            let fine = CubePartition::new(sim_box.clone(), 0.0625).unwrap();
            assert!(coarse.is_refined_by(&fine));
            if coarse.is_dilute(&cfg).unwrap() {
                assert!(fine.is_dilute(&cfg).unwrap());
            }
        }
    }

    #[test]
    fn incompatible_edges_detected() {
        let sim_box = SimBox::cube(1, 1.0).unwrap();
        let half = CubePartition::new(sim_box.clone(), 0.5).unwrap();
        let fifth = CubePartition::new(sim_box, 0.2).unwrap();
        assert!(!half.is_refined_by(&fifth));
        assert!(half.is_refined_by(&half));
    }

    #[test]
    fn occupancy_is_permutation_invariant() {
        let p = CubePartition::new(SimBox::cube(1, 1.0).unwrap(), 0.25).unwrap();
        let a = config_1d(&[0.1, 0.3, 0.8, 0.35]);
        let b = config_1d(&[0.35, 0.8, 0.1, 0.3]);
        assert_eq!(p.occupancy(&a).unwrap(), p.occupancy(&b).unwrap());
    }

    #[test]
    fn partition_of_unity_is_exhaustive_and_exclusive() {
        // For any configuration and any partition with N cubes, exactly one
        // of the 2^N subset terms χ̃₊^X χ̃₋^{Λ∖X} evaluates to 1.
        let cases: &[(usize, f64, &[f64])] = &[
            (1, 0.25, &[0.1, 0.15, 0.8]),
            (1, 0.25, &[]),
            (1, 0.125, &[0.01, 0.02, 0.03, 0.7, 0.9]),
            (2, 0.5, &[0.1, 0.1, 0.6, 0.6, 0.61, 0.62]),
            (1, 1.0 / 12.0, &[0.05, 0.06, 0.5, 0.51, 0.99]),
        ];
        for &(dim, edge, pts) in cases {
            let p = CubePartition::new(SimBox::cube(dim, 1.0).unwrap(), edge).unwrap();
            let n = p.cube_count();
            assert!(n <= 12);
            let cfg = Configuration::new(dim, pts.to_vec()).unwrap();
            let counts = p.occupancy_vec(&cfg).unwrap();
            let mut hits = 0u32;
            for mask in 0u32..(1u32 << n) {
                let dense: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
                if unity_term(&counts, &dense) {
                    hits += 1;
                }
            }
            assert_eq!(hits, 1, "dim={dim} edge={edge} pts={pts:?}");
        }
    }

    #[test]
    fn union_rejects_overlap() {
        let a = config_1d(&[0.1, 0.2]);
        let b = config_1d(&[0.2, 0.3]);
        assert!(a.union(&b).is_err());
        let c = config_1d(&[0.4]);
        assert_eq!(a.union(&c).unwrap().len(), 3);
    }

    #[test]
    fn configuration_rejects_duplicates() {
        assert!(Configuration::new(1, vec![0.1, 0.1]).is_err());
        assert!(Configuration::new(2, vec![0.1, 0.2, 0.1, 0.2]).is_err());
        assert!(Configuration::new(2, vec![0.1]).is_err());
    }
}
