//! Dyadic squares with exact integer arithmetic.
//!
//! A square is (generation, ix, iy) on a lattice described by a root side
//! and origin; its side is root_side·2^{−generation}. All containment,
//! adjacency, and overlap questions are decided on integer indices, never on
//! floating-point geometry, so packing constants come out exact.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::PlanarMap;

/// Placement of the dyadic hierarchy in the plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicLattice {
    pub root_side: f64,
    pub root_origin: (f64, f64),
}

impl DyadicLattice {
    pub fn unit() -> Self {
        Self { root_side: 1.0, root_origin: (0.0, 0.0) }
    }

    pub fn new(root_side: f64, root_origin: (f64, f64)) -> Result<Self> {
        if !(root_side > 0.0) || !root_origin.0.is_finite() || !root_origin.1.is_finite() {
            return Err(Error::Parameter(format!(
                "lattice needs positive side and finite origin, got {root_side}, {root_origin:?}"
            )));
        }
        Ok(Self { root_side, root_origin })
    }

    pub fn side(&self, sq: DyadicSquare) -> f64 {
        self.root_side * (-sq.gen as f64).exp2()
    }

    /// Lower-left corner.
    pub fn corner(&self, sq: DyadicSquare) -> Complex64 {
        let s = self.side(sq);
        Complex64::new(
            self.root_origin.0 + sq.ix as f64 * s,
            self.root_origin.1 + sq.iy as f64 * s,
        )
    }

    pub fn center(&self, sq: DyadicSquare) -> Complex64 {
        let s = self.side(sq);
        self.corner(sq) + Complex64::new(0.5 * s, 0.5 * s)
    }

    pub fn contains_point(&self, sq: DyadicSquare, z: Complex64) -> bool {
        let c = self.corner(sq);
        let s = self.side(sq);
        z.re >= c.re && z.re < c.re + s && z.im >= c.im && z.im < c.im + s
    }

    /// The square of generation `gen` whose half-open box contains z.
    pub fn square_at(&self, gen: i32, z: Complex64) -> DyadicSquare {
        let s = self.root_side * (-gen as f64).exp2();
        DyadicSquare {
            gen,
            ix: ((z.re - self.root_origin.0) / s).floor() as i64,
            iy: ((z.im - self.root_origin.1) / s).floor() as i64,
        }
    }

    /// `count` boundary points, counterclockwise from the lower-left corner;
    /// all four corners are included when `count` is a multiple of 4.
    pub fn boundary_samples(&self, sq: DyadicSquare, count: usize) -> Vec<Complex64> {
        let c = self.corner(sq);
        let s = self.side(sq);
        let per_edge = count / 4;
        let mut out = Vec::with_capacity(per_edge * 4);
        for e in 0..4 {
            for a in 0..per_edge {
                let u = a as f64 / per_edge as f64 * s;
                let p = match e {
                    0 => Complex64::new(c.re + u, c.im),
                    1 => Complex64::new(c.re + s, c.im + u),
                    2 => Complex64::new(c.re + s - u, c.im + s),
                    _ => Complex64::new(c.re, c.im + s - u),
                };
                out.push(p);
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicSquare {
    pub gen: i32,
    pub ix: i64,
    pub iy: i64,
}

impl DyadicSquare {
    pub fn new(gen: i32, ix: i64, iy: i64) -> Self {
        Self { gen, ix, iy }
    }

    pub fn parent(&self) -> DyadicSquare {
        DyadicSquare { gen: self.gen - 1, ix: self.ix.div_euclid(2), iy: self.iy.div_euclid(2) }
    }

    /// Ancestor at a coarser (smaller) generation.
    pub fn ancestor(&self, gen: i32) -> DyadicSquare {
        assert!(gen <= self.gen, "ancestor generation must be coarser");
        let shift = (self.gen - gen) as u32;
        if shift >= 63 {
            let collapse = |v: i64| if v >= 0 { 0 } else { -1 };
            return DyadicSquare { gen, ix: collapse(self.ix), iy: collapse(self.iy) };
        }
        DyadicSquare { gen, ix: self.ix >> shift, iy: self.iy >> shift }
    }

    pub fn contains(&self, other: &DyadicSquare) -> bool {
        other.gen >= self.gen && other.ancestor(self.gen) == *self
    }

    pub fn children(&self) -> [DyadicSquare; 4] {
        let g = self.gen + 1;
        let (x, y) = (2 * self.ix, 2 * self.iy);
        [
            DyadicSquare::new(g, x, y),
            DyadicSquare::new(g, x + 1, y),
            DyadicSquare::new(g, x, y + 1),
            DyadicSquare::new(g, x + 1, y + 1),
        ]
    }
}

/// Minimal dyadic square containing both, when one exists. Squares whose
/// indices stabilize in different sign classes (opposite sides of a lattice
/// axis) have no common ancestor.
pub fn least_common_ancestor(a: DyadicSquare, b: DyadicSquare) -> Option<DyadicSquare> {
    let g = a.gen.min(b.gen);
    let mut a = a.ancestor(g);
    let mut b = b.ancestor(g);
    loop {
        if a == b {
            return Some(a);
        }
        let settled = |s: &DyadicSquare| (s.ix == 0 || s.ix == -1) && (s.iy == 0 || s.iy == -1);
        if settled(&a) && settled(&b) {
            return None;
        }
        a = a.parent();
        b = b.parent();
    }
}

/// A finite family of pairwise disjoint dyadic squares with a reference
/// exponent t ∈ (0, 2].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SquareFamily {
    lattice: DyadicLattice,
    members: Vec<DyadicSquare>,
    exponent_t: f64,
}

impl SquareFamily {
    pub fn new(lattice: DyadicLattice, members: Vec<DyadicSquare>, t: f64) -> Result<Self> {
        check_exponent(t)?;
        for (idx, a) in members.iter().enumerate() {
            for b in &members[idx + 1..] {
                if a.contains(b) || b.contains(a) {
                    return Err(Error::Parameter(format!(
                        "members {a:?} and {b:?} are not pairwise disjoint"
                    )));
                }
            }
        }
        Ok(Self { lattice, members, exponent_t: t })
    }

    pub fn lattice(&self) -> DyadicLattice {
        self.lattice
    }

    pub fn members(&self) -> &[DyadicSquare] {
        &self.members
    }

    pub fn exponent_t(&self) -> f64 {
        self.exponent_t
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Text form: a header line `lattice <side> <ox> <oy> <t>` followed by
    /// one `g i j` line per member.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "lattice {} {} {} {}\n",
            self.lattice.root_side, self.lattice.root_origin.0, self.lattice.root_origin.1,
            self.exponent_t
        );
        for m in &self.members {
            out.push_str(&format!("{} {} {}\n", m.gen, m.ix, m.iy));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Serialization("empty family description".into()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("lattice") {
            return Err(Error::Serialization("family header must start with 'lattice'".into()));
        }
        let mut next_f64 = || -> Result<f64> {
            parts
                .next()
                .ok_or_else(|| Error::Serialization("short family header".into()))?
                .parse()
                .map_err(|e| Error::Serialization(format!("bad header number: {e}")))
        };
        let side = next_f64()?;
        let ox = next_f64()?;
        let oy = next_f64()?;
        let t = next_f64()?;
        let lattice = DyadicLattice::new(side, (ox, oy))?;
        let mut members = Vec::new();
        for line in lines {
            let nums: Vec<&str> = line.split_whitespace().collect();
            if nums.len() != 3 {
                return Err(Error::Serialization(format!("bad member line: {line}")));
            }
            let parse = |s: &str| -> Result<i64> {
                s.parse().map_err(|e| Error::Serialization(format!("bad member index: {e}")))
            };
            members.push(DyadicSquare::new(parse(nums[0])? as i32, parse(nums[1])?, parse(nums[2])?));
        }
        Self::new(lattice, members, t)
    }
}

fn check_exponent(t: f64) -> Result<()> {
    if !(t > 0.0 && t <= 2.0) {
        return Err(Error::Parameter(format!("exponent t = {t} outside (0, 2]")));
    }
    Ok(())
}

/// Result of a packing-constant computation. `admissible` is false when no
/// dyadic square contains two members (fewer than two members, or members
/// separated by a lattice axis), in which case alpha is reported as 0.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PackingEstimate {
    pub alpha: f64,
    pub admissible: bool,
    pub witness: Option<DyadicSquare>,
}

/// α = max over dyadic R containing at least two members of
/// Σ_{Q ⊆ R} ℓ(Q)^t / ℓ(R)^t. The maximum is attained at a minimal common
/// ancestor of some member pair, so only pair LCAs are inspected.
pub fn packing_alpha(family: &SquareFamily, t: f64) -> Result<PackingEstimate> {
    check_exponent(t)?;
    let members = family.members();
    if members.len() < 2 {
        return Ok(PackingEstimate { alpha: 0.0, admissible: false, witness: None });
    }
    let mut candidates = BTreeSet::new();
    for (idx, a) in members.iter().enumerate() {
        for b in &members[idx + 1..] {
            if let Some(r) = least_common_ancestor(*a, *b) {
                candidates.insert(r);
            }
        }
    }
    if candidates.is_empty() {
        return Ok(PackingEstimate { alpha: 0.0, admissible: false, witness: None });
    }
    let lattice = family.lattice();
    let mut best = f64::NEG_INFINITY;
    let mut witness = None;
    for r in candidates {
        let mut sum = 0.0;
        for q in members {
            if r.contains(q) {
                sum += lattice.side(*q).powf(t);
            }
        }
        let ratio = sum / lattice.side(r).powf(t);
        if ratio > best {
            best = ratio;
            witness = Some(r);
        }
    }
    Ok(PackingEstimate { alpha: best, admissible: true, witness })
}

/// Exact extents of the doubled square 2Q in integer units of
/// root_side·2^{−(gmax+2)}, where gmax is the finest generation in play.
fn doubled_bounds(sq: DyadicSquare, gmax: i32) -> (i128, i128, i128, i128) {
    let shift = (gmax + 2 - sq.gen) as u32;
    let s = 1i128 << shift;
    let (x, y) = (sq.ix as i128 * s, sq.iy as i128 * s);
    (x - s / 2, x + 3 * s / 2, y - s / 2, y + 3 * s / 2)
}

/// Least τ ≥ 1 such that (a) any two members whose doubled squares meet have
/// side ratio at most τ and (b) no point lies in more than τ doubled squares.
/// Both conditions are evaluated exactly on the integer lattice.
pub fn smoothness_tau(family: &SquareFamily) -> Result<f64> {
    let members = family.members();
    if members.is_empty() {
        return Err(Error::Parameter("smoothness of an empty family".into()));
    }
    let gmax = members.iter().map(|m| m.gen).max().unwrap();
    let gmin = members.iter().map(|m| m.gen).min().unwrap();
    if gmax - gmin > 80 {
        return Err(Error::Resolution(format!(
            "generation spread {} too deep for exact arithmetic",
            gmax - gmin
        )));
    }
    let boxes: Vec<_> = members.iter().map(|m| doubled_bounds(*m, gmax)).collect();

    let mut ratio_max = 1.0f64;
    for (idx, a) in boxes.iter().enumerate() {
        for (jdx, b) in boxes.iter().enumerate().skip(idx + 1) {
            let meet = a.0 <= b.1 && b.0 <= a.1 && a.2 <= b.3 && b.2 <= a.3;
            if meet {
                let dg = (members[idx].gen - members[jdx].gen).abs();
                ratio_max = ratio_max.max((dg as f64).exp2());
            }
        }
    }

    // Max multiplicity of the doubled-square interiors over the cells of the
    // coordinate arrangement, probed at cell midpoints in doubled units.
    let mut xs: Vec<i128> = boxes.iter().flat_map(|b| [b.0, b.1]).collect();
    xs.sort_unstable();
    xs.dedup();
    let mut overlap_max = 0usize;
    for w in xs.windows(2) {
        let xm2 = w[0] + w[1];
        let active: Vec<&(i128, i128, i128, i128)> =
            boxes.iter().filter(|b| 2 * b.0 < xm2 && xm2 < 2 * b.1).collect();
        if active.len() <= overlap_max {
            continue;
        }
        let mut ys: Vec<i128> = active.iter().flat_map(|b| [b.2, b.3]).collect();
        ys.sort_unstable();
        ys.dedup();
        for wy in ys.windows(2) {
            let ym2 = wy[0] + wy[1];
            let count = active.iter().filter(|b| 2 * b.2 < ym2 && ym2 < 2 * b.3).count();
            overlap_max = overlap_max.max(count);
        }
    }

    Ok(ratio_max.max(overlap_max as f64))
}

/// The measure ω = Σ_P ℓ(P)^{t−2} χ_P held with its family.
#[derive(Clone, Debug)]
pub struct PackingWeight {
    family: SquareFamily,
    t: f64,
}

impl PackingWeight {
    pub fn new(family: SquareFamily, t: f64) -> Result<Self> {
        check_exponent(t)?;
        Ok(Self { family, t })
    }

    pub fn family(&self) -> &SquareFamily {
        &self.family
    }

    pub fn exponent(&self) -> f64 {
        self.t
    }

    /// ω(ℂ) = Σ ℓ(P)^t.
    pub fn total_mass(&self) -> f64 {
        let lattice = self.family.lattice();
        self.family.members().iter().map(|p| lattice.side(*p).powf(self.t)).sum()
    }

    /// Pointwise density Σ ℓ(P)^{t−2} χ_P(z).
    pub fn density_at(&self, z: Complex64) -> f64 {
        let lattice = self.family.lattice();
        for p in self.family.members() {
            if lattice.contains_point(*p, z) {
                return lattice.side(*p).powf(self.t - 2.0);
            }
        }
        0.0
    }

    /// ω(region) for a region given as pairwise disjoint dyadic squares:
    /// Σ_P ℓ(P)^{t−2}·area(P ∩ region), exact by nesting.
    pub fn measure(&self, region: &[DyadicSquare]) -> Result<f64> {
        for (idx, a) in region.iter().enumerate() {
            for b in &region[idx + 1..] {
                if a.contains(b) || b.contains(a) {
                    return Err(Error::Parameter("region squares must be disjoint".into()));
                }
            }
        }
        let lattice = self.family.lattice();
        let mut total = 0.0;
        for p in self.family.members() {
            let lp = lattice.side(*p);
            for r in region {
                if p.contains(r) {
                    total += lp.powf(self.t - 2.0) * lattice.side(*r).powi(2);
                } else if r.contains(p) {
                    total += lp.powf(self.t);
                }
            }
        }
        Ok(total)
    }

    /// ω(Q) for a single dyadic square.
    pub fn measure_square(&self, q: DyadicSquare) -> f64 {
        self.measure(std::slice::from_ref(&q)).expect("single square region is disjoint")
    }
}

/// Splits a family of equal-side squares in a row along ℝ into the fewest
/// round-robin parts (by position) for which every part verifies
/// packing_alpha ≤ target; each returned part has been re-checked.
pub fn split_into_packed_subfamilies(
    family: &SquareFamily,
    target_alpha: f64,
    t: f64,
) -> Result<Vec<SquareFamily>> {
    if !(target_alpha > 0.0) {
        return Err(Error::Parameter(format!("target alpha {target_alpha} must be positive")));
    }
    check_exponent(t)?;
    let members = family.members();
    if members.len() <= 1 {
        return Ok(vec![family.clone()]);
    }
    let gen = members[0].gen;
    if members.iter().any(|m| m.gen != gen) {
        return Err(Error::Precondition("split requires equal side lengths".into()));
    }
    let mut sorted = members.to_vec();
    sorted.sort_by_key(|m| m.ix);

    for parts in 1..=members.len() {
        let mut groups: Vec<Vec<DyadicSquare>> = vec![Vec::new(); parts];
        for (idx, m) in sorted.iter().enumerate() {
            groups[idx % parts].push(*m);
        }
        let families: Vec<SquareFamily> = groups
            .into_iter()
            .filter(|g| !g.is_empty())
            .map(|g| SquareFamily::new(family.lattice(), g, t))
            .collect::<Result<_>>()?;
        let ok = families.iter().try_fold(true, |acc, f| {
            packing_alpha(f, t).map(|e| acc && (!e.admissible || e.alpha <= target_alpha))
        })?;
        if ok {
            return Ok(families);
        }
    }
    unreachable!("singleton parts always verify");
}

/// A square family viewed through a planar map: quasisquares with sampled
/// boundary diameters.
pub struct QuasisquareFamily<'a, M: PlanarMap> {
    base: &'a SquareFamily,
    map: &'a M,
    boundary_samples: usize,
}

impl<'a, M: PlanarMap> QuasisquareFamily<'a, M> {
    pub fn new(base: &'a SquareFamily, map: &'a M, boundary_samples: usize) -> Result<Self> {
        if boundary_samples < 16 {
            return Err(Error::Parameter(format!(
                "need at least 16 boundary samples, got {boundary_samples}"
            )));
        }
        Ok(Self { base, map, boundary_samples })
    }

    /// diam f(∂Q) as the max pairwise distance among sampled images.
    pub fn diameter(&self, sq: DyadicSquare) -> Result<f64> {
        let pts = self.base.lattice().boundary_samples(sq, self.boundary_samples);
        let mut images = Vec::with_capacity(pts.len());
        for p in pts {
            images.push(self.map.eval(p)?);
        }
        let mut best = 0.0f64;
        for (idx, a) in images.iter().enumerate() {
            for b in &images[idx + 1..] {
                best = best.max((a - b).norm());
            }
        }
        Ok(best)
    }

    /// Packing constant of the image family: max over dyadic ancestors R of
    /// Σ_{Q ⊆ R} diam f(Q)^t / diam f(R)^t.
    pub fn packing_alpha(&self, t: f64) -> Result<PackingEstimate> {
        check_exponent(t)?;
        let members = self.base.members();
        if members.len() < 2 {
            return Ok(PackingEstimate { alpha: 0.0, admissible: false, witness: None });
        }
        let mut candidates = BTreeSet::new();
        for (idx, a) in members.iter().enumerate() {
            for b in &members[idx + 1..] {
                if let Some(r) = least_common_ancestor(*a, *b) {
                    candidates.insert(r);
                }
            }
        }
        if candidates.is_empty() {
            return Ok(PackingEstimate { alpha: 0.0, admissible: false, witness: None });
        }
        let mut diameters = Vec::with_capacity(members.len());
        for q in members {
            diameters.push(self.diameter(*q)?);
        }
        let mut best = f64::NEG_INFINITY;
        let mut witness = None;
        for r in candidates {
            let mut sum = 0.0;
            for (q, d) in members.iter().zip(&diameters) {
                if r.contains(q) {
                    sum += d.powf(t);
                }
            }
            let ratio = sum / self.diameter(r)?.powf(t);
            if ratio > best {
                best = ratio;
                witness = Some(r);
            }
        }
        Ok(PackingEstimate { alpha: best, admissible: true, witness })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use crate::AnalyticMap;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parents_contain_children_and_sides_halve() {
        let lat = DyadicLattice::unit();
        let sq = DyadicSquare::new(3, 5, -2);
        let p = sq.parent();
        assert!(p.contains(&sq));
        assert!(!sq.contains(&p));
        assert_eq!(lat.side(p), 2.0 * lat.side(sq));
        for c in sq.children() {
            assert!(sq.contains(&c));
            assert_eq!(c.parent(), sq);
        }
    }

    #[test]
    fn lca_of_siblings_is_parent_and_axis_split_has_none() {
        let a = DyadicSquare::new(4, 6, 10);
        let b = DyadicSquare::new(4, 7, 11);
        assert_eq!(least_common_ancestor(a, b), Some(DyadicSquare::new(3, 3, 5)));
        let left = DyadicSquare::new(2, -1, 0);
        let right = DyadicSquare::new(2, 0, 0);
        assert_eq!(least_common_ancestor(left, right), None);
        let far = DyadicSquare::new(5, 900, 3);
        assert_eq!(least_common_ancestor(far, far), Some(far));
    }

    fn family(members: Vec<DyadicSquare>, t: f64) -> SquareFamily {
        SquareFamily::new(DyadicLattice::unit(), members, t).unwrap()
    }

    #[test]
    fn two_quarter_squares_pack_to_one_half() {
        let fam = family(
            vec![DyadicSquare::new(2, 0, 0), DyadicSquare::new(2, 2, 0)],
            1.0,
        );
        let est = packing_alpha(&fam, 1.0).unwrap();
        assert!(est.admissible);
        assert_eq!(est.alpha, 0.5);
        assert_eq!(est.witness, Some(DyadicSquare::new(0, 0, 0)));
    }

    #[test]
    fn four_children_pack_to_one_at_t_two() {
        let fam = family(DyadicSquare::new(3, 4, 2).children().to_vec(), 2.0);
        let est = packing_alpha(&fam, 2.0).unwrap();
        assert!(est.admissible);
        assert!((est.alpha - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn single_member_has_no_admissible_ancestor() {
        let fam = family(vec![DyadicSquare::new(1, 0, 0)], 1.0);
        let est = packing_alpha(&fam, 1.0).unwrap();
        assert!(!est.admissible);
        assert_eq!(est.alpha, 0.0);
    }

    #[test]
    fn tau_examples_match_hand_geometry() {
        let single = family(vec![DyadicSquare::new(2, 1, 1)], 1.0);
        assert_eq!(smoothness_tau(&single).unwrap(), 1.0);

        let adjacent = family(
            vec![DyadicSquare::new(0, 0, 0), DyadicSquare::new(0, 1, 0)],
            1.0,
        );
        assert_eq!(smoothness_tau(&adjacent).unwrap(), 2.0);

        let far = family(
            vec![DyadicSquare::new(0, 0, 0), DyadicSquare::new(0, 10, 0)],
            1.0,
        );
        assert_eq!(smoothness_tau(&far).unwrap(), 1.0);
    }

    /// Random disjoint family built by repeated child subdivision.
    fn random_family(rng: &mut ChaCha8Rng, max_members: usize) -> SquareFamily {
        let mut members = vec![DyadicSquare::new(
            1,
            rng.gen_range(-2..2),
            rng.gen_range(-2..2),
        )];
        while members.len() < max_members {
            let idx = rng.gen_range(0..members.len());
            let sq = members.swap_remove(idx);
            let children = sq.children();
            let keep = rng.gen_range(1..=4usize);
            for c in children.into_iter().take(keep) {
                members.push(c);
            }
            if rng.gen_bool(0.1) {
                break;
            }
        }
        members.sort();
        members.dedup();
        SquareFamily::new(DyadicLattice::unit(), members, 1.0).unwrap()
    }

    /// Brute-force packing constant: every ancestor of every member is a
    /// candidate (any square containing two members is such an ancestor).
    fn oracle_alpha(fam: &SquareFamily, t: f64) -> PackingEstimate {
        let members = fam.members();
        if members.len() < 2 {
            return PackingEstimate { alpha: 0.0, admissible: false, witness: None };
        }
        let mut candidates = BTreeSet::new();
        for m in members {
            let mut cur = *m;
            for _ in 0..80 {
                cur = cur.parent();
                candidates.insert(cur);
            }
        }
        let lattice = fam.lattice();
        let mut best = f64::NEG_INFINITY;
        let mut witness = None;
        let mut admissible = false;
        for r in candidates {
            let inside: Vec<_> = members.iter().filter(|q| r.contains(q)).collect();
            if inside.len() < 2 {
                continue;
            }
            admissible = true;
            let sum: f64 = members
                .iter()
                .filter(|q| r.contains(q))
                .map(|q| lattice.side(*q).powf(t))
                .sum();
            let ratio = sum / lattice.side(r).powf(t);
            if ratio > best {
                best = ratio;
                witness = Some(r);
            }
        }
        if admissible {
            PackingEstimate { alpha: best, admissible, witness }
        } else {
            PackingEstimate { alpha: 0.0, admissible: false, witness: None }
        }
    }

    /// Sweep-line overlap bound: for each vertical slab between consecutive
    /// x-bounds, the max 1-D stabbing count of the active y-intervals.
    fn oracle_tau(fam: &SquareFamily) -> f64 {
        let members = fam.members();
        let gmax = members.iter().map(|m| m.gen).max().unwrap();
        let boxes: Vec<_> = members.iter().map(|m| doubled_bounds(*m, gmax)).collect();

        let mut ratio = 1.0f64;
        for (i, a) in boxes.iter().enumerate() {
            for (j, b) in boxes.iter().enumerate() {
                if i == j {
                    continue;
                }
                if a.0 <= b.1 && b.0 <= a.1 && a.2 <= b.3 && b.2 <= a.3 {
                    ratio = ratio.max(((members[i].gen - members[j].gen).abs() as f64).exp2());
                }
            }
        }

        let mut events: Vec<i128> = boxes.iter().flat_map(|b| [b.0, b.1]).collect();
        events.sort_unstable();
        events.dedup();
        let mut overlap = 0usize;
        for w in events.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let active: Vec<_> = boxes
                .iter()
                .filter(|b| b.0 <= w[0] && w[1] <= b.1)
                .map(|b| (b.2, b.3))
                .collect();
            // 1-D stabbing: sort unique y bounds, count intervals covering
            // each open gap.
            let mut ys: Vec<i128> = active.iter().flat_map(|b| [b.0, b.1]).collect();
            ys.sort_unstable();
            ys.dedup();
            for wy in ys.windows(2) {
                let count =
                    active.iter().filter(|b| b.0 <= wy[0] && wy[1] <= b.1).count();
                overlap = overlap.max(count);
            }
        }
        ratio.max(overlap as f64)
    }

    #[test]
    fn packing_alpha_matches_brute_force_on_random_families() {
        let mut rng = seeded_rng(2024);
        for _ in 0..100 {
            let fam = random_family(&mut rng, 50);
            for t in [0.5, 1.0, 1.7, 2.0] {
                let fast = packing_alpha(&fam, t).unwrap();
                let slow = oracle_alpha(&fam, t);
                assert_eq!(fast.admissible, slow.admissible);
                assert_eq!(fast.alpha, slow.alpha, "family {:?} t={t}", fam.members());
            }
        }
    }

    #[test]
    fn smoothness_tau_matches_sweep_oracle_on_random_families() {
        let mut rng = seeded_rng(77);
        for _ in 0..100 {
            let fam = random_family(&mut rng, 40);
            assert_eq!(smoothness_tau(&fam).unwrap(), oracle_tau(&fam));
        }
    }

    #[test]
    fn weight_mass_and_measures_are_exact() {
        let p = DyadicSquare::new(2, 1, 1);
        let q = DyadicSquare::new(3, 6, 0);
        let fam = family(vec![p, q], 1.0);
        let t = 1.0;
        let w = PackingWeight::new(fam, t).unwrap();
        let expect = 0.25f64.powf(t) + 0.125f64.powf(t);
        assert!((w.total_mass() - expect).abs() <= 1e-15);

        // Region covering everything, nothing, and half of one member.
        assert!((w.measure(&[DyadicSquare::new(0, 0, 0)]).unwrap() - expect).abs() <= 1e-15);
        assert_eq!(w.measure(&[DyadicSquare::new(0, 5, 5)]).unwrap(), 0.0);
        let half: Vec<DyadicSquare> = p.children()[0..2].to_vec();
        let half_mass = w.measure(&half).unwrap();
        assert!((half_mass - 0.5 * 0.25f64.powf(t)).abs() <= 1e-15);

        assert!(w.measure(&[p, p.children()[0]]).is_err());
    }

    #[test]
    fn weight_of_any_square_is_bounded_by_packing() {
        let mut rng = seeded_rng(5150);
        for _ in 0..20 {
            let fam = random_family(&mut rng, 30);
            for t in [0.7, 1.0, 2.0] {
                let est = packing_alpha(&fam, t).unwrap();
                let bound = est.alpha.max(1.0);
                let w = PackingWeight::new(fam.clone(), t).unwrap();
                let lattice = fam.lattice();
                for _ in 0..1000 {
                    let gen = rng.gen_range(-3..8);
                    let scale = 1i64 << rng.gen_range(0..6).min(62);
                    let q = DyadicSquare::new(
                        gen,
                        rng.gen_range(-4 * scale..4 * scale),
                        rng.gen_range(-4 * scale..4 * scale),
                    );
                    let mass = w.measure_square(q);
                    let cap = bound * lattice.side(q).powf(t);
                    assert!(
                        mass <= cap * (1.0 + 1e-12),
                        "ω(Q) = {mass} exceeds {cap} at {q:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn alpha_is_scale_invariant_and_monotone_under_removal() {
        let mut rng = seeded_rng(31415);
        for _ in 0..30 {
            let fam = random_family(&mut rng, 24);
            if fam.len() < 3 {
                continue;
            }
            let t = 1.3;
            let base = packing_alpha(&fam, t).unwrap();

            let shifted: Vec<DyadicSquare> = fam
                .members()
                .iter()
                .map(|m| DyadicSquare::new(m.gen + 3, m.ix, m.iy))
                .collect();
            let scaled = SquareFamily::new(fam.lattice(), shifted, t).unwrap();
            let est = packing_alpha(&scaled, t).unwrap();
            assert!((est.alpha - base.alpha).abs() <= 1e-12 * base.alpha.max(1.0));

            let mut smaller = fam.members().to_vec();
            smaller.remove(rng.gen_range(0..smaller.len()));
            let sub = SquareFamily::new(fam.lattice(), smaller, t).unwrap();
            let less = packing_alpha(&sub, t).unwrap();
            assert!(less.alpha <= base.alpha + 1e-15);
        }
    }

    #[test]
    fn tau_is_invariant_under_dyadic_translation_and_rescale() {
        let mut rng = seeded_rng(999);
        for _ in 0..30 {
            let fam = random_family(&mut rng, 20);
            let tau = smoothness_tau(&fam).unwrap();

            let gmin = fam.members().iter().map(|m| m.gen).min().unwrap();
            let (dx, dy) = (rng.gen_range(-3..3i64), rng.gen_range(-3..3i64));
            let moved: Vec<DyadicSquare> = fam
                .members()
                .iter()
                .map(|m| {
                    let f = 1i64 << (m.gen - gmin) as u32;
                    DyadicSquare::new(m.gen, m.ix + dx * f, m.iy + dy * f)
                })
                .collect();
            let moved = SquareFamily::new(fam.lattice(), moved, 1.0).unwrap();
            assert_eq!(smoothness_tau(&moved).unwrap(), tau);

            let scaled: Vec<DyadicSquare> = fam
                .members()
                .iter()
                .map(|m| DyadicSquare::new(m.gen + 2, m.ix, m.iy))
                .collect();
            let scaled = SquareFamily::new(fam.lattice(), scaled, 1.0).unwrap();
            assert_eq!(smoothness_tau(&scaled).unwrap(), tau);
        }
    }

    #[test]
    fn split_produces_verified_parts() {
        // A row of 16 equally spaced squares straddling ℝ.
        let lat = DyadicLattice::new(1.0, (0.0, -0.125)).unwrap();
        let members: Vec<DyadicSquare> =
            (0..16).map(|i| DyadicSquare::new(2, 4 * i, 0)).collect();
        let fam = SquareFamily::new(lat, members, 1.0).unwrap();
        let parts = split_into_packed_subfamilies(&fam, 0.5, 1.0).unwrap();
        assert!(!parts.is_empty());
        let total: usize = parts.iter().map(|p| p.len()).sum();
        assert_eq!(total, 16);
        for part in &parts {
            let est = packing_alpha(part, 1.0).unwrap();
            assert!(!est.admissible || est.alpha <= 0.5);
        }

        let single = SquareFamily::new(lat, vec![DyadicSquare::new(2, 0, 0)], 1.0).unwrap();
        let parts = split_into_packed_subfamilies(&single, 0.25, 1.0).unwrap();
        assert_eq!(parts.len(), 1);

        assert!(split_into_packed_subfamilies(&fam, 0.0, 1.0).is_err());
    }

    #[test]
    fn quasisquares_under_identity_reduce_to_plain_packing() {
        let fam = family(
            vec![
                DyadicSquare::new(3, 1, 1),
                DyadicSquare::new(3, 4, 2),
                DyadicSquare::new(2, 3, 0),
            ],
            1.0,
        );
        let id = crate::identity_map();
        let quasi = QuasisquareFamily::new(&fam, &id, 64).unwrap();
        for t in [0.8, 1.0, 1.6] {
            let plain = packing_alpha(&fam, t).unwrap();
            let imaged = quasi.packing_alpha(t).unwrap();
            assert!(imaged.admissible);
            assert!(
                (imaged.alpha - plain.alpha).abs() <= 1e-12 * plain.alpha,
                "t={t}: {} vs {}",
                imaged.alpha,
                plain.alpha
            );
        }
        assert!(QuasisquareFamily::new(&fam, &id, 8).is_err());
    }

    #[test]
    fn sampled_quasisquare_diameters_track_dense_sampling() {
        // Closed-form radial stretch keeps this test free of solver error.
        let stretch =
            AnalyticMap::new(|z: Complex64| crate::solver::radial_power_value(z, 1.0));
        let lat = DyadicLattice::new(1.0, (-0.5, -0.5)).unwrap();
        let members = vec![DyadicSquare::new(2, 0, 0), DyadicSquare::new(2, 3, 2)];
        let fam = SquareFamily::new(lat, members, 1.0).unwrap();
        let coarse = QuasisquareFamily::new(&fam, &stretch, 64).unwrap();
        let dense = QuasisquareFamily::new(&fam, &stretch, 256).unwrap();
        let a = coarse.packing_alpha(1.0).unwrap();
        let b = dense.packing_alpha(1.0).unwrap();
        assert!(a.admissible && b.admissible);
        assert!((a.alpha - b.alpha).abs() <= 0.1 * b.alpha, "{} vs {}", a.alpha, b.alpha);
    }

    #[test]
    fn family_text_round_trip() {
        let fam = family(
            vec![DyadicSquare::new(2, 0, 0), DyadicSquare::new(3, 6, 2)],
            1.5,
        );
        let text = fam.to_text();
        let back = SquareFamily::from_text(&text).unwrap();
        assert_eq!(back.members(), fam.members());
        assert_eq!(back.lattice(), fam.lattice());
        assert_eq!(back.exponent_t(), fam.exponent_t());
        assert!(SquareFamily::from_text("nonsense 1 2").is_err());
    }

    #[test]
    fn families_reject_nested_members_and_bad_exponents() {
        let p = DyadicSquare::new(2, 1, 1);
        assert!(SquareFamily::new(DyadicLattice::unit(), vec![p, p.children()[1]], 1.0).is_err());
        assert!(SquareFamily::new(DyadicLattice::unit(), vec![p], 0.0).is_err());
        assert!(SquareFamily::new(DyadicLattice::unit(), vec![p], 2.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn squares_are_nested_or_disjoint(
            g1 in 0i32..8, x1 in -64i64..64, y1 in -64i64..64,
            g2 in 0i32..8, x2 in -64i64..64, y2 in -64i64..64,
        ) {
            let a = DyadicSquare::new(g1, x1, y1);
            let b = DyadicSquare::new(g2, x2, y2);
            let nested = a.contains(&b) || b.contains(&a);
            // Geometric overlap test at the finer generation.
            let g = g1.max(g2);
            let lift = |s: DyadicSquare| {
                let sh = (g - s.gen) as u32;
                (s.ix << sh, (s.ix + 1) << sh, s.iy << sh, (s.iy + 1) << sh)
            };
            let (ax0, ax1, ay0, ay1) = lift(a);
            let (bx0, bx1, by0, by1) = lift(b);
            let overlap = ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1;
            prop_assert_eq!(overlap, nested);
        }

        #[test]
        fn lca_contains_both_and_is_minimal(
            g1 in 0i32..8, x1 in 0i64..256, y1 in 0i64..256,
            g2 in 0i32..8, x2 in 0i64..256, y2 in 0i64..256,
        ) {
            let a = DyadicSquare::new(g1, x1, y1);
            let b = DyadicSquare::new(g2, x2, y2);
            let r = least_common_ancestor(a, b).expect("same quadrant");
            prop_assert!(r.contains(&a) && r.contains(&b));
            if r.gen < a.gen.min(b.gen) {
                // No child of r contains both.
                for c in r.children() {
                    prop_assert!(!(c.contains(&a) && c.contains(&b)));
                }
            }
        }
    }
}
