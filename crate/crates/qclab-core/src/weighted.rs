//! Weighted L² norms against packing measures and empirical operator-norm
//! estimation for the Beurling transform, together with the maximal and
//! majorant diagnostics used to study locality of the transform on packed
//! square families.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dyadic::{
    packing_alpha, smoothness_tau, DyadicLattice, DyadicSquare, PackingWeight, SquareFamily,
};
use crate::error::{Error, Result};
use crate::field::{ComplexField, FourierMultiplier, GridSpec, SpectralEngine};
use crate::rng::trial_rng;
use rand::Rng;

/// Half-open sample-index box of a dyadic square on a grid, clamped to the
/// grid. Errors when the square is not fully inside the grid.
pub(crate) fn sample_box(
    grid: GridSpec,
    lattice: DyadicLattice,
    sq: DyadicSquare,
) -> Result<(usize, usize, usize, usize)> {
    let c = lattice.corner(sq);
    let s = lattice.side(sq);
    let l = grid.half_extent();
    if c.re < -l || c.im < -l || c.re + s > l || c.im + s > l {
        return Err(Error::Precondition(format!(
            "square {sq:?} extends outside the grid [-{l}, {l})"
        )));
    }
    let h = grid.spacing();
    let start = |u: f64| ((u + l) / h - 1e-9).ceil().max(0.0) as usize;
    let stop = |u: f64| (((u + l) / h - 1e-9).ceil() as usize).min(grid.n());
    Ok((start(c.re), stop(c.re + s), start(c.im), stop(c.im + s)))
}

fn resolution_check(grid: GridSpec, family: &SquareFamily) -> Result<()> {
    let lattice = family.lattice();
    let finest = family
        .members()
        .iter()
        .map(|m| lattice.side(*m))
        .fold(f64::INFINITY, f64::min);
    if !(finest / grid.spacing() >= 8.0 - 1e-9) {
        return Err(Error::Resolution(format!(
            "finest square side {finest} has fewer than 8 samples at spacing {}",
            grid.spacing()
        )));
    }
    Ok(())
}

/// ‖f‖_{L²(ω)} = (h² Σ |f|² ω)^{1/2}, summed samplewise over the members.
pub fn weighted_norm(f: &ComplexField, w: &PackingWeight) -> Result<f64> {
    let grid = f.grid();
    resolution_check(grid, w.family())?;
    let lattice = w.family().lattice();
    let t = w.exponent();
    let n = grid.n();
    let mut total = 0.0;
    for p in w.family().members() {
        let (i0, i1, j0, j1) = sample_box(grid, lattice, *p)?;
        let density = lattice.side(*p).powf(t - 2.0);
        let mut box_sum = 0.0;
        for j in j0..j1 {
            let row = &f.data()[j * n..];
            for i in i0..i1 {
                box_sum += row[i].norm_sqr();
            }
        }
        total += box_sum * density;
    }
    Ok((total * grid.spacing().powi(2)).sqrt())
}

/// h² Σ_{z ∈ Q} |f(z)| for one dyadic square.
fn abs_integral_over(f: &ComplexField, lattice: DyadicLattice, sq: DyadicSquare) -> Result<f64> {
    let grid = f.grid();
    let (i0, i1, j0, j1) = sample_box(grid, lattice, sq)?;
    let n = grid.n();
    let mut sum = 0.0;
    for j in j0..j1 {
        let row = &f.data()[j * n..];
        for i in i0..i1 {
            sum += row[i].norm();
        }
    }
    Ok(sum * grid.spacing().powi(2))
}

/// sup over dyadic squares Q ∋ x, from the lattice root down to two
/// generations below the finest member (but never below twice the grid
/// spacing), of ℓ(Q)^{−t} ∫_Q |f| ω dm.
pub fn maximal_operator(f: &ComplexField, w: &PackingWeight, x: Complex64) -> Result<f64> {
    let grid = f.grid();
    let family = w.family();
    resolution_check(grid, family)?;
    let lattice = family.lattice();
    let t = w.exponent();
    let gmax = family.members().iter().map(|m| m.gen).max().unwrap_or(0);
    let mut best = 0.0f64;
    for gen in 0..=(gmax + 2) {
        let q = lattice.square_at(gen, x);
        let lq = lattice.side(q);
        if lq < 2.0 * grid.spacing() {
            break;
        }
        let mut mass = 0.0;
        for p in family.members() {
            let lp = lattice.side(*p);
            if q.contains(p) {
                mass += lp.powf(t - 2.0) * abs_integral_over(f, lattice, *p)?;
            } else if p.contains(&q) {
                mass += lp.powf(t - 2.0) * abs_integral_over(f, lattice, q)?;
            }
        }
        best = best.max(mass / lq.powf(t));
    }
    Ok(best)
}

/// Euclidean distance between two closed dyadic squares, exact in the
/// lattice coordinates.
pub fn square_distance(lattice: DyadicLattice, a: DyadicSquare, b: DyadicSquare) -> f64 {
    let ca = lattice.corner(a);
    let cb = lattice.corner(b);
    let (sa, sb) = (lattice.side(a), lattice.side(b));
    let gap = |lo1: f64, len1: f64, lo2: f64, len2: f64| -> f64 {
        (lo2 - (lo1 + len1)).max(lo1 - (lo2 + len2)).max(0.0)
    };
    let dx = gap(ca.re, sa, cb.re, sb);
    let dy = gap(ca.im, sa, cb.im, sb);
    dx.hypot(dy)
}

/// T f at the square P: Σ_{Q ≠ P} D(P,Q)^{−2} ∫_Q |f| dm with
/// D(P,Q) = dist(P,Q) + ℓ(P) + ℓ(Q).
pub fn nonlocal_majorant(
    f: &ComplexField,
    family: &SquareFamily,
    p: DyadicSquare,
) -> Result<f64> {
    if !family.members().contains(&p) {
        return Err(Error::Precondition(format!("{p:?} is not a member of the family")));
    }
    let lattice = family.lattice();
    let lp = lattice.side(p);
    let mut total = 0.0;
    for q in family.members() {
        if *q == p {
            continue;
        }
        let d = square_distance(lattice, p, *q) + lp + lattice.side(*q);
        total += abs_integral_over(f, lattice, *q)? / (d * d);
    }
    Ok(total)
}

/// Per-family operator-norm experiment record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedNormReport {
    pub family_text: String,
    pub t: f64,
    pub tau: f64,
    pub alpha: f64,
    pub refinement_level: i32,
    pub grid_n: usize,
    pub seed: u64,
    pub trial_count: usize,
    pub ratios: Vec<f64>,
    pub estimate: f64,
}

/// Smallest power-of-two grid that leaves the family in the central half of
/// the cell and resolves the finest member with at least 16 samples per side.
pub fn experiment_grid(family: &SquareFamily) -> Result<GridSpec> {
    if family.is_empty() {
        return Err(Error::Parameter("cannot grid an empty family".into()));
    }
    let lattice = family.lattice();
    let mut extent = 0.0f64;
    let mut finest = f64::INFINITY;
    for m in family.members() {
        let c = lattice.corner(*m);
        let s = lattice.side(*m);
        extent = extent
            .max(c.re.abs())
            .max(c.im.abs())
            .max((c.re + s).abs())
            .max((c.im + s).abs());
        finest = finest.min(s);
    }
    let mut half = 1.0f64;
    while half < 2.0 * extent {
        half *= 2.0;
    }
    let mut n = 256usize;
    while (2.0 * half / n as f64) > finest / 16.0 {
        n *= 2;
        if n > 4096 {
            return Err(Error::Resolution(format!(
                "family needs more than 4096 grid points per side (finest {finest}, extent {extent})"
            )));
        }
    }
    GridSpec::new(n, half)
}

/// Fills the members' sample boxes with the given per-square coefficients.
fn field_from_coefficients(
    grid: GridSpec,
    family: &SquareFamily,
    coeffs: &[Complex64],
) -> Result<ComplexField> {
    let lattice = family.lattice();
    let n = grid.n();
    let mut field = ComplexField::zeros(grid);
    for (m, c) in family.members().iter().zip(coeffs) {
        let (i0, i1, j0, j1) = sample_box(grid, lattice, *m)?;
        for j in j0..j1 {
            let row = &mut field.data_mut()[j * n..(j + 1) * n];
            for cell in &mut row[i0..i1] {
                *cell = *c;
            }
        }
    }
    Ok(field)
}

/// Estimates ‖𝒮‖_{L²(ω)→L²(ω)} from below by maximizing the ratio
/// ‖𝒮(f χ_{∪P})‖_{L²(ω)} / ‖f‖_{L²(ω)} over seeded random coefficient
/// vectors plus structured adversaries (constant, alternating, spikes).
pub fn estimate_operator_norm(
    w: &PackingWeight,
    trials: usize,
    seed: u64,
) -> Result<WeightedNormReport> {
    if trials == 0 {
        return Err(Error::Parameter("operator-norm estimation needs at least one trial".into()));
    }
    let family = w.family();
    if family.is_empty() {
        return Err(Error::Parameter("operator-norm estimation needs a nonempty family".into()));
    }
    let grid = experiment_grid(family)?;
    let count = family.len();
    let t = w.exponent();

    let mut candidates: Vec<Vec<Complex64>> = Vec::new();
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial as u64);
        let coeffs = (0..count)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        candidates.push(coeffs);
    }
    candidates.push(vec![Complex64::new(1.0, 0.0); count]);
    candidates.push(
        (0..count)
            .map(|i| Complex64::new(if i % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
            .collect(),
    );
    let lattice = family.lattice();
    let mut extremes = vec![0usize, 0usize];
    for (idx, m) in family.members().iter().enumerate() {
        if lattice.side(*m) > lattice.side(family.members()[extremes[0]]) {
            extremes[0] = idx;
        }
        if lattice.side(*m) < lattice.side(family.members()[extremes[1]]) {
            extremes[1] = idx;
        }
    }
    extremes.dedup();
    for idx in extremes {
        let mut spike = vec![Complex64::new(0.0, 0.0); count];
        spike[idx] = Complex64::new(1.0, 0.0);
        candidates.push(spike);
    }

    let mut engine = SpectralEngine::new(grid.n());
    let beurling = FourierMultiplier::beurling();
    let mut ratios = Vec::with_capacity(candidates.len());
    for coeffs in &candidates {
        let f = field_from_coefficients(grid, family, coeffs)?;
        let denom = weighted_norm(&f, w)?;
        if denom == 0.0 {
            ratios.push(0.0);
            continue;
        }
        let transformed = beurling.apply_with_engine(&f, &mut engine);
        ratios.push(weighted_norm(&transformed, w)? / denom);
    }
    let estimate = ratios.iter().cloned().fold(0.0, f64::max);
    let level = family.members().iter().map(|m| m.gen).max().unwrap();

    Ok(WeightedNormReport {
        family_text: family.to_text(),
        t,
        tau: smoothness_tau(family)?,
        alpha: packing_alpha(family, t)?.alpha,
        refinement_level: level,
        grid_n: grid.n(),
        seed,
        trial_count: ratios.len(),
        ratios,
        estimate,
    })
}

/// The refinement family for boundedness trends: 2^level squares of side
/// 2^{−level} along the diagonal of the unit cell centered at the origin.
/// Every dyadic ancestor sees Σ ℓ(Q)^1 / ℓ(R)^1 = 1, so (t, τ, α) = (1, 2, 1)
/// at every level.
pub fn diagonal_line_family(level: u32) -> Result<SquareFamily> {
    if level == 0 || level > 12 {
        return Err(Error::Parameter(format!("diagonal refinement level {level} outside 1..=12")));
    }
    let lattice = DyadicLattice::new(1.0, (-0.5, -0.5))?;
    let members = (0..(1i64 << level))
        .map(|i| DyadicSquare::new(level as i32, i, i))
        .collect();
    SquareFamily::new(lattice, members, 1.0)
}

/// Measures the pointwise locality constant: the smallest C with
/// |𝒮(fχ_{∪P})(x)| ≤ |𝒮(fχ_{2P∩∪P})(x)| + C·T|f|(x) over the given trials,
/// sampling x on a cross of grid points inside each member.
pub fn locality_fit(family: &SquareFamily, trials: usize, seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Parameter("locality fit needs at least one trial".into()));
    }
    let grid = experiment_grid(family)?;
    let lattice = family.lattice();
    let n = grid.n();
    let mut engine = SpectralEngine::new(n);
    let beurling = FourierMultiplier::beurling();
    let mut worst = 0.0f64;

    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial as u64);
        let coeffs: Vec<Complex64> = (0..family.len())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let f = field_from_coefficients(grid, family, &coeffs)?;
        let full = beurling.apply_with_engine(&f, &mut engine);

        for p in family.members() {
            let majorant = nonlocal_majorant(&f, family, *p)?;
            if majorant <= 0.0 {
                continue;
            }
            // f restricted to the doubled square around P.
            let sp = lattice.side(*p);
            let cp = lattice.center(*p);
            let mut local_input = f.clone();
            for j in 0..n {
                for i in 0..n {
                    let z = grid.point(i, j);
                    if (z.re - cp.re).abs() > sp || (z.im - cp.im).abs() > sp {
                        local_input.set(i, j, Complex64::new(0.0, 0.0));
                    }
                }
            }
            let local = beurling.apply_with_engine(&local_input, &mut engine);

            let (i0, i1, j0, j1) = sample_box(grid, lattice, *p)?;
            let (im, jm) = ((i0 + i1) / 2, (j0 + j1) / 2);
            let probes = [
                (im, jm),
                (i0 + (i1 - i0) / 4, jm),
                (i1 - 1 - (i1 - i0) / 4, jm),
                (im, j0 + (j1 - j0) / 4),
                (im, j1 - 1 - (j1 - j0) / 4),
            ];
            for (i, j) in probes {
                let excess = full.get(i, j).norm() - local.get(i, j).norm();
                if excess > 0.0 {
                    worst = worst.max(excess / majorant);
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn aligned_family(members: Vec<DyadicSquare>, t: f64) -> SquareFamily {
        let lattice = DyadicLattice::new(1.0, (-0.5, -0.5)).unwrap();
        SquareFamily::new(lattice, members, t).unwrap()
    }

    #[test]
    fn weighted_norm_matches_closed_forms() {
        let t = 1.3;
        let members = vec![DyadicSquare::new(2, 0, 0), DyadicSquare::new(3, 6, 2)];
        let fam = aligned_family(members.clone(), t);
        let w = PackingWeight::new(fam.clone(), t).unwrap();
        let grid = GridSpec::new(512, 1.0).unwrap();
        let lattice = fam.lattice();

        let zero = ComplexField::zeros(grid);
        assert_eq!(weighted_norm(&zero, &w).unwrap(), 0.0);

        let indicator = |sq: DyadicSquare| {
            ComplexField::from_fn(grid, |z| {
                if lattice.contains_point(sq, z) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
        };
        for (sq, side) in [(members[0], 0.25f64), (members[1], 0.125f64)] {
            let got = weighted_norm(&indicator(sq), &w).unwrap();
            let expect = side.powf(t / 2.0);
            assert!(
                (got - expect).abs() <= 1e-12 * expect,
                "χ_P norm {got} vs {expect}"
            );
        }

        let c = [Complex64::new(0.4, -1.1), Complex64::new(-2.0, 0.3)];
        let combo = field_from_coefficients(grid, &fam, &c).unwrap();
        let expect = (c[0].norm_sqr() * 0.25f64.powf(t) + c[1].norm_sqr() * 0.125f64.powf(t)).sqrt();
        let got = weighted_norm(&combo, &w).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn weighted_norm_rejects_under_resolved_grids() {
        let fam = aligned_family(vec![DyadicSquare::new(6, 0, 0)], 1.0);
        let w = PackingWeight::new(fam, 1.0).unwrap();
        let coarse = GridSpec::new(256, 1.0).unwrap();
        let f = ComplexField::zeros(coarse);
        match weighted_norm(&f, &w) {
            Err(Error::Resolution(_)) => {}
            other => panic!("expected resolution error, got {other:?}"),
        }
    }

    #[test]
    fn single_square_ratio_stays_near_the_unweighted_norm() {
        let fam = aligned_family(vec![DyadicSquare::new(2, 1, 1)], 1.0);
        let w = PackingWeight::new(fam, 1.0).unwrap();
        let report = estimate_operator_norm(&w, 4, 11).unwrap();
        assert!(report.ratios.iter().all(|r| *r >= 0.0));
        assert_eq!(report.estimate, report.ratios.iter().cloned().fold(0.0, f64::max));
        assert!(report.estimate <= 1.05, "estimate {}", report.estimate);
        // Inside a single square the transform of a constant is small (it
        // vanishes identically inside a disk), so the restricted ratio sits
        // well below 1.
        assert!(report.estimate >= 0.1, "estimate {} suspiciously small", report.estimate);
    }

    #[test]
    fn operator_norm_report_is_deterministic_and_serializable() {
        let fam = diagonal_line_family(3).unwrap();
        let w = PackingWeight::new(fam, 1.0).unwrap();
        let a = estimate_operator_norm(&w, 3, 42).unwrap();
        let b = estimate_operator_norm(&w, 3, 42).unwrap();
        assert_eq!(a.ratios, b.ratios);
        assert_eq!(a.estimate, b.estimate);
        let json = serde_json::to_string(&a).unwrap();
        let back: WeightedNormReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.ratios, a.ratios);

        assert!(estimate_operator_norm(&w, 0, 1).is_err());
    }

    #[test]
    fn norm_trend_is_stable_across_refinement_levels() {
        let mut estimates = Vec::new();
        for level in 3..=6 {
            let fam = diagonal_line_family(level).unwrap();
            assert_eq!(smoothness_tau(&fam).unwrap(), 2.0);
            let alpha = packing_alpha(&fam, 1.0).unwrap().alpha;
            assert!((alpha - 1.0).abs() <= 1e-12);
            let w = PackingWeight::new(fam, 1.0).unwrap();
            let report = estimate_operator_norm(&w, 6, 7).unwrap();
            estimates.push(report.estimate);
        }
        let max = estimates.iter().cloned().fold(f64::MIN, f64::max);
        let min = estimates.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max / min < 2.0,
            "operator-norm estimates {estimates:?} vary by more than a factor 2"
        );
    }

    #[test]
    fn maximal_operator_examples() {
        let p = DyadicSquare::new(2, 1, 1);
        let fam = aligned_family(vec![p], 1.0);
        let lattice = fam.lattice();
        let w = PackingWeight::new(fam, 1.0).unwrap();
        let grid = GridSpec::new(512, 1.0).unwrap();

        let one = ComplexField::from_fn(grid, |_| Complex64::new(1.0, 0.0));
        let x = lattice.center(p);
        let got = maximal_operator(&one, &w, x).unwrap();
        assert!((got - 1.0).abs() <= 1e-12, "sup should be 1 at the member, got {got}");

        let zero = ComplexField::zeros(grid);
        assert_eq!(maximal_operator(&zero, &w, x).unwrap(), 0.0);

        let double = ComplexField::from_fn(grid, |_| Complex64::new(2.0, 0.0));
        let twice = maximal_operator(&double, &w, x).unwrap();
        assert!((twice - 2.0 * got).abs() <= 1e-12);
    }

    #[test]
    fn maximal_operator_dominates_the_member_average() {
        let members = vec![DyadicSquare::new(3, 1, 1), DyadicSquare::new(2, 2, 2)];
        let fam = aligned_family(members.clone(), 1.4);
        let lattice = fam.lattice();
        let w = PackingWeight::new(fam, 1.4).unwrap();
        let grid = GridSpec::new(512, 1.0).unwrap();
        let f = ComplexField::from_fn(grid, |z| Complex64::new(z.re + 1.5, z.im * z.re));
        for p in &members {
            let x = lattice.center(*p);
            let sup = maximal_operator(&f, &w, x).unwrap();
            let candidate = abs_integral_over(&f, lattice, *p).unwrap()
                * lattice.side(*p).powf(1.4 - 2.0)
                / lattice.side(*p).powf(1.4);
            assert!(sup >= candidate - 1e-12, "sup {sup} below candidate {candidate}");
        }
    }

    #[test]
    fn nonlocal_majorant_matches_hand_geometry() {
        // Two side-1/4 squares separated by 2 side lengths horizontally:
        // dist = 1/2, D = 1/2 + 1/4 + 1/4 = 1, value = ∫|f| / 1.
        let p = DyadicSquare::new(2, 0, 0);
        let q = DyadicSquare::new(2, 3, 0);
        let fam = aligned_family(vec![p, q], 1.0);
        let grid = GridSpec::new(512, 1.0).unwrap();
        let lattice = fam.lattice();
        let f = ComplexField::from_fn(grid, |z| {
            if lattice.contains_point(q, z) {
                Complex64::new(0.0, -3.0)
            } else {
                Complex64::new(7.0, 7.0)
            }
        });
        let got = nonlocal_majorant(&f, &fam, p).unwrap();
        let expect = 3.0 * 0.25 * 0.25;
        assert!((got - expect).abs() <= 1e-12, "{got} vs {expect}");

        let singleton = aligned_family(vec![p], 1.0);
        assert_eq!(nonlocal_majorant(&f, &singleton, p).unwrap(), 0.0);
        assert!(nonlocal_majorant(&f, &fam, DyadicSquare::new(2, 9, 9)).is_err());

        let zero = ComplexField::zeros(grid);
        assert_eq!(nonlocal_majorant(&zero, &fam, p).unwrap(), 0.0);
    }

    #[test]
    fn square_distances_are_exact() {
        let lattice = DyadicLattice::unit();
        let a = DyadicSquare::new(0, 0, 0);
        assert_eq!(square_distance(lattice, a, DyadicSquare::new(0, 1, 0)), 0.0);
        assert_eq!(square_distance(lattice, a, DyadicSquare::new(0, 3, 0)), 2.0);
        let diag = square_distance(lattice, a, DyadicSquare::new(0, 2, 2));
        assert_eq!(diag, 2.0f64.sqrt());
    }

    #[test]
    fn locality_constant_is_small_on_the_line_family() {
        let fam = diagonal_line_family(4).unwrap();
        let c = locality_fit(&fam, 3, 5).unwrap();
        assert!(c <= 10.0, "fitted locality constant {c} exceeds 10");
        assert!(c > 0.0, "locality fit degenerate");
        assert!(locality_fit(&fam, 0, 5).is_err());
    }

    #[test]
    fn random_families_keep_locality_constant_under_ten() {
        let mut rng = seeded_rng(44);
        for round in 0..3 {
            // Random equal-side squares on a sparse sub-lattice, kept
            // disjoint by construction.
            let mut members = Vec::new();
            for _ in 0..12 {
                let sq = DyadicSquare::new(4, rng.gen_range(0..8) * 2, rng.gen_range(0..8) * 2);
                if !members.contains(&sq) {
                    members.push(sq);
                }
            }
            let fam = aligned_family(members, 1.0);
            let c = locality_fit(&fam, 2, round).unwrap();
            assert!(c <= 10.0, "round {round}: fitted constant {c}");
        }
    }
}
