//! Distortion experiments: sharp sum bounds for derivatives on disks
//! centered on the real line, the invariant diameter-ratio form, and
//! diameter-sum stability for maps that are conformal outside a packed
//! square family.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dyadic::{packing_alpha, smoothness_tau, QuasisquareFamily, SquareFamily};
use crate::error::{Error, Result};
use crate::field::{ComplexField, GridSpec};
use crate::rng::trial_rng;
use crate::solver::{
    random_antisymmetric_coefficient, solve_principal, BeltramiCoefficient, InterpMode,
    PrincipalMapSolution,
};
use crate::weighted::sample_box;
use crate::PlanarMap;

/// Exponent bookkeeping for the interpolation relation
/// 1/t(k) − 1/2 = ((1−k²)/(1+k²))·(1/t − 1/2).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ExponentPair {
    pub t: f64,
    pub k: f64,
    pub t_of_k: f64,
}

impl ExponentPair {
    pub fn new(t: f64, k: f64) -> Result<Self> {
        Ok(Self { t, k, t_of_k: exponent_t_of_k(t, k)? })
    }
}

/// Closed form of the relation: t(k) = 2t(1+k²) / (t(1+k²) + (2−t)(1−k²)).
pub fn exponent_t_of_k(t: f64, k: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 2.0) {
        return Err(Error::Parameter(format!("exponent t = {t} outside (0, 2]")));
    }
    if !(0.0..1.0).contains(&k) {
        return Err(Error::Parameter(format!("dilatation bound k = {k} outside [0, 1)")));
    }
    let plus = 1.0 + k * k;
    let minus = 1.0 - k * k;
    Ok(2.0 * t * plus / (t * plus + (2.0 - t) * minus))
}

/// A disk B(center, radius) with its center on the real line.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiskOnLine {
    pub center: f64,
    pub radius: f64,
}

impl DiskOnLine {
    pub fn center_z(&self) -> Complex64 {
        Complex64::new(self.center, 0.0)
    }

    pub fn diameter(&self) -> f64 {
        2.0 * self.radius
    }

    pub fn contains_disk(&self, other: &DiskOnLine) -> bool {
        (self.center - other.center).abs() + other.radius < self.radius
    }
}

/// Checks positivity, pairwise disjointness, and containment in the ambient
/// disk (the unit disk when none is given).
pub fn validate_disk_layout(disks: &[DiskOnLine], ambient: Option<DiskOnLine>) -> Result<()> {
    if disks.is_empty() {
        return Err(Error::Parameter("disk layout is empty".into()));
    }
    let ambient = ambient.unwrap_or(DiskOnLine { center: 0.0, radius: 1.0 });
    for (idx, d) in disks.iter().enumerate() {
        if !(d.radius > 0.0) || !d.center.is_finite() {
            return Err(Error::Parameter(format!("disk {idx} has bad geometry {d:?}")));
        }
        if !ambient.contains_disk(d) {
            return Err(Error::Parameter(format!(
                "disk {idx} ({d:?}) leaves the ambient disk {ambient:?}"
            )));
        }
        for other in &disks[idx + 1..] {
            if (d.center - other.center).abs() <= d.radius + other.radius {
                return Err(Error::Parameter(format!(
                    "disks {d:?} and {other:?} are not disjoint"
                )));
            }
        }
    }
    Ok(())
}

/// Random disjoint disks on ℝ inside the unit disk: one per slot of
/// (−0.8, 0.8), jittered center, radius a fraction of the slot width.
pub fn random_disk_layout<R: Rng>(count: usize, rng: &mut R) -> Result<Vec<DiskOnLine>> {
    if count == 0 || count > 256 {
        return Err(Error::Parameter(format!("disk count {count} outside 1..=256")));
    }
    let w = 1.6 / count as f64;
    let disks = (0..count)
        .map(|i| {
            let u: f64 = rng.gen_range(0.35..0.65);
            let v: f64 = rng.gen_range(0.12..0.3);
            DiskOnLine { center: -0.8 + (i as f64 + u) * w, radius: v * w }
        })
        .collect();
    Ok(disks)
}

/// Deterministic refinement layout: 2^level equal disks filling (−0.8, 0.8).
pub fn refinement_disk_layout(level: u32) -> Result<Vec<DiskOnLine>> {
    if level == 0 || level > 8 {
        return Err(Error::Parameter(format!("refinement level {level} outside 1..=8")));
    }
    let count = 1usize << level;
    let w = 1.6 / count as f64;
    Ok((0..count)
        .map(|i| DiskOnLine { center: -0.8 + (i as f64 + 0.5) * w, radius: 0.25 * w })
        .collect())
}

/// One solved map for a disk layout: the principal solution together with
/// |f′| at the disk centers, reusable across report exponents.
pub struct SolvedDiskLayout {
    pub solution: PrincipalMapSolution,
    pub disks: Vec<DiskOnLine>,
    pub derivatives: Vec<f64>,
    pub k: f64,
    pub seed: u64,
}

/// Builds a random antisymmetric coefficient of modulus exactly k supported
/// in the unit disk away from every disk, solves the principal map, and
/// measures |f′| at each center from a circle inside the conformality disk.
pub fn solve_disk_layout(
    k: f64,
    disks: &[DiskOnLine],
    seed: u64,
    n: usize,
) -> Result<SolvedDiskLayout> {
    validate_disk_layout(disks, None)?;
    let grid = GridSpec::new(n, 2.0)?;
    let cell = 0.125;
    let clearance = move |c: Complex64, s: f64, d: &DiskOnLine| {
        (c - d.center_z()).norm() > 1.5 * d.radius + 0.71 * s
    };
    let disks_owned = disks.to_vec();
    let mut rng = trial_rng(seed, 0);
    let mu = random_antisymmetric_coefficient(
        grid,
        k,
        cell,
        |c, s| c.norm() + 0.71 * s < 0.97 && disks_owned.iter().all(|d| clearance(c, s, d)),
        &mut rng,
    )?;
    let mut solution = solve_principal(&mu, 1e-8, 400)?;
    solution.set_interp_mode(InterpMode::Bicubic);

    let mut derivatives = Vec::with_capacity(disks.len());
    for d in disks {
        let est = solution.derivative_on_conformal_disk(d.center_z(), 0.9 * d.radius, 16)?;
        if est.conformality_defect > 1e-9 {
            return Err(Error::Precondition(format!(
                "coefficient leaked onto disk {d:?} (defect {})",
                est.conformality_defect
            )));
        }
        derivatives.push(est.value.norm());
    }
    Ok(SolvedDiskLayout { solution, disks: disks.to_vec(), derivatives, k, seed })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmirnovReport {
    pub k: f64,
    pub t: f64,
    pub t_of_k: f64,
    pub disk_count: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
    pub residual: f64,
    pub iterations: usize,
    pub seed: u64,
}

/// Pure arithmetic of the sum bound from precomputed |f′(z_j)| values:
/// lhs = (Σ (|f′(z_j)| r_j)^{t(k)})^{1/t(k)},
/// rhs = 8 (Σ r_j^t)^{((1−k²)/(1+k²))/t}, pass ⇔ lhs/rhs ≤ 1.1.
pub fn smirnov_report_from_derivatives(
    k: f64,
    t: f64,
    disks: &[DiskOnLine],
    derivatives: &[f64],
) -> Result<SmirnovReport> {
    if disks.len() != derivatives.len() || disks.is_empty() {
        return Err(Error::Parameter("need one derivative per disk".into()));
    }
    let t_of_k = exponent_t_of_k(t, k)?;
    let lhs = disks
        .iter()
        .zip(derivatives)
        .map(|(d, f1)| (f1 * d.radius).powf(t_of_k))
        .sum::<f64>()
        .powf(1.0 / t_of_k);
    let radius_sum = disks.iter().map(|d| d.radius.powf(t)).sum::<f64>();
    let kk = k * k;
    let rhs = 8.0 * radius_sum.powf((1.0 - kk) / (1.0 + kk) / t);
    let ratio = lhs / rhs;
    Ok(SmirnovReport {
        k,
        t,
        t_of_k,
        disk_count: disks.len(),
        lhs,
        rhs,
        ratio,
        pass: ratio <= 1.1,
        residual: 0.0,
        iterations: 0,
        seed: 0,
    })
}

impl SolvedDiskLayout {
    pub fn smirnov_report(&self, t: f64) -> Result<SmirnovReport> {
        let mut report =
            smirnov_report_from_derivatives(self.k, t, &self.disks, &self.derivatives)?;
        report.residual = self.solution.residual();
        report.iterations = self.solution.iterations();
        report.seed = self.seed;
        Ok(report)
    }
}

pub fn run_smirnov_trial(k: f64, t: f64, disks: &[DiskOnLine], seed: u64) -> Result<SmirnovReport> {
    solve_disk_layout(k, disks, seed, 1024)?.smirnov_report(t)
}

pub fn write_smirnov_csv(reports: &[SmirnovReport], w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "k,t,disk_count,seed,lhs,rhs,ratio,pass")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.k, r.t, r.disk_count, r.seed, r.lhs, r.rhs, r.ratio, r.pass
        )?;
    }
    Ok(())
}

/// diam f(∂B) from equally spaced boundary samples.
fn sampled_image_diameter(
    map: &impl PlanarMap,
    disk: &DiskOnLine,
    samples: usize,
) -> Result<f64> {
    let mut images = Vec::with_capacity(samples);
    for a in 0..samples {
        let theta = std::f64::consts::TAU * a as f64 / samples as f64;
        images.push(map.eval(disk.center_z() + Complex64::from_polar(disk.radius, theta))?);
    }
    let mut best = 0.0f64;
    for (idx, p) in images.iter().enumerate() {
        for q in &images[idx + 1..] {
            best = best.max((p - q).norm());
        }
    }
    Ok(best)
}

/// The dimensionless invariant ratio
/// Σ diam f(B_j)^{1+k²} / [ (Σ diam B_j / diam B)^{1−k²} · diam f(B)^{1+k²} ].
pub fn corollary_ratio(
    map: &impl PlanarMap,
    k: f64,
    disks: &[DiskOnLine],
    ambient: DiskOnLine,
    samples: usize,
) -> Result<f64> {
    validate_disk_layout(disks, Some(ambient))?;
    let kk = k * k;
    let mut numerator = 0.0;
    let mut diam_sum = 0.0;
    for d in disks {
        numerator += sampled_image_diameter(map, d, samples)?.powf(1.0 + kk);
        diam_sum += d.diameter();
    }
    let image_ambient = sampled_image_diameter(map, &ambient, samples)?;
    let denominator =
        (diam_sum / ambient.diameter()).powf(1.0 - kk) * image_ambient.powf(1.0 + kk);
    Ok(numerator / denominator)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub k: f64,
    pub disk_count: usize,
    pub ratio: f64,
    pub residual: f64,
    pub seed: u64,
}

pub fn run_corollary_trial(
    k: f64,
    disks: &[DiskOnLine],
    ambient: DiskOnLine,
    seed: u64,
) -> Result<CorollaryReport> {
    validate_disk_layout(disks, Some(ambient))?;
    let solved = solve_disk_layout(k, disks, seed, 1024)?;
    let ratio = corollary_ratio(&solved.solution, k, disks, ambient, 64)?;
    Ok(CorollaryReport {
        k,
        disk_count: disks.len(),
        ratio,
        residual: solved.solution.residual(),
        seed,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConformalOutsideReport {
    pub t: f64,
    pub k: f64,
    pub diameter_sum_ratio: f64,
    pub base_alpha: f64,
    pub image_alpha: f64,
    pub tau: f64,
    pub preconditions_verified: bool,
    pub residual: f64,
    pub seed: u64,
}

/// Solves a map whose coefficient lives exactly on the member squares
/// (modulus k, random phase per square) and reports the diameter-sum ratio
/// Σ diam f(Q)^t / Σ diam Q^t plus the image-family packing constant.
pub fn run_conformal_outside_trial(
    family: &SquareFamily,
    t: f64,
    k: f64,
    seed: u64,
) -> Result<ConformalOutsideReport> {
    if family.is_empty() {
        return Err(Error::Parameter("conformal-outside trial needs a nonempty family".into()));
    }
    let grid = GridSpec::new(512, 2.0)?;
    let lattice = family.lattice();
    let n = grid.n();
    let mut rng = trial_rng(seed, 0);
    let mut field = ComplexField::zeros(grid);
    for m in family.members() {
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let value = Complex64::from_polar(k, phase);
        let (i0, i1, j0, j1) = sample_box(grid, lattice, *m)?;
        for j in j0..j1 {
            for cell in &mut field.data_mut()[j * n + i0..j * n + i1] {
                *cell = value;
            }
        }
    }
    let mu = BeltramiCoefficient::new(field, k)?;
    let mut solution = solve_principal(&mu, 1e-8, 400)?;
    solution.set_interp_mode(InterpMode::Bicubic);

    let base = packing_alpha(family, t)?;
    let tau = smoothness_tau(family)?;
    let quasi = QuasisquareFamily::new(family, &solution, 64)?;
    let image = quasi.packing_alpha(t)?;

    let mut image_sum = 0.0;
    let mut base_sum = 0.0;
    for q in family.members() {
        image_sum += quasi.diameter(*q)?.powf(t);
        base_sum += (lattice.side(*q) * 2.0f64.sqrt()).powf(t);
    }

    Ok(ConformalOutsideReport {
        t,
        k,
        diameter_sum_ratio: image_sum / base_sum,
        base_alpha: base.alpha,
        image_alpha: image.alpha,
        tau,
        preconditions_verified: base.admissible,
        residual: solution.residual(),
        seed,
    })
}
