//! Quasilines and covering-sum measurements.
//!
//! A quasiline is the image of ℝ under a principal map with antisymmetric
//! dilatation. The solver's displacement field is a trigonometric polynomial
//! on the cell, so its restriction to the real axis can be refined to a
//! denser axis grid exactly: take the 2-D spectrum, collapse the vertical
//! frequencies with alternating signs (the y = 0 row sits half a period from
//! the cell corner), zero-pad, and inverse transform. Covering sums, the
//! ball-restricted measure check, and box-counting dimension all run on that
//! refined line.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::distortion::DiskOnLine;
use crate::error::{Error, Result};
use crate::field::{GridSpec, SpectralEngine};
use crate::rng::trial_rng;
use crate::solver::{
    random_antisymmetric_coefficient, solve_principal, InterpMode, PrincipalMapSolution,
};
use crate::PlanarMap;

/// A principal map with antisymmetric dilatation together with an exactly
/// refined trace of its displacement along the real axis.
pub struct Quasiline {
    solution: PrincipalMapSolution,
    line: Vec<Complex64>,
    refine: usize,
    k: f64,
    seed: u64,
}

/// Solves a seeded random antisymmetric coefficient (modulus exactly k,
/// supported in the unit disk, vanishing on |Im z| < 1/16) and refines the
/// axis trace eightfold.
pub fn generate_quasiline(k: f64, seed: u64, grid: GridSpec) -> Result<Quasiline> {
    Quasiline::generate(k, seed, grid, 8)
}

impl Quasiline {
    pub fn generate(k: f64, seed: u64, grid: GridSpec, refine: usize) -> Result<Self> {
        if !refine.is_power_of_two() || refine < 2 || refine > 64 {
            return Err(Error::Parameter(format!(
                "refinement factor {refine} must be a power of two in 2..=64"
            )));
        }
        let mut rng = trial_rng(seed, 0);
        let mu = random_antisymmetric_coefficient(
            grid,
            k,
            0.125,
            |c, s| c.norm() + 0.71 * s < 0.95 && c.im - 0.5 * s >= 1.0 / 16.0,
            &mut rng,
        )?;
        let mut solution = solve_principal(&mu, 1e-8, 400)?;
        solution.set_interp_mode(InterpMode::Bicubic);
        let line = refine_axis_trace(&solution, refine);
        Ok(Quasiline { solution, line, refine, k, seed })
    }

    pub fn solution(&self) -> &PrincipalMapSolution {
        &self.solution
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn refined_spacing(&self) -> f64 {
        self.solution.grid().spacing() / self.refine as f64
    }

    pub fn refined_displacement(&self) -> &[Complex64] {
        &self.line
    }

    fn displacement_at(&self, x: f64) -> Complex64 {
        let grid = self.solution.grid();
        let m = self.line.len();
        let u = (x + grid.half_extent()) / self.refined_spacing();
        let base = u.floor();
        let frac = u - base;
        let idx = |off: i64| {
            let i = (base as i64 + off).rem_euclid(m as i64) as usize;
            self.line[i]
        };
        let t2 = frac * frac;
        let t3 = t2 * frac;
        let w = [
            0.5 * (-t3 + 2.0 * t2 - frac),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + frac),
            0.5 * (t3 - t2),
        ];
        idx(-1) * w[0] + idx(0) * w[1] + idx(1) * w[2] + idx(2) * w[3]
    }

    /// f(x) for real x, through the refined axis trace.
    pub fn line_point(&self, x: f64) -> Result<Complex64> {
        let l = self.solution.grid().half_extent();
        if !(-l..l).contains(&x) {
            return Err(Error::OutOfDomain { z: format!("{x} on the axis") });
        }
        Ok(Complex64::new(x, 0.0) + self.displacement_at(x))
    }

    /// Curve samples f(x) for x in [x0, x1] at the refined spacing.
    pub fn curve_samples(&self, x0: f64, x1: f64) -> Result<Vec<Complex64>> {
        if !(x0 < x1) {
            return Err(Error::Parameter(format!("bad sample range [{x0}, {x1}]")));
        }
        let h = self.refined_spacing();
        let l = self.solution.grid().half_extent();
        let i0 = ((x0 + l) / h).ceil() as usize;
        let i1 = ((x1 + l) / h).floor() as usize;
        let mut out = Vec::with_capacity(i1 - i0 + 1);
        for i in i0..=i1.min(self.line.len() - 1) {
            let x = -l + i as f64 * h;
            out.push(Complex64::new(x, 0.0) + self.line[i]);
        }
        Ok(out)
    }
}

impl PlanarMap for Quasiline {
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        let l = self.solution.grid().half_extent();
        if z.im == 0.0 && (-l..l).contains(&z.re) {
            return self.line_point(z.re);
        }
        self.solution.evaluate(z)
    }

    fn resolution_scale(&self) -> f64 {
        self.refined_spacing()
    }
}

/// Exact refinement of the displacement's y = 0 trace. With the storage
/// convention value(i, j) = (1/N²) Σ F[b,a] ω^{ai} ω^{bj} and the axis at
/// j = N/2, the axis trace has 1-D coefficients c_a = (1/N²) Σ_b (−1)^b
/// F[b,a]; zero-padding those into a length refine·N spectrum and applying
/// an unnormalized inverse FFT evaluates the same trigonometric polynomial
/// on the fine axis grid.
fn refine_axis_trace(solution: &PrincipalMapSolution, refine: usize) -> Vec<Complex64> {
    let grid = solution.grid();
    let n = grid.n();
    let mut spectrum = solution.displacement().data().to_vec();
    let mut engine = SpectralEngine::new(n);
    engine.forward2d(&mut spectrum);

    let scale = 1.0 / (n * n) as f64;
    let m = refine * n;
    let mut padded = vec![Complex64::new(0.0, 0.0); m];
    for a in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for b in 0..n {
            let v = spectrum[b * n + a];
            if b % 2 == 0 {
                acc += v;
            } else {
                acc -= v;
            }
        }
        let freq = if a <= n / 2 { a as i64 } else { a as i64 - n as i64 };
        padded[freq.rem_euclid(m as i64) as usize] = acc * scale;
    }
    let mut line_engine = SpectralEngine::new(m);
    line_engine.inverse1d_unnormalized(&mut padded);
    padded
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScaleRecord {
    pub generation: u32,
    pub count: u64,
    pub sum: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringSumSeries {
    pub k: f64,
    pub s: f64,
    pub segment: (f64, f64),
    pub ball: DiskOnLine,
    pub records: Vec<ScaleRecord>,
    pub normalizer: f64,
    pub truncated: bool,
    pub dense_sampling: bool,
    pub diameters_below_one: bool,
}

/// diam f(I) from equally spaced samples on the interval (endpoints always
/// included).
fn interval_image_diameter(
    map: &impl PlanarMap,
    lo: f64,
    hi: f64,
    samples: usize,
) -> Result<f64> {
    let step = (hi - lo) / (samples - 1) as f64;
    let mut images = Vec::with_capacity(samples);
    for q in 0..samples {
        images.push(map.eval(Complex64::new(lo + q as f64 * step, 0.0))?);
    }
    let mut best = 0.0f64;
    for (idx, p) in images.iter().enumerate() {
        for q in &images[idx + 1..] {
            best = best.max((p - q).norm());
        }
    }
    Ok(best)
}

/// Per-generation covering records over one segment: absolute dyadic
/// intervals of length 2^{−m} meeting [a, b], diam f(I)^s summed.
/// Stops (reporting truncation) once intervals drop below four times the
/// map's resolution scale.
fn segment_records(
    map: &impl PlanarMap,
    a: f64,
    b: f64,
    s: f64,
    max_generation: u32,
    samples: usize,
) -> Result<(Vec<ScaleRecord>, bool, f64)> {
    let min_len = 4.0 * map.resolution_scale();
    let mut records = Vec::new();
    let mut truncated = false;
    let mut max_diam = 0.0f64;
    for m in 1..=max_generation {
        let len = 0.5f64.powi(m as i32);
        if len < min_len {
            truncated = true;
            break;
        }
        let j0 = (a / len + 1e-9).floor() as i64;
        let j1 = ((b / len - 1e-9).ceil() as i64).max(j0 + 1);
        let mut sum = 0.0;
        for j in j0..j1 {
            let lo = j as f64 * len;
            let d = interval_image_diameter(map, lo, lo + len, samples)?;
            max_diam = max_diam.max(d);
            sum += d.powf(s);
        }
        records.push(ScaleRecord { generation: m, count: (j1 - j0) as u64, sum });
    }
    Ok((records, truncated, max_diam))
}

/// Covering sums S_m(s) = Σ diam(f(I))^s over dyadic intervals of generation
/// m covering E = [a, b], with the scale-invariant normalizer
/// diam(f(B))^s · (H¹(E)/diam B)^{1−k²}. Five samples per interval, or 33 in
/// dense mode.
pub fn covering_sums(
    map: &impl PlanarMap,
    k: f64,
    segment: (f64, f64),
    ball: DiskOnLine,
    s: f64,
    max_generation: u32,
    dense: bool,
) -> Result<CoveringSumSeries> {
    let (a, b) = segment;
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Parameter(format!("bad segment [{a}, {b}]")));
    }
    if !(s > 0.0 && s <= 2.0) {
        return Err(Error::Parameter(format!("covering exponent s = {s} outside (0, 2]")));
    }
    if !(0.0..1.0).contains(&k) {
        return Err(Error::Parameter(format!("dilatation bound k = {k} outside [0, 1)")));
    }
    if max_generation == 0 || max_generation > 40 {
        return Err(Error::Parameter(format!("generation depth {max_generation} outside 1..=40")));
    }
    let samples = if dense { 33 } else { 5 };
    let (records, truncated, max_diam) = segment_records(map, a, b, s, max_generation, samples)?;

    let mut ball_images = Vec::with_capacity(64);
    for q in 0..64 {
        let theta = std::f64::consts::TAU * q as f64 / 64.0;
        ball_images.push(map.eval(ball.center_z() + Complex64::from_polar(ball.radius, theta))?);
    }
    let mut ball_diam = 0.0f64;
    for (idx, p) in ball_images.iter().enumerate() {
        for q in &ball_images[idx + 1..] {
            ball_diam = ball_diam.max((p - q).norm());
        }
    }
    let kk = k * k;
    let normalizer = ball_diam.powf(s) * ((b - a) / ball.diameter()).powf(1.0 - kk);

    Ok(CoveringSumSeries {
        k,
        s,
        segment,
        ball,
        records,
        normalizer,
        truncated,
        dense_sampling: dense,
        diameters_below_one: max_diam <= 1.0,
    })
}

pub fn write_series_csv(series: &CoveringSumSeries, w: &mut impl std::io::Write) -> Result<()> {
    writeln!(w, "generation,count,sum,normalizer")?;
    for r in &series.records {
        writeln!(w, "{},{},{},{}", r.generation, r.count, r.sum, series.normalizer)?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MainTheoremReport {
    pub k: f64,
    pub center: (f64, f64),
    pub radius: f64,
    pub anchor_x: f64,
    pub intervals: Vec<(f64, f64)>,
    pub records: Vec<ScaleRecord>,
    pub sup_normalized: f64,
    pub truncated: bool,
    pub flagged: bool,
}

/// Measures the curve inside an image ball centered at f(anchor_x): finds
/// E = f^{−1}(B̄ ∩ Γ) by a sign sweep of |f(x) − center|² − r² along the
/// refined axis with bisection at the crossings, then reports
/// sup_m S_m(1 + k²) / r^{1+k²} over the component intervals.
pub fn theorem_main_check(
    quasiline: &Quasiline,
    anchor_x: f64,
    radius: f64,
    max_generation: u32,
) -> Result<MainTheoremReport> {
    if !(radius > 0.0) {
        return Err(Error::Parameter(format!("ball radius {radius} must be positive")));
    }
    let center = quasiline.line_point(anchor_x)?;
    let guard = quasiline.solution().grid().guard_half();
    let h = quasiline.refined_spacing();
    let inside = |x: f64| -> Result<bool> {
        Ok((quasiline.line_point(x)? - center).norm_sqr() <= radius * radius)
    };

    // Sweep the refined axis samples across the guard band.
    let steps = (2.0 * guard / h) as usize;
    let xs: Vec<f64> = (0..=steps)
        .map(|i| -guard + i as f64 * h)
        .take_while(|x| *x < guard)
        .collect();
    let mut flagged = false;
    let mut intervals: Vec<(f64, f64)> = Vec::new();
    let mut open: Option<f64> = None;
    let mut prev_inside = inside(xs[0])?;
    if prev_inside {
        open = Some(xs[0]);
        flagged = true;
    }
    for w in xs.windows(2) {
        let cur_inside = inside(w[1])?;
        if cur_inside != prev_inside {
            // Bisect the crossing.
            let (mut lo, mut hi) = (w[0], w[1]);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if inside(mid)? == prev_inside {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let x = 0.5 * (lo + hi);
            if cur_inside {
                open = Some(x);
            } else if let Some(start) = open.take() {
                if x - start > 1e-12 {
                    intervals.push((start, x));
                }
            }
        }
        prev_inside = cur_inside;
    }
    if let Some(start) = open {
        intervals.push((start, *xs.last().unwrap()));
        flagged = true;
    }
    if intervals.is_empty() {
        flagged = true;
    }

    let s = 1.0 + quasiline.k() * quasiline.k();
    let mut merged: Vec<ScaleRecord> = Vec::new();
    let mut truncated = false;
    for (lo, hi) in &intervals {
        let (records, trunc, _) = segment_records(quasiline, *lo, *hi, s, max_generation, 5)?;
        truncated |= trunc;
        for r in records {
            match merged.iter_mut().find(|m| m.generation == r.generation) {
                Some(m) => {
                    m.count += r.count;
                    m.sum += r.sum;
                }
                None => merged.push(r),
            }
        }
    }
    merged.sort_by_key(|r| r.generation);
    let sup = merged.iter().map(|r| r.sum).fold(0.0, f64::max);

    Ok(MainTheoremReport {
        k: quasiline.k(),
        center: (center.re, center.im),
        radius,
        anchor_x,
        intervals,
        records: merged,
        sup_normalized: sup / radius.powf(s),
        truncated,
        flagged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionFit {
    pub scales: Vec<f64>,
    pub counts: Vec<u64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub reference_theorem: f64,
    pub reference_numerical: f64,
}

/// Box-counting dimension fit: occupied-box counts over dyadic fractions of
/// the sample bounding box, least-squares slope of log N against log(1/δ).
/// Reference lines record the 1 + k² bound and the 1 + 0.69 k² numerical
/// estimate for extremal curves.
pub fn box_dimension(
    samples: &[Complex64],
    k: f64,
    min_level: u32,
    max_level: u32,
) -> Result<DimensionFit> {
    if samples.len() < 10_000 {
        return Err(Error::Parameter(format!(
            "box dimension needs at least 10000 samples, got {}",
            samples.len()
        )));
    }
    if max_level < min_level + 3 {
        return Err(Error::FitIllPosed(format!(
            "need at least 4 scales, got levels {min_level}..={max_level}"
        )));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for z in samples {
        x0 = x0.min(z.re);
        x1 = x1.max(z.re);
        y0 = y0.min(z.im);
        y1 = y1.max(z.im);
    }
    let span = (x1 - x0).max(y1 - y0);
    if !(span > 0.0) {
        return Err(Error::FitIllPosed("degenerate sample cloud".into()));
    }

    let mut scales = Vec::new();
    let mut counts = Vec::new();
    for level in min_level..=max_level {
        let delta = span * 0.5f64.powi(level as i32);
        let mut boxes: HashSet<(i64, i64)> = HashSet::new();
        for z in samples {
            boxes.insert((
                ((z.re - x0) / delta).floor() as i64,
                ((z.im - y0) / delta).floor() as i64,
            ));
        }
        scales.push(delta);
        counts.push(boxes.len() as u64);
    }

    let xs: Vec<f64> = scales.iter().map(|d| (1.0 / d).ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|c| (*c as f64).ln()).collect();
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_stderr = (ss_res / (n - 2.0) / sxx).sqrt();

    Ok(DimensionFit {
        scales,
        counts,
        slope,
        slope_stderr,
        reference_theorem: 1.0 + k * k,
        reference_numerical: 1.0 + 0.69 * k * k,
    })
}
