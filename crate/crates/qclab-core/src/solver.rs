//! Principal quasiconformal maps from Beltrami coefficients.
//!
//! The map f solves the Beltrami equation ∂̄f = μ∂f with f(z) = z + O(1/z)
//! at infinity. Writing h = ∂̄f, the equation becomes the fixed-point problem
//! h = μ + μ𝒮h, solved here by iterating h ← μ + μ𝒮h, which contracts in L²
//! with factor ‖μ‖_∞ < 1. The displacement f(z) − z is recovered as the
//! Cauchy transform of h.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{ComplexField, FourierMultiplier, GridSpec, SpectralEngine, d_z};
use crate::PlanarMap;

/// Dilatation constants: k = ‖μ‖_∞ bound and K = (1+k)/(1−k).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QcConstants {
    k: f64,
    big_k: f64,
}

impl QcConstants {
    pub fn from_k(k: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&k) {
            return Err(Error::DilatationBound { k });
        }
        Ok(Self { k, big_k: (1.0 + k) / (1.0 - k) })
    }

    pub fn from_big_k(big_k: f64) -> Result<Self> {
        if !big_k.is_finite() || big_k < 1.0 {
            return Err(Error::Parameter(format!("K = {big_k} must be finite and >= 1")));
        }
        Ok(Self { k: (big_k - 1.0) / (big_k + 1.0), big_k })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn big_k(&self) -> f64 {
        self.big_k
    }
}

/// Symmetry class of a coefficient with respect to complex conjugation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Symmetry {
    None,
    /// μ(z) = −conj(μ(z̄)); the solved map sends ℝ to a quasiline.
    Antisymmetric,
    /// μ(z) = conj(μ(z̄)); the solved map commutes with conjugation.
    Symmetric,
}

/// A region of the plane given as a finite union of disks and squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Disk { center: (f64, f64), radius: f64 },
    Square { center: (f64, f64), side: f64 },
}

impl Shape {
    fn contains(&self, z: Complex64) -> bool {
        match *self {
            Shape::Disk { center, radius } => {
                (z - Complex64::new(center.0, center.1)).norm() <= radius
            }
            Shape::Square { center, side } => {
                (z.re - center.0).abs() <= 0.5 * side && (z.im - center.1).abs() <= 0.5 * side
            }
        }
    }

    fn mirrored(&self) -> Shape {
        match *self {
            Shape::Disk { center, radius } => {
                Shape::Disk { center: (center.0, -center.1), radius }
            }
            Shape::Square { center, side } => {
                Shape::Square { center: (center.0, -center.1), side }
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Region {
    shapes: Vec<Shape>,
}

impl Region {
    pub fn new(shapes: Vec<Shape>) -> Self {
        Self { shapes }
    }

    pub fn disk(center: Complex64, radius: f64) -> Self {
        Self::new(vec![Shape::Disk { center: (center.re, center.im), radius }])
    }

    pub fn square(center: Complex64, side: f64) -> Self {
        Self::new(vec![Shape::Square { center: (center.re, center.im), side }])
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.shapes.iter().any(|s| s.contains(z))
    }

    /// Whether the region is setwise invariant under complex conjugation.
    pub fn conjugation_symmetric(&self) -> bool {
        self.shapes.iter().all(|s| {
            let m = s.mirrored();
            self.shapes.iter().any(|o| *o == m)
        })
    }
}

/// A sampled Beltrami coefficient with its dilatation bound and symmetry tag.
#[derive(Clone, Debug)]
pub struct BeltramiCoefficient {
    field: ComplexField,
    bound: f64,
    symmetry: Symmetry,
    support: Option<Region>,
}

impl BeltramiCoefficient {
    /// Wraps a sampled coefficient, checking sup |μ| ≤ k < 1 and that the
    /// support stays inside the guard band of the grid.
    pub fn new(field: ComplexField, k: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&k) {
            return Err(Error::DilatationBound { k });
        }
        let sup = field.sup_norm();
        if sup > k + 1e-12 {
            return Err(Error::Parameter(format!(
                "coefficient sup norm {sup} exceeds bound {k}"
            )));
        }
        let guard = field.grid().guard_half();
        if let Some(extent) = field.support_extent(0.0) {
            if extent > guard + 1e-12 {
                return Err(Error::Parameter(format!(
                    "coefficient support extent {extent} exceeds guard band {guard}"
                )));
            }
        }
        Ok(Self { field, bound: k, symmetry: Symmetry::None, support: None })
    }

    pub fn zero(grid: GridSpec, k: f64) -> Result<Self> {
        Self::new(ComplexField::zeros(grid), k)
    }

    /// Attaches a symmetry tag after verifying it samplewise.
    pub fn with_symmetry(mut self, symmetry: Symmetry) -> Result<Self> {
        let n = self.field.grid().n();
        let tol = 1e-12;
        for j in 1..n {
            for i in 0..n {
                let a = self.field.get(i, j);
                let b = self.field.get(i, n - j);
                let defect = match symmetry {
                    Symmetry::None => 0.0,
                    Symmetry::Antisymmetric => (a + b.conj()).norm(),
                    Symmetry::Symmetric => (a - b.conj()).norm(),
                };
                if defect > tol {
                    return Err(Error::Precondition(format!(
                        "samples at mirrored pair ({i},{j}) break {symmetry:?} by {defect}"
                    )));
                }
            }
        }
        self.symmetry = symmetry;
        Ok(self)
    }

    pub fn with_support(mut self, region: Region) -> Self {
        self.support = Some(region);
        self
    }

    pub fn field(&self) -> &ComplexField {
        &self.field
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn support(&self) -> Option<&Region> {
        self.support.as_ref()
    }

    pub fn grid(&self) -> GridSpec {
        self.field.grid()
    }
}

/// Builds an antisymmetric coefficient from raw samples: the open upper half
/// of the grid keeps the raw values (clipped to modulus k), the lower half is
/// filled with μ(z) = −conj(μ(z̄)), and the lattice row on ℝ is zeroed.
pub fn make_antisymmetric(raw: &ComplexField, k: f64) -> Result<BeltramiCoefficient> {
    if !(0.0..1.0).contains(&k) {
        return Err(Error::DilatationBound { k });
    }
    let grid = raw.grid();
    let guard = grid.guard_half();
    let n = grid.n();
    let mut out = ComplexField::zeros(grid);
    for j in (n / 2 + 1)..n {
        for i in 0..n {
            let z = grid.point(i, j);
            let mut v = raw.get(i, j);
            if v.norm_sqr() == 0.0 {
                continue;
            }
            if z.re.abs() > guard + 1e-12 || z.im.abs() > guard + 1e-12 {
                return Err(Error::Precondition(format!(
                    "raw coefficient sample at {z} lies outside the guard band"
                )));
            }
            let m = v.norm();
            if m > k {
                v *= k / m;
                // A rounding tick can leave the modulus a hair above k;
                // nudging below keeps clipping exactly idempotent.
                while v.norm() > k {
                    v *= 1.0 - f64::EPSILON;
                }
            }
            out.set(i, j, v);
            out.set(i, n - j, -v.conj());
        }
    }
    BeltramiCoefficient::new(out, k)?.with_symmetry(Symmetry::Antisymmetric)
}

/// Interpolation scheme used by [`PrincipalMapSolution::evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpMode {
    Bilinear,
    /// Catmull-Rom bicubic; reproduces quadratic fields exactly.
    Bicubic,
}

/// Derivative estimate on a disk where the map is conformal. A nonzero
/// conformality defect records sup |μ| found on the disk; trustworthy
/// estimates have defect at roundoff level.
#[derive(Clone, Copy, Debug)]
pub struct DerivativeEstimate {
    pub value: Complex64,
    pub conformality_defect: f64,
}

/// A solved principal map f(z) = z + displacement(z) with ∂̄f = h.
#[derive(Clone, Debug)]
pub struct PrincipalMapSolution {
    coefficient: BeltramiCoefficient,
    h_field: ComplexField,
    displacement: ComplexField,
    residual: f64,
    iterations: usize,
    residual_history: Vec<f64>,
    interp: InterpMode,
}

/// Solves h = μ + μ𝒮h by fixed-point iteration and integrates the result.
///
/// The residual after each step is ‖h_next − h‖₂ / ‖μ‖₂, which bounds the
/// relative fixed-point defect of the returned iterate. Iteration stops once
/// the residual drops to `tol`; exceeding `max_iter` is an error carrying the
/// last residual.
pub fn solve_principal(
    mu: &BeltramiCoefficient,
    tol: f64,
    max_iter: usize,
) -> Result<PrincipalMapSolution> {
    if !(tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance {tol} must be positive")));
    }
    let grid = mu.grid();
    let mu_norm = mu.field().l2_norm();
    if mu_norm == 0.0 {
        return Ok(PrincipalMapSolution {
            coefficient: mu.clone(),
            h_field: ComplexField::zeros(grid),
            displacement: ComplexField::zeros(grid),
            residual: 0.0,
            iterations: 0,
            residual_history: Vec::new(),
            interp: InterpMode::Bilinear,
        });
    }

    let mut engine = SpectralEngine::new(grid.n());
    let beurling = FourierMultiplier::beurling();
    let cauchy = FourierMultiplier::cauchy();
    let mu_data = mu.field().data();

    let mut h = mu.field().clone();
    let mut residual = f64::INFINITY;
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < max_iter {
        let sh = beurling.apply_with_engine(&h, &mut engine);
        let mut diff_sq = 0.0;
        {
            let next = h.data_mut();
            for (idx, v) in next.iter_mut().enumerate() {
                let updated = mu_data[idx] + mu_data[idx] * sh.data()[idx];
                diff_sq += (updated - *v).norm_sqr();
                *v = updated;
            }
        }
        iterations += 1;
        residual = diff_sq.sqrt() * grid.spacing() / mu_norm;
        history.push(residual);
        if residual <= tol {
            break;
        }
    }
    if residual > tol {
        return Err(Error::Diverged { residual, iterations });
    }

    let displacement = cauchy.apply_with_engine(&h, &mut engine);
    Ok(PrincipalMapSolution {
        coefficient: mu.clone(),
        h_field: h,
        displacement,
        residual,
        iterations,
        residual_history: history,
        interp: InterpMode::Bilinear,
    })
}

impl PrincipalMapSolution {
    pub fn coefficient(&self) -> &BeltramiCoefficient {
        &self.coefficient
    }

    pub fn h_field(&self) -> &ComplexField {
        &self.h_field
    }

    pub fn displacement(&self) -> &ComplexField {
        &self.displacement
    }

    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn residual_history(&self) -> &[f64] {
        &self.residual_history
    }

    pub fn grid(&self) -> GridSpec {
        self.displacement.grid()
    }

    pub fn interp_mode(&self) -> InterpMode {
        self.interp
    }

    pub fn set_interp_mode(&mut self, mode: InterpMode) {
        self.interp = mode;
    }

    /// f(z) = z + interpolated displacement. Lattice points evaluate to the
    /// stored field values exactly.
    pub fn evaluate(&self, z: Complex64) -> Result<Complex64> {
        let grid = self.grid();
        let l = grid.half_extent();
        if !z.re.is_finite() || !z.im.is_finite() || z.re < -l || z.re >= l || z.im < -l || z.im >= l
        {
            return Err(Error::OutOfDomain { z: format!("{z}") });
        }
        Ok(z + self.interpolate_displacement(z))
    }

    fn interpolate_displacement(&self, z: Complex64) -> Complex64 {
        let grid = self.grid();
        let n = grid.n() as i64;
        let (fx, fy) = grid.fractional_index(z);
        let wrap = |v: i64| v.rem_euclid(n) as usize;
        match self.interp {
            InterpMode::Bilinear => {
                let ix = fx.floor();
                let iy = fy.floor();
                let dx = fx - ix;
                let dy = fy - iy;
                let (i0, j0) = (wrap(ix as i64), wrap(iy as i64));
                let (i1, j1) = (wrap(ix as i64 + 1), wrap(iy as i64 + 1));
                let d = &self.displacement;
                d.get(i0, j0) * ((1.0 - dx) * (1.0 - dy))
                    + d.get(i1, j0) * (dx * (1.0 - dy))
                    + d.get(i0, j1) * ((1.0 - dx) * dy)
                    + d.get(i1, j1) * (dx * dy)
            }
            InterpMode::Bicubic => {
                let ix = fx.floor();
                let iy = fy.floor();
                let dx = fx - ix;
                let dy = fy - iy;
                let wx = catmull_rom_weights(dx);
                let wy = catmull_rom_weights(dy);
                let mut acc = Complex64::new(0.0, 0.0);
                for (b, wyb) in wy.iter().enumerate() {
                    let j = wrap(iy as i64 + b as i64 - 1);
                    let mut row = Complex64::new(0.0, 0.0);
                    for (a, wxa) in wx.iter().enumerate() {
                        let i = wrap(ix as i64 + a as i64 - 1);
                        row += self.displacement.get(i, j) * *wxa;
                    }
                    acc += row * *wyb;
                }
                acc
            }
        }
    }

    /// Angular-averaged difference quotient for f′(z₀) on a disk B(z₀, r)
    /// where f is conformal: the average over m equispaced angles of
    /// (f(z₀ + ρe^{iθ}) − f(z₀)) / (ρe^{iθ}) with ρ = r/4. Exact for
    /// polynomials of degree < m up to interpolation error.
    pub fn derivative_on_conformal_disk(
        &self,
        z0: Complex64,
        r: f64,
        m: usize,
    ) -> Result<DerivativeEstimate> {
        if m < 8 {
            return Err(Error::Parameter(format!("need at least 8 angles, got {m}")));
        }
        if !(r > 0.0) {
            return Err(Error::Parameter(format!("radius {r} must be positive")));
        }
        let grid = self.grid();
        let n = grid.n();
        let mut defect = 0.0f64;
        for j in 0..n {
            for i in 0..n {
                let z = grid.point(i, j);
                if (z - z0).norm() <= r {
                    defect = defect.max(self.coefficient.field().get(i, j).norm());
                }
            }
        }
        let rho = 0.25 * r;
        let f0 = self.evaluate(z0)?;
        let mut acc = Complex64::new(0.0, 0.0);
        for a in 0..m {
            let theta = 2.0 * std::f64::consts::PI * a as f64 / m as f64;
            let dir = Complex64::from_polar(1.0, theta);
            let fz = self.evaluate(z0 + dir * rho)?;
            acc += (fz - f0) / (dir * rho);
        }
        Ok(DerivativeEstimate { value: acc / m as f64, conformality_defect: defect })
    }

    /// Max and median of |z|·|displacement(z)| over the outer ring
    /// max(|Re z|, |Im z|) ≥ 0.8·L, reporting the principal 1/|z| decay.
    pub fn ring_decay_stats(&self) -> (f64, f64) {
        let grid = self.grid();
        let n = grid.n();
        let cutoff = 0.8 * grid.half_extent();
        let mut vals = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let z = grid.point(i, j);
                if z.re.abs().max(z.im.abs()) >= cutoff {
                    vals.push(z.norm() * self.displacement.get(i, j).norm());
                }
            }
        }
        if vals.is_empty() {
            return (0.0, 0.0);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (*vals.last().unwrap(), vals[vals.len() / 2])
    }

    /// Finds z with |f(z) − w| ≤ one grid spacing: a lattice scan for the
    /// best starting cell followed by damped Newton refinement on the
    /// interpolant, with a shrinking pattern search as fallback.
    pub fn numerical_inverse(&self, w: Complex64) -> Result<Complex64> {
        let grid = self.grid();
        let n = grid.n();
        let h = grid.spacing();
        let guard = grid.guard_half();

        let mut best = Complex64::new(0.0, 0.0);
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            for i in 0..n {
                let z = grid.point(i, j);
                if z.re.abs() > guard || z.im.abs() > guard {
                    continue;
                }
                let d = (z + self.displacement.get(i, j) - w).norm();
                if d < best_d {
                    best_d = d;
                    best = z;
                }
            }
        }
        if !best_d.is_finite() {
            return Err(Error::InverseFailed { w: format!("{w}"), defect: best_d });
        }

        let defect =
            |z: Complex64| -> f64 { self.evaluate(z).map(|fz| (fz - w).norm()).unwrap_or(f64::INFINITY) };

        // Damped Newton with a finite-difference Jacobian of (Re, Im).
        let mut z = best;
        let mut d = best_d;
        let step = 0.25 * h;
        for _ in 0..60 {
            if d <= 1e-3 * h {
                break;
            }
            let f0 = match self.evaluate(z) {
                Ok(v) => v - w,
                Err(_) => break,
            };
            let fx = match (self.evaluate(z + step), self.evaluate(z - step)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * step),
                _ => break,
            };
            let fy = match (
                self.evaluate(z + Complex64::new(0.0, step)),
                self.evaluate(z - Complex64::new(0.0, step)),
            ) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * step),
                _ => break,
            };
            let det = fx.re * fy.im - fx.im * fy.re;
            if det.abs() < 1e-14 {
                break;
            }
            let du = (f0.re * fy.im - f0.im * fy.re) / det;
            let dv = (fx.re * f0.im - fx.im * f0.re) / det;
            let mut scale = 1.0;
            let mut advanced = false;
            for _ in 0..8 {
                let cand = z - Complex64::new(du, dv) * scale;
                let dc = defect(cand);
                if dc < d {
                    z = cand;
                    d = dc;
                    advanced = true;
                    break;
                }
                scale *= 0.5;
            }
            if !advanced {
                break;
            }
        }

        // Shrinking pattern search mops up whatever Newton left.
        let mut radius = h;
        while d > 1e-3 * h && radius > 1e-6 * h {
            let mut moved = false;
            for (dx, dy) in [
                (1.0, 0.0),
                (-1.0, 0.0),
                (0.0, 1.0),
                (0.0, -1.0),
                (1.0, 1.0),
                (1.0, -1.0),
                (-1.0, 1.0),
                (-1.0, -1.0),
            ] {
                let cand = z + Complex64::new(dx * radius, dy * radius);
                let dc = defect(cand);
                if dc < d {
                    z = cand;
                    d = dc;
                    moved = true;
                }
            }
            if !moved {
                radius *= 0.5;
            }
        }

        if d <= h {
            Ok(z)
        } else {
            Err(Error::InverseFailed { w: format!("{w}"), defect: d })
        }
    }

    /// Writes a versioned snapshot: a JSON header line followed by the raw
    /// little-endian samples of the coefficient, ∂̄f, and the displacement.
    pub fn save(&self, path: &Path) -> Result<()> {
        let grid = self.grid();
        let header = SolutionHeader {
            version: 1,
            n: grid.n(),
            half_extent: grid.half_extent(),
            bound: self.coefficient.bound(),
            symmetry: self.coefficient.symmetry(),
            residual: self.residual,
            iterations: self.iterations,
            residual_history: self.residual_history.clone(),
        };
        let mut out = BufWriter::new(std::fs::File::create(path)?);
        let mut line = serde_json::to_string(&header)
            .map_err(|e| Error::Serialization(e.to_string()))?;
        line.push('\n');
        out.write_all(line.as_bytes())?;
        for field in [self.coefficient.field(), &self.h_field, &self.displacement] {
            for v in field.data() {
                out.write_all(&v.re.to_le_bytes())?;
                out.write_all(&v.im.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut header_bytes = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            reader.read_exact(&mut byte)?;
            if byte[0] == b'\n' {
                break;
            }
            header_bytes.push(byte[0]);
        }
        let header: SolutionHeader = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Serialization(format!("bad header: {e}")))?;
        if header.version != 1 {
            return Err(Error::Serialization(format!(
                "unsupported snapshot version {}",
                header.version
            )));
        }
        let grid = GridSpec::new(header.n, header.half_extent)?;
        let count = header.n * header.n;
        let mut fields = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut data = Vec::with_capacity(count);
            let mut buf = [0u8; 16];
            for _ in 0..count {
                reader.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf[0..8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[8..16].try_into().unwrap());
                data.push(Complex64::new(re, im));
            }
            fields.push(ComplexField::from_data(grid, data)?);
        }
        let displacement = fields.pop().unwrap();
        let h_field = fields.pop().unwrap();
        let mu_field = fields.pop().unwrap();
        let coefficient = BeltramiCoefficient::new(mu_field, header.bound)?
            .with_symmetry(header.symmetry)?;
        Ok(Self {
            coefficient,
            h_field,
            displacement,
            residual: header.residual,
            iterations: header.iterations,
            residual_history: header.residual_history,
            interp: InterpMode::Bilinear,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SolutionHeader {
    version: u32,
    n: usize,
    half_extent: f64,
    bound: f64,
    symmetry: Symmetry,
    residual: f64,
    iterations: usize,
    residual_history: Vec<f64>,
}

impl PlanarMap for PrincipalMapSolution {
    fn eval(&self, z: Complex64) -> Result<Complex64> {
        self.evaluate(z)
    }

    fn resolution_scale(&self) -> f64 {
        self.grid().spacing()
    }
}

fn catmull_rom_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ]
}

/// Splits μ by a region: (χ_V·μ, χ_{ℂ∖V}·μ). The pieces partition the
/// support samplewise; antisymmetry survives when V is conjugation-symmetric.
pub fn truncate_dilatation(
    mu: &BeltramiCoefficient,
    region: &Region,
) -> (BeltramiCoefficient, BeltramiCoefficient) {
    let grid = mu.grid();
    let n = grid.n();
    let mut inside = ComplexField::zeros(grid);
    let mut outside = ComplexField::zeros(grid);
    for j in 0..n {
        for i in 0..n {
            let v = mu.field().get(i, j);
            if v.norm_sqr() == 0.0 {
                continue;
            }
            if region.contains(grid.point(i, j)) {
                inside.set(i, j, v);
            } else {
                outside.set(i, j, v);
            }
        }
    }
    let keep_symmetry = mu.symmetry() != Symmetry::None && region.conjugation_symmetric();
    let wrap = |field: ComplexField| {
        let c = BeltramiCoefficient::new(field, mu.bound())
            .expect("restriction of a valid coefficient stays valid");
        if keep_symmetry {
            c.with_symmetry(mu.symmetry())
                .expect("symmetric region preserves the symmetry class")
        } else {
            c
        }
    };
    (wrap(inside), wrap(outside))
}

/// Coefficient ν of the second factor in f = f₂∘f₁, where f₁ was solved from
/// a truncation μ₁ of μ_f. On the source grid
/// ν(f₁(z)) = ((μ_f − μ₁) / (1 − conj(μ₁)·μ_f)) · (∂f₁/|∂f₁|)²,
/// pushed forward to the lattice nearest f₁(z) (last write in sample order
/// wins) and dilated once to fill pushforward holes.
pub fn second_factor_coefficient(
    mu_f: &BeltramiCoefficient,
    f1: &PrincipalMapSolution,
) -> Result<BeltramiCoefficient> {
    let grid = mu_f.grid();
    if grid != f1.grid() {
        return Err(Error::Parameter("coefficient and map grids differ".into()));
    }
    let mu1 = f1.coefficient().field();
    let n = grid.n();
    let h = grid.spacing();
    let l = grid.half_extent();
    let guard = grid.guard_half();
    let dz_disp = d_z(f1.displacement());

    let mut pushed = vec![Complex64::new(0.0, 0.0); n * n];
    let mut written = vec![false; n * n];
    for j in 0..n {
        for i in 0..n {
            let a = mu_f.field().get(i, j);
            let b = mu1.get(i, j);
            if a.norm_sqr() == 0.0 && b.norm_sqr() == 0.0 {
                continue;
            }
            let p = Complex64::new(1.0, 0.0) + dz_disp.get(i, j);
            let pn = p.norm();
            if pn < 1e-6 {
                return Err(Error::DegenerateJacobian {
                    z: format!("{}", grid.point(i, j)),
                    value: pn,
                });
            }
            let phase = p / pn;
            let nu = (a - b) / (Complex64::new(1.0, 0.0) - b.conj() * a) * phase * phase;
            let w = grid.point(i, j) + f1.displacement().get(i, j);
            let iw = ((w.re + l) / h).round() as i64;
            let jw = ((w.im + l) / h).round() as i64;
            let iw = iw.rem_euclid(n as i64) as usize;
            let jw = jw.rem_euclid(n as i64) as usize;
            let zw = grid.point(iw, jw);
            if zw.re.abs() > guard || zw.im.abs() > guard {
                continue;
            }
            pushed[jw * n + iw] = nu;
            written[jw * n + iw] = true;
        }
    }

    // Fill isolated holes left by local expansion: an unwritten cell almost
    // surrounded by written ones is a pushforward gap, not support boundary
    // (boundary cells see at most six written neighbors, e.g. along the
    // zeroed lattice row of an antisymmetric coefficient).
    let mut filled = pushed.clone();
    for j in 0..n {
        for i in 0..n {
            if written[j * n + i] {
                continue;
            }
            let mut acc = Complex64::new(0.0, 0.0);
            let mut count = 0;
            for dj in -1i64..=1 {
                for di in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let ii = (i as i64 + di).rem_euclid(n as i64) as usize;
                    let jj = (j as i64 + dj).rem_euclid(n as i64) as usize;
                    if written[jj * n + ii] {
                        acc += pushed[jj * n + ii];
                        count += 1;
                    }
                }
            }
            if count >= 7 {
                filled[j * n + i] = acc / count as f64;
            }
        }
    }

    let k = mu_f.bound();
    for v in filled.iter_mut() {
        let m = v.norm();
        if m > k {
            *v *= k / m;
        }
    }
    BeltramiCoefficient::new(ComplexField::from_data(grid, filled)?, k)
}

/// Piecewise-constant random field on a mesh of square cells tiling the
/// guard band: each admitted cell (by its center and side) gets modulus
/// `modulus` and an independent uniform phase. Cells are visited row-major,
/// one draw per admitted cell, so outputs are reproducible for a fixed seed.
pub fn random_cell_field<R: Rng>(
    grid: GridSpec,
    modulus: f64,
    cell_side: f64,
    admit: impl Fn(Complex64, f64) -> bool,
    rng: &mut R,
) -> ComplexField {
    let guard = grid.guard_half();
    let cells = ((2.0 * guard) / cell_side).floor() as usize;
    let mut values = vec![Complex64::new(0.0, 0.0); cells * cells];
    for cj in 0..cells {
        for ci in 0..cells {
            let center = Complex64::new(
                -guard + (ci as f64 + 0.5) * cell_side,
                -guard + (cj as f64 + 0.5) * cell_side,
            );
            if admit(center, cell_side) {
                let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                values[cj * cells + ci] = Complex64::from_polar(modulus, phase);
            }
        }
    }
    ComplexField::from_fn(grid, |z| {
        let ci = ((z.re + guard) / cell_side).floor();
        let cj = ((z.im + guard) / cell_side).floor();
        if ci < 0.0 || cj < 0.0 || ci >= cells as f64 || cj >= cells as f64 {
            return Complex64::new(0.0, 0.0);
        }
        values[cj as usize * cells + ci as usize]
    })
}

/// Random antisymmetric coefficient with |μ| = k on admitted upper-half
/// cells, extended by μ(z) = −conj(μ(z̄)). The admit predicate sees cell
/// centers; cells touching ℝ or outside the upper half are never admitted.
pub fn random_antisymmetric_coefficient<R: Rng>(
    grid: GridSpec,
    k: f64,
    cell_side: f64,
    admit: impl Fn(Complex64, f64) -> bool,
    rng: &mut R,
) -> Result<BeltramiCoefficient> {
    let raw = random_cell_field(
        grid,
        k,
        cell_side,
        |c, s| c.im - 0.5 * s > 0.0 && admit(c, s),
        rng,
    );
    make_antisymmetric(&raw, k)
}

/// Coefficient of the radial power map f(z) = z·|z|^a inside the unit disk
/// (identity outside): μ = (a/(a+2))·(z/z̄)·χ_D. Requires a > −1 so that the
/// dilatation stays below 1. a = K−1 gives the K-stretch, a = 1/K−1 its
/// compression counterpart with the sharp 1/K Hölder behavior at the origin.
pub fn radial_power_coefficient(grid: GridSpec, a: f64) -> Result<BeltramiCoefficient> {
    if a <= -1.0 {
        return Err(Error::Parameter(format!("exponent {a} must exceed -1")));
    }
    let k = (a / (a + 2.0)).abs();
    let field = ComplexField::from_fn(grid, |z| {
        if z.norm() <= 1.0 && z.norm_sqr() > 0.0 {
            z / z.conj() * (a / (a + 2.0))
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    BeltramiCoefficient::new(field, k)?.with_symmetry(Symmetry::Symmetric)
}

/// Closed form of the radial power map: z·|z|^a on the unit disk, z outside.
pub fn radial_power_value(z: Complex64, a: f64) -> Complex64 {
    let r = z.norm();
    if r <= 1.0 && r > 0.0 {
        z * r.powf(a)
    } else {
        z
    }
}
