//! Periodized complex fields on a square grid and the singular integral
//! operators realized as Fourier multipliers.
//!
//! The grid discretizes [-L, L)^2 with N samples per axis (N even), sample
//! (i, j) sitting at z = (-L + i h) + 𝒊 (-L + j h), h = 2L/N. Fields are
//! 2L-periodic in both axes; operators act on the frequency lattice
//! ζ = (π/L)(m + 𝒊 n) with integers m, n in (-N/2, N/2]. Compactly supported
//! data should stay inside the guard band |Re z|, |Im z| <= L/2 so the
//! periodization error of the planar kernels remains controlled.
//!
//! Multiplier symbols (derived from ∂ = (∂_x - 𝒊∂_y)/2, ∂̄ = (∂_x + 𝒊∂_y)/2
//! acting on e^{𝒊(ax + by)}, ζ = a + 𝒊b):
//!   d_z      : 𝒊 ζ̄ / 2
//!   d_bar    : 𝒊 ζ / 2
//!   beurling : ζ̄ / ζ          (unimodular; DC -> 0)
//!   cauchy   : 2 / (𝒊 ζ)      (right inverse of d_bar on mean-zero fields)

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Square periodic grid on [-L, L)^2.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    n: usize,
    half_extent: f64,
}

impl GridSpec {
    pub fn new(n: usize, half_extent: f64) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(Error::Parameter(format!(
                "grid size must be even and >= 16, got {n}"
            )));
        }
        if !(half_extent.is_finite() && half_extent > 0.0) {
            return Err(Error::Parameter(format!(
                "grid half extent must be positive, got {half_extent}"
            )));
        }
        Ok(GridSpec { n, half_extent })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_extent(&self) -> f64 {
        self.half_extent
    }

    /// Sample spacing h = 2L/N.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    /// Location of sample (i, j).
    pub fn point(&self, i: usize, j: usize) -> Complex64 {
        let h = self.spacing();
        Complex64::new(
            -self.half_extent + i as f64 * h,
            -self.half_extent + j as f64 * h,
        )
    }

    /// Half-width of the guard band: compact data should satisfy
    /// |Re z|, |Im z| <= guard_half().
    pub fn guard_half(&self) -> f64 {
        0.5 * self.half_extent
    }

    pub fn in_guard_band(&self, z: Complex64) -> bool {
        z.re.abs() <= self.guard_half() && z.im.abs() <= self.guard_half()
    }

    /// True when z lies inside the periodic fundamental domain.
    pub fn in_domain(&self, z: Complex64) -> bool {
        z.re >= -self.half_extent
            && z.re < self.half_extent
            && z.im >= -self.half_extent
            && z.im < self.half_extent
    }

    /// Fractional index coordinates of a point (periodic wrap not applied).
    pub fn fractional_index(&self, z: Complex64) -> (f64, f64) {
        let h = self.spacing();
        ((z.re + self.half_extent) / h, (z.im + self.half_extent) / h)
    }

    /// Frequency ζ = (π/L)(m + 𝒊 n) for FFT bin (a, b), with
    /// m, n in (-N/2, N/2].
    pub fn frequency(&self, a: usize, b: usize) -> Complex64 {
        let half = self.n / 2;
        let m = if a <= half { a as i64 } else { a as i64 - self.n as i64 };
        let n = if b <= half { b as i64 } else { b as i64 - self.n as i64 };
        let scale = std::f64::consts::PI / self.half_extent;
        Complex64::new(scale * m as f64, scale * n as f64)
    }
}

/// Complex samples over a `GridSpec`, row-major with x contiguous:
/// index = j * N + i for sample (i, j).
#[derive(Debug, Clone)]
pub struct ComplexField {
    grid: GridSpec,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: GridSpec) -> Self {
        ComplexField {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.n() * grid.n()],
        }
    }

    /// Fill from a closure; samples are visited row-major (j outer, i inner),
    /// which makes RNG-backed closures reproducible.
    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(Complex64) -> Complex64) -> Self {
        let n = grid.n();
        let mut data = Vec::with_capacity(n * n);
        for j in 0..n {
            for i in 0..n {
                data.push(f(grid.point(i, j)));
            }
        }
        ComplexField { grid, data }
    }

    pub fn from_data(grid: GridSpec, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.n() * grid.n() {
            return Err(Error::Parameter(format!(
                "field data length {} does not match grid {}^2",
                data.len(),
                grid.n()
            )));
        }
        Ok(ComplexField { grid, data })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[j * self.grid.n() + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[j * self.grid.n() + i] = v;
    }

    /// Continuum-normalized L2 norm: h * sqrt(Σ |f|^2).
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.data.iter().map(|v| v.norm_sqr()).sum();
        self.grid.spacing() * s.sqrt()
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Mean value over the fundamental domain.
    pub fn mean(&self) -> Complex64 {
        let s: Complex64 = self.data.iter().sum();
        s / (self.data.len() as f64)
    }

    /// Integral over the fundamental domain: h^2 Σ f.
    pub fn integral(&self) -> Complex64 {
        let s: Complex64 = self.data.iter().sum();
        s * self.grid.spacing().powi(2)
    }

    /// Largest |Re z| or |Im z| over samples with |f| > threshold; `None`
    /// when the field is entirely below the threshold.
    pub fn support_extent(&self, threshold: f64) -> Option<f64> {
        let n = self.grid.n();
        let mut extent: Option<f64> = None;
        for j in 0..n {
            for i in 0..n {
                if self.get(i, j).norm() > threshold {
                    let z = self.grid.point(i, j);
                    let e = z.re.abs().max(z.im.abs());
                    extent = Some(extent.map_or(e, |cur: f64| cur.max(e)));
                }
            }
        }
        extent
    }

    /// CSV dump, row-major, one sample per line as `re,im`.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        for v in &self.data {
            writeln!(w, "{},{}", v.re, v.im)?;
        }
        Ok(())
    }

    /// Flat binary dump: little-endian f64 pairs, row-major.
    pub fn write_binary(&self, w: &mut impl std::io::Write) -> Result<()> {
        for v in &self.data {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Cached FFT plans for one grid size, with an in-place square transpose so
/// the 2-D transform needs no second N^2 buffer.
pub struct SpectralEngine {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl fmt::Debug for SpectralEngine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralEngine").field("n", &self.n).finish()
    }
}

impl SpectralEngine {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        SpectralEngine {
            n,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    fn rows(&mut self, data: &mut [Complex64], fwd: bool) {
        let plan = if fwd { &self.forward } else { &self.inverse };
        for row in data.chunks_exact_mut(self.n) {
            plan.process_with_scratch(row, &mut self.scratch);
        }
    }

    /// Cache-blocked in-place transpose of the square array.
    fn transpose(&self, data: &mut [Complex64]) {
        const B: usize = 64;
        let n = self.n;
        let mut jb = 0;
        while jb < n {
            let jend = (jb + B).min(n);
            // Diagonal block.
            for j in jb..jend {
                for i in (j + 1)..jend {
                    data.swap(j * n + i, i * n + j);
                }
            }
            // Off-diagonal block pairs.
            let mut ib = jend;
            while ib < n {
                let iend = (ib + B).min(n);
                for j in jb..jend {
                    for i in ib..iend {
                        data.swap(j * n + i, i * n + j);
                    }
                }
                ib = iend;
            }
            jb = jend;
        }
    }

    /// Unnormalized forward 2-D FFT (rows then columns).
    pub fn forward2d(&mut self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n);
        self.rows(data, true);
        self.transpose(data);
        self.rows(data, true);
        self.transpose(data);
    }

    /// Inverse 2-D FFT including the 1/N^2 normalization.
    pub fn inverse2d(&mut self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n * self.n);
        self.rows(data, false);
        self.transpose(data);
        self.rows(data, false);
        self.transpose(data);
        let scale = 1.0 / (self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// 1-D plans for line refinement work.
    pub fn forward1d(&mut self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.forward.process_with_scratch(data, &mut self.scratch);
    }

    pub fn inverse1d_unnormalized(&mut self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.n);
        self.inverse.process_with_scratch(data, &mut self.scratch);
    }
}

/// Diagonal operator in frequency space: output coefficient = symbol(ζ) times
/// input coefficient for ζ != 0, and dc_value times the input DC coefficient.
pub struct FourierMultiplier {
    name: &'static str,
    symbol: Box<dyn Fn(Complex64) -> Complex64 + Send + Sync>,
    dc_value: Complex64,
}

impl fmt::Debug for FourierMultiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierMultiplier")
            .field("name", &self.name)
            .field("dc_value", &self.dc_value)
            .finish()
    }
}

impl FourierMultiplier {
    pub fn new(
        name: &'static str,
        symbol: impl Fn(Complex64) -> Complex64 + Send + Sync + 'static,
        dc_value: Complex64,
    ) -> Self {
        FourierMultiplier {
            name,
            symbol: Box::new(symbol),
            dc_value,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    /// Two-dimensional singular integral of Beurling type: unimodular symbol
    /// ζ̄/ζ, DC annihilated.
    pub fn beurling() -> Self {
        FourierMultiplier::new("beurling", |z| z.conj() / z, Complex64::new(0.0, 0.0))
    }

    /// Solid Cauchy transform: inverts d_bar on mean-zero fields.
    pub fn cauchy() -> Self {
        FourierMultiplier::new(
            "cauchy",
            |z| Complex64::new(0.0, -2.0) / z,
            Complex64::new(0.0, 0.0),
        )
    }

    /// Wirtinger derivative ∂̄.
    pub fn d_bar() -> Self {
        FourierMultiplier::new(
            "d_bar",
            |z| Complex64::new(0.0, 0.5) * z,
            Complex64::new(0.0, 0.0),
        )
    }

    /// Wirtinger derivative ∂.
    pub fn d_z() -> Self {
        FourierMultiplier::new(
            "d_z",
            |z| Complex64::new(0.0, 0.5) * z.conj(),
            Complex64::new(0.0, 0.0),
        )
    }

    /// Apply in place to spectral data laid out like the spatial grid.
    pub fn apply_spectrum(&self, grid: GridSpec, spectrum: &mut [Complex64]) {
        let n = grid.n();
        for b in 0..n {
            for a in 0..n {
                let idx = b * n + a;
                if a == 0 && b == 0 {
                    spectrum[idx] *= self.dc_value;
                } else {
                    spectrum[idx] *= (self.symbol)(grid.frequency(a, b));
                }
            }
        }
    }

    pub fn apply_with_engine(&self, f: &ComplexField, engine: &mut SpectralEngine) -> ComplexField {
        assert_eq!(engine.n, f.grid().n(), "engine planned for a different grid");
        let mut out = f.clone();
        engine.forward2d(out.data_mut());
        self.apply_spectrum(f.grid(), out.data_mut());
        engine.inverse2d(out.data_mut());
        out
    }

    pub fn apply(&self, f: &ComplexField) -> ComplexField {
        let mut engine = SpectralEngine::new(f.grid().n());
        self.apply_with_engine(f, &mut engine)
    }
}

/// Beurling transform of a periodized field.
pub fn beurling_transform(f: &ComplexField) -> ComplexField {
    FourierMultiplier::beurling().apply(f)
}

/// Solid Cauchy transform (DC removed, so defined on any field; exact right
/// inverse of `d_bar` on mean-zero fields).
pub fn cauchy_transform(f: &ComplexField) -> ComplexField {
    FourierMultiplier::cauchy().apply(f)
}

/// Spectral ∂̄ derivative.
pub fn d_bar(f: &ComplexField) -> ComplexField {
    FourierMultiplier::d_bar().apply(f)
}

/// Spectral ∂ derivative.
pub fn d_z(f: &ComplexField) -> ComplexField {
    FourierMultiplier::d_z().apply(f)
}

/// Relative L2 distance between two fields restricted to samples selected by
/// `mask` (returns numerator / denominator of ||a - b|| / ||b||).
pub fn masked_relative_l2(
    a: &ComplexField,
    b: &ComplexField,
    mask: impl Fn(Complex64) -> bool,
) -> f64 {
    let n = a.grid().n();
    let mut num = 0.0;
    let mut den = 0.0;
    for j in 0..n {
        for i in 0..n {
            let z = a.grid().point(i, j);
            if mask(z) {
                num += (a.get(i, j) - b.get(i, j)).norm_sqr();
                den += b.get(i, j).norm_sqr();
            }
        }
    }
    (num / den).sqrt()
}

fn rect_corners(s0: f64, s1: f64, t0: f64, t1: f64) -> [Complex64; 4] {
    [
        Complex64::new(s0, t0),
        Complex64::new(s1, t0),
        Complex64::new(s1, t1),
        Complex64::new(s0, t1),
    ]
}

/// Exact ∫_R 1/(z-ξ) dA(ξ) over an axis-aligned rectangle, valid for z
/// inside or outside R. Stokes turns the area integral into a boundary
/// integral; per straight edge the log of a ratio subtends less than a
/// half turn, so the principal branch is the continuous one.
pub fn rect_cauchy_kernel(z: Complex64, s0: f64, s1: f64, t0: f64, t1: f64) -> Complex64 {
    let corners = rect_corners(s0, s1, t0, t1);
    let mut acc = Complex64::new(0.0, 0.0);
    for e in 0..4 {
        let p = corners[e];
        let q = corners[(e + 1) % 4];
        let d = q - p;
        let w0 = z - p;
        let w1 = z - q;
        acc += (w0 * d.conj() / d - w0.conj()) * (w0 / w1).ln();
    }
    -Complex64::new(0.0, 0.5) * acc
}

/// Exact p.v. ∫_R 1/(z-ξ)^2 dA(ξ) over an axis-aligned rectangle, valid
/// for z inside or outside R (the circular excision around an interior z
/// contributes nothing by symmetry).
pub fn rect_beurling_kernel(z: Complex64, s0: f64, s1: f64, t0: f64, t1: f64) -> Complex64 {
    let corners = rect_corners(s0, s1, t0, t1);
    let mut acc = Complex64::new(0.0, 0.0);
    for e in 0..4 {
        let p = corners[e];
        let q = corners[(e + 1) % 4];
        let d = q - p;
        acc += d.conj() / d * ((z - p) / (z - q)).ln();
    }
    Complex64::new(0.0, 0.5) * acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid(n: usize, l: f64) -> GridSpec {
        GridSpec::new(n, l).unwrap()
    }

    /// Product-integration oracle for the Beurling transform: exact kernel
    /// integral per grid cell, field frozen at the cell midpoint. The
    /// diagonal cell is dropped: the principal value of 1/ζ^2 over a centered
    /// square vanishes by quarter-turn antisymmetry of the kernel.
    fn beurling_quadrature(f: &ComplexField, targets: &[(usize, usize)]) -> Vec<Complex64> {
        let g = f.grid();
        let n = g.n();
        let h = g.spacing();
        let mut out = Vec::with_capacity(targets.len());
        for &(ti, tj) in targets {
            let zt = g.point(ti, tj);
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..n {
                for i in 0..n {
                    if i == ti && j == tj {
                        continue;
                    }
                    let v = f.get(i, j);
                    if v.norm_sqr() == 0.0 {
                        continue;
                    }
                    let zc = g.point(i, j);
                    acc += v
                        * rect_beurling_kernel(
                            zt,
                            zc.re - 0.5 * h,
                            zc.re + 0.5 * h,
                            zc.im - 0.5 * h,
                            zc.im + 0.5 * h,
                        );
                }
            }
            out.push(-acc / std::f64::consts::PI);
        }
        out
    }

    fn unit_disk_indicator(g: GridSpec) -> ComplexField {
        ComplexField::from_fn(g, |z| {
            if z.norm() <= 1.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    #[test]
    fn indicator_disk_beurling_matches_planar_kernel() {
        // Planar transform of the unit-disk indicator: 0 inside, -1/z^2
        // outside. The periodized operator annihilates the mean, so the
        // planar reference picks up the transform of (mean over the
        // fundamental cell), computed exactly via the rectangle kernel.
        let g = grid(512, 4.0);
        let l = g.half_extent();
        let chi = unit_disk_indicator(g);
        let s = beurling_transform(&chi);
        let mean = std::f64::consts::PI / (4.0 * l * l);
        let target = ComplexField::from_fn(g, |z| {
            let r = z.norm();
            let planar = if r <= 0.9 {
                Complex64::new(0.0, 0.0)
            } else if (1.1..=2.0).contains(&r) {
                -1.0 / (z * z)
            } else {
                return Complex64::new(0.0, 0.0);
            };
            planar + mean / std::f64::consts::PI * rect_beurling_kernel(z, -l, l, -l, l)
        });
        let rel = masked_relative_l2(&s, &target, |z| {
            let r = z.norm();
            (1.1..=2.0).contains(&r) || r <= 0.9
        });
        assert!(rel <= 0.02, "relative L2 error {rel} > 2%");
    }

    #[test]
    fn indicator_disk_cauchy_matches_closed_form() {
        // Planar Cauchy transform of the unit-disk indicator: z̄ inside, 1/z
        // outside, with the same fundamental-cell mean correction.
        let g = grid(512, 4.0);
        let l = g.half_extent();
        let chi = unit_disk_indicator(g);
        let c = cauchy_transform(&chi);
        let mean = std::f64::consts::PI / (4.0 * l * l);
        let target = ComplexField::from_fn(g, |z| {
            let r = z.norm();
            let planar = if r <= 0.9 {
                z.conj()
            } else if (1.1..=2.0).contains(&r) {
                1.0 / z
            } else {
                return Complex64::new(0.0, 0.0);
            };
            planar - mean / std::f64::consts::PI * rect_cauchy_kernel(z, -l, l, -l, l)
        });
        let rel = masked_relative_l2(&c, &target, |z| {
            let r = z.norm();
            r <= 0.9 || (1.1..=2.0).contains(&r)
        });
        assert!(rel <= 0.02, "relative L2 error {rel} > 2%");
    }

    #[test]
    fn beurling_agrees_with_direct_quadrature_on_smooth_bumps() {
        // Independent oracle: product-integration quadrature on a small grid
        // against the multiplier realization, on five seeded mean-zero dipole
        // bumps. Zero mean keeps the planar quadrature comparable to the
        // periodized operator (the far tail decays like 1/z^3).
        let g = grid(64, 4.0);
        let mut rng = crate::rng::seeded_rng(0x123);
        for trial in 0..5 {
            let cx: f64 = rng.gen_range(-0.7..0.7);
            let cy: f64 = rng.gen_range(-0.7..0.7);
            let sep: f64 = rng.gen_range(0.35..0.6);
            let sigma: f64 = rng.gen_range(0.35..0.5);
            let amp = Complex64::new(rng.gen_range(0.5..1.5), rng.gen_range(-0.5..0.5));
            let f = ComplexField::from_fn(g, |z| {
                let d1 = z - Complex64::new(cx - sep, cy);
                let d2 = z - Complex64::new(cx + sep, cy);
                let b1 = (-d1.norm_sqr() / (2.0 * sigma * sigma)).exp();
                let b2 = (-d2.norm_sqr() / (2.0 * sigma * sigma)).exp();
                amp * (b1 - b2)
            });
            let s = beurling_transform(&f);

            let n = g.n();
            let mut targets = Vec::new();
            for j in (0..n).step_by(2) {
                for i in (0..n).step_by(2) {
                    if g.in_guard_band(g.point(i, j)) {
                        targets.push((i, j));
                    }
                }
            }
            let quad = beurling_quadrature(&f, &targets);
            let mut num = 0.0;
            let mut den = 0.0;
            for (idx, &(i, j)) in targets.iter().enumerate() {
                num += (s.get(i, j) - quad[idx]).norm_sqr();
                den += quad[idx].norm_sqr();
            }
            let rel = (num / den).sqrt();
            assert!(rel <= 0.02, "trial {trial}: quadrature mismatch {rel} > 2%");
        }
    }

    #[test]
    fn dbar_of_cauchy_is_identity_on_mean_zero() {
        let g = grid(128, 2.0);
        let mut rng = crate::rng::seeded_rng(7);
        // Band-limited random field, mean removed exactly.
        let mut f = ComplexField::zeros(g);
        let mut engine = SpectralEngine::new(g.n());
        for _ in 0..40 {
            let a = rng.gen_range(1..10usize);
            let b = rng.gen_range(1..10usize);
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let zeta = g.frequency(a, b);
            let base = ComplexField::from_fn(g, |z| {
                c * Complex64::new(0.0, zeta.re * z.re + zeta.im * z.im).exp()
            });
            for (dst, src) in f.data_mut().iter_mut().zip(base.data().iter()) {
                *dst += *src;
            }
        }
        let c = FourierMultiplier::cauchy().apply_with_engine(&f, &mut engine);
        let back = FourierMultiplier::d_bar().apply_with_engine(&c, &mut engine);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in back.data().iter().zip(f.data().iter()) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-12, "d_bar ∘ cauchy deviates: {rel}");
    }

    #[test]
    fn beurling_intertwines_wirtinger_derivatives() {
        // S(∂̄φ) = ∂φ for a smooth compactly supported Gaussian.
        let g = grid(512, 4.0);
        let phi = ComplexField::from_fn(g, |z| {
            Complex64::new((-4.0 * z.norm_sqr()).exp(), 0.0)
        });
        let mut engine = SpectralEngine::new(g.n());
        let lhs = FourierMultiplier::beurling()
            .apply_with_engine(&FourierMultiplier::d_bar().apply_with_engine(&phi, &mut engine), &mut engine);
        let rhs = FourierMultiplier::d_z().apply_with_engine(&phi, &mut engine);
        let mut num = 0.0;
        let mut den = 0.0;
        for (a, b) in lhs.data().iter().zip(rhs.data().iter()) {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
        let rel = (num / den).sqrt();
        assert!(rel <= 1e-8, "intertwining residual {rel}");
    }

    #[test]
    fn derivatives_of_constants_and_linear_fields() {
        let g = grid(512, 2.0);
        let c = ComplexField::from_fn(g, |_| Complex64::new(0.7, -0.3));
        assert!(d_z(&c).sup_norm() <= 1e-13);
        assert!(d_bar(&c).sup_norm() <= 1e-13);

        // Infinitely smooth cutoff times z: ∂ -> 1 and ∂̄ -> 0 in the region
        // where the cutoff is flat. Smoothness keeps the spectral tail below
        // the tolerance.
        let ramp = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
        let cut = move |z: Complex64| {
            let s = (z.norm() - 0.5) / 0.7;
            let a = ramp(s);
            let b = ramp(1.0 - s);
            b / (a + b)
        };
        let f = ComplexField::from_fn(g, |z| z * cut(z));
        let dzf = d_z(&f);
        let dbf = d_bar(&f);
        let n = g.n();
        for j in 0..n {
            for i in 0..n {
                let z = g.point(i, j);
                if z.norm() < 0.3 {
                    assert!(
                        (dzf.get(i, j) - Complex64::new(1.0, 0.0)).norm() <= 1e-8,
                        "d_z deviates at {z}"
                    );
                    assert!(dbf.get(i, j).norm() <= 1e-8, "d_bar deviates at {z}");
                }
            }
        }
    }

    #[test]
    fn parseval_identity_holds() {
        let g = grid(128, 3.0);
        let mut rng = crate::rng::seeded_rng(99);
        let mut f = ComplexField::from_fn(g, |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        // Remove the mean so the identity is exercised on mean-zero data.
        let mean = f.mean();
        for v in f.data_mut().iter_mut() {
            *v -= mean;
        }
        let spatial: f64 = f.data().iter().map(|v| v.norm_sqr()).sum::<f64>()
            * g.spacing().powi(2);
        let mut spec = f.clone();
        let mut engine = SpectralEngine::new(g.n());
        engine.forward2d(spec.data_mut());
        let nn = (g.n() * g.n()) as f64;
        let freq: f64 = spec.data().iter().map(|v| v.norm_sqr()).sum::<f64>()
            / nn
            * g.spacing().powi(2);
        let rel = ((spatial - freq) / spatial).abs();
        assert!(rel <= 1e-12, "Parseval deviation {rel}");
    }

    #[test]
    fn multipliers_are_linear() {
        let g = grid(64, 2.0);
        let mut rng = crate::rng::seeded_rng(5);
        let f1 = ComplexField::from_fn(g, |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let f2 = ComplexField::from_fn(g, |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        });
        let a = Complex64::new(0.3, -1.2);
        let b = Complex64::new(-0.8, 0.4);
        let combo = ComplexField::from_data(
            g,
            f1.data()
                .iter()
                .zip(f2.data().iter())
                .map(|(x, y)| a * x + b * y)
                .collect(),
        )
        .unwrap();
        for mult in [
            FourierMultiplier::beurling(),
            FourierMultiplier::cauchy(),
            FourierMultiplier::d_bar(),
            FourierMultiplier::d_z(),
        ] {
            let lhs = mult.apply(&combo);
            let r1 = mult.apply(&f1);
            let r2 = mult.apply(&f2);
            let mut worst = 0.0f64;
            let mut scale = 0.0f64;
            for idx in 0..lhs.data().len() {
                let rhs = a * r1.data()[idx] + b * r2.data()[idx];
                worst = worst.max((lhs.data()[idx] - rhs).norm());
                scale = scale.max(rhs.norm());
            }
            assert!(
                worst <= 1e-12 * scale.max(1.0),
                "{} not linear: {worst}",
                mult.name()
            );
        }
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let g = grid(32, 1.0);
        let z = ComplexField::zeros(g);
        assert_eq!(beurling_transform(&z).sup_norm(), 0.0);
        assert_eq!(cauchy_transform(&z).sup_norm(), 0.0);
    }

    #[test]
    fn output_mean_is_zero() {
        let g = grid(64, 2.0);
        let f = ComplexField::from_fn(g, |z| {
            Complex64::new((-z.norm_sqr()).exp(), 0.2 * (-z.norm_sqr()).exp())
        });
        for mult in [FourierMultiplier::beurling(), FourierMultiplier::cauchy()] {
            let out = mult.apply(&f);
            assert!(
                out.mean().norm() <= 1e-13 * f.sup_norm(),
                "{} output mean not annihilated",
                mult.name()
            );
        }
    }

    #[test]
    fn conjugate_reflection_symmetry_is_preserved() {
        // If f(z̄) = conj(f(z)) holds samplewise, the transform output
        // satisfies the same relation at mirrored lattice rows j <-> N - j.
        // The field is a sum of conjugate-paired Gaussian bumps: smooth, so
        // no energy sits on the self-paired Nyquist modes, and the pointwise
        // construction is exactly symmetric in floating point.
        let g = grid(128, 2.0);
        let mut rng = crate::rng::seeded_rng(31);
        let mut bumps = Vec::new();
        for _ in 0..6 {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(1.0..1.1));
            let a = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let sigma: f64 = rng.gen_range(0.09..0.11);
            bumps.push((c, a, sigma));
        }
        let f = ComplexField::from_fn(g, |z| {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(c, a, sigma) in &bumps {
                let s = 2.0 * sigma * sigma;
                acc += a * (-(z - c).norm_sqr() / s).exp();
                acc += a.conj() * (-(z - c.conj()).norm_sqr() / s).exp();
            }
            acc
        });
        let n = g.n();
        for op in [
            FourierMultiplier::beurling(),
            FourierMultiplier::cauchy(),
            FourierMultiplier::d_z(),
            FourierMultiplier::d_bar(),
        ] {
            let s = op.apply(&f);
            let mut worst = 0.0f64;
            for j in 1..n {
                for i in 0..n {
                    let mirrored = s.get(i, n - j).conj();
                    worst = worst.max((s.get(i, j) - mirrored).norm());
                }
            }
            assert!(worst <= 1e-12, "{}: symmetry broken by {worst}", op.name());
        }
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(15, 1.0).is_err());
        assert!(GridSpec::new(14, 1.0).is_err());
        assert!(GridSpec::new(16, 0.0).is_err());
        assert!(GridSpec::new(16, 1.0).is_ok());
    }

    #[test]
    fn frequency_lattice_covers_expected_range() {
        let g = grid(16, 2.0);
        // m runs over (-8, 8]: index 8 maps to +8, index 9 to -7.
        let scale = std::f64::consts::PI / 2.0;
        assert!((g.frequency(8, 0).re - 8.0 * scale).abs() < 1e-15);
        assert!((g.frequency(9, 0).re + 7.0 * scale).abs() < 1e-15);
        assert!((g.frequency(0, 3).im - 3.0 * scale).abs() < 1e-15);
    }
}
