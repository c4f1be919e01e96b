//! Command implementations. Each command parses its configuration, runs the
//! experiment, and returns a JSON payload, an overall pass flag, and sidecar
//! files; the caller handles envelope assembly and filesystem placement.

use std::collections::BTreeSet;
use std::fmt;

use anyhow::{anyhow, Context as _, Result};
use num_complex::Complex64;
use serde::Serialize;

use qclab_core::distortion::{
    corollary_ratio, random_disk_layout, solve_disk_layout, write_smirnov_csv, DiskOnLine,
    SmirnovReport,
};
use qclab_core::dyadic::{
    packing_alpha, smoothness_tau, DyadicLattice, DyadicSquare, PackingWeight, SquareFamily,
};
use qclab_core::field::{
    beurling_transform, masked_relative_l2, rect_beurling_kernel, ComplexField,
    FourierMultiplier, GridSpec, SpectralEngine,
};
use qclab_core::hausdorff::{
    box_dimension, covering_sums, theorem_main_check, write_series_csv, Quasiline,
};
use qclab_core::riemann::{
    area_distortion, corner_lens_area, geometric_thresholds, layer_cake_consistency,
    solver_backed_riemann_tail, tail_statistics, write_tail_csv, DiskRegion, PowerMapSpec,
};
use qclab_core::rng::trial_rng;
use qclab_core::solver::{
    random_antisymmetric_coefficient, random_cell_field, solve_principal, BeltramiCoefficient,
    InterpMode,
};
use qclab_core::weighted::{diagonal_line_family, estimate_operator_norm};

use crate::config::ConfigMap;
use crate::svg::{Plot, Series};

/// Marker attached to configuration-phase failures so the caller can map
/// them to the usage exit code.
#[derive(Debug, Clone, Copy)]
pub struct Usage;

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("invalid configuration")
    }
}

pub struct CommandOutput {
    pub master_seed: u64,
    pub payload: serde_json::Value,
    pub pass: bool,
    pub sidecars: Vec<(String, Vec<u8>)>,
}

fn usage<T>(r: Result<T>) -> Result<T> {
    r.map_err(|e| e.context(Usage))
}

pub fn run(command: &str, cfg: &ConfigMap) -> Result<CommandOutput> {
    match command {
        "transform-check" => transform_check(cfg),
        "solve" => solve(cfg),
        "packing" => packing(cfg),
        "weighted-norm" => weighted_norm(cfg),
        "smirnov" => smirnov(cfg),
        "hausdorff" => hausdorff(cfg),
        "riemann" => riemann(cfg),
        other => Err(anyhow!("unknown command {other:?}").context(Usage)),
    }
}

#[derive(Serialize)]
struct TransformCheckPayload {
    grid_n: usize,
    half_extent: f64,
    disk_indicator_rel_l2: f64,
    disk_indicator_tol: f64,
    parseval_deviation: f64,
    parseval_tol: f64,
    intertwining_rel: f64,
    intertwining_tol: f64,
    pass: bool,
}

fn transform_check(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&["n", "l", "seed"]))?;
    let n = usage(cfg.get_usize("n", 512))?;
    let l = usage(cfg.get_f64("l", 4.0))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let grid = usage(GridSpec::new(n, l).map_err(Into::into))?;

    // Disk indicator against the planar kernel on the annulus, with the
    // periodization mean correction evaluated through the exact rectangle
    // kernel.
    let chi = ComplexField::from_fn(grid, |z| {
        if z.norm() <= 1.0 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let s = beurling_transform(&chi);
    let mean = std::f64::consts::PI / (4.0 * l * l);
    let target = ComplexField::from_fn(grid, |z| {
        if (1.1..=2.0).contains(&z.norm()) {
            -1.0 / (z * z) + mean / std::f64::consts::PI * rect_beurling_kernel(z, -l, l, -l, l)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let disk_rel = masked_relative_l2(&s, &target, |z| (1.1..=2.0).contains(&z.norm()));

    // Parseval on a seeded mean-zero field: the multiplier has modulus one
    // away from the removed constant mode.
    let mut rng = trial_rng(seed, 0);
    use rand::Rng;
    let mut raw = ComplexField::from_fn(grid, |_| Complex64::new(0.0, 0.0));
    for v in raw.data_mut() {
        *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let mean_value = raw.mean();
    for v in raw.data_mut() {
        *v -= mean_value;
    }
    let transformed = beurling_transform(&raw);
    let parseval = (transformed.l2_norm() / raw.l2_norm() - 1.0).abs();

    // Intertwining on a Gaussian bump.
    let phi = ComplexField::from_fn(grid, |z| Complex64::new((-4.0 * z.norm_sqr()).exp(), 0.0));
    let mut engine = SpectralEngine::new(grid.n());
    let lhs = FourierMultiplier::beurling().apply_with_engine(
        &FourierMultiplier::d_bar().apply_with_engine(&phi, &mut engine),
        &mut engine,
    );
    let rhs = FourierMultiplier::d_z().apply_with_engine(&phi, &mut engine);
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in lhs.data().iter().zip(rhs.data().iter()) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    let intertwining = (num / den).sqrt();

    let payload = TransformCheckPayload {
        grid_n: n,
        half_extent: l,
        disk_indicator_rel_l2: disk_rel,
        disk_indicator_tol: 0.02,
        parseval_deviation: parseval,
        parseval_tol: 1e-12,
        intertwining_rel: intertwining,
        intertwining_tol: 1e-8,
        pass: disk_rel <= 0.02 && parseval <= 1e-12 && intertwining <= 1e-8,
    };
    let pass = payload.pass;
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars: Vec::new(),
    })
}

#[derive(Serialize)]
struct SolvePayload {
    k: f64,
    seed: u64,
    grid_n: usize,
    half_extent: f64,
    symmetry: String,
    iterations: usize,
    residual: f64,
    max_residual_ratio: f64,
    contraction_bound: f64,
    contraction_ok: bool,
    displacement_sup: f64,
    ring_decay: (f64, f64),
    pass: bool,
}

fn solve(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&[
        "k", "seed", "n", "l", "cell", "symmetry", "tol", "max_iter", "save",
    ]))?;
    let k = usage(cfg.get_f64("k", 0.3))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let n = usage(cfg.get_usize("n", 512))?;
    let l = usage(cfg.get_f64("l", 2.0))?;
    let cell = usage(cfg.get_f64("cell", 0.125))?;
    let symmetry = cfg.get_string("symmetry", "antisymmetric");
    let tol = usage(cfg.get_f64("tol", 1e-8))?;
    let max_iter = usage(cfg.get_usize("max_iter", 400))?;
    let save = cfg.get_string("save", "");
    let grid = usage(GridSpec::new(n, l).map_err(Into::into))?;

    let mut rng = trial_rng(seed, 0);
    let admit = |c: Complex64, s: f64| c.norm() + 0.71 * s < 0.95;
    let mu = match symmetry.as_str() {
        "antisymmetric" => random_antisymmetric_coefficient(grid, k, cell, admit, &mut rng)
            .map_err(anyhow::Error::from)?,
        "none" => {
            let field = random_cell_field(grid, k, cell, admit, &mut rng);
            BeltramiCoefficient::new(field, k).map_err(anyhow::Error::from)?
        }
        other => {
            return Err(anyhow!("config key \"symmetry\": expected antisymmetric or none, got {other:?}")
                .context(Usage))
        }
    };
    let mut solution = solve_principal(&mu, tol, max_iter)?;
    solution.set_interp_mode(InterpMode::Bicubic);

    let history = solution.residual_history();
    let mut max_ratio = 0.0f64;
    for w in history.windows(2) {
        if w[0] > 0.0 {
            max_ratio = max_ratio.max(w[1] / w[0]);
        }
    }
    let contraction_ok = max_ratio <= k + 0.05;
    let displacement_sup = solution.displacement().sup_norm();
    let ring_decay = solution.ring_decay_stats();

    let mut csv = String::from("iteration,residual\n");
    for (i, r) in history.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, r));
    }
    let mut sidecars = vec![("residuals.csv".to_string(), csv.into_bytes())];
    if !save.is_empty() {
        if save.contains('/') || save.contains("..") {
            return Err(anyhow!("config key \"save\": plain file name required, got {save:?}")
                .context(Usage));
        }
        let tmp = std::env::temp_dir().join(format!("qclab-solution-{}.bin", std::process::id()));
        solution.save(&tmp).map_err(anyhow::Error::from)?;
        let bytes = std::fs::read(&tmp).context("reading saved solution")?;
        let _ = std::fs::remove_file(&tmp);
        sidecars.push((save, bytes));
    }

    let payload = SolvePayload {
        k,
        seed,
        grid_n: n,
        half_extent: l,
        symmetry,
        iterations: solution.iterations(),
        residual: solution.residual(),
        max_residual_ratio: max_ratio,
        contraction_bound: k + 0.05,
        contraction_ok,
        displacement_sup,
        ring_decay,
        pass: contraction_ok,
    };
    let pass = payload.pass;
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars,
    })
}

/// Exhaustive packing ratio: every ancestor of every member is a candidate.
fn oracle_packing_alpha(family: &SquareFamily, t: f64) -> (f64, bool) {
    let members = family.members();
    if members.len() < 2 {
        return (0.0, false);
    }
    let mut candidates = BTreeSet::new();
    for m in members {
        let mut q = *m;
        for _ in 0..80 {
            q = q.parent();
            candidates.insert(q);
        }
    }
    let mut best: Option<(f64, DyadicSquare)> = None;
    for r in candidates {
        let mut sum = 0.0;
        let mut count = 0usize;
        for m in members {
            if r.contains(m) {
                sum += family.lattice().side(*m).powf(t);
                count += 1;
            }
        }
        if count < 2 {
            continue;
        }
        let ratio = sum / family.lattice().side(r).powf(t);
        if best.map_or(true, |(b, _)| ratio > b) {
            best = Some((ratio, r));
        }
    }
    match best {
        Some((alpha, _)) => (alpha, true),
        None => (0.0, false),
    }
}

#[derive(Serialize)]
struct PackingPayload {
    member_count: usize,
    exponent_t: f64,
    alpha: f64,
    admissible: bool,
    witness: Option<DyadicSquare>,
    tau: f64,
    oracle_alpha: f64,
    oracle_admissible: bool,
    oracle_matches: bool,
    pass: bool,
}

fn packing(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&["family", "level", "file", "seed"]))?;
    let kind = cfg.get_string("family", "diagonal");
    let level = usage(cfg.get_u32("level", 4))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let family = match kind.as_str() {
        "diagonal" => usage(diagonal_line_family(level).map_err(Into::into))?,
        "file" => {
            let path = cfg.get_string("file", "");
            if path.is_empty() {
                return Err(anyhow!("config key \"file\" is required when family=file")
                    .context(Usage));
            }
            let text = usage(
                std::fs::read_to_string(&path)
                    .with_context(|| format!("cannot read family file {path}")),
            )?;
            usage(SquareFamily::from_text(&text).map_err(Into::into))?
        }
        other => {
            return Err(anyhow!("config key \"family\": expected diagonal or file, got {other:?}")
                .context(Usage))
        }
    };

    let t = family.exponent_t();
    let estimate = packing_alpha(&family, t).map_err(anyhow::Error::from)?;
    let tau = smoothness_tau(&family).map_err(anyhow::Error::from)?;
    let (oracle_alpha, oracle_admissible) = oracle_packing_alpha(&family, t);
    let oracle_matches =
        estimate.alpha == oracle_alpha && estimate.admissible == oracle_admissible;

    let payload = PackingPayload {
        member_count: family.members().len(),
        exponent_t: t,
        alpha: estimate.alpha,
        admissible: estimate.admissible,
        witness: estimate.witness,
        tau,
        oracle_alpha,
        oracle_admissible,
        oracle_matches,
        pass: oracle_matches,
    };
    let pass = payload.pass;
    let sidecars = vec![("family.txt".to_string(), family.to_text().into_bytes())];
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars,
    })
}

#[derive(Serialize)]
struct WeightedLevelRow {
    level: usize,
    estimate: f64,
    tau: f64,
    alpha: f64,
    grid_n: usize,
    trial_count: usize,
}

#[derive(Serialize)]
struct WeightedPayload {
    levels: Vec<WeightedLevelRow>,
    trend_max_over_min: f64,
    trend_bound: f64,
    single_square_estimate: f64,
    single_square_bound: f64,
    pass: bool,
}

fn weighted_norm(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&["levels", "trials", "seed"]))?;
    let levels = usage(cfg.get_usize_list("levels", &[3, 4, 5, 6]))?;
    let trials = usage(cfg.get_usize("trials", 8))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    if levels.is_empty() {
        return Err(anyhow!("config key \"levels\": need at least one level").context(Usage));
    }

    let mut rows = Vec::new();
    let mut csv = String::from("level,trial,ratio\n");
    for level in &levels {
        let family = diagonal_line_family(*level as u32).map_err(anyhow::Error::from)?;
        let t = family.exponent_t();
        let weight = PackingWeight::new(family, t).map_err(anyhow::Error::from)?;
        let report = estimate_operator_norm(&weight, trials, seed)?;
        for (i, r) in report.ratios.iter().enumerate() {
            csv.push_str(&format!("{level},{i},{r}\n"));
        }
        rows.push(WeightedLevelRow {
            level: *level,
            estimate: report.estimate,
            tau: report.tau,
            alpha: report.alpha,
            grid_n: report.grid_n,
            trial_count: report.trial_count,
        });
    }
    let (lo, hi) = rows
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), r| (a.min(r.estimate), b.max(r.estimate)));
    let trend = if rows.len() >= 2 { hi / lo } else { 1.0 };

    let single = SquareFamily::new(
        DyadicLattice::unit(),
        vec![DyadicSquare::new(2, 0, 0)],
        1.0,
    )
    .map_err(anyhow::Error::from)?;
    let single_weight = PackingWeight::new(single, 1.0).map_err(anyhow::Error::from)?;
    let single_estimate = estimate_operator_norm(&single_weight, trials, seed)?.estimate;

    let payload = WeightedPayload {
        levels: rows,
        trend_max_over_min: trend,
        trend_bound: 2.0,
        single_square_estimate: single_estimate,
        single_square_bound: 1.05,
        pass: trend < 2.0 && single_estimate <= 1.05,
    };
    let pass = payload.pass;
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars: vec![("ratios.csv".to_string(), csv.into_bytes())],
    })
}

#[derive(Serialize)]
struct CorollaryRow {
    seed: u64,
    disk_count: usize,
    ratio: f64,
}

#[derive(Serialize)]
struct SmirnovPayload {
    k: f64,
    exponents: Vec<f64>,
    disk_count: usize,
    seed_count: usize,
    grid_n: usize,
    reports: Vec<SmirnovReport>,
    worst_ratio: f64,
    corollary: Vec<CorollaryRow>,
    pass: bool,
}

fn smirnov(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&["k", "t_list", "disks", "seeds", "seed", "n", "corollary"]))?;
    let k = usage(cfg.get_f64("k", 0.4))?;
    let exponents = usage(cfg.get_f64_list("t_list", &[0.5, 1.0, 1.5, 2.0]))?;
    let disks = usage(cfg.get_usize("disks", 8))?;
    let seeds = usage(cfg.get_usize("seeds", 3))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let n = usage(cfg.get_usize("n", 1024))?;
    let with_corollary = usage(cfg.get_bool("corollary", true))?;
    if seeds == 0 || exponents.is_empty() {
        return Err(anyhow!("need at least one seed and one exponent").context(Usage));
    }

    let mut reports = Vec::new();
    let mut corollary = Vec::new();
    for s in 0..seeds as u64 {
        let trial_seed = seed + s;
        let mut rng = trial_rng(trial_seed, 7);
        let layout = random_disk_layout(disks, &mut rng).map_err(anyhow::Error::from)?;
        let solved = solve_disk_layout(k, &layout, trial_seed, n)?;
        for t in &exponents {
            reports.push(solved.smirnov_report(*t)?);
        }
        if with_corollary {
            let ambient = DiskOnLine { center: 0.0, radius: 1.0 };
            let ratio = corollary_ratio(&solved.solution, k, &layout, ambient, 64)?;
            corollary.push(CorollaryRow { seed: trial_seed, disk_count: layout.len(), ratio });
        }
    }
    let worst = reports.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let pass = reports.iter().all(|r| r.pass);

    let mut csv = Vec::new();
    write_smirnov_csv(&reports, &mut csv).map_err(anyhow::Error::from)?;

    let payload = SmirnovPayload {
        k,
        exponents,
        disk_count: disks,
        seed_count: seeds,
        grid_n: n,
        reports,
        worst_ratio: worst,
        corollary,
        pass,
    };
    let pass = payload.pass;
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars: vec![("smirnov.csv".to_string(), csv)],
    })
}

#[derive(Serialize)]
struct HausdorffPayload {
    k: f64,
    seed: u64,
    grid_n: usize,
    refine: usize,
    depth: u32,
    theorem: qclab_core::hausdorff::MainTheoremReport,
    covering: qclab_core::hausdorff::CoveringSumSeries,
    dimension: qclab_core::hausdorff::DimensionFit,
    dimension_bound: f64,
    pass: bool,
}

fn hausdorff(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&[
        "k", "seed", "n", "refine", "depth", "anchor", "radius", "segment", "s", "dense",
        "box_span", "box_min_level", "box_max_level",
    ]))?;
    let k = usage(cfg.get_f64("k", 0.3))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let n = usage(cfg.get_usize("n", 1024))?;
    let refine = usage(cfg.get_usize("refine", 16))?;
    let depth = usage(cfg.get_u32("depth", 10))?;
    let anchor = usage(cfg.get_f64("anchor", 0.0))?;
    let radius = usage(cfg.get_f64("radius", 0.5))?;
    let segment = usage(cfg.get_f64_list("segment", &[-1.0, 1.0]))?;
    let s_key = usage(cfg.get_f64("s", 0.0))?;
    let dense = usage(cfg.get_bool("dense", false))?;
    let box_span = usage(cfg.get_f64("box_span", 1.25))?;
    let box_min = usage(cfg.get_u32("box_min_level", 4))?;
    let box_max = usage(cfg.get_u32("box_max_level", 10))?;
    if segment.len() != 2 {
        return Err(anyhow!("config key \"segment\": expected two numbers a,b").context(Usage));
    }
    let s = if s_key > 0.0 { s_key } else { 1.0 + k * k };
    let grid = usage(GridSpec::new(n, 2.0).map_err(Into::into))?;

    let ql = Quasiline::generate(k, seed, grid, refine)?;
    let theorem = theorem_main_check(&ql, anchor, radius, depth)?;
    let ball = DiskOnLine {
        center: 0.5 * (segment[0] + segment[1]),
        radius: 0.75 * (segment[1] - segment[0]),
    };
    let covering = covering_sums(&ql, k, (segment[0], segment[1]), ball, s, depth, dense)?;
    let samples = ql.curve_samples(-box_span, box_span)?;
    let dimension = box_dimension(&samples, k, box_min, box_max)?;
    let bound = 1.0 + k * k + 0.05;

    let mut covering_csv = Vec::new();
    write_series_csv(&covering, &mut covering_csv).map_err(anyhow::Error::from)?;
    let mut curve_csv = String::from("x,y\n");
    for p in &samples {
        curve_csv.push_str(&format!("{},{}\n", p.re, p.im));
    }
    let curve_svg = Plot {
        title: format!("quasiline trace, k = {k}"),
        x_label: "Re f".into(),
        y_label: "Im f".into(),
        log_x: false,
        log_y: false,
        series: vec![Series {
            name: format!("seed {seed}"),
            points: samples.iter().map(|p| (p.re, p.im)).collect(),
            dashed: false,
        }],
    }
    .render();
    let covering_svg = Plot {
        title: format!("covering sums, s = {s:.4}"),
        x_label: "generation".into(),
        y_label: "S_m".into(),
        log_x: false,
        log_y: true,
        series: vec![Series {
            name: "S_m".into(),
            points: covering
                .records
                .iter()
                .map(|r| (r.generation as f64, r.sum))
                .collect(),
            dashed: false,
        }],
    }
    .render();

    let pass = !theorem.flagged
        && !covering.truncated
        && dimension.slope <= bound
        && !theorem.truncated;
    let payload = HausdorffPayload {
        k,
        seed,
        grid_n: n,
        refine,
        depth,
        theorem,
        covering,
        dimension,
        dimension_bound: bound,
        pass,
    };
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars: vec![
            ("covering.csv".to_string(), covering_csv),
            ("curve.csv".to_string(), curve_csv.into_bytes()),
            ("curve.svg".to_string(), curve_svg.into_bytes()),
            ("covering.svg".to_string(), covering_svg.into_bytes()),
        ],
    })
}

#[derive(Serialize)]
struct CapRow {
    delta: f64,
    ratio: f64,
    consistency: f64,
}

#[derive(Serialize)]
struct SolverTailRow {
    seed: u64,
    slope: Option<f64>,
    reference_slope: f64,
    residual: f64,
}

#[derive(Serialize)]
struct RiemannPayload {
    k: f64,
    resolution: usize,
    tail_slope: Option<f64>,
    tail_reference: f64,
    tail_slope_tol: f64,
    scaled_sup: f64,
    scaled_sup_exact: f64,
    scaled_sup_rel_err: f64,
    injectivity_collisions: usize,
    caps: Vec<CapRow>,
    cap_max_rel_spread: f64,
    layer_identity_discrepancy: f64,
    layer_cap_discrepancy: f64,
    solver_tails: Vec<SolverTailRow>,
    pass: bool,
}

fn riemann(cfg: &ConfigMap) -> Result<CommandOutput> {
    usage(cfg.restrict_to(&[
        "k", "resolution", "cap_levels", "cap_resolution", "layer", "solver_seeds", "seed",
        "injectivity_samples",
    ]))?;
    let k = usage(cfg.get_f64("k", 0.5))?;
    let resolution = usage(cfg.get_usize("resolution", 8192))?;
    let cap_levels = usage(cfg.get_usize_list("cap_levels", &[3, 4, 5, 6, 7, 8]))?;
    let cap_resolution = usage(cfg.get_usize("cap_resolution", 1024))?;
    let with_layer = usage(cfg.get_bool("layer", true))?;
    let solver_seeds = usage(cfg.get_usize("solver_seeds", 0))?;
    let seed = usage(cfg.get_u64("seed", 1))?;
    let injectivity_samples = usage(cfg.get_usize("injectivity_samples", 10_000))?;

    let spec = PowerMapSpec::new(k).map_err(anyhow::Error::from)?;
    let lo = 0.5 * spec.threshold_for_radius(2.0);
    let thresholds = geometric_thresholds(lo, 1000.0 * lo, 240).map_err(anyhow::Error::from)?;
    let window = (spec.threshold_for_radius(0.06), spec.threshold_for_radius(0.015));
    let stats = tail_statistics(
        |z| spec.derivative(z).norm(),
        k,
        &thresholds,
        resolution,
        None,
        Some(window),
    )?;
    let mut scaled_sup = 0.0f64;
    let mut scaled_sup_exact = 0.0f64;
    for (t, s) in stats.thresholds.iter().zip(&stats.scaled) {
        if *t < window.0 || *t > window.1 {
            continue;
        }
        let r = 2.0 * (0.5 * (1.0 - k) / t).powf(1.0 / k);
        scaled_sup = scaled_sup.max(*s);
        scaled_sup_exact = scaled_sup_exact.max(t.powf(2.0 / k) * corner_lens_area(r));
    }
    let scaled_rel = (scaled_sup - scaled_sup_exact).abs() / scaled_sup_exact;
    let slope_ok = stats
        .slope
        .map(|s| (s + 2.0 / k).abs() <= 0.05)
        .unwrap_or(false);

    let collisions = spec.injectivity_collisions(injectivity_samples);

    let mut caps = Vec::new();
    for level in &cap_levels {
        let delta = 0.5f64.powi(*level as i32);
        let report = area_distortion(
            |z| spec.derivative(z).norm(),
            spec.origin_derivative_abs(),
            k,
            &[DiskRegion::CornerCap { delta }],
            true,
            cap_resolution,
        )?;
        caps.push(CapRow { delta, ratio: report.ratio, consistency: report.consistency });
    }
    let cap_mean = caps.iter().map(|c| c.ratio).sum::<f64>() / caps.len().max(1) as f64;
    let cap_spread = caps
        .iter()
        .map(|c| (c.ratio - cap_mean).abs() / cap_mean)
        .fold(0.0, f64::max);

    let mut layer_identity = 0.0;
    let mut layer_cap = 0.0;
    if with_layer {
        let disk = [DiskRegion::Disk { cx: 0.0, cy: 0.0, radius: 0.5 }];
        let grid_id = geometric_thresholds(0.05, 50.0 + 1e-9, 1200).map_err(anyhow::Error::from)?;
        let tails_id = tail_statistics(|_| 1.0, k, &grid_id, 1024, Some(&disk), None)?;
        layer_identity = layer_cake_consistency(|_| 1.0, &tails_id, &disk)?.discrepancy;

        let delta = 0.125;
        let cap = [DiskRegion::CornerCap { delta }];
        let lo_cap = 0.05 * spec.threshold_for_radius(delta);
        let grid_cap =
            geometric_thresholds(lo_cap, 4.0e4 * lo_cap, 1600).map_err(anyhow::Error::from)?;
        let tails_cap = tail_statistics(
            |z| spec.derivative(z).norm(),
            k,
            &grid_cap,
            1024,
            Some(&cap),
            None,
        )?;
        layer_cap =
            layer_cake_consistency(|z| spec.derivative(z).norm(), &tails_cap, &cap)?.discrepancy;
    }

    let mut solver_rows = Vec::new();
    for i in 0..solver_seeds as u64 {
        let report = solver_backed_riemann_tail(k, seed + i)?;
        solver_rows.push(SolverTailRow {
            seed: seed + i,
            slope: report.stats.slope,
            reference_slope: report.reference_slope,
            residual: report.residual,
        });
    }
    let solver_ok = solver_rows
        .iter()
        .all(|r| r.slope.map(|s| s >= r.reference_slope - 0.1).unwrap_or(false));

    let mut tail_csv = Vec::new();
    write_tail_csv(&stats, &mut tail_csv).map_err(anyhow::Error::from)?;
    let reference_points: Vec<(f64, f64)> = stats
        .thresholds
        .iter()
        .zip(&stats.measures)
        .filter(|(t, m)| **m > 0.0 && **t >= window.0 && **t <= window.1)
        .map(|(t, _)| (*t, corner_lens_area(2.0 * (0.5 * (1.0 - k) / t).powf(1.0 / k))))
        .collect();
    let tail_svg = Plot {
        title: format!("derivative tails, k = {k}"),
        x_label: "rho".into(),
        y_label: "measure".into(),
        log_x: true,
        log_y: true,
        series: vec![
            Series {
                name: "quadrature".into(),
                points: stats
                    .thresholds
                    .iter()
                    .zip(&stats.measures)
                    .filter(|(_, m)| **m > 0.0)
                    .map(|(t, m)| (*t, *m))
                    .collect(),
                dashed: false,
            },
            Series { name: "lens closed form".into(), points: reference_points, dashed: true },
        ],
    }
    .render();

    let pass = slope_ok
        && scaled_rel <= 0.05
        && collisions == 0
        && cap_spread <= 0.10
        && (!with_layer || (layer_identity <= 0.01 && layer_cap <= 0.03))
        && solver_ok;
    let payload = RiemannPayload {
        k,
        resolution,
        tail_slope: stats.slope,
        tail_reference: -2.0 / k,
        tail_slope_tol: 0.05,
        scaled_sup,
        scaled_sup_exact,
        scaled_sup_rel_err: scaled_rel,
        injectivity_collisions: collisions,
        caps,
        cap_max_rel_spread: cap_spread,
        layer_identity_discrepancy: layer_identity,
        layer_cap_discrepancy: layer_cap,
        solver_tails: solver_rows,
        pass,
    };
    Ok(CommandOutput {
        master_seed: seed,
        payload: serde_json::to_value(payload)?,
        pass,
        sidecars: vec![
            ("tails.csv".to_string(), tail_csv),
            ("tails.svg".to_string(), tail_svg.into_bytes()),
        ],
    })
}
