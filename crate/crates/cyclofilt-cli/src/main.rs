//! Command-line driver: config-driven filtering, robust (minimax) search,
//! Monte Carlo simulation, a self-contained validation suite, and increment
//! inspection. All outputs are plot-ready CSV/JSON files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use cyclofilt_core::error::{Error, Result};
use cyclofilt_core::filter::{solve_filter, FilterOptions, FilterSolution, TruncationPolicy};
use cyclofilt_core::increments::{
    check_stationarity, expand_increment_coeffs, seasonal_root_set, IncrementSpec,
};
use cyclofilt_core::lift::{lift_coefficients, single_value_coefficients, LiftedCoefficients};
use cyclofilt_core::minimax::{
    cross_context, cross_delta, least_favorable, least_favorable_noise_semi, sample_member,
    DensityClass, MinimaxOptions, MinimaxSolution,
};
use cyclofilt_core::simulate::{monte_carlo_mse, SimConfig};
use cyclofilt_core::spectral::SpectralDensityGrid;

mod validate;

#[derive(Parser)]
#[command(name = "cyclofilt", version, about = "Filtering for seasonal-increment sequences")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the filtering problem for a density pair.
    Filter(RunArgs),
    /// Search a least favorable density pair and the robust characteristic.
    Minimax(RunArgs),
    /// Monte Carlo cross-validation of the filter error.
    Simulate(RunArgs),
    /// Run the built-in validation suite on internal fixtures.
    Validate(ValidateArgs),
    /// Inspect increment operator coefficients and classification.
    Increments(IncArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration JSON (unknown keys rejected).
    #[arg(long)]
    config: PathBuf,
    /// Frequency grid size override.
    #[arg(long)]
    grid: Option<usize>,
    /// Coefficient truncation override (fixed block count).
    #[arg(long)]
    blocks: Option<usize>,
    /// Tolerance override.
    #[arg(long)]
    tol: Option<f64>,
    /// RNG seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (1 forces sequential execution).
    #[arg(long)]
    threads: Option<usize>,
    /// Relative ridge for near-singular pointwise inversions.
    #[arg(long)]
    regularize: Option<f64>,
    /// Estimate the single value at lag M instead of a functional.
    #[arg(long, value_name = "M")]
    single_value: Option<usize>,
    /// Treat the signal density as known; search noise only.
    #[arg(long)]
    semi: bool,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Reduced sizes and replication counts.
    #[arg(long)]
    quick: bool,
    /// RNG seed for the randomized checks.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Worker threads (1 forces sequential execution).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct IncArgs {
    /// Increment spec JSON.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// On-disk run configuration; every command reads the same shape and uses
/// the fields it needs. Paths are resolved relative to the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    spec: Option<String>,
    signal_density: Option<String>,
    noise_density: Option<String>,
    coefficients: Option<String>,
    signal_class: Option<String>,
    noise_class: Option<String>,
    grid: Option<usize>,
    blocks: Option<usize>,
    tol: Option<f64>,
    project_tol: Option<f64>,
    max_iters: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
    regularize: Option<f64>,
    single_value: Option<usize>,
    #[serde(default)]
    semi: bool,
    length: Option<usize>,
    burn_in: Option<usize>,
    replications: Option<usize>,
    audit_samples: Option<usize>,
    out_dir: Option<String>,
}

/// Config merged with command-line overrides and resolved paths.
struct Effective {
    base: PathBuf,
    cfg: RunConfig,
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Filter(a) => cmd_filter(a),
        Cmd::Minimax(a) => cmd_minimax(a),
        Cmd::Simulate(a) => cmd_simulate(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Increments(a) => cmd_increments(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                Error::Input(_) => "input",
                Error::Unsupported(_) => "unsupported",
                Error::Numerical(_) => "numerical",
            };
            eprintln!(
                "{}",
                serde_json::to_string(&json!({
                    "error": { "kind": kind, "message": e.to_string() }
                }))
                .expect("error serialization")
            );
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn setup_threads(threads: Option<usize>) {
    match threads {
        Some(1) => cyclofilt_core::exec::force_sequential(true),
        #[cfg(feature = "parallel")]
        Some(n) if n > 1 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// file IO
// ---------------------------------------------------------------------------

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Error::Input(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Error::Input(format!("cannot write {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Input(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

/// Density grid JSON: `{"t": T, "lambdas": [...], "values": [cell][row][col] = [re, im]}`.
/// The frequency grid is always the midpoint grid; a present `lambdas` field
/// is validated against it.
#[derive(Serialize, Deserialize)]
struct DensityFile {
    t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambdas: Option<Vec<f64>>,
    values: Vec<Vec<Vec<[f64; 2]>>>,
}

fn density_to_file(g: &SpectralDensityGrid) -> DensityFile {
    DensityFile {
        t: g.t,
        lambdas: Some(g.lambdas.clone()),
        values: g
            .values
            .iter()
            .map(|m| {
                (0..g.t)
                    .map(|i| (0..g.t).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                    .collect()
            })
            .collect(),
    }
}

fn density_from_file(file: DensityFile, what: &str) -> Result<SpectralDensityGrid> {
    let t = file.t;
    let m_grid = file.values.len();
    if t == 0 || m_grid == 0 {
        return Err(Error::Input(format!("{what}: empty density grid")));
    }
    let mut values = Vec::with_capacity(m_grid);
    for (mi, cell) in file.values.iter().enumerate() {
        if cell.len() != t || cell.iter().any(|row| row.len() != t) {
            return Err(Error::Input(format!("{what}: cell {mi} is not {t}x{t}")));
        }
        values.push(DMatrix::from_fn(t, t, |i, j| {
            Complex64::new(cell[i][j][0], cell[i][j][1])
        }));
    }
    let grid = SpectralDensityGrid {
        t,
        lambdas: cyclofilt_core::spectral::midpoint_lambdas(m_grid),
        values,
    };
    if let Some(lams) = file.lambdas {
        if lams.len() != m_grid
            || lams
                .iter()
                .zip(&grid.lambdas)
                .any(|(a, b)| (a - b).abs() > 1e-10)
        {
            return Err(Error::Input(format!(
                "{what}: lambdas field does not match the midpoint grid"
            )));
        }
    }
    grid.validate()?;
    Ok(grid)
}

fn load_density(path: &Path, what: &str) -> Result<SpectralDensityGrid> {
    density_from_file(parse_json(path)?, what)
}

fn save_density(path: &Path, g: &SpectralDensityGrid) -> Result<()> {
    let value = serde_json::to_value(density_to_file(g))
        .map_err(|e| Error::Input(format!("serialize density: {e}")))?;
    write_json(path, &value)
}

fn matrix_from_json(v: &Value, what: &str) -> Result<DMatrix<Complex64>> {
    let rows: Vec<Vec<[f64; 2]>> = serde_json::from_value(v.clone())
        .map_err(|e| Error::Input(format!("{what}: expected [[..row..]] matrix: {e}")))?;
    let t = rows.len();
    if t == 0 || rows.iter().any(|r| r.len() != t) {
        return Err(Error::Input(format!("{what}: matrix must be square")));
    }
    Ok(DMatrix::from_fn(t, t, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
}

// ---------------------------------------------------------------------------
// class files
// ---------------------------------------------------------------------------

/// Class JSON: `{"kind": "D0_2", ...params}`. Grid parameters (`v`, `u`,
/// `g1`) are file paths relative to the class file; scalar/matrix parameters
/// are inline.
fn load_class(path: &Path) -> Result<DensityClass> {
    let v: Value = parse_json(path)?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::Input(format!("{}: class file must be an object", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::Input(format!("{}: missing class kind", path.display())))?;
    let need = |key: &str| -> Result<&Value> {
        obj.get(key)
            .ok_or_else(|| Error::Input(format!("{}: class needs field {key}", path.display())))
    };
    let need_f64 = |key: &str| -> Result<f64> {
        need(key)?
            .as_f64()
            .ok_or_else(|| Error::Input(format!("{}: field {key} must be a number", path.display())))
    };
    let need_vec = |key: &str| -> Result<Vec<f64>> {
        serde_json::from_value(need(key)?.clone())
            .map_err(|e| Error::Input(format!("{}: field {key}: {e}", path.display())))
    };
    let need_grid = |key: &str| -> Result<SpectralDensityGrid> {
        let rel = need(key)?.as_str().ok_or_else(|| {
            Error::Input(format!("{}: field {key} must be a density file path", path.display()))
        })?;
        load_density(&base.join(rel), key)
    };
    let need_mat = |key: &str| -> Result<DMatrix<Complex64>> { matrix_from_json(need(key)?, key) };
    let known = [
        "kind", "p", "p_k", "q", "q_k", "b", "v", "u", "g1", "eps",
    ];
    for key in obj.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::Input(format!("{}: unknown class field {key}", path.display())));
        }
    }
    let cls = match kind {
        "D0_1" | "moment-matrix" => DensityClass::MomentMatrix { p: need_mat("p")? },
        "D0_2" | "moment-trace" => DensityClass::MomentTrace { p: need_f64("p")? },
        "D0_3" | "moment-diag" => DensityClass::MomentDiag { p: need_vec("p_k")? },
        "D0_4" | "moment-weighted" => {
            DensityClass::MomentWeighted { b: need_mat("b")?, p: need_f64("p")? }
        }
        "DVU_1" | "band-matrix" => DensityClass::BandMatrix {
            v: need_grid("v")?,
            u: need_grid("u")?,
            q: need_mat("q")?,
        },
        "DVU_2" | "band-trace" => DensityClass::BandTrace {
            v: need_grid("v")?,
            u: need_grid("u")?,
            q: need_f64("q")?,
        },
        "DVU_3" | "band-diag" => DensityClass::BandDiag {
            v: need_grid("v")?,
            u: need_grid("u")?,
            q: need_vec("q_k")?,
        },
        "DVU_4" | "band-weighted" => DensityClass::BandWeighted {
            v: need_grid("v")?,
            u: need_grid("u")?,
            b: need_mat("b")?,
            q: need_f64("q")?,
        },
        "Deps_1" | "mix-trace" => DensityClass::MixTrace {
            eps: need_f64("eps")?,
            g1: need_grid("g1")?,
            q: need_f64("q")?,
        },
        "Deps_2" | "mix-diag" => DensityClass::MixDiag {
            eps: need_f64("eps")?,
            g1: need_grid("g1")?,
            q: need_vec("q_k")?,
        },
        "Deps_3" | "mix-weighted" => DensityClass::MixWeighted {
            eps: need_f64("eps")?,
            g1: need_grid("g1")?,
            b: need_mat("b")?,
            q: need_f64("q")?,
        },
        "Deps_4" | "mix-matrix" => DensityClass::MixMatrix {
            eps: need_f64("eps")?,
            g1: need_grid("g1")?,
            q: need_mat("q")?,
        },
        other => {
            return Err(Error::Unsupported(format!(
                "{}: unknown class kind {other}",
                path.display()
            )));
        }
    };
    Ok(cls)
}

// ---------------------------------------------------------------------------
// config plumbing
// ---------------------------------------------------------------------------

fn load_effective(args: &RunArgs) -> Result<Effective> {
    let mut cfg: RunConfig = parse_json(&args.config)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if let Some(g) = args.grid {
        cfg.grid = Some(g);
    }
    if let Some(b) = args.blocks {
        cfg.blocks = Some(b);
    }
    if let Some(t) = args.tol {
        cfg.tol = Some(t);
    }
    if let Some(s) = args.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = args.threads {
        cfg.threads = Some(t);
    }
    if let Some(r) = args.regularize {
        cfg.regularize = Some(r);
    }
    if let Some(m) = args.single_value {
        cfg.single_value = Some(m);
    }
    if args.semi {
        cfg.semi = true;
    }
    for (name, v) in [
        ("tol", cfg.tol),
        ("project_tol", cfg.project_tol),
        ("regularize", cfg.regularize),
    ] {
        if let Some(x) = v {
            if !(x > 0.0) {
                return Err(Error::Input(format!("{name} must be positive")));
            }
        }
    }
    let out_dir = match &args.out {
        Some(p) => p.clone(),
        None => base.join(cfg.out_dir.as_deref().unwrap_or("out")),
    };
    setup_threads(cfg.threads);
    Ok(Effective { base, cfg, out_dir })
}

impl Effective {
    fn path(&self, field: Option<&String>, name: &str) -> Result<PathBuf> {
        field
            .map(|rel| self.base.join(rel))
            .ok_or_else(|| Error::Input(format!("config is missing {name}")))
    }

    fn load_spec(&self) -> Result<IncrementSpec> {
        let raw: IncrementSpec = parse_json(&self.path(self.cfg.spec.as_ref(), "spec")?)?;
        IncrementSpec::new(raw.patterns, raw.period)
    }

    fn load_pair(&self) -> Result<(SpectralDensityGrid, SpectralDensityGrid)> {
        let f = load_density(
            &self.path(self.cfg.signal_density.as_ref(), "signal_density")?,
            "signal_density",
        )?;
        let g = load_density(
            &self.path(self.cfg.noise_density.as_ref(), "noise_density")?,
            "noise_density",
        )?;
        f.check_same_grid(&g)?;
        if let Some(grid) = self.cfg.grid {
            if f.m_grid() != grid {
                return Err(Error::Input(format!(
                    "density grids have {} cells, config requires {grid}",
                    f.m_grid()
                )));
            }
        }
        Ok((f, g))
    }

    fn load_coefficients(&self, t: usize) -> Result<LiftedCoefficients> {
        if let Some(m) = self.cfg.single_value {
            return Ok(single_value_coefficients(m, t));
        }
        let path = self.path(self.cfg.coefficients.as_ref(), "coefficients")?;
        let a: Vec<f64> = parse_json(&path)?;
        lift_coefficients(&a, t)
    }
}

// ---------------------------------------------------------------------------
// output writers
// ---------------------------------------------------------------------------

fn write_h_csv(path: &Path, lambdas: &[f64], h: &[nalgebra::DVector<Complex64>]) -> Result<()> {
    let t = h.first().map(|v| v.len()).unwrap_or(0);
    let mut s = String::from("lambda");
    for p in 0..t {
        s.push_str(&format!(",h{p}_re,h{p}_im"));
    }
    s.push('\n');
    for (m, lam) in lambdas.iter().enumerate() {
        s.push_str(&format!("{lam:.17e}"));
        for p in 0..t {
            s.push_str(&format!(",{:.17e},{:.17e}", h[m][p].re, h[m][p].im));
        }
        s.push('\n');
    }
    write_text(path, &s)
}

fn write_taps_csv(path: &Path, taps: &[nalgebra::DVector<f64>]) -> Result<()> {
    let mut s = String::from("k,component,value\n");
    for (k, frame) in taps.iter().enumerate() {
        for p in 0..frame.len() {
            s.push_str(&format!("{k},{p},{:.17e}\n", frame[p]));
        }
    }
    write_text(path, &s)
}

fn filter_summary(sol: &FilterSolution) -> Value {
    json!({
        "t": sol.t,
        "n_gamma": sol.n_gamma,
        "blocks": sol.l,
        "blocks_converged": sol.l_converged,
        "delta": sol.delta,
        "delta_integral": sol.delta_integral,
        "s_term": sol.s_term,
        "q_term": sol.q_term,
        "tap_count": sol.taps.len(),
        "tap_tail_mass": sol.tap_tail_mass,
        "tap_imag_defect": sol.tap_imag_defect,
        "tap_negative_defect": sol.tap_negative_defect,
    })
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

fn cmd_filter(args: RunArgs) -> Result<()> {
    let eff = load_effective(&args)?;
    let spec = eff.load_spec()?;
    let (f, g) = eff.load_pair()?;
    let a = eff.load_coefficients(spec.period)?;
    let opts = FilterOptions {
        truncation: match eff.cfg.blocks {
            Some(l) => TruncationPolicy::Fixed(l),
            None => TruncationPolicy::default(),
        },
        ridge: eff.cfg.regularize,
    };
    let sol = solve_filter(&f, &g, &spec, &a, opts)?;
    let mut summary = filter_summary(&sol);
    summary["timestamp_unix_s"] = json!(timestamp());
    write_h_csv(&eff.out_dir.join("h_grid.csv"), &f.lambdas, &sol.h)?;
    write_taps_csv(&eff.out_dir.join("taps.csv"), &sol.taps)?;
    write_json(&eff.out_dir.join("delta.json"), &summary)?;
    println!(
        "filter: delta = {:.12e} (integral {:.12e}), blocks = {}, outputs in {}",
        sol.delta,
        sol.delta_integral,
        sol.l,
        eff.out_dir.display()
    );
    Ok(())
}

fn minimax_summary(sol: &MinimaxSolution, audit: Option<Value>) -> Result<Value> {
    let residuals = serde_json::to_value(&sol.residuals)
        .map_err(|e| Error::Input(format!("serialize residuals: {e}")))?;
    Ok(json!({
        "delta0": sol.delta0,
        "iterations": sol.iterations,
        "converged": sol.converged,
        "rel_gap": sol.rel_gap,
        "objective_path": sol.objective_path,
        "residuals": residuals,
        "filter": filter_summary(&sol.filter),
        "audit": audit,
    }))
}

fn cmd_minimax(args: RunArgs) -> Result<()> {
    let eff = load_effective(&args)?;
    let spec = eff.load_spec()?;
    let (f, g) = eff.load_pair()?;
    let a = eff.load_coefficients(spec.period)?;
    let opts = MinimaxOptions {
        l: eff.cfg.blocks,
        max_iters: eff.cfg.max_iters.unwrap_or(500),
        rel_tol: eff.cfg.tol.unwrap_or(1e-6),
        project_tol: eff.cfg.project_tol.unwrap_or(1e-8),
        ridge: eff.cfg.regularize,
    };
    let cls_g = load_class(&eff.path(eff.cfg.noise_class.as_ref(), "noise_class")?)?;
    let (sol, cls_f) = if eff.cfg.semi {
        (least_favorable_noise_semi(&f, &cls_g, &a, &spec, &g, &opts)?, None)
    } else {
        let cls_f = load_class(&eff.path(eff.cfg.signal_class.as_ref(), "signal_class")?)?;
        (least_favorable(&cls_f, &cls_g, &a, &spec, &f, &g, &opts)?, Some(cls_f))
    };
    let audit = match eff.cfg.audit_samples.unwrap_or(0) {
        0 => None,
        n => Some(audit_solution(&sol, cls_f.as_ref(), &cls_g, &spec, &a, n, &eff)?),
    };
    let mut summary = minimax_summary(&sol, audit)?;
    summary["timestamp_unix_s"] = json!(timestamp());
    save_density(&eff.out_dir.join("f0.json"), &sol.f0)?;
    save_density(&eff.out_dir.join("g0.json"), &sol.g0)?;
    write_h_csv(&eff.out_dir.join("h0_grid.csv"), &sol.f0.lambdas, &sol.h0)?;
    write_json(&eff.out_dir.join("minimax.json"), &summary)?;
    println!(
        "minimax: delta0 = {:.12e}, iterations = {}, converged = {}, outputs in {}",
        sol.delta0,
        sol.iterations,
        sol.converged,
        eff.out_dir.display()
    );
    Ok(())
}

/// Sampling audit: draw in-class members around the returned pair and verify
/// the anchored error never exceeds delta0 beyond tolerance.
fn audit_solution(
    sol: &MinimaxSolution,
    cls_f: Option<&DensityClass>,
    cls_g: &DensityClass,
    spec: &IncrementSpec,
    a: &LiftedCoefficients,
    samples: usize,
    eff: &Effective,
) -> Result<Value> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(eff.cfg.seed.unwrap_or(1));
    let ctx = cross_context(&sol.f0, &sol.g0, spec, a, Some(sol.filter.l), eff.cfg.regularize)?;
    let tol = eff.cfg.project_tol.unwrap_or(1e-8);
    let mut max_delta = f64::NEG_INFINITY;
    for _ in 0..samples {
        let fs = match cls_f {
            Some(c) => sample_member(c, &sol.f0, 0.5, &mut rng, spec, tol)?,
            None => sol.f0.clone(),
        };
        let gs = sample_member(cls_g, &sol.g0, 0.5, &mut rng, spec, tol)?;
        max_delta = max_delta.max(cross_delta(&ctx, &fs, &gs)?);
    }
    let margin = (max_delta - sol.delta0) / sol.delta0.abs().max(f64::MIN_POSITIVE);
    Ok(json!({
        "samples": samples,
        "max_sampled_delta": max_delta,
        "delta0": sol.delta0,
        "relative_margin": margin,
        "dominated": margin <= 1e-4,
    }))
}

fn cmd_simulate(args: RunArgs) -> Result<()> {
    let eff = load_effective(&args)?;
    let spec = eff.load_spec()?;
    let (f, g) = eff.load_pair()?;
    let a = eff.load_coefficients(spec.period)?;
    let sim = SimConfig {
        length: eff.cfg.length.unwrap_or(256),
        burn_in: eff.cfg.burn_in.unwrap_or(0),
        seed: eff.cfg.seed.unwrap_or(1),
        replications: eff.cfg.replications.unwrap_or(1000),
    };
    let report = monte_carlo_mse(&f, &g, &spec, &a, &sim)?;
    let mut value = serde_json::to_value(&report)
        .map_err(|e| Error::Input(format!("serialize report: {e}")))?;
    value["timestamp_unix_s"] = json!(timestamp());
    write_json(&eff.out_dir.join("simulate.json"), &value)?;
    println!(
        "simulate: empirical mse = {:.6e} (delta {:.6e}, z = {:+.3}), outputs in {}",
        report.mse,
        report.delta,
        report.z_score,
        eff.out_dir.display()
    );
    Ok(())
}

fn cmd_increments(args: IncArgs) -> Result<()> {
    let raw: IncrementSpec = parse_json(&args.spec)?;
    let spec = IncrementSpec::new(raw.patterns, raw.period)?;
    let coeffs = expand_increment_coeffs(&spec)?;
    let e = coeffs.to_f64();
    let n_gamma = e.len() - 1;
    // Root-frequency analysis exists only when some order is fractional.
    let (roots, stationarity, summary) = if spec.is_integer_mode() {
        (json!([]), Value::Null, "integer orders only".to_string())
    } else {
        let roots = seasonal_root_set(&spec)?;
        let st = check_stationarity(&spec)?;
        let s = format!("{} roots, stationary = {}", roots.roots.len(), st.stationary);
        (
            roots
                .roots
                .iter()
                .map(|r| {
                    json!({
                        "nu": r.nu,
                        "fraction": [r.num, r.den],
                        "d_nu": r.d_nu,
                        "d_tilde": r.d_tilde,
                    })
                })
                .collect(),
            serde_json::to_value(&st)
                .map_err(|e| Error::Input(format!("serialize stationarity: {e}")))?,
            s,
        )
    };
    let report = json!({
        "period": spec.period,
        "n_gamma": n_gamma,
        "coefficients": e,
        "checks": {
            "lead_is_one": e.first() == Some(&1.0),
            "coefficient_sum": e.iter().sum::<f64>(),
        },
        "roots": roots,
        "stationarity": stationarity,
        "timestamp_unix_s": timestamp(),
    });
    write_json(&args.out.join("increments.json"), &report)?;
    println!("increments: n_gamma = {n_gamma}, {summary}, outputs in {}", args.out.display());
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<()> {
    setup_threads(args.threads);
    let report = validate::run_suite(args.quick, args.seed)?;
    let all_pass = report.checks.iter().all(|c| c.pass);
    let mut value = serde_json::to_value(&report)
        .map_err(|e| Error::Input(format!("serialize report: {e}")))?;
    value["timestamp_unix_s"] = json!(timestamp());
    write_json(&args.out.join("validate.json"), &value)?;
    for c in &report.checks {
        println!(
            "{} {}: measured {:.6e} vs threshold {:.6e} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.measured,
            c.threshold,
            c.detail
        );
    }
    if !all_pass {
        return Err(Error::Numerical("validation suite reported failures".into()));
    }
    println!("validate: all {} checks passed, report in {}", report.checks.len(), args.out.display());
    Ok(())
}
