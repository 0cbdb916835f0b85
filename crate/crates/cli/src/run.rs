//! Experiment drivers and artifact bookkeeping.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use ubp_core::forward::{means_dataset, MeansData};
use ubp_core::grid::ScalarGrid;
use ubp_core::inversion::{
    calibrate_constant, error_kernel_with, neumann_solve, reconstruct, CalibrationOptions,
    ErrorOperator, ReconstructionResult,
};
use ubp_core::io;
use ubp_core::rigidity::{rigidity_report, RigidityOptions, RigidityReport};
use ubp_core::{ConvexDomain, Point};

use crate::config::{ConfigError, Experiment, ExperimentConfig, Resolved};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Numerical(ubp_core::Error),
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io(_) => 4,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, key, message) = match self {
            RunError::Config(e) => ("config", Some(e.key.clone()), e.message.clone()),
            RunError::Numerical(e) => ("numerical", None, e.to_string()),
            RunError::Io(m) => ("io", None, m.clone()),
        };
        let mut err = json!({ "kind": kind, "message": message });
        if let Some(k) = key {
            err["key"] = Value::String(k);
        }
        if let RunError::Numerical(ubp_core::Error::Divergence { trace }) = self {
            err["trace"] = json!(trace);
        }
        json!({ "error": err, "exit_code": self.exit_code() })
    }
}

impl From<ubp_core::Error> for RunError {
    fn from(e: ubp_core::Error) -> Self {
        match e {
            ubp_core::Error::Io(m) | ubp_core::Error::Format(m) => RunError::Io(m),
            other => RunError::Numerical(other),
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e.to_string())
    }
}

/// Files written by a run, removed again if the run fails.
struct Artifacts {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<String>,
}

impl Artifacts {
    fn open(dir: &Path) -> Result<Self, RunError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|e| RunError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), RunError> {
        let p = self.path(name);
        Ok(io::write_json(&p, value)?)
    }

    fn grid(&mut self, stem: &str, grid: &ScalarGrid) -> Result<(), RunError> {
        self.files.push(format!("{stem}.f64"));
        self.files.push(format!("{stem}.json"));
        Ok(io::write_grid(&self.dir, stem, grid)?)
    }

    fn discard(self) {
        for f in &self.files {
            let _ = fs::remove_file(self.dir.join(f));
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

/// Runs `experiment`, writes its artifacts under `out` and returns the text for stdout.
pub fn execute(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    experiment: Experiment,
    out: &Path,
) -> Result<String, RunError> {
    let mut art = Artifacts::open(out)?;
    match run_inner(cfg, resolved, experiment, &mut art) {
        Ok(text) => Ok(text),
        Err(e) => {
            art.discard();
            Err(e)
        }
    }
}

fn run_inner(
    cfg: &ExperimentConfig,
    resolved: &Resolved,
    experiment: Experiment,
    art: &mut Artifacts,
) -> Result<String, RunError> {
    let toml_text = toml::to_string(cfg).map_err(|e| RunError::Io(e.to_string()))?;
    let p = art.path("config.resolved.toml");
    fs::write(p, toml_text)?;
    let (results, text) = match experiment {
        Experiment::Forward => forward(cfg, resolved, art)?,
        Experiment::Invert => invert(cfg, resolved, art)?,
        Experiment::Kernel => kernel(cfg, resolved, art)?,
        Experiment::Rigidity => rigidity(cfg, resolved, art)?,
        Experiment::Neumann => neumann(cfg, resolved, art)?,
        Experiment::Demo => demo(cfg, resolved, art)?,
    };
    let created_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut files = art.files.clone();
    files.push("run.json".into());
    let record = json!({
        "experiment": experiment.to_string(),
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "created_unix": created_unix,
        "artifacts": files,
        "results": results,
    });
    art.json("run.json", &record)?;
    Ok(text)
}

type Outcome = (Value, String);

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
}

fn phantom_of(resolved: &Resolved) -> &ubp_core::forward::Phantom {
    resolved
        .phantom
        .as_ref()
        .expect("validation builds the phantom for this experiment")
}

/// Means from `[invert] means` when set, otherwise computed from the phantom.
fn load_or_compute(cfg: &ExperimentConfig, resolved: &Resolved) -> Result<(MeansData, String), RunError> {
    match &cfg.invert.means {
        Some(p) => {
            let data = io::read_means(Path::new(p))?;
            if data.dim != resolved.domain.dim() {
                return Err(RunError::Config(ConfigError::new(
                    "invert.means",
                    format!("data are {}-dimensional but the domain is {}-dimensional", data.dim, resolved.domain.dim()),
                )));
            }
            Ok((data, p.clone()))
        }
        None => Ok((
            means_dataset(
                phantom_of(resolved),
                &resolved.domain,
                cfg.boundary_resolution,
                cfg.radial_resolution,
            )?,
            "computed".into(),
        )),
    }
}

fn forward(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let data = means_dataset(
        phantom_of(resolved),
        &resolved.domain,
        cfg.boundary_resolution,
        cfg.radial_resolution,
    )?;
    art.files.push("means.f64".into());
    art.files.push("means.json".into());
    io::write_means(&art.dir, "means", &data)?;
    art.json("phantom.json", phantom_of(resolved))?;
    let mut probe = data.clone();
    let (tail, note) = match probe.apply_filter() {
        Ok(()) => (probe.filtered.as_ref().map(|f| f.tail), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let results = json!({
        "node_count": data.node_count(),
        "radial_count": data.radial_count,
        "r_max": data.r_max,
        "filter_tail": tail,
        "filter_error": note,
    });
    let mut text = format!(
        "forward: {} boundary nodes x {} radii up to r = {:.4}\nfilter tail {}\n",
        data.node_count(),
        data.radial_count,
        data.r_max,
        fmt_opt(tail)
    );
    if let Some(n) = note {
        let _ = writeln!(text, "warning: {n}");
    }
    Ok((results, text))
}

fn write_reconstruction(
    art: &mut Artifacts,
    stem: &str,
    r: &ReconstructionResult,
) -> Result<Value, RunError> {
    art.grid(stem, &r.grid)?;
    if r.grid.dim == 2 {
        let p = art.path(&format!("{stem}.pgm"));
        let scale = io::write_pgm(&p, &r.grid)?;
        return Ok(json!(scale));
    }
    Ok(Value::Null)
}

fn invert(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let (mut data, source) = load_or_compute(cfg, resolved)?;
    data.apply_filter()?;
    let tail = data.filtered.as_ref().map(|f| f.tail);
    let truth = phantom_of(resolved);
    let r = reconstruct(&data, &resolved.domain, cfg.grid_resolution, Some(truth))?;
    let scale = write_reconstruction(art, "reconstruction", &r)?;
    let mut t = r.grid.clone();
    t.sample(&resolved.domain, |p| truth.eval(p));
    art.grid("truth", &t)?;
    let results = json!({
        "means": source,
        "filter_tail": tail,
        "grid_resolution": cfg.grid_resolution,
        "l2_relative_error": r.l2_relative_error,
        "linf_relative_error": r.linf_relative_error,
        "near_boundary_points": r.near_boundary_points,
        "pgm_scale": scale,
    });
    let text = format!(
        "invert: {}^{} grid\nrelative L2 error   {}\nrelative max error  {}\nnear-boundary points {}\n",
        cfg.grid_resolution,
        resolved.domain.dim(),
        fmt_opt(r.l2_relative_error),
        fmt_opt(r.linf_relative_error),
        r.near_boundary_points
    );
    Ok((results, text))
}

fn coord_header(prefix: &str, dim: usize) -> Vec<String> {
    ["x", "y", "z"][..dim]
        .iter()
        .map(|c| format!("{prefix}_{c}"))
        .collect()
}

fn coords(p: &Point, dim: usize) -> Vec<String> {
    (0..dim).map(|j| io::format_float(p[j])).collect()
}

fn kernel(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let domain = &resolved.domain;
    let dim = domain.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pairs: Vec<(Point, Point)> = (0..cfg.kernel.pairs)
        .map(|_| (domain.sample_interior(&mut rng, 0.0), domain.sample_interior(&mut rng, 0.0)))
        .collect();
    let samples: Vec<_> = pairs
        .par_iter()
        .map(|(a, b)| error_kernel_with(domain, a, b, resolved.mode_count))
        .collect();
    let mut header: Vec<String> = coord_header("x0", dim);
    header.extend(coord_header("x1", dim));
    header.extend(coord_header("omega", dim));
    header.extend(["s_star", "kernel", "confident", "status"].map(String::from));
    let mut rows = Vec::new();
    let (mut sup, mut failed, mut unconfident) = (0.0_f64, 0, 0);
    for ((a, b), s) in pairs.iter().zip(&samples) {
        let mut row = coords(a, dim);
        row.extend(coords(b, dim));
        match s {
            Ok(k) => {
                row.extend(coords(&k.omega_star, dim));
                row.push(io::format_float(k.s_star));
                row.push(io::format_float(k.value));
                row.push(k.confident.to_string());
                row.push("ok".into());
                sup = sup.max(k.value.abs());
                if !k.confident {
                    unconfident += 1;
                }
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), dim + 3));
                row.push(e.to_string());
                failed += 1;
            }
        }
        rows.push(row);
    }
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let p = art.path("kernels.csv");
    io::write_csv(&p, &h, &rows)?;
    let scaled = sup * domain.diameter().powi(dim as i32);
    let results = json!({
        "pairs": pairs.len(),
        "failed": failed,
        "unconfident": unconfident,
        "kernel_sup": sup,
        "kernel_sup_scaled": scaled,
    });
    let text = format!(
        "kernel: {} pairs, {} failed, {} unconverged\nmax |k|        {:.4e}\nmax |k| diam^n {:.4e}\n",
        pairs.len(),
        failed,
        unconfident,
        sup,
        scaled
    );
    Ok((results, text))
}

fn rigidity_options(cfg: &ExperimentConfig, pairs: usize) -> RigidityOptions {
    RigidityOptions {
        thresholds: cfg.thresholds,
        kernel_pairs: pairs,
        seed: cfg.seed,
        ..RigidityOptions::default()
    }
}

fn rigidity(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let report = rigidity_report(&resolved.domain, &rigidity_options(cfg, cfg.kernel.pairs))?;
    art.json("rigidity.json", &report)?;
    let results = json!({
        "verdict": report.verdict,
        "kernel_sup": report.kernel_sup,
        "kernel_sup_relative": report.kernel_sup_relative,
        "failures": report.failures,
    });
    Ok((results, report.summary()))
}

fn neumann(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let domain = &resolved.domain;
    let truth = phantom_of(resolved);
    let (mut data, source) = load_or_compute(cfg, resolved)?;
    data.apply_filter()?;
    let op = ErrorOperator::new(domain, resolved.mode_count)?;
    let (c, calibration) = match cfg.neumann.constant {
        Some(c) => (c, Value::Null),
        None => {
            let opts = CalibrationOptions {
                probes: cfg.neumann.probes,
                seed: cfg.seed,
                ..CalibrationOptions::default()
            };
            let cal = calibrate_constant(domain, truth, &data, &op, &opts)?;
            art.json("calibration.json", &cal)?;
            let summary = json!({
                "c": cal.c,
                "residual": cal.residual,
                "identity_residual": cal.identity_residual,
                "inconsistent": cal.inconsistent,
            });
            (cal.c, summary)
        }
    };
    let r = neumann_solve(
        domain,
        &data,
        c,
        cfg.neumann.iterations,
        cfg.neumann.grid_resolution,
        &op,
        Some(truth),
    )?;
    let rows: Vec<Vec<String>> = r
        .trace
        .iter()
        .map(|t| {
            vec![
                t.iteration.to_string(),
                io::format_float(t.update_norm),
                t.l2_error.map(io::format_float).unwrap_or_default(),
                t.skipped_pairs.to_string(),
            ]
        })
        .collect();
    let p = art.path("trace.csv");
    io::write_csv(&p, &["iteration", "update_norm", "l2_error", "skipped_pairs"], &rows)?;
    let scale = write_reconstruction(art, "neumann", &r)?;
    let plain = r.trace.first().and_then(|t| t.l2_error);
    let results = json!({
        "means": source,
        "constant": c,
        "calibration": calibration,
        "confident_fraction": op.confident_fraction(),
        "plain_l2_error": plain,
        "l2_relative_error": r.l2_relative_error,
        "linf_relative_error": r.linf_relative_error,
        "iterations": r.trace.len() - 1,
        "pgm_scale": scale,
    });
    let mut text = format!("neumann: c = {c:.6e}\n{:>9} {:>12} {:>12}\n", "iteration", "update", "L2 error");
    for t in &r.trace {
        let _ = writeln!(
            text,
            "{:>9} {:>12.4e} {:>12}",
            t.iteration,
            t.update_norm,
            fmt_opt(t.l2_error)
        );
    }
    Ok((results, text))
}

fn side_by_side(labels: [&str; 2], reports: [&RigidityReport; 2], ratio: f64) -> String {
    let mut s = format!("{:<22} {:>22} {:>22}\n", "", labels[0], labels[1]);
    let row = |s: &mut String, name: &str, a: String, b: String| {
        let _ = writeln!(s, "{name:<22} {a:>22} {b:>22}");
    };
    row(
        &mut s,
        "max |k|",
        format!("{:.4e}", reports[0].kernel_sup),
        format!("{:.4e}", reports[1].kernel_sup),
    );
    row(
        &mut s,
        "max |k| (relative)",
        format!("{:.4e}", reports[0].kernel_sup_relative),
        format!("{:.4e}", reports[1].kernel_sup_relative),
    );
    for (i, c) in reports[0].checks.iter().enumerate() {
        let other = reports[1].checks.get(i);
        let cell = |c: &ubp_core::rigidity::Check| {
            format!("{:.3e} {}", c.value, if c.passed { "ok" } else { "FAIL" })
        };
        row(&mut s, &c.name, cell(c), other.map(cell).unwrap_or_default());
    }
    row(
        &mut s,
        "verdict",
        reports[0].verdict.to_string(),
        reports[1].verdict.to_string(),
    );
    let _ = writeln!(s, "kernel sup ratio {ratio:.4e}");
    s
}

fn demo(cfg: &ExperimentConfig, resolved: &Resolved, art: &mut Artifacts) -> Result<Outcome, RunError> {
    let comparison: ConvexDomain = cfg.demo.comparison.build("demo.comparison")?;
    let opts = rigidity_options(cfg, cfg.demo.pairs);
    let a = rigidity_report(&resolved.domain, &opts)?;
    let b = rigidity_report(&comparison, &opts)?;
    let ratio = if b.kernel_sup > 0.0 {
        a.kernel_sup_relative / b.kernel_sup_relative
    } else {
        f64::NAN
    };
    let labels = [
        format!("{:?}", cfg.domain.kind).to_lowercase(),
        format!("{:?}", cfg.demo.comparison.kind).to_lowercase(),
    ];
    let text = side_by_side([&labels[0], &labels[1]], [&a, &b], ratio);
    let report = json!({
        "domain": { "spec": cfg.domain, "report": a },
        "comparison": { "spec": cfg.demo.comparison, "report": b },
        "kernel_sup_ratio": ratio,
    });
    art.json("demo.json", &report)?;
    let p = art.path("demo.txt");
    fs::write(p, &text)?;
    let results = json!({
        "domain_verdict": a.verdict,
        "comparison_verdict": b.verdict,
        "kernel_sup_ratio": ratio,
    });
    Ok((results, text))
}
