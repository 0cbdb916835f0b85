//! Experiment configuration: a TOML file, `--set key=value` overrides, and load-time
//! validation that names the offending key.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ubp_core::forward::{Bump, Phantom};
use ubp_core::geometry::{rotation_2d, rotation_zyz, ConvexDomain, Point};
use ubp_core::rigidity::Thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Forward,
    Invert,
    Kernel,
    Rigidity,
    Neumann,
    Demo,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Experiment::Forward => "forward",
            Experiment::Invert => "invert",
            Experiment::Kernel => "kernel",
            Experiment::Rigidity => "rigidity",
            Experiment::Neumann => "neumann",
            Experiment::Demo => "demo",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipsoid,
    Ball,
    Superellipse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: ShapeKind,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub semi_axes: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub center: Vec<f64>,
    /// One angle in the plane, three z-y-z Euler angles in space (radians).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rotation: Vec<f64>,
}

impl DomainSpec {
    fn ellipse() -> Self {
        Self {
            kind: ShapeKind::Ellipsoid,
            dim: 2,
            semi_axes: vec![2.0, 1.0],
            radius: None,
            exponent: None,
            center: vec![0.0, 0.0],
            rotation: vec![0.0],
        }
    }

    fn superellipse() -> Self {
        Self {
            kind: ShapeKind::Superellipse,
            dim: 2,
            semi_axes: vec![1.0, 1.0],
            radius: None,
            exponent: Some(4),
            center: vec![0.0, 0.0],
            rotation: vec![0.0],
        }
    }

    /// Builds the domain, reporting problems against the key prefix `key`.
    pub fn build(&self, key: &str) -> Result<ConvexDomain, ConfigError> {
        let err = |k: &str, m: String| ConfigError::new(format!("{key}.{k}"), m);
        if self.dim != 2 && self.dim != 3 {
            return Err(err("dim", format!("must be 2 or 3, got {}", self.dim)));
        }
        let center = if self.center.is_empty() {
            vec![0.0; self.dim]
        } else {
            self.center.clone()
        };
        if center.len() != self.dim {
            return Err(err("center", format!("needs {} entries", self.dim)));
        }
        let q = match (self.dim, self.rotation.as_slice()) {
            (_, []) => nalgebra::Matrix3::identity(),
            (2, [a]) => rotation_2d(*a),
            (3, [a, b, c]) => rotation_zyz(*a, *b, *c),
            _ => {
                return Err(err(
                    "rotation",
                    "needs one angle in the plane or three in space".into(),
                ))
            }
        };
        let axes = match self.kind {
            ShapeKind::Ball => {
                let r = self
                    .radius
                    .ok_or_else(|| err("radius", "required for a ball".into()))?;
                if !(r > 0.0) {
                    return Err(err("radius", format!("must be positive, got {r}")));
                }
                vec![r; self.dim]
            }
            _ => {
                if self.semi_axes.len() != self.dim {
                    return Err(err("semi_axes", format!("needs {} entries", self.dim)));
                }
                if let Some(a) = self.semi_axes.iter().find(|a| !(**a > 0.0)) {
                    return Err(err("semi_axes", format!("must be positive, got {a}")));
                }
                self.semi_axes.clone()
            }
        };
        let built = match self.kind {
            ShapeKind::Ellipsoid | ShapeKind::Ball => ConvexDomain::ellipsoid(self.dim, &axes, &center, q),
            ShapeKind::Superellipse => {
                let p = self
                    .exponent
                    .ok_or_else(|| err("exponent", "required for a superellipse".into()))?;
                if p < 4 || !p.is_multiple_of(2) {
                    return Err(err("exponent", format!("must be even and at least 4, got {p}")));
                }
                ConvexDomain::superellipse(self.dim, p, &axes, &center, q)
            }
        };
        built.map_err(|e| ConfigError::new(key.to_string(), e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    #[serde(default = "one")]
    pub amplitude: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub pairs: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self { pairs: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InvertSection {
    /// Sidecar JSON of means written by a forward run; computed afresh when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub means: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeumannSection {
    pub iterations: usize,
    pub grid_resolution: usize,
    pub probes: usize,
    /// Kernel constant; calibrated from the phantom when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constant: Option<f64>,
}

impl Default for NeumannSection {
    fn default() -> Self {
        Self {
            iterations: 3,
            grid_resolution: 64,
            probes: 64,
            constant: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoSection {
    pub comparison: DomainSpec,
    pub pairs: usize,
}

impl Default for DemoSection {
    fn default() -> Self {
        Self {
            comparison: DomainSpec::superellipse(),
            pairs: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub boundary_resolution: usize,
    pub radial_resolution: usize,
    pub grid_resolution: usize,
    /// Starting Chebyshev mode count of chord profiles; 0 picks the dimension default.
    pub mode_count: usize,
    pub domain: DomainSpec,
    pub bumps: Vec<BumpSpec>,
    pub thresholds: Thresholds,
    pub kernel: KernelSection,
    pub invert: InvertSection,
    pub neumann: NeumannSection,
    pub demo: DemoSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: 1,
            output_dir: None,
            boundary_resolution: 512,
            radial_resolution: 1024,
            grid_resolution: 128,
            mode_count: 0,
            domain: DomainSpec::ellipse(),
            bumps: vec![BumpSpec {
                center: vec![0.3, 0.1],
                radius: 0.7,
                amplitude: 1.0,
            }],
            thresholds: Thresholds::default(),
            kernel: KernelSection::default(),
            invert: InvertSection::default(),
            neumann: NeumannSection::default(),
            demo: DemoSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

/// Parses an override value as TOML, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::new(key, format!("`{p}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads `path` over the defaults, applies `key=value` overrides and deserializes.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, ConfigError> {
    // file sections replace default sections whole; overrides then edit single keys
    let mut table = toml::Table::try_from(ExperimentConfig::default())
        .map_err(|e| ConfigError::new("config", e.to_string()))?;
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", p.display())))?;
        let file = toml::from_str::<toml::Table>(&text)
            .map_err(|e| ConfigError::new("config", e.message().to_string()))?;
        table.extend(file);
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::new("--set", format!("expected key=value, got `{o}`")))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::new("--set", format!("empty key in `{o}`")));
        }
        set_path(&mut table, k, parse_value(v.trim()))?;
    }
    let text = toml::to_string(&table).map_err(|e| ConfigError::new("config", e.to_string()))?;
    toml::from_str::<ExperimentConfig>(&text).map_err(|e| {
        let msg = e.message().to_string();
        let key = e
            .span()
            .map(|sp| key_at(&text, sp.start))
            .unwrap_or_else(|| "config".into());
        ConfigError::new(key, msg)
    })
}

/// Dotted key of the entry on the line holding byte `pos` of serialized TOML.
fn key_at(text: &str, pos: usize) -> String {
    let start = text[..pos.min(text.len())].rfind('\n').map_or(0, |i| i + 1);
    let line = text[start..].lines().next().unwrap_or("").trim();
    let header = |l: &str| l.trim_matches(['[', ']']).trim().to_string();
    if line.starts_with('[') {
        return header(line);
    }
    let name = line.split('=').next().unwrap_or("").trim().to_string();
    let section = text[..start]
        .lines()
        .rev()
        .find(|l| l.trim_start().starts_with('['))
        .map(|l| header(l.trim()));
    match section {
        Some(s) if !name.is_empty() => format!("{s}.{name}"),
        _ if !name.is_empty() => name,
        _ => "config".into(),
    }
}

/// Domain and phantom built from a validated configuration.
#[derive(Debug)]
pub struct Resolved {
    pub domain: ConvexDomain,
    pub phantom: Option<Phantom>,
    pub mode_count: usize,
}

impl ExperimentConfig {
    /// Checks every numeric field against the preconditions of the modules `experiment`
    /// uses and fills in dimension-dependent defaults.
    pub fn validate(&mut self, experiment: Experiment) -> Result<Resolved, ConfigError> {
        let min = |key: &str, v: usize, m: usize| {
            if v < m {
                Err(ConfigError::new(key, format!("must be at least {m}, got {v}")))
            } else {
                Ok(())
            }
        };
        min("boundary_resolution", self.boundary_resolution, 16)?;
        min("radial_resolution", self.radial_resolution, 16)?;
        min("grid_resolution", self.grid_resolution, 4)?;
        min("kernel.pairs", self.kernel.pairs, 1)?;
        min("neumann.iterations", self.neumann.iterations, 1)?;
        min("neumann.grid_resolution", self.neumann.grid_resolution, 4)?;
        min("neumann.probes", self.neumann.probes, 4)?;
        min("demo.pairs", self.demo.pairs, 1)?;
        let th = &self.thresholds;
        for (k, v) in [
            ("thresholds.kernel", th.kernel),
            ("thresholds.moment", th.moment),
            ("thresholds.form", th.form),
            ("thresholds.exponent", th.exponent),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::new(k, format!("must be positive, got {v}")));
            }
        }
        if !(th.trip_factor >= 1.0) {
            return Err(ConfigError::new(
                "thresholds.trip_factor",
                format!("must be at least 1, got {}", th.trip_factor),
            ));
        }
        if let Some(c) = self.neumann.constant {
            if !c.is_finite() {
                return Err(ConfigError::new("neumann.constant", "must be finite"));
            }
        }
        let domain = self.domain.build("domain")?;
        if self.mode_count == 0 {
            self.mode_count = ubp_core::transforms::default_mode_count(domain.dim());
        }
        min("mode_count", self.mode_count, 9)?;
        if experiment == Experiment::Demo {
            self.demo.comparison.build("demo.comparison")?;
        }
        let needs_phantom = matches!(
            experiment,
            Experiment::Forward | Experiment::Invert | Experiment::Neumann
        );
        let phantom = if needs_phantom {
            Some(self.phantom(&domain)?)
        } else {
            None
        };
        Ok(Resolved {
            mode_count: self.mode_count,
            domain,
            phantom,
        })
    }

    fn phantom(&self, domain: &ConvexDomain) -> Result<Phantom, ConfigError> {
        let dim = domain.dim();
        let mut bumps = Vec::new();
        for (i, b) in self.bumps.iter().enumerate() {
            let key = format!("bumps[{i}]");
            if b.center.len() != dim {
                return Err(ConfigError::new(
                    format!("{key}.center"),
                    format!("needs {dim} entries to match the domain"),
                ));
            }
            if !(b.radius > 0.0) {
                return Err(ConfigError::new(format!("{key}.radius"), "must be positive"));
            }
            let mut c = Point::zeros();
            for j in 0..dim {
                c[j] = b.center[j];
            }
            bumps.push(Bump {
                center: c,
                radius: b.radius,
                amplitude: b.amplitude,
            });
        }
        let p = Phantom::new(dim, bumps).map_err(|e| ConfigError::new("bumps", e.to_string()))?;
        p.check_inside(domain)
            .map_err(|e| ConfigError::new("bumps", e.to_string()))?;
        Ok(p)
    }
}
