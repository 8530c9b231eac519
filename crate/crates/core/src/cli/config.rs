//! Line-oriented `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Kernel,
    Isothermal,
    Spectral,
    Heat,
    Green,
    Capacity,
    Experiment,
}

impl Command {
    pub const NAMES: [&'static str; 7] = ["kernel", "isothermal", "spectral", "heat", "green", "capacity", "experiment"];

    pub fn name(&self) -> &'static str {
        Self::NAMES[*self as usize]
    }

    fn parse(s: &str) -> Option<Self> {
        use Command::*;
        [Kernel, Isothermal, Spectral, Heat, Green, Capacity, Experiment].into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SurfaceSpec {
    EuclideanPlane,
    HyperbolicDisc,
    /// Flat unit disc as a conformal disc.
    UnitDisc,
    Sphere,
    Cylinder,
    FlatTorus,
    Chart,
}

impl SurfaceSpec {
    pub const NAMES: [&'static str; 7] = ["euclidean_plane", "hyperbolic_disc", "unit_disc", "sphere", "cylinder", "flat_torus", "chart"];

    pub fn name(&self) -> &'static str {
        Self::NAMES[self.clone() as usize]
    }

    fn parse(s: &str) -> Option<Self> {
        use SurfaceSpec::*;
        [EuclideanPlane, HyperbolicDisc, UnitDisc, Sphere, Cylinder, FlatTorus, Chart].into_iter().find(|c| c.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Exhaustion,
    LogRate,
    Perturbation,
    Theorem14,
    Theorem14Conformal,
    Counterexample,
}

impl ExperimentKind {
    pub const NAMES: [&'static str; 6] = ["exhaustion", "log_rate", "perturbation", "theorem14", "theorem14_conformal", "counterexample"];

    pub fn name(&self) -> &'static str {
        Self::NAMES[*self as usize]
    }

    fn parse(s: &str) -> Option<Self> {
        use ExperimentKind::*;
        [Exhaustion, LogRate, Perturbation, Theorem14, Theorem14Conformal, Counterexample].into_iter().find(|c| c.name() == s)
    }
}

/// Invalid configuration; `line` is None for keys supplied on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub surface: SurfaceSpec,
    pub chart_file: Option<PathBuf>,
    /// Sphere radius, or the profile radius of cylinders and tori.
    pub model_radius: f64,
    /// Length of cylinders and tori.
    pub length: f64,
    pub experiment: Option<ExperimentKind>,
    pub family: String,
    pub r: f64,
    pub r_list: Vec<f64>,
    pub j_list: Vec<f64>,
    pub e_radius: f64,
    pub h: f64,
    pub basis_size: usize,
    pub nu: f64,
    pub alpha: f64,
    pub tol: f64,
    pub audit_tol: f64,
    pub slack: f64,
    pub rings: usize,
    pub center: [f64; 2],
    pub point: [f64; 2],
    pub inner: f64,
    pub outer: f64,
    pub t: f64,
    pub window: (f64, f64),
    pub samples: usize,
    pub sweep_r_max: f64,
    pub sweep_samples: usize,
    pub output_json: Option<PathBuf>,
    pub output_csv: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub audit_mode: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: None,
            surface: SurfaceSpec::HyperbolicDisc,
            chart_file: None,
            model_radius: 1.0,
            length: 2.0 * std::f64::consts::PI,
            experiment: None,
            family: "anisotropic".into(),
            r: 3.0,
            r_list: vec![3.0, 4.0, 5.0, 6.0],
            j_list: vec![4.0, 8.0, 16.0, 32.0, 64.0],
            e_radius: 0.0,
            h: 1.0 / 64.0,
            basis_size: 24,
            nu: 3.0,
            alpha: 0.5,
            tol: 1e-8,
            audit_tol: 1e-8,
            slack: 0.02,
            rings: 64,
            center: [0.0, 0.0],
            point: [0.0, 0.0],
            inner: 1.0,
            outer: 2.0,
            t: 0.01,
            window: (0.01, 0.1),
            samples: 12,
            sweep_r_max: 10.0,
            sweep_samples: 200,
            output_json: None,
            output_csv: None,
            out_dir: PathBuf::from("."),
            audit_mode: false,
        }
    }
}

pub const KEYS: [&str; 33] = [
    "command", "surface", "chart_file", "model_radius", "length", "experiment", "family", "R", "R_list", "j_list", "e_radius", "h", "basis_size", "nu",
    "alpha", "tol", "audit_tol", "slack", "rings", "center", "point", "inner", "outer", "t", "window", "samples", "sweep_r_max", "sweep_samples",
    "output_json", "output_csv", "out_dir", "audit_mode", "threads",
];

fn err(line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

fn real(key: &str, v: &str, line: Option<usize>) -> Result<f64, ConfigError> {
    let x = match v {
        "inf" => f64::INFINITY,
        _ => v.parse::<f64>().map_err(|_| err(line, format!("{key}: malformed number '{v}'")))?,
    };
    if x.is_nan() {
        return Err(err(line, format!("{key}: NaN is not allowed")));
    }
    Ok(x)
}

fn int(key: &str, v: &str, line: Option<usize>) -> Result<usize, ConfigError> {
    v.parse::<usize>().map_err(|_| err(line, format!("{key}: malformed integer '{v}'")))
}

fn list(key: &str, v: &str, line: Option<usize>) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| real(key, s.trim(), line)).collect()
}

fn pair(key: &str, v: &str, line: Option<usize>) -> Result<[f64; 2], ConfigError> {
    let l = list(key, v, line)?;
    if l.len() != 2 {
        return Err(err(line, format!("{key}: expected two comma-separated numbers")));
    }
    Ok([l[0], l[1]])
}

fn check(ok: bool, key: &str, range: &str, line: Option<usize>) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(err(line, format!("{key}: value out of range {range}")))
    }
}

/// Parses `key = value` lines; blank lines and text after '#' are ignored.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String, Option<usize>)>, ConfigError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = Some(n + 1);
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body.split_once('=').ok_or_else(|| err(line, format!("expected 'key = value', found '{body}'")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(err(line, "empty key or value"));
        }
        out.push((k.to_string(), v.to_string(), line));
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one entry; later entries override earlier ones.
    pub fn set(&mut self, key: &str, v: &str, line: Option<usize>) -> Result<(), ConfigError> {
        match key {
            "command" => self.command = Some(Command::parse(v).ok_or_else(|| err(line, format!("command: unknown '{v}'")))?),
            "surface" => self.surface = SurfaceSpec::parse(v).ok_or_else(|| err(line, format!("surface: unknown '{v}'")))?,
            "chart_file" => self.chart_file = Some(PathBuf::from(v)),
            "model_radius" => {
                self.model_radius = real(key, v, line)?;
                check(self.model_radius > 0.0 && self.model_radius.is_finite(), key, "(0, inf)", line)?;
            }
            "length" => {
                self.length = real(key, v, line)?;
                check(self.length > 0.0 && self.length.is_finite(), key, "(0, inf)", line)?;
            }
            "experiment" => self.experiment = Some(ExperimentKind::parse(v).ok_or_else(|| err(line, format!("experiment: unknown '{v}'")))?),
            "family" => {
                check(["anisotropic", "conformal", "alternating"].contains(&v), key, "{anisotropic, conformal, alternating}", line)?;
                self.family = v.into();
            }
            "R" => {
                self.r = real(key, v, line)?;
                check(self.r > 0.0 && self.r <= 50.0, key, "(0, 50]", line)?;
            }
            "R_list" | "j_list" => {
                let l = list(key, v, line)?;
                check(!l.is_empty() && l.iter().all(|x| *x > 0.0 && *x <= 1e4), key, "nonempty, each in (0, 1e4]", line)?;
                check(l.windows(2).all(|w| w[1] > w[0]), key, "strictly increasing", line)?;
                if key == "R_list" {
                    self.r_list = l;
                } else {
                    self.j_list = l;
                }
            }
            "e_radius" => {
                self.e_radius = real(key, v, line)?;
                check((0.0..=5.0).contains(&self.e_radius), key, "[0, 5]", line)?;
            }
            "h" => {
                self.h = real(key, v, line)?;
                check(self.h > 0.0 && self.h <= 0.5, key, "(0, 0.5]", line)?;
            }
            "basis_size" => {
                self.basis_size = int(key, v, line)?;
                check((1..=200).contains(&self.basis_size), key, "[1, 200]", line)?;
            }
            "nu" => {
                self.nu = real(key, v, line)?;
                check(self.nu > 1.0, key, "(1, inf]", line)?;
            }
            "alpha" => {
                self.alpha = real(key, v, line)?;
                check(self.alpha > 0.0 && self.alpha < 1.0, key, "(0, 1)", line)?;
            }
            "tol" => {
                self.tol = real(key, v, line)?;
                check(self.tol > 0.0 && self.tol <= 1e-2, key, "(0, 1e-2]", line)?;
            }
            "audit_tol" => {
                self.audit_tol = real(key, v, line)?;
                check(self.audit_tol > 0.0 && self.audit_tol <= 1.0, key, "(0, 1]", line)?;
            }
            "slack" => {
                self.slack = real(key, v, line)?;
                check((-1.0..=1.0).contains(&self.slack), key, "[-1, 1]", line)?;
            }
            "rings" => {
                self.rings = int(key, v, line)?;
                check((4..=1024).contains(&self.rings), key, "[4, 1024]", line)?;
            }
            "center" => self.center = pair(key, v, line)?,
            "point" => self.point = pair(key, v, line)?,
            "inner" => {
                self.inner = real(key, v, line)?;
                check(self.inner > 0.0 && self.inner.is_finite(), key, "(0, inf)", line)?;
            }
            "outer" => {
                self.outer = real(key, v, line)?;
                check(self.outer > 0.0 && self.outer.is_finite(), key, "(0, inf)", line)?;
            }
            "t" => {
                self.t = real(key, v, line)?;
                check(self.t > 0.0 && self.t.is_finite(), key, "(0, inf)", line)?;
            }
            "window" => {
                let p = pair(key, v, line)?;
                check(p[0] > 0.0 && p[1] > p[0] && p[1].is_finite(), key, "0 < t0 < t1", line)?;
                self.window = (p[0], p[1]);
            }
            "samples" => {
                self.samples = int(key, v, line)?;
                check((5..=1000).contains(&self.samples), key, "[5, 1000]", line)?;
            }
            "sweep_r_max" => {
                self.sweep_r_max = real(key, v, line)?;
                check(self.sweep_r_max > 0.0 && self.sweep_r_max <= 50.0, key, "(0, 50]", line)?;
            }
            "sweep_samples" => {
                self.sweep_samples = int(key, v, line)?;
                check((1..=100_000).contains(&self.sweep_samples), key, "[1, 100000]", line)?;
            }
            "output_json" => self.output_json = Some(PathBuf::from(v)),
            "output_csv" => self.output_csv = Some(PathBuf::from(v)),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "audit_mode" => {
                self.audit_mode = match v {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => return Err(err(line, format!("audit_mode: expected true or false, found '{v}'"))),
                }
            }
            "threads" => return Err(err(line, "threads is set through the RKL_THREADS environment variable")),
            _ => return Err(err(line, format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Cross-key checks that need the whole configuration.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.surface == SurfaceSpec::Chart && self.chart_file.is_none() {
            return Err(err(None, "surface = chart needs chart_file"));
        }
        if self.outer <= self.inner {
            return Err(err(None, "outer must exceed inner"));
        }
        if self.command == Some(Command::Experiment) && self.experiment.is_none() {
            return Err(err(None, "command = experiment needs the experiment key"));
        }
        Ok(())
    }

    /// The fully resolved configuration, defaults included.
    pub fn resolved(&self) -> BTreeMap<String, Value> {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| Value::from(p.display().to_string())).unwrap_or(Value::Null);
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: Value| {
            m.insert(k.to_string(), v);
        };
        put("command", self.command.map(|c| Value::from(c.name())).unwrap_or(Value::Null));
        put("surface", json!(self.surface.name()));
        put("chart_file", p(&self.chart_file));
        put("model_radius", json!(self.model_radius));
        put("length", json!(self.length));
        put("experiment", self.experiment.map(|c| Value::from(c.name())).unwrap_or(Value::Null));
        put("family", json!(self.family));
        put("R", json!(self.r));
        put("R_list", json!(self.r_list));
        put("j_list", json!(self.j_list));
        put("e_radius", json!(self.e_radius));
        put("h", json!(self.h));
        put("basis_size", json!(self.basis_size));
        put("nu", if self.nu.is_finite() { json!(self.nu) } else { json!("inf") });
        put("alpha", json!(self.alpha));
        put("tol", json!(self.tol));
        put("audit_tol", json!(self.audit_tol));
        put("slack", json!(self.slack));
        put("rings", json!(self.rings));
        put("center", json!(self.center));
        put("point", json!(self.point));
        put("inner", json!(self.inner));
        put("outer", json!(self.outer));
        put("t", json!(self.t));
        put("window", json!([self.window.0, self.window.1]));
        put("samples", json!(self.samples));
        put("sweep_r_max", json!(self.sweep_r_max));
        put("sweep_samples", json!(self.sweep_samples));
        put("output_json", p(&self.output_json));
        put("output_csv", p(&self.output_csv));
        put("out_dir", json!(self.out_dir.display().to_string()));
        put("audit_mode", json!(self.audit_mode));
        m
    }
}

/// Parses and validates a configuration text.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_with_overrides(text, &[])
}

/// Config text followed by command-line `key=value` overrides (the override wins).
pub fn parse_with_overrides(text: &str, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    for (k, v, line) in parse_entries(text)? {
        cfg.set(&k, &v, line)?;
    }
    for (k, v) in overrides {
        cfg.set(k, v, None).map_err(|e| err(None, format!("override {}", e.message)))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let c = parse_config("# header\n\ncommand = kernel # trailing\nR = 4\n").unwrap();
        assert_eq!(c.command, Some(Command::Kernel));
        assert_eq!(c.r, 4.0);
    }

    #[test]
    fn resolved_lists_every_key() {
        let m = RunConfig::default().resolved();
        for k in KEYS.iter().filter(|k| **k != "threads") {
            assert!(m.contains_key(*k), "{k}");
        }
    }
}
