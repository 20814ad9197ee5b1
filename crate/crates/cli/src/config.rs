//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored, as are `[section]` headers.
//! Every key is optional except where an experiment needs it; unknown keys
//! are rejected so that typos cannot silently fall back to defaults.

use std::fmt;
use std::str::FromStr;

use crem_core::phases::DEFAULT_BOUNDARY_TOL;
use crem_core::{ComplexTemperature, OffspringDistribution, QuadratureSpec, SpeedFunction, DEFAULT_POPULATION_CAP};

/// A configuration problem, naming the offending key.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: &str, message: impl Into<String>) -> Self {
        Self {
            key: key.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config key `{}`: {}", self.key, self.message)
    }
}

impl std::error::Error for ConfigError {}

/// Evenly spaced axis `start:stop:step`, both ends included.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Axis {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.stop, self.step)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeConfig {
    pub gamma: f64,
    pub cs: Vec<f64>,
    pub branch_times: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub speed: SpeedFunction,
    pub offspring: OffspringDistribution,
    pub t: Vec<f64>,
    pub rho: f64,
    pub betas: Vec<ComplexTemperature>,
    pub scan_sigma: Option<Axis>,
    pub scan_tau: Option<Axis>,
    /// Grid points closer than this to a phase boundary are not scored.
    pub scan_exclusion: f64,
    /// Allowed gap between median `(1/t) log|X|` and its prediction.
    pub scan_tolerance: f64,
    /// Fraction of scored grid points that must be within tolerance.
    pub scan_pass_fraction: f64,
    pub replicas: u64,
    pub seed: u64,
    pub cap: u64,
    /// Envelope grid; `None` means `min(0.05·t, 0.25)`.
    pub grid_step: Option<f64>,
    pub envelope: Option<EnvelopeConfig>,
    pub snapshot_b: f64,
    /// Cluster window; `None` means `√t`.
    pub snapshot_w: Option<f64>,
    pub quad: QuadratureSpec,
    pub boundary_tol: f64,
    /// Two-sided z threshold for mean and moment checks.
    pub z_max: f64,
    /// Threshold for the isotropy mixed-moment z-scores.
    pub mixed_z_max: f64,
    pub phase_p_min: f64,
    /// Whether `validate-speed` requires `A(x) < x` on the interior.
    pub strict: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            speed: SpeedFunction::exp_family(3.0).expect("valid"),
            offspring: OffspringDistribution::binary(),
            t: vec![6.0],
            rho: 0.0,
            betas: Vec::new(),
            scan_sigma: None,
            scan_tau: None,
            scan_exclusion: 0.2,
            scan_tolerance: 0.15,
            scan_pass_fraction: 0.9,
            replicas: 100,
            seed: 0,
            cap: DEFAULT_POPULATION_CAP,
            grid_step: None,
            envelope: None,
            snapshot_b: 3.0,
            snapshot_w: None,
            quad: QuadratureSpec::default(),
            boundary_tol: DEFAULT_BOUNDARY_TOL,
            z_max: 3.0,
            mixed_z_max: 4.0,
            phase_p_min: 0.01,
            strict: true,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError::new(key, format!("cannot parse '{}'", v.trim())))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(ConfigError::new(key, format!("expected true or false, got '{other}'"))),
    }
}

fn parse_axis(key: &str, v: &str) -> Result<Axis, ConfigError> {
    let parts: Vec<f64> = v.split(':').map(|x| parse_num(key, x)).collect::<Result<_, _>>()?;
    match parts[..] {
        [start, stop, step] if step > 0.0 && stop >= start => Ok(Axis { start, stop, step }),
        _ => Err(ConfigError::new(
            key,
            "expected start:stop:step with step > 0 and stop >= start",
        )),
    }
}

fn parse_betas(key: &str, v: &str) -> Result<Vec<ComplexTemperature>, ConfigError> {
    v.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|pair| match parse_list(key, pair)?[..] {
            [sigma, tau] => Ok(ComplexTemperature::new(sigma, tau)),
            _ => Err(ConfigError::new(
                key,
                format!("'{}' is not a sigma,tau pair", pair.trim()),
            )),
        })
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = SimConfig::default();
        let mut gamma = None;
        let mut cs = None;
        let mut branch_times = false;
        for raw in text.lines() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::new(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            match key {
                "speed" => {
                    cfg.speed = value
                        .parse()
                        .map_err(|e: crem_core::Error| ConfigError::new(key, e.to_string()))?
                }
                "offspring" => {
                    cfg.offspring = value
                        .parse()
                        .map_err(|e: crem_core::Error| ConfigError::new(key, e.to_string()))?
                }
                "t" => cfg.t = parse_list(key, value)?,
                "rho" => cfg.rho = parse_num(key, value)?,
                "betas" => cfg.betas = parse_betas(key, value)?,
                "scan_sigma" => cfg.scan_sigma = Some(parse_axis(key, value)?),
                "scan_tau" => cfg.scan_tau = Some(parse_axis(key, value)?),
                "scan_exclusion" => cfg.scan_exclusion = parse_num(key, value)?,
                "scan_tolerance" => cfg.scan_tolerance = parse_num(key, value)?,
                "scan_pass_fraction" => cfg.scan_pass_fraction = parse_num(key, value)?,
                "replicas" => cfg.replicas = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "cap" => cfg.cap = parse_num(key, value)?,
                "grid_step" => cfg.grid_step = Some(parse_num(key, value)?),
                "envelope_gamma" => gamma = Some(parse_num::<f64>(key, value)?),
                "envelope_c" => cs = Some(parse_list(key, value)?),
                "envelope_branch_times" => branch_times = parse_bool(key, value)?,
                "snapshot_b" => cfg.snapshot_b = parse_num(key, value)?,
                "snapshot_w" => cfg.snapshot_w = Some(parse_num(key, value)?),
                "quad_rel_tol" => cfg.quad.rel_tol = parse_num(key, value)?,
                "quad_max_depth" => cfg.quad.max_depth = parse_num(key, value)?,
                "boundary_tol" => cfg.boundary_tol = parse_num(key, value)?,
                "z_max" => cfg.z_max = parse_num(key, value)?,
                "mixed_z_max" => cfg.mixed_z_max = parse_num(key, value)?,
                "phase_p_min" => cfg.phase_p_min = parse_num(key, value)?,
                "strict" => cfg.strict = parse_bool(key, value)?,
                other => return Err(ConfigError::new(other, "unknown key")),
            }
        }
        cfg.envelope = match (gamma, cs) {
            (Some(gamma), Some(cs)) => Some(EnvelopeConfig {
                gamma,
                cs,
                branch_times,
            }),
            (None, None) => None,
            (Some(_), None) => return Err(ConfigError::new("envelope_c", "required with envelope_gamma")),
            (None, Some(_)) => return Err(ConfigError::new("envelope_gamma", "required with envelope_c")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicas < 1 {
            return Err(ConfigError::new("replicas", "must be at least 1"));
        }
        if self.t.is_empty() || self.t.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(ConfigError::new("t", "every horizon must be positive and finite"));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(ConfigError::new("rho", "must lie in [-1, 1]"));
        }
        if let Some(b) = self.betas.iter().find(|b| !b.is_finite()) {
            return Err(ConfigError::new("betas", format!("{b} is not finite")));
        }
        if let Some(step) = self.grid_step {
            if let Some(t) = self.t.iter().find(|&&t| !(step > 0.0 && step <= t)) {
                return Err(ConfigError::new("grid_step", format!("must lie in (0, t] for t = {t}")));
            }
        }
        if let Some(env) = &self.envelope {
            if !(env.gamma > 0.0 && env.gamma < 1.0) {
                return Err(ConfigError::new("envelope_gamma", "must lie in (0, 1)"));
            }
            if env.cs.is_empty() || env.cs.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
                return Err(ConfigError::new("envelope_c", "every C must be positive"));
            }
        }
        if self.scan_sigma.is_some() != self.scan_tau.is_some() {
            let missing = if self.scan_sigma.is_none() {
                "scan_sigma"
            } else {
                "scan_tau"
            };
            return Err(ConfigError::new(missing, "scan_sigma and scan_tau go together"));
        }
        if !(self.snapshot_b >= 0.0) {
            return Err(ConfigError::new("snapshot_b", "must be non-negative"));
        }
        if let Some(w) = self.snapshot_w {
            if !(w >= 0.0) {
                return Err(ConfigError::new("snapshot_w", "must be non-negative"));
            }
        }
        if !(self.quad.rel_tol > 0.0) {
            return Err(ConfigError::new("quad_rel_tol", "must be positive"));
        }
        if self.cap < 1 {
            return Err(ConfigError::new("cap", "must be at least 1"));
        }
        Ok(())
    }

    /// Temperatures to simulate: the scan grid if present, else `betas`.
    pub fn temperatures(&self) -> Vec<ComplexTemperature> {
        match (&self.scan_sigma, &self.scan_tau) {
            (Some(s), Some(t)) => {
                let taus = t.points();
                s.points()
                    .into_iter()
                    .flat_map(|sigma| taus.iter().map(move |&tau| ComplexTemperature::new(sigma, tau)))
                    .collect()
            }
            _ => self.betas.clone(),
        }
    }

    /// Every setting with defaults resolved, as ordered `(key, value)` pairs
    /// in the same syntax the parser accepts.
    pub fn resolved(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("speed", self.speed.to_string()),
            ("offspring", self.offspring.to_string()),
            ("t", fmt_list(&self.t)),
            ("rho", format!("{:?}", self.rho)),
            (
                "betas",
                self.betas
                    .iter()
                    .map(|b| format!("{:?},{:?}", b.sigma, b.tau))
                    .collect::<Vec<_>>()
                    .join(";"),
            ),
            (
                "scan_sigma",
                self.scan_sigma.as_ref().map(Axis::to_string).unwrap_or_default(),
            ),
            (
                "scan_tau",
                self.scan_tau.as_ref().map(Axis::to_string).unwrap_or_default(),
            ),
            ("scan_exclusion", format!("{:?}", self.scan_exclusion)),
            ("scan_tolerance", format!("{:?}", self.scan_tolerance)),
            ("scan_pass_fraction", format!("{:?}", self.scan_pass_fraction)),
            ("replicas", self.replicas.to_string()),
            ("seed", self.seed.to_string()),
            ("cap", self.cap.to_string()),
            (
                "grid_step",
                self.grid_step
                    .map(|s| format!("{s:?}"))
                    .unwrap_or_else(|| "default".into()),
            ),
        ];
        if let Some(env) = &self.envelope {
            out.push(("envelope_gamma", format!("{:?}", env.gamma)));
            out.push(("envelope_c", fmt_list(&env.cs)));
            out.push(("envelope_branch_times", env.branch_times.to_string()));
        }
        out.extend([
            ("snapshot_b", format!("{:?}", self.snapshot_b)),
            (
                "snapshot_w",
                self.snapshot_w
                    .map(|w| format!("{w:?}"))
                    .unwrap_or_else(|| "sqrt(t)".into()),
            ),
            ("quad_rel_tol", format!("{:?}", self.quad.rel_tol)),
            ("quad_max_depth", self.quad.max_depth.to_string()),
            ("boundary_tol", format!("{:?}", self.boundary_tol)),
            ("z_max", format!("{:?}", self.z_max)),
            ("mixed_z_max", format!("{:?}", self.mixed_z_max)),
            ("phase_p_min", format!("{:?}", self.phase_p_min)),
            ("strict", self.strict.to_string()),
        ]);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_config() {
        let cfg = SimConfig::parse(
            "# b3 run\n[model]\nspeed = exp:3\noffspring = binary\nt = 4, 6,8\nrho = 0.7\n\
             betas = 0.3,1.1; 0.2,1.3\nreplicas = 64\nseed = 9\nenvelope_gamma = 0.3\nenvelope_c = 5,20\n",
        )
        .unwrap();
        assert_eq!(cfg.t, vec![4.0, 6.0, 8.0]);
        assert_eq!(cfg.betas.len(), 2);
        assert_eq!(cfg.envelope.as_ref().unwrap().cs, vec![5.0, 20.0]);
        assert_eq!(cfg.replicas, 64);
    }

    #[test]
    fn errors_name_the_key() {
        let e = SimConfig::parse("rho = 2").unwrap_err();
        assert_eq!(e.key, "rho");
        let e = SimConfig::parse("replicaz = 3").unwrap_err();
        assert_eq!(e.key, "replicaz");
        let e = SimConfig::parse("t = 1,x").unwrap_err();
        assert_eq!(e.key, "t");
        let e = SimConfig::parse("offspring = 0.5,0.25,0.25").unwrap_err();
        assert_eq!(e.key, "offspring");
        let e = SimConfig::parse("envelope_gamma = 0.3").unwrap_err();
        assert_eq!(e.key, "envelope_c");
        assert!(e.to_string().contains("envelope_c"));
    }

    #[test]
    fn scan_axes_expand() {
        let cfg = SimConfig::parse("scan_sigma = 0:2:0.25\nscan_tau = 0:2:0.25").unwrap();
        let temps = cfg.temperatures();
        assert_eq!(temps.len(), 81);
        assert_eq!(temps[80], ComplexTemperature::new(2.0, 2.0));
    }

    #[test]
    fn resolved_round_trips() {
        let cfg = SimConfig::parse("t = 3,5\nbetas = 0.3,0.4\nrho = 0.5\nseed = 4").unwrap();
        let text: String = cfg
            .resolved()
            .into_iter()
            .filter(|(_, v)| !v.is_empty() && v != "default" && v != "sqrt(t)")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        assert_eq!(SimConfig::parse(&text).unwrap(), cfg);
    }
}
