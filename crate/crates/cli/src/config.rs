//! Experiment configuration: defaults, flat `key = value` config files with
//! `[section]` headers, and command-line overrides.
//!
//! Section names match the library modules (`[lti]`, `[ddmpc]`,
//! `[closedloop]`, `[qpsolve]`, `[cli]`). Flags always win over file keys.

use std::collections::BTreeMap;
use std::path::Path;

use ddmpc_core::{Error, Result};

/// All tunable keys with their defaults (the four-tank benchmark settings).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    // [lti]
    pub system: String,
    pub n_samples: usize,
    pub amplitude: f64,
    pub eps_bar: f64,
    pub seed: u64,
    pub x0: Option<Vec<f64>>,
    // [ddmpc]
    pub horizon: usize,
    pub order: Option<usize>,
    pub q_weight: f64,
    pub r_weight: f64,
    pub lambda_alpha: Option<f64>,
    pub lambda_sigma: f64,
    pub u_min: Option<Vec<f64>>,
    pub u_max: Option<Vec<f64>>,
    pub y_min: Option<Vec<f64>>,
    pub y_max: Option<Vec<f64>>,
    pub u_setpoint: Option<Vec<f64>>,
    pub y_setpoint: Option<Vec<f64>>,
    pub sigma_mode: String,
    // [closedloop]
    pub scheme: String,
    pub step_size: usize,
    pub steps: usize,
    pub warmup: Option<Vec<f64>>,
    pub noise_seed: Option<u64>,
    // [qpsolve]
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub infeasibility_tol: f64,
    // [cli]
    pub jobs: usize,
    pub settle_threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: "four_tank".into(),
            n_samples: 400,
            amplitude: 1.0,
            eps_bar: 0.002,
            seed: default_seed(),
            x0: None,
            horizon: 30,
            order: None,
            q_weight: 3.0,
            r_weight: 1e-4,
            lambda_alpha: None,
            lambda_sigma: 1000.0,
            u_min: None,
            u_max: None,
            y_min: None,
            y_max: None,
            u_setpoint: None,
            y_setpoint: None,
            sigma_mode: "none".into(),
            scheme: "robust".into(),
            step_size: 1,
            steps: 300,
            warmup: None,
            noise_seed: None,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_iter: 50_000,
            infeasibility_tol: 1e-10,
            jobs: 1,
            settle_threshold: 0.05,
        }
    }
}

/// `DDMPC_SEED` supplies the default seed; 1 otherwise.
pub fn default_seed() -> u64 {
    std::env::var("DDMPC_SEED")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

/// Parses `section.key -> value` pairs from the flat config format.
pub fn parse_ini(text: &str) -> Result<BTreeMap<(String, String), String>> {
    let mut out = BTreeMap::new();
    let mut section = String::from("cli");
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_lowercase();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {line_no}: expected key = value")))?;
        out.insert(
            (section.clone(), key.trim().to_lowercase()),
            value.trim().to_string(),
        );
    }
    Ok(out)
}

fn parse_list(v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number in list: {tok:?}")))
        })
        .collect()
}

impl ExperimentConfig {
    /// Loads keys from a config file; unknown keys are errors so typos do not
    /// silently fall back to defaults.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let kv = parse_ini(&text)?;
        for ((section, key), value) in &kv {
            self.apply_key(section, key, value)?;
        }
        Ok(())
    }

    fn apply_key(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Parse(format!("config key {section}.{key}: bad {what}: {value:?}"));
        let as_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
        let as_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
        let as_u64 = || value.parse::<u64>().map_err(|_| bad("integer"));
        match (section, key) {
            ("lti", "system") => self.system = value.to_string(),
            ("lti", "n" | "n_samples") => self.n_samples = as_usize()?,
            ("lti", "amplitude") => self.amplitude = as_f64()?,
            ("lti", "eps" | "eps_bar") => self.eps_bar = as_f64()?,
            ("lti", "seed") => self.seed = as_u64()?,
            ("lti", "x0") => self.x0 = Some(parse_list(value)?),
            ("ddmpc", "l" | "horizon") => self.horizon = as_usize()?,
            ("ddmpc", "n" | "order") => self.order = Some(as_usize()?),
            ("ddmpc", "q") => self.q_weight = as_f64()?,
            ("ddmpc", "r") => self.r_weight = as_f64()?,
            ("ddmpc", "lambda_alpha") => self.lambda_alpha = Some(as_f64()?),
            ("ddmpc", "lambda_sigma") => self.lambda_sigma = as_f64()?,
            ("ddmpc", "u_min") => self.u_min = Some(parse_list(value)?),
            ("ddmpc", "u_max") => self.u_max = Some(parse_list(value)?),
            ("ddmpc", "y_min") => self.y_min = Some(parse_list(value)?),
            ("ddmpc", "y_max") => self.y_max = Some(parse_list(value)?),
            ("ddmpc", "us" | "u_setpoint") => self.u_setpoint = Some(parse_list(value)?),
            ("ddmpc", "ys" | "y_setpoint") => self.y_setpoint = Some(parse_list(value)?),
            ("ddmpc", "sigma_mode") => self.sigma_mode = value.to_string(),
            ("closedloop", "scheme") => self.scheme = value.to_string(),
            ("closedloop", "step" | "step_size") => self.step_size = as_usize()?,
            ("closedloop", "t" | "steps") => self.steps = as_usize()?,
            ("closedloop", "warmup") => self.warmup = Some(parse_list(value)?),
            ("closedloop", "noise_seed") => self.noise_seed = Some(as_u64()?),
            ("qpsolve", "abs_tol") => self.abs_tol = as_f64()?,
            ("qpsolve", "rel_tol") => self.rel_tol = as_f64()?,
            ("qpsolve", "max_iter") => self.max_iter = as_usize()?,
            ("qpsolve", "infeasibility_tol") => self.infeasibility_tol = as_f64()?,
            ("cli", "jobs") => self.jobs = as_usize()?,
            ("cli", "settle_threshold") => self.settle_threshold = as_f64()?,
            _ => {
                return Err(Error::Parse(format!(
                    "unknown config key [{section}] {key}"
                )))
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ini_roundtrip_and_overrides() {
        let text = "\
# comment
[lti]
seed = 7
eps = 0.001
[ddmpc]
L = 20
lambda_sigma = 500  # inline comment
[closedloop]
scheme = nominal
";
        let mut cfg = ExperimentConfig::default();
        let kv = parse_ini(text).unwrap();
        for ((s, k), v) in &kv {
            cfg.apply_key(s, k, v).unwrap();
        }
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.eps_bar, 0.001);
        assert_eq!(cfg.horizon, 20);
        assert_eq!(cfg.lambda_sigma, 500.0);
        assert_eq!(cfg.scheme, "nominal");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.apply_key("ddmpc", "typo", "1").is_err());
    }

    #[test]
    fn lists_parse() {
        assert_eq!(parse_list("1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert!(parse_list("1,x").is_err());
    }
}
