//! Flat `key = value` config files. `#` starts a comment, blank lines are
//! skipped, unknown keys are errors.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{field}: {reason}")]
    Validation { field: String, reason: String },
}

/// Raw values from a config file; everything optional, flags fill the rest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub experiment: Option<String>,
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub bias: Option<f64>,
    pub law: Option<String>,
    pub m: Option<i64>,
    pub m_list: Option<Vec<i64>>,
    pub r: Option<i64>,
    pub r_list: Option<Vec<i64>>,
    pub k: Option<i64>,
    pub ell_max: Option<u32>,
    pub samples: Option<u64>,
    pub t: Option<u64>,
    pub t_list: Option<Vec<u64>>,
    pub tol: Option<f64>,
    pub base_samples: Option<u64>,
    pub sample_cap: Option<u64>,
    pub guard: Option<u64>,
    pub bracket_lo: Option<f64>,
    pub bracket_hi: Option<f64>,
}

fn parse_scalar<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        line,
        reason: format!("bad value {value:?} for {key}"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(|part| parse_scalar(line, key, part.trim()))
        .collect()
}

pub fn parse_config(text: &str) -> Result<FileConfig, ConfigError> {
    let mut cfg = FileConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            reason: format!("expected `key = value`, got {content:?}"),
        })?;
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(ConfigError::Parse { line, reason: format!("empty value for {key}") });
        }
        if seen.iter().any(|k| k == key) {
            return Err(ConfigError::Parse { line, reason: format!("duplicate key {key}") });
        }
        seen.push(key.to_string());
        match key {
            "experiment" => cfg.experiment = Some(value.to_string()),
            "mu" => cfg.mu = Some(parse_scalar(line, key, value)?),
            "lambda" => cfg.lambda = Some(parse_scalar(line, key, value)?),
            "bias" => cfg.bias = Some(parse_scalar(line, key, value)?),
            "law" => cfg.law = Some(value.to_string()),
            "m" => cfg.m = Some(parse_scalar(line, key, value)?),
            "m_list" => cfg.m_list = Some(parse_list(line, key, value)?),
            "r" => cfg.r = Some(parse_scalar(line, key, value)?),
            "r_list" => cfg.r_list = Some(parse_list(line, key, value)?),
            "k" => cfg.k = Some(parse_scalar(line, key, value)?),
            "ell_max" => cfg.ell_max = Some(parse_scalar(line, key, value)?),
            "samples" => cfg.samples = Some(parse_scalar(line, key, value)?),
            "t" => cfg.t = Some(parse_scalar(line, key, value)?),
            "t_list" => cfg.t_list = Some(parse_list(line, key, value)?),
            "tol" => cfg.tol = Some(parse_scalar(line, key, value)?),
            "base_samples" => cfg.base_samples = Some(parse_scalar(line, key, value)?),
            "sample_cap" => cfg.sample_cap = Some(parse_scalar(line, key, value)?),
            "guard" => cfg.guard = Some(parse_scalar(line, key, value)?),
            "bracket_lo" => cfg.bracket_lo = Some(parse_scalar(line, key, value)?),
            "bracket_hi" => cfg.bracket_hi = Some(parse_scalar(line, key, value)?),
            other => {
                return Err(ConfigError::Validation {
                    field: other.to_string(),
                    reason: "unknown key".to_string(),
                })
            }
        }
    }
    Ok(cfg)
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub mu: f64,
    pub lambda: f64,
    pub bias: f64,
    pub law: String,
    pub m: i64,
    pub m_list: Vec<i64>,
    pub r: i64,
    pub r_list: Vec<i64>,
    pub k: i64,
    pub ell_max: u32,
    pub samples: u64,
    pub t: u64,
    pub t_list: Vec<u64>,
    pub tol: f64,
    pub base_samples: u64,
    pub sample_cap: u64,
    pub guard: u64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            mu: 0.5,
            lambda: 1.0,
            bias: 0.5,
            law: "poisson".to_string(),
            m: 256,
            m_list: vec![64, 256, 1024],
            r: 16,
            r_list: vec![32, 64, 128],
            k: 4,
            ell_max: 2,
            samples: 100,
            t: 50,
            t_list: vec![10, 50, 200],
            tol: 0.05,
            base_samples: 64,
            sample_cap: 4096,
            guard: 200_000_000,
            bracket_lo: 0.12,
            bracket_hi: 0.92,
        }
    }
}

impl Settings {
    pub fn apply_file(&mut self, file: &FileConfig) {
        macro_rules! take {
            ($f:ident) => {
                if let Some(v) = &file.$f {
                    self.$f = v.clone();
                }
            };
        }
        take!(mu);
        take!(lambda);
        take!(bias);
        take!(law);
        take!(m);
        take!(m_list);
        take!(r);
        take!(r_list);
        take!(k);
        take!(ell_max);
        take!(samples);
        take!(t);
        take!(t_list);
        take!(tol);
        take!(base_samples);
        take!(sample_cap);
        take!(guard);
        take!(bracket_lo);
        take!(bracket_hi);
    }

    /// Constraints shared by all experiments, plus the lattice divisibility
    /// rule for the experiments that need it.
    pub fn validate(&self, needs_lattice: bool) -> Result<(), ConfigError> {
        let err = |field: &str, reason: String| {
            Err(ConfigError::Validation { field: field.to_string(), reason })
        };
        if !(self.lambda > 0.0) {
            return err("lambda", "must be positive".to_string());
        }
        if !(0.0..=1.0).contains(&self.bias) {
            return err("bias", "must be in [0, 1]".to_string());
        }
        if self.mu < 0.0 {
            return err("mu", "must be nonnegative".to_string());
        }
        if self.law != "poisson" && self.law != "bernoulli" {
            return err("law", format!("unknown law {:?}", self.law));
        }
        if self.law == "bernoulli" && self.mu > 1.0 {
            return err("mu", "Bernoulli law needs mu <= 1".to_string());
        }
        if self.k < 1 {
            return err("k", "must be at least 1".to_string());
        }
        if self.tol <= 0.0 {
            return err("tol", "must be positive".to_string());
        }
        if !(self.bracket_lo < self.bracket_hi) {
            return err("bracket_lo", "bracket must be nonempty".to_string());
        }
        if self.m_list.windows(2).any(|w| w[0] >= w[1]) {
            return err("m_list", "must be strictly increasing".to_string());
        }
        if needs_lattice {
            for &r in self.r_list.iter().chain(std::iter::once(&self.r)) {
                if r < 1 || (2 * r).rem_euclid(self.k) != 0 {
                    return err("k", format!("k = {} must divide 2r = {}", self.k, 2 * r));
                }
            }
        }
        Ok(())
    }
}
