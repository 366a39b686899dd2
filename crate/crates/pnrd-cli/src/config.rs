//! Key=value configuration files and flag/file/environment resolution.
//!
//! A config file holds one `key=value` pair per line with `#` comments;
//! keys are the long flag names. Flags take precedence over file values,
//! which take precedence over environment defaults.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Environment variable consulted for a default seed.
pub const SEED_ENV_VAR: &str = "PNRD_SEED";

/// Parsed config file contents.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected key=value, got {raw:?}",
                    lineno + 1
                )));
            };
            entries.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                CliError::Usage(format!("config value for {key} is not valid: {raw:?}"))
            }),
        }
    }
}

/// Resolve one option: flag value, then config value, then default.
pub fn resolve<T: FromStr>(
    flag: Option<T>,
    config: &FileConfig,
    key: &str,
    default: T,
) -> Result<T, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(config.get(key)?.unwrap_or(default)),
    }
}

/// Resolve a mandatory option: flag value, then config value, else a usage
/// error naming the flag.
pub fn require<T: FromStr>(flag: Option<T>, config: &FileConfig, key: &str) -> Result<T, CliError> {
    match flag {
        Some(v) => Ok(v),
        None => config.get(key)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required value: pass --{key} or set {key}= in the config file"
            ))
        }),
    }
}

/// Seed resolution adds the environment default between config and the
/// built-in fallback.
pub fn resolve_seed(flag: Option<u64>, config: &FileConfig, default: u64) -> Result<u64, CliError> {
    if let Some(v) = flag {
        return Ok(v);
    }
    if let Some(v) = config.get::<u64>("seed")? {
        return Ok(v);
    }
    match std::env::var(SEED_ENV_VAR) {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV_VAR} is not a valid seed: {raw:?}"))),
        Err(_) => Ok(default),
    }
}

/// "min,max,points" grid specification. Log spacing requires a strictly
/// positive minimum; linear spacing (efficiency grids) allows zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn log_values(&self) -> Result<Vec<f64>, CliError> {
        if self.min <= 0.0 {
            return Err(CliError::Usage(format!(
                "log-spaced grids need a positive minimum, got {}",
                self.min
            )));
        }
        if self.points == 1 {
            return Ok(vec![self.min]);
        }
        let (ln_min, ln_max) = (self.min.ln(), self.max.ln());
        let step = (ln_max - ln_min) / (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| (ln_min + i as f64 * step).exp())
            .collect())
    }

    pub fn linear_values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.min + i as f64 * step)
            .collect()
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(format!("expected min,max,points, got {s:?}"));
        }
        let min: f64 = parts[0]
            .parse()
            .map_err(|_| format!("bad grid minimum {:?}", parts[0]))?;
        let max: f64 = parts[1]
            .parse()
            .map_err(|_| format!("bad grid maximum {:?}", parts[1]))?;
        let points: usize = parts[2]
            .parse()
            .map_err(|_| format!("bad grid point count {:?}", parts[2]))?;
        if !min.is_finite() || !max.is_finite() || min < 0.0 || max < min || points == 0 {
            return Err(format!(
                "grid needs 0 <= min <= max and at least one point, got {s:?}"
            ));
        }
        Ok(Self { min, max, points })
    }
}

/// Comma-separated list of explicit drive means.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanList(pub Vec<f64>);

impl FromStr for MeanList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let values: Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        let values = values.map_err(|_| format!("bad mean list {s:?}"))?;
        if values.is_empty() {
            return Err("mean list is empty".into());
        }
        Ok(Self(values))
    }
}
