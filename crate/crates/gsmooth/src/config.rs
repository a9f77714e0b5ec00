//! Run configuration as JSON, with `key=value` overrides and sweeps.

use std::path::Path;

use gsmooth_core::certify::{CertifyConfig, Path as CertPath};
use gsmooth_core::smoothing::NoiseKind;
use gsmooth_core::transforms::{TransformKind, TransformSpec};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{read, Error, Result};

pub const SEED_ENV: &str = "GSMOOTH_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub transform: String,
    pub path: String,
    pub sigma1: f64,
    pub sigma2: f64,
    pub n0: u64,
    pub n: u64,
    pub alpha: f64,
    pub grid_points: usize,
    pub safety_factor: f64,
    pub a_hat_multiplier: f64,
    pub seed: u64,
    /// Smoothing distribution of the resolvable path; defaults to the folded
    /// Gaussian for nonnegative families and the Gaussian otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    /// Parameter box `P`; defaults to the family's own box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub space: Option<Vec<(f64, f64)>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CertifyConfig::default();
        Self {
            transform: TransformKind::Translation.name().into(),
            path: c.path.name().into(),
            sigma1: c.sigma1,
            sigma2: c.sigma2,
            n0: c.n0,
            n: c.n,
            alpha: c.alpha,
            grid_points: c.grid_points,
            safety_factor: c.safety_factor,
            a_hat_multiplier: 10.0,
            seed: 0,
            noise: None,
            space: None,
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()))
}

impl RunConfig {
    /// Resolves the configuration: the JSON file (if any), `GSMOOTH_SEED` when
    /// neither the file nor an override sets a seed, the `key=value`
    /// overrides in order, and finally an explicit seed.
    pub fn resolve(file: Option<&Path>, overrides: &[String], env_seed: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let mut map = match file {
            Some(p) => {
                let v: Value = serde_json::from_slice(&read(p)?).map_err(|source| Error::Json { path: p.into(), source })?;
                match v {
                    Value::Object(m) => m,
                    _ => return Err(Error::Config(format!("{}: expected a JSON object", p.display()))),
                }
            }
            None => Map::new(),
        };
        if !map.contains_key("seed") {
            if let Some(s) = env_seed {
                let s: u64 = s.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))?;
                map.insert("seed".into(), s.into());
            }
        }
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            map.insert(k.trim().into(), parse_value(v.trim()));
        }
        if let Some(s) = seed {
            map.insert("seed".into(), s.into());
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with(&self, key: &str, value: f64) -> Result<Self> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v[key] = serde_json::json!(value);
        let cfg: RunConfig = serde_json::from_value(v).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Result<TransformKind> {
        Ok(self.transform.parse()?)
    }

    pub fn cert_path(&self) -> Result<CertPath> {
        Ok(self.path.parse()?)
    }

    pub fn spec(&self) -> Result<TransformSpec> {
        let kind = self.kind()?;
        Ok(match &self.space {
            Some(s) => TransformSpec::with_space(kind, s.clone())?,
            None => TransformSpec::new(kind),
        })
    }

    pub fn noise_kind(&self) -> Result<NoiseKind> {
        match &self.noise {
            Some(n) => Ok(n.parse()?),
            None if self.kind()?.nonnegative() => Ok(NoiseKind::FoldedGaussian),
            None => Ok(NoiseKind::Gaussian),
        }
    }

    /// Certification settings; `epsilon` and `a_hat` come from a surrogate
    /// evaluation and only matter on the surrogate path.
    pub fn certify_config(&self, epsilon: f64, a_hat: f64) -> Result<CertifyConfig> {
        let c = CertifyConfig {
            path: self.cert_path()?,
            sigma1: self.sigma1,
            sigma2: self.sigma2,
            noise: self.noise_kind()?,
            n0: self.n0,
            n: self.n,
            alpha: self.alpha,
            epsilon,
            a_hat,
            grid_points: self.grid_points,
            safety_factor: self.safety_factor,
            seed: self.seed,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        self.noise_kind()?;
        self.certify_config(0.0, 0.0)?;
        if !(self.a_hat_multiplier >= 0.0 && self.safety_factor >= 1.0 && self.grid_points >= 1) {
            return Err(Error::Config("need a_hat_multiplier ≥ 0, safety_factor ≥ 1 and grid_points ≥ 1".into()));
        }
        Ok(())
    }
}

/// Parses one sweep axis such as `sigma1=0.1,0.25,0.5`.
pub fn parse_sweep(arg: &str) -> Result<(String, Vec<f64>)> {
    let (k, vs) = arg.split_once('=').ok_or_else(|| Error::Config(format!("sweep `{arg}` is not key=v1,v2,...")))?;
    let vals = parse_list(vs)?;
    if vals.is_empty() {
        return Err(Error::Config(format!("sweep `{arg}` has no values")));
    }
    Ok((k.trim().into(), vals))
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::Config(format!("`{t}` is not a number"))))
        .collect()
}
