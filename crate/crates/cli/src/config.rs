//! Pipeline configuration: plain-text key=value file with command-line
//! overrides. The resolved configuration is echoed into every report so a
//! run can be reproduced from its outputs.

use seba_core::error::{Result, SebaError};
use seba_core::lattice::Coeff;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub dim: usize,
    pub coeffs: Vec<String>,
    pub phi: f64,
    pub cutoff: f64,
    pub x_max: f64,
    pub merge_tol: f64,
    pub tol: f64,
    pub quad_tol: f64,
    pub beta: f64,
    pub betas: Vec<f64>,
    pub bins: usize,
    pub tail: String,
    pub sigma: Option<f64>,
    pub out_dir: PathBuf,
    pub workers: usize,
    pub seed: u64,
}

/// Optional overrides collected from flags (None means "not given").
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub dim: Option<usize>,
    pub coeffs: Option<String>,
    pub phi: Option<f64>,
    pub cutoff: Option<f64>,
    pub x_max: Option<f64>,
    pub merge_tol: Option<f64>,
    pub tol: Option<f64>,
    pub quad_tol: Option<f64>,
    pub beta: Option<f64>,
    pub betas: Option<String>,
    pub bins: Option<usize>,
    pub tail: Option<String>,
    pub sigma: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
}

fn parse_kv_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let body = std::fs::read_to_string(path)?;
    let mut map = BTreeMap::new();
    for (ix, raw) in body.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            SebaError::Parse(format!("{}:{}: expected key=value", path.display(), ix + 1))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn take<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| SebaError::Parse(format!("config: bad value for {key}: {v}"))),
    }
}

pub fn parse_betas(s: &str) -> Result<Vec<f64>> {
    let betas: Vec<f64> = s
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| SebaError::Parse(format!("bad beta: {t}")))
        })
        .collect::<Result<_>>()?;
    if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0)) {
        return Err(SebaError::Parse("betas must be positive".into()));
    }
    Ok(betas)
}

pub fn parse_coeff_list(s: &str, dim: usize) -> Result<Vec<Coeff>> {
    let coeffs: Vec<Coeff> = s.split(',').map(Coeff::parse).collect::<Result<_>>()?;
    if coeffs.len() != dim {
        return Err(SebaError::Parse(format!(
            "expected {dim} coefficients, got {}",
            coeffs.len()
        )));
    }
    Ok(coeffs)
}

impl RunConfig {
    /// defaults < config file < explicit flags.
    pub fn resolve(file: Option<&Path>, ov: &Overrides) -> Result<RunConfig> {
        let map = match file {
            Some(p) => parse_kv_file(p)?,
            None => BTreeMap::new(),
        };
        let dim = ov
            .dim
            .or(take(&map, "dim")?)
            .ok_or_else(|| SebaError::Parse("pipeline needs dim (flag or config)".into()))?;
        let coeffs_str = ov
            .coeffs
            .clone()
            .or_else(|| map.get("coeffs").cloned())
            .ok_or_else(|| SebaError::Parse("pipeline needs coeffs (flag or config)".into()))?;
        let coeffs = parse_coeff_list(&coeffs_str, dim)?;
        let phi = ov.phi.or(take(&map, "phi")?).unwrap_or(std::f64::consts::FRAC_PI_2);
        let x_max = ov.x_max.or(take(&map, "xmax")?).unwrap_or(1000.0);
        let beta = ov
            .beta
            .or(take(&map, "beta")?)
            .unwrap_or(if dim == 2 { 0.2 } else { 0.3 });
        // enumeration headroom: enough for both the solve (2x) and the
        // trace-check truncation study at the chosen beta
        let trace_reach = 46.0 / beta;
        let default_cutoff = if dim == 2 {
            (24.0 * trace_reach).max(2.2 * x_max).max(6000.0)
        } else {
            (14.0 * trace_reach).max(2.2 * x_max).max(1500.0)
        };
        let cutoff = ov.cutoff.or(take(&map, "cutoff")?).unwrap_or(default_cutoff);
        let betas = match ov.betas.clone().or_else(|| map.get("betas").cloned()) {
            Some(s) => parse_betas(&s)?,
            None => vec![0.2, 0.1, 0.05],
        };
        let sigma = ov.sigma.or(take(&map, "sigma")?);
        Ok(RunConfig {
            dim,
            coeffs: coeffs.iter().map(Coeff::format).collect(),
            phi,
            cutoff,
            x_max,
            merge_tol: ov.merge_tol.or(take(&map, "merge_tol")?).unwrap_or(1e-10),
            tol: ov.tol.or(take(&map, "tol")?).unwrap_or(1e-12),
            quad_tol: ov.quad_tol.or(take(&map, "quad_tol")?).unwrap_or(1e-9),
            beta,
            betas,
            bins: ov.bins.or(take(&map, "bins")?).unwrap_or(50),
            tail: ov
                .tail
                .clone()
                .or_else(|| map.get("tail").cloned())
                .unwrap_or_else(|| "analytic".into()),
            sigma,
            out_dir: ov
                .out_dir
                .clone()
                .or_else(|| map.get("out_dir").map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("seba-out")),
            workers: ov.workers.or(take(&map, "workers")?).unwrap_or(1),
            seed: ov.seed.or(take(&map, "seed")?).unwrap_or(0),
        })
    }
}
