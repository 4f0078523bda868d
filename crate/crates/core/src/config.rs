//! Run configuration: one TOML file, dotted `key=value` overrides and a
//! content hash naming the output directory.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gamma::GammaPath;
use crate::ldp::CurveConfig;
use crate::martingale::SdeConfig;
use crate::mixture::{FieldSpec, MixtureSpec};
use crate::pde::{PdeGrid, Terminal};
use crate::variational::OptimizerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// `[[p, β_p²], ...]`.
    pub mixture: MixtureSpec,
    #[serde(default)]
    pub field: FieldSpec,
    /// Seeds every Monte Carlo stage; replaces `sde.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: Option<PdeGrid>,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub pde: PdeBlock,
    #[serde(default)]
    pub laplace: LaplaceBlock,
    #[serde(default)]
    pub rate: RateBlock,
    #[serde(default)]
    pub probe: ProbeBlock,
    #[serde(default)]
    pub fractional: FractionalBlock,
    #[serde(default)]
    pub finite_n: FiniteNBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeBlock {
    pub s_floor: f64,
    /// `[[q, m], ...]` with `q₀ = 0`; `γ ≡ s_floor` when empty.
    pub knots: Vec<(f64, f64)>,
    /// Finite inverse temperature; zero temperature when absent.
    pub beta: Option<f64>,
    /// Write every n-th grid point.
    pub every: usize,
}

impl Default for PdeBlock {
    fn default() -> Self {
        Self { s_floor: 0.0, knots: Vec::new(), beta: None, every: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaplaceBlock {
    pub s_grid: Vec<f64>,
    pub flat_tol: f64,
    pub max_slope_jump: f64,
}

impl Default for LaplaceBlock {
    fn default() -> Self {
        let c = CurveConfig::default();
        Self { s_grid: c.s_grid, flat_tol: c.flat_tol, max_slope_jump: c.max_slope_jump }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateBlock {
    /// Absolute thresholds `r`.
    pub r_list: Vec<f64>,
    /// Thresholds relative to the ground state, `r = gs + offset`.
    pub offsets: Vec<f64>,
    /// Also re-optimise and simulate at each `s*`.
    pub direct: bool,
}

impl Default for RateBlock {
    fn default() -> Self {
        Self { r_list: Vec::new(), offsets: vec![0.05, 0.1, 0.2], direct: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeBlock {
    pub deltas: Vec<f64>,
}

impl Default for ProbeBlock {
    fn default() -> Self {
        Self { deltas: vec![0.2, 0.1, 0.05, 0.025] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FractionalBlock {
    pub s: f64,
    pub betas: Vec<f64>,
}

impl Default for FractionalBlock {
    fn default() -> Self {
        Self { s: 0.5, betas: vec![4.0, 8.0, 16.0, 32.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FiniteNBlock {
    pub n_list: Vec<usize>,
    pub s_list: Vec<f64>,
    pub r_list: Vec<f64>,
    pub n_disorder: usize,
}

impl Default for FiniteNBlock {
    fn default() -> Self {
        Self { n_list: vec![8, 12, 16], s_list: vec![0.25, 0.5, 1.0], r_list: Vec::new(), n_disorder: 2000 }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig =
            toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.field.validate().map_err(cfg)?;
        self.grid().validate(&self.mixture, &self.field).map_err(cfg)?;
        self.sde.validate().map_err(cfg)?;
        if self.laplace.s_grid.iter().any(|&s| !(s >= 0.0)) || !self.laplace.s_grid.contains(&0.0) {
            return Err(Error::Config("laplace.s_grid must be nonnegative and contain 0".into()));
        }
        if !(self.fractional.s > 0.0 && self.fractional.s < 1.0) {
            return Err(Error::Config("fractional.s must lie in (0, 1)".into()));
        }
        if self.fractional.betas.iter().any(|&b| !(b >= self.fractional.s)) {
            return Err(Error::Config("fractional.betas must be at least fractional.s".into()));
        }
        if self.pde.every == 0 {
            return Err(Error::Config("pde.every must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> PdeGrid {
        self.grid.clone().unwrap_or_else(|| PdeGrid::for_problem(&self.mixture, &self.field))
    }

    pub fn sde(&self) -> SdeConfig {
        SdeConfig { seed: self.seed, ..self.sde.clone() }
    }

    /// The deterministic field, required by the zero-temperature pipeline.
    pub fn h(&self) -> Result<f64> {
        self.field
            .as_deterministic()
            .ok_or_else(|| Error::Config("this command needs a deterministic field".into()))
    }

    pub fn curve(&self) -> CurveConfig {
        CurveConfig {
            s_grid: self.laplace.s_grid.clone(),
            flat_tol: self.laplace.flat_tol,
            max_slope_jump: self.laplace.max_slope_jump,
            optimizer: self.optimizer.clone(),
            sde: self.sde(),
            grid: self.grid.clone(),
        }
    }

    pub fn pde_gamma(&self) -> Result<GammaPath> {
        if self.pde.knots.is_empty() {
            Ok(GammaPath::floor(self.pde.s_floor))
        } else {
            GammaPath::new(self.pde.s_floor, self.pde.knots.clone()).map_err(|e| Error::Config(e.to_string()))
        }
    }

    pub fn terminal(&self) -> Terminal {
        self.pde.beta.map_or(Terminal::ZeroTemp, Terminal::FiniteTemp)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// First 12 hex digits of the SHA-256 of the resolved configuration.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))[..12].to_string()
    }
}

/// Applies `a.b.c=value`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let next = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next.as_table_mut().ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SK: &str = "mixture = [[2, 1.0]]\n[field]\nh = 0.5\n";

    #[test]
    fn minimal_config_and_defaults() {
        let c = RunConfig::from_toml(SK, &[]).unwrap();
        assert_eq!(c.h().unwrap(), 0.5);
        assert_eq!(c.probe.deltas, vec![0.2, 0.1, 0.05, 0.025]);
        assert_eq!(c.laplace.s_grid.len(), 41);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("mixure = [[2, 1.0]]", &[]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("mixure"), "{err}");
        let err = RunConfig::from_toml(SK, &["sde.n_path=10".into()]).unwrap_err();
        assert!(err.to_string().contains("n_path"), "{err}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = RunConfig::from_toml(SK, &[]).unwrap();
        let b = RunConfig::from_toml(SK, &["sde.n_paths=2000".into(), "field.h=0.25".into()]).unwrap();
        assert_eq!(b.sde.n_paths, 2000);
        assert_eq!(b.field.h, 0.25);
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), RunConfig::from_toml(SK, &[]).unwrap().hash());
        let round = RunConfig::from_toml(&a.to_toml(), &[]).unwrap();
        assert_eq!(round, a);
    }

    #[test]
    fn invalid_mixture_is_a_config_error() {
        assert!(RunConfig::from_toml("mixture = [[1, 1.0]]", &[]).is_err());
        assert!(RunConfig::from_toml(SK, &["fractional.s=1.5".into()]).is_err());
    }
}
