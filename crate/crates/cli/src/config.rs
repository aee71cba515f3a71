//! Harness configuration: JSON file merged over defaults, then the
//! `COMMFORGE_SEED` environment override.

use std::path::Path;

use commforge::collectives::{Algo, Selector, Thresholds};
use commforge::sim::{IntraKind, SEED_ENV};
use commforge::timing::{CostParams, LinkCost};
use commforge::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub nodes: usize,
    pub gpus_per_node: usize,
    pub intra_kind: IntraKind,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            nodes: 1,
            gpus_per_node: 8,
            intra_kind: IntraKind::SwitchAttached,
        }
    }
}

/// Cost parameters with bandwidths in decimal GB/s.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostConfig {
    pub alpha_intra_us: f64,
    pub beta_intra_gbps: f64,
    pub alpha_inter_us: f64,
    pub beta_inter_gbps: f64,
    pub proxy_hop_us: f64,
    pub sem_op_us: f64,
    pub tb_sync_us: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        let p = CostParams::default();
        Self {
            alpha_intra_us: p.intra.alpha_us,
            beta_intra_gbps: p.intra.beta_bytes_per_us / 1e3,
            alpha_inter_us: p.inter.alpha_us,
            beta_inter_gbps: p.inter.beta_bytes_per_us / 1e3,
            proxy_hop_us: p.proxy_hop_us,
            sem_op_us: p.sem_op_us,
            tb_sync_us: p.tb_sync_us,
        }
    }
}

impl CostConfig {
    pub fn params(&self) -> Result<CostParams> {
        let alphas = [self.alpha_intra_us, self.alpha_inter_us, self.proxy_hop_us, self.sem_op_us, self.tb_sync_us];
        if alphas.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::Config("latencies and overheads must be non-negative".into()));
        }
        if !(self.beta_intra_gbps > 0.0 && self.beta_inter_gbps > 0.0) {
            return Err(Error::Config("bandwidths must be positive".into()));
        }
        Ok(CostParams {
            intra: LinkCost::from_gbps(self.alpha_intra_us, self.beta_intra_gbps),
            inter: LinkCost::from_gbps(self.alpha_inter_us, self.beta_inter_gbps),
            proxy_hop_us: self.proxy_hop_us,
            sem_op_us: self.sem_op_us,
            tb_sync_us: self.tb_sync_us,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectorConfig {
    pub thresholds: Thresholds,
    #[serde(rename = "override")]
    pub force: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub topology: TopologyConfig,
    pub cost: CostConfig,
    pub selector: SelectorConfig,
    pub seed: u64,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.cost.params()?;
        cfg.selector()?;
        Ok(cfg)
    }

    pub fn selector(&self) -> Result<Selector> {
        let mut s = Selector::with_thresholds(self.selector.thresholds);
        s.check()?;
        s.overrides = self.selector.force.as_deref().map(str::parse::<Algo>).transpose()?;
        Ok(s)
    }

    pub fn params(&self) -> CostParams {
        self.cost.params().expect("checked at load")
    }
}

/// Defaults, then the file at `path` (if any), then the seed environment
/// override.
pub fn load_config(path: Option<&Path>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    if let Ok(raw) = std::env::var(SEED_ENV) {
        cfg.seed = raw
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not a u64")))?;
    }
    Ok(cfg)
}
