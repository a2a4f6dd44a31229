use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use rcm_core::dynamics::default_burn_in;
use rcm_core::experiments::{Budget, Protocol, Sampler};
use rcm_core::lattice::BcSpec;
use rcm_core::measure::{self_dual_point, ModelParams};

/// Every setting of a run. Missing fields in a config file take the
/// defaults below; command-line flags override the file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub q: f64,
    /// `None` means the self-dual point of `q`.
    pub p: Option<f64>,
    pub p_grid: Vec<f64>,
    pub n: usize,
    pub n_grid: Vec<usize>,
    pub rho: f64,
    /// Rectangle used by `oracle` and `observable`.
    pub width: usize,
    pub height: usize,
    pub bc: String,
    pub torus: bool,
    pub sampler: String,
    pub replicas: usize,
    pub samples: usize,
    pub sweeps: usize,
    /// `None` means `100 n` sweeps.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub dp: f64,
    pub edge: usize,
    pub max_widen: usize,
    pub out: String,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            q: 2.0,
            p: None,
            p_grid: Vec::new(),
            n: 16,
            n_grid: Vec::new(),
            rho: 1.0,
            width: 3,
            height: 2,
            bc: "free".into(),
            torus: false,
            sampler: "sweeny".into(),
            replicas: 8,
            samples: 1000,
            sweeps: 1000,
            burn_in: None,
            thin: 1,
            seed: 1,
            epsilon: 0.25,
            dp: 0.01,
            edge: 0,
            max_widen: 2,
            out: "out".into(),
            strict: false,
        }
    }
}

/// Flags shared by all subcommands; each one overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Flags {
    /// JSON config file (flags take precedence)
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true)]
    pub q: Option<f64>,
    #[arg(long, global = true)]
    pub p: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub p_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub rho: Option<f64>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub height: Option<usize>,
    /// free | wired | topbottom | dobrushin:A:B
    #[arg(long, global = true)]
    pub bc: Option<String>,
    #[arg(long, global = true)]
    pub torus: Option<bool>,
    /// sweeny | coupling
    #[arg(long, global = true)]
    pub sampler: Option<String>,
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub sweeps: Option<usize>,
    #[arg(long, global = true)]
    pub burn_in: Option<usize>,
    #[arg(long, global = true)]
    pub thin: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    #[arg(long, global = true)]
    pub dp: Option<f64>,
    #[arg(long, global = true)]
    pub edge: Option<usize>,
    #[arg(long, global = true)]
    pub max_widen: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<String>,
    /// Exit nonzero on censored results or failed checks
    #[arg(long, global = true)]
    pub strict: bool,
}

macro_rules! apply {
    ($cfg:ident, $flags:ident, $($field:ident),*) => {
        $(if let Some(v) = $flags.$field.clone() { $cfg.$field = v; })*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// File (if any) first, then flags.
    pub fn resolve(flags: &Flags) -> Result<RunConfig> {
        let mut cfg = match &flags.config {
            Some(path) => RunConfig::from_file(Path::new(path))?,
            None => RunConfig::default(),
        };
        apply!(cfg, flags, q, p_grid, n, n_grid, rho, width, height, bc, torus, sampler, replicas, samples, sweeps, thin, seed, epsilon, dp, edge, max_widen, out);
        if flags.p.is_some() {
            cfg.p = flags.p;
        }
        if flags.burn_in.is_some() {
            cfg.burn_in = flags.burn_in;
        }
        cfg.strict |= flags.strict;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ModelParams::new(self.p(), self.q)?;
        for &p in &self.p_grid {
            ModelParams::new(p, self.q)?;
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            bail!("inconsistent grid: n_grid must be strictly increasing");
        }
        if self.p_grid.windows(2).any(|w| w[0] >= w[1]) {
            bail!("inconsistent grid: p_grid must be strictly increasing");
        }
        if self.n == 0 || self.n_grid.contains(&0) {
            bail!("n must be positive");
        }
        if !(self.rho > 0.0) {
            bail!("rho must be positive");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            bail!("epsilon must lie in (0, 1/2)");
        }
        if self.thin == 0 || self.samples == 0 {
            bail!("thin and samples must be positive");
        }
        Sampler::parse(&self.sampler)?;
        BcSpec::parse(&self.bc)?;
        Ok(())
    }

    pub fn p(&self) -> f64 {
        self.p.unwrap_or_else(|| self_dual_point(self.q))
    }

    pub fn p_values(&self) -> Vec<f64> {
        if self.p_grid.is_empty() {
            vec![self.p()]
        } else {
            self.p_grid.clone()
        }
    }

    pub fn n_values(&self) -> Vec<usize> {
        if self.n_grid.is_empty() {
            vec![self.n]
        } else {
            self.n_grid.clone()
        }
    }

    pub fn burn_in_for(&self, n: usize) -> usize {
        self.burn_in.unwrap_or_else(|| default_burn_in(n))
    }

    pub fn budget(&self, n: usize) -> Budget {
        Budget {
            replicas: self.replicas,
            samples_per_replica: self.samples,
            burn_in: self.burn_in_for(n),
            thin: self.thin,
        }
    }

    pub fn protocol(&self, p: f64, n: usize) -> Result<Protocol> {
        Ok(Protocol {
            params: ModelParams::new(p, self.q)?,
            bc: BcSpec::parse(&self.bc)?,
            sampler: Sampler::parse(&self.sampler)?,
            budget: self.budget(n),
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig {
            p: Some(0.55),
            p_grid: vec![0.1, 1.0 / 3.0],
            burn_in: Some(7),
            ..RunConfig::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), cfg);
        let d = RunConfig::default();
        assert_eq!(serde_json::from_str::<RunConfig>("{}").unwrap(), d);
    }

    #[test]
    fn validation() {
        assert!(RunConfig { q: 0.5, ..Default::default() }.validate().is_err());
        assert!(RunConfig { n_grid: vec![8, 4], ..Default::default() }.validate().is_err());
        assert!(RunConfig { sampler: "metropolis".into(), ..Default::default() }.validate().is_err());
        assert!(RunConfig::default().validate().is_ok());
    }
}
