//! Experiment configuration: flags override file values override defaults.

use clap::Args;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::run::CliError;

/// Flags shared by every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// Equation: nls | kdv.
    #[arg(long)]
    pub eq: Option<String>,
    /// Truncation order r (0 or 1).
    #[arg(long)]
    pub order: Option<i32>,
    /// A-priori regularity n; defaults to r + 1.
    #[arg(long)]
    pub n: Option<u32>,
    /// Grid points per dimension (power of two).
    #[arg(long)]
    pub grid: Option<usize>,
    /// Comma-separated list of time steps.
    #[arg(long, value_delimiter = ',')]
    pub tau: Option<Vec<f64>>,
    /// Steps per trajectory.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    pub samples: Option<usize>,
    /// RNG seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Bound on free-frequency sums.
    #[arg(long)]
    pub kmax: Option<i64>,
    /// Noise mode: real-gaussian | complex-gaussian.
    #[arg(long)]
    pub noise: Option<String>,
    /// Profile regularity exponent theta in v_k = (1+|k|)^-theta.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Reference-integrator substeps.
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Output path (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format: fourier | physical | json.
    #[arg(long)]
    pub format: Option<String>,
    /// Apply the stabilisation filters to the scheme.
    #[arg(long, default_value_t = false)]
    pub stabilized: bool,
    /// Named scheme (nls1, nls2, nls2_stab, kdv1, kdv2, kdv2_stab);
    /// overrides --eq/--order/--stabilized.
    #[arg(long)]
    pub scheme: Option<String>,
}

pub type SchemeArgs = CommonArgs;
pub type OrderCheckArgs = CommonArgs;
pub type McArgs = CommonArgs;
pub type ConvergeArgs = CommonArgs;

/// File form of the configuration; every field optional.
#[derive(Deserialize, Serialize, Default, Debug, Clone)]
pub struct FileConfig {
    pub eq: Option<String>,
    pub order: Option<i32>,
    pub n: Option<u32>,
    pub grid: Option<usize>,
    pub tau: Option<Vec<f64>>,
    pub steps: Option<usize>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub kmax: Option<i64>,
    pub noise: Option<String>,
    pub theta: Option<f64>,
    pub substeps: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<String>,
    pub stabilized: Option<bool>,
    pub scheme: Option<String>,
}

/// Fully resolved experiment configuration.
#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub eq: String,
    pub order: i32,
    pub n: u32,
    pub grid: usize,
    pub tau: Vec<f64>,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub kmax: i64,
    pub noise: String,
    pub theta: f64,
    pub substeps: usize,
    pub out: Option<PathBuf>,
    pub format: String,
    pub stabilized: bool,
}

impl CommonArgs {
    pub fn materialize(
        &self,
        file: Option<&Path>,
        show: bool,
    ) -> Result<ExperimentConfig, CliError> {
        let fc: FileConfig = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(CliError::Io)?;
                toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => FileConfig::default(),
        };
        // a named scheme fixes equation, order, and stabilisation
        let named = match self.scheme.clone().or(fc.scheme.clone()) {
            Some(name) => Some(
                pfi::SchemeId::parse(&name)
                    .ok_or_else(|| CliError::Config(format!("unknown scheme '{}'", name)))?,
            ),
            None => None,
        };
        let order = named
            .map(|id| id.order())
            .or(self.order)
            .or(fc.order)
            .unwrap_or(1);
        let cfg = ExperimentConfig {
            eq: named
                .map(|id| id.dispersion().name)
                .or(self.eq.clone())
                .or(fc.eq)
                .unwrap_or_else(|| "nls".into()),
            order,
            n: self.n.or(fc.n).unwrap_or((order + 1).max(1) as u32),
            grid: self.grid.or(fc.grid).unwrap_or(32),
            tau: self
                .tau
                .clone()
                .or(fc.tau)
                .unwrap_or_else(|| (4..=9).map(|j| 0.5f64.powi(j)).collect()),
            steps: self.steps.or(fc.steps).unwrap_or(1),
            samples: self.samples.or(fc.samples).unwrap_or(2000),
            seed: self.seed.or(fc.seed).unwrap_or(7),
            kmax: self.kmax.or(fc.kmax).unwrap_or(16),
            noise: self
                .noise
                .clone()
                .or(fc.noise)
                .unwrap_or_else(|| "real-gaussian".into()),
            theta: self.theta.or(fc.theta).unwrap_or(2.0),
            substeps: self.substeps.or(fc.substeps).unwrap_or(256),
            out: self.out.clone().or(fc.out),
            format: self
                .format
                .clone()
                .or(fc.format)
                .unwrap_or_else(|| "fourier".into()),
            stabilized: named.map(|id| id.stabilized()).unwrap_or_else(|| {
                self.stabilized || fc.stabilized.unwrap_or(false)
            }),
        };
        cfg.validate()?;
        if show {
            println!("{}", toml::to_string_pretty(&cfg).unwrap());
        }
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if !matches!(self.eq.as_str(), "nls" | "kdv") {
            return Err(CliError::Config(format!("unknown equation '{}'", self.eq)));
        }
        if !(0..=1).contains(&self.order) {
            return Err(CliError::Config(format!(
                "unsupported (equation, order) pair ({}, {})",
                self.eq, self.order
            )));
        }
        if !matches!(self.noise.as_str(), "real-gaussian" | "complex-gaussian") {
            return Err(CliError::Config(format!("unknown noise mode '{}'", self.noise)));
        }
        if !self.grid.is_power_of_two() || self.grid < 8 {
            return Err(CliError::Config(format!(
                "grid must be a power of two >= 8, got {}",
                self.grid
            )));
        }
        if !matches!(self.format.as_str(), "fourier" | "physical" | "json") {
            return Err(CliError::Config(format!("unknown format '{}'", self.format)));
        }
        if self.tau.is_empty() {
            return Err(CliError::Config("empty tau list".into()));
        }
        if self.tau.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(CliError::Config("tau values must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_mode(&self) -> pfi::NoiseMode {
        match self.noise.as_str() {
            "complex-gaussian" => pfi::NoiseMode::ComplexGaussian,
            _ => pfi::NoiseMode::RealGaussian,
        }
    }

    pub fn dispersion(&self) -> pfi::DispersionSpec {
        pfi::DispersionSpec::by_name(&self.eq).expect("validated")
    }

    pub fn scheme_id(&self) -> pfi::SchemeId {
        match (self.eq.as_str(), self.order, self.stabilized) {
            ("nls", 0, _) => pfi::SchemeId::Nls1,
            ("nls", _, false) => pfi::SchemeId::Nls2,
            ("nls", _, true) => pfi::SchemeId::Nls2Stab,
            ("kdv", 0, _) => pfi::SchemeId::Kdv1,
            ("kdv", _, false) => pfi::SchemeId::Kdv2,
            _ => pfi::SchemeId::Kdv2Stab,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrips_through_toml() {
        let args = CommonArgs {
            eq: Some("kdv".into()),
            order: Some(1),
            tau: Some(vec![0.01, 0.005]),
            ..Default::default()
        };
        let cfg = args.materialize(None, false).unwrap();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut args = CommonArgs::default();
        args.tau = Some(vec![]);
        assert!(args.materialize(None, false).is_err());
        let mut args = CommonArgs::default();
        args.eq = Some("wave".into());
        assert!(args.materialize(None, false).is_err());
        let mut args = CommonArgs::default();
        args.order = Some(3);
        assert!(args.materialize(None, false).is_err());
    }
}
