use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Args;
use serde::{Deserialize, Serialize};

use pinning_core::dual::{DualMode, DualOptions, DEFAULT_MAX_SWEEPS, DEFAULT_TOL};
use pinning_core::grid::{DomainShape, GridDomain, MaskGrid};

use crate::Failure;

/// Flat run configuration. Every field can come from the JSON file given by
/// `--config` or from a flag; flags win.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
pub struct RunConfig {
    /// JSON file with default values for any of the other options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// square | disk | mask:<path>
    #[arg(long)]
    pub domain: Option<String>,
    /// Nodes per side of the bounding box (ignored for masks)
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Solver tolerance (max node update for dual solves)
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub max_sweeps: Option<usize>,

    /// full | truncated | obstacle | mollified
    #[arg(long)]
    pub mode: Option<String>,
    /// Number of vortex levels for truncated/obstacle modes, or ladder depth
    #[arg(long)]
    pub levels: Option<u32>,
    /// Obstacle bound on |f|
    #[arg(long)]
    pub bound: Option<f64>,
    /// Mollification half-width
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub band_tol: Option<f64>,
    /// Relative tolerance of the duality check
    #[arg(long)]
    pub duality_tol: Option<f64>,

    /// Bisection tolerance for λ_crj
    #[arg(long)]
    pub bisect_tol: Option<f64>,
    /// Largest λ of the phase diagram
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Number of phase-diagram rows
    #[arg(long)]
    pub lambda_steps: Option<usize>,

    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Exhaustive degree search (logged against descent)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub exact: Option<bool>,
    #[arg(long)]
    pub max_holes: Option<usize>,
    #[arg(long)]
    pub dmax: Option<i64>,
    /// Target vorticity CSV for the recovery construction
    #[arg(long)]
    pub recover: Option<PathBuf>,
    /// Block half-width M
    #[arg(long = "M", alias = "m")]
    #[serde(rename = "M", alias = "m")]
    pub block_m: Option<usize>,

    /// Comma-separated decreasing ε list
    #[arg(long, value_delimiter = ',')]
    pub epsilons: Option<Vec<f64>>,

    /// Random samples per oracle suite
    #[arg(long)]
    pub samples: Option<usize>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl RunConfig {
    /// Fills unset fields from the `--config` file, if any.
    pub fn resolve(mut self) -> Result<Self, Failure> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Failure::validation(format!("cannot read config {}: {e}", path.display())))?;
        let file: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::validation(format!("invalid config {}: {e}", path.display())))?;
        merge_fields!(
            self, file, domain, n, lambda, gamma, tol, out, seed, threads, max_sweeps, mode, levels, bound,
            delta, band_tol, duality_tol, bisect_tol, lambda_max, lambda_steps, epsilon, exact, max_holes,
            dmax, recover, block_m, epsilons, samples
        );
        Ok(self)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or(1.0)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(DEFAULT_TOL)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or(1).max(1)
    }

    pub fn out_dir(&self) -> Result<PathBuf, Failure> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir)
            .map_err(|e| Failure::io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(dir)
    }

    pub fn dual_options(&self) -> DualOptions {
        DualOptions {
            tol: self.tol(),
            max_sweeps: self.max_sweeps.unwrap_or(DEFAULT_MAX_SWEEPS),
            omega: None,
        }
    }

    pub fn dual_mode(&self) -> Result<DualMode, Failure> {
        let levels = self.levels.unwrap_or(1);
        match self.mode.as_deref().unwrap_or("full") {
            "full" => Ok(DualMode::FullPhiStar),
            "truncated" => Ok(DualMode::Truncated { levels }),
            "obstacle" => Ok(DualMode::Obstacle {
                bound: self.bound.unwrap_or(self.gamma() / 2.0),
                levels: self.levels.unwrap_or(0),
            }),
            "mollified" => Ok(DualMode::Mollified {
                delta: self.delta.unwrap_or(0.1),
            }),
            other => Err(Failure::validation(format!(
                "unknown mode `{other}` (expected full, truncated, obstacle or mollified)"
            ))),
        }
    }

    pub fn domain(&self) -> Result<Arc<GridDomain>, Failure> {
        let name = self.domain.as_deref().unwrap_or("disk");
        let n = self.n.unwrap_or(129);
        let shape = match name {
            "square" => DomainShape::UnitSquare,
            "disk" => DomainShape::UnitDisk,
            other => match other.strip_prefix("mask:") {
                Some(path) => DomainShape::Mask(MaskGrid::read(Path::new(path))?),
                None => {
                    return Err(Failure::validation(format!(
                        "unknown domain `{other}` (expected square, disk or mask:<path>)"
                    )))
                }
            },
        };
        Ok(GridDomain::build(&shape, n)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_json() {
        let cfg = RunConfig {
            domain: Some("disk".into()),
            n: Some(65),
            lambda: Some(4.0),
            gamma: Some(1.0),
            epsilons: Some(vec![0.125, 0.0625]),
            block_m: Some(2),
            exact: Some(true),
            ..RunConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(text.contains("\"M\":2"));
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"lambada": 1}"#).is_err());
    }
}
