//! The JSON run configuration: `{model, density, grid, experiment}`, with
//! unknown keys rejected everywhere.

use alloy_lab::density::DensityModel;
use alloy_lab::operator::{AlloyModel, Background, BaseBump, CouplingSource, GridSpec, SingleSitePotential};
use alloy_lab::toeplitz::ConvolutionVector;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "DensityModel::triangular")]
    pub density: DensityModel,
    #[serde(default)]
    pub grid: GridSection,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_alpha")]
    pub alpha: ConvolutionVector,
    #[serde(default)]
    pub bump: BaseBump,
    #[serde(default)]
    pub background: Background,
    /// Force every coupling constant to this value (zero-disorder runs).
    #[serde(default)]
    pub constant_coupling: Option<f64>,
}

fn default_alpha() -> ConvolutionVector {
    ConvolutionVector::one_dim(&[1.0, -0.5]).expect("valid default")
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { alpha: default_alpha(), bump: BaseBump::default(), background: Background::default(), constant_coupling: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "one")]
    pub dim: usize,
    #[serde(default = "default_side")]
    pub side: usize,
    /// Mesh points per unit length; 8 in one dimension and 4 otherwise when absent.
    #[serde(default)]
    pub mesh: Option<usize>,
}

fn one() -> usize {
    1
}

fn default_side() -> usize {
    20
}

impl Default for GridSection {
    fn default() -> Self {
        Self { dim: 1, side: default_side(), mesh: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    ToeplitzCheck {
        #[serde(default = "d_random_cases")]
        random_cases: usize,
        #[serde(default = "d_max_side")]
        max_side: usize,
        /// Box sides for the `α = (1, -1)` table.
        #[serde(default = "d_example_sides")]
        example_sides: Vec<usize>,
        #[serde(default)]
        seed: u64,
    },
    DensityExamples {
        #[serde(default = "d_max_conditional_side")]
        max_side: usize,
        #[serde(default = "d_divergence_steps")]
        divergence_steps: u32,
        #[serde(default)]
        seed: u64,
    },
    Wegner {
        /// Probed energy; chosen from a pilot run when absent.
        #[serde(default)]
        energy: Option<f64>,
        #[serde(default = "d_percentile")]
        energy_percentile: f64,
        #[serde(default = "d_pilot_samples")]
        pilot_samples: usize,
        #[serde(default)]
        epsilons: Option<Vec<f64>>,
        #[serde(default = "d_eps_count")]
        eps_count: usize,
        #[serde(default = "d_eps_min")]
        eps_min: f64,
        /// Largest `ε`; the upper edge of the linear window when absent.
        #[serde(default)]
        eps_max: Option<f64>,
        #[serde(default = "d_box_sizes")]
        box_sizes: Vec<usize>,
        #[serde(default = "d_samples")]
        samples: usize,
        #[serde(default = "d_resamples")]
        resamples: usize,
        #[serde(default)]
        seed: u64,
    },
    Ids {
        /// Energies as quantiles of the pooled pilot spectrum.
        #[serde(default = "d_ids_quantiles")]
        quantiles: Vec<f64>,
        #[serde(default = "d_box_sizes")]
        box_sizes: Vec<usize>,
        #[serde(default = "d_samples")]
        samples: usize,
        #[serde(default = "d_resamples")]
        resamples: usize,
        #[serde(default)]
        seed: u64,
    },
    Msa {
        /// `E = λ_min - offset`, with `λ_min` of the mean-coupling operator.
        #[serde(default = "d_offset")]
        offset: f64,
        #[serde(default)]
        energy: Option<f64>,
        /// `γ = l^{β-1}`.
        #[serde(default = "d_beta")]
        beta: f64,
        #[serde(default = "d_msa_sizes")]
        box_sizes: Vec<usize>,
        #[serde(default = "d_decay_sizes")]
        decay_sizes: Vec<usize>,
        #[serde(default = "d_msa_samples")]
        samples: usize,
        #[serde(default)]
        seed: u64,
    },
    Spav {
        #[serde(default = "d_instances")]
        instances: usize,
        #[serde(default = "d_main_samples")]
        main_samples: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn d_random_cases() -> usize { 1000 }
fn d_max_side() -> usize { 16 }
fn d_example_sides() -> Vec<usize> { (2..=64).collect() }
fn d_max_conditional_side() -> usize { 8 }
fn d_divergence_steps() -> u32 { 10 }
fn d_percentile() -> f64 { 0.05 }
fn d_pilot_samples() -> usize { 100 }
fn d_eps_count() -> usize { 12 }
fn d_eps_min() -> f64 { 1e-3 }
fn d_box_sizes() -> Vec<usize> { vec![20, 40, 80] }
fn d_samples() -> usize { 500 }
fn d_resamples() -> usize { 400 }
fn d_ids_quantiles() -> Vec<f64> { vec![0.25, 0.5, 0.75] }
fn d_offset() -> f64 { 0.5 }
fn d_beta() -> f64 { 0.5 }
fn d_msa_sizes() -> Vec<usize> { vec![12, 24, 48] }
fn d_decay_sizes() -> Vec<usize> { vec![6, 9, 12, 15, 18] }
fn d_msa_samples() -> usize { 100 }
fn d_instances() -> usize { 100 }
fn d_main_samples() -> usize { 200 }

impl Experiment {
    pub fn command(&self) -> &'static str {
        match self {
            Experiment::ToeplitzCheck { .. } => "toeplitz-check",
            Experiment::DensityExamples { .. } => "density-examples",
            Experiment::Wegner { .. } => "wegner",
            Experiment::Ids { .. } => "ids",
            Experiment::Msa { .. } => "msa",
            Experiment::Spav { .. } => "spav",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Experiment::ToeplitzCheck { seed, .. }
            | Experiment::DensityExamples { seed, .. }
            | Experiment::Wegner { seed, .. }
            | Experiment::Ids { seed, .. }
            | Experiment::Msa { seed, .. }
            | Experiment::Spav { seed, .. } => *seed,
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            Experiment::ToeplitzCheck { seed, .. }
            | Experiment::DensityExamples { seed, .. }
            | Experiment::Wegner { seed, .. }
            | Experiment::Ids { seed, .. }
            | Experiment::Msa { seed, .. }
            | Experiment::Spav { seed, .. } => *seed = value,
        }
    }

    /// Reduced sizes for quick end-to-end runs.
    pub fn smoke(&mut self) {
        match self {
            Experiment::ToeplitzCheck { random_cases, example_sides, .. } => {
                *random_cases = (*random_cases).min(100);
                example_sides.retain(|&l| l <= 16);
            }
            Experiment::DensityExamples { max_side, divergence_steps, .. } => {
                *max_side = (*max_side).min(5);
                *divergence_steps = (*divergence_steps).min(6);
            }
            Experiment::Wegner { box_sizes, samples, pilot_samples, resamples, eps_count, .. } => {
                *box_sizes = vec![10, 14, 20];
                *samples = (*samples).min(200);
                *pilot_samples = (*pilot_samples).min(20);
                *resamples = (*resamples).min(200);
                *eps_count = (*eps_count).min(8);
            }
            Experiment::Ids { box_sizes, samples, resamples, .. } => {
                *box_sizes = vec![20, 40];
                *samples = (*samples).min(200);
                *resamples = (*resamples).min(100);
            }
            Experiment::Msa { box_sizes, decay_sizes, .. } => {
                box_sizes.retain(|&l| l <= 24);
                *decay_sizes = vec![6, 9, 12];
            }
            Experiment::Spav { instances, main_samples, .. } => {
                *instances = (*instances).min(10);
                *main_samples = (*main_samples).min(50);
            }
        }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        let g = self.grid;
        let spec = match g.mesh {
            Some(mesh) => GridSpec::new(g.dim, g.side, mesh),
            None => GridSpec::with_default_mesh(g.dim, g.side),
        };
        spec.map_err(|e| CliError::Config(e.to_string()))
    }

    /// The alloy model described by the `model`, `density` and `grid` sections.
    pub fn model(&self) -> Result<AlloyModel, CliError> {
        let single_site = SingleSitePotential::new(self.model.alpha.clone(), self.model.bump.clone())
            .map_err(|e| CliError::Config(e.to_string()))?;
        let coupling = match self.model.constant_coupling {
            Some(value) => CouplingSource::Constant { value },
            None => CouplingSource::Random { density: self.density.clone() },
        };
        AlloyModel::new(self.grid()?, single_site, self.model.background, coupling)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    /// Canonical JSON of the effective configuration; hashed to name the run.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Default configuration for a subcommand.
pub fn default_for(command: &str) -> Option<Config> {
    let experiment = format!(r#"{{"experiment": {{"kind": "{command}"}}}}"#);
    let mut config = Config::parse(&experiment).ok()?;
    if command == "wegner" || command == "ids" {
        // strong coupling: the band bottom is then disorder dominated even at l = 20
        config.model.bump = BaseBump::Indicator { kappa: 30.0 };
        config.grid.mesh = Some(5);
    }
    Some(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_exist_for_every_command() {
        for c in ["toeplitz-check", "density-examples", "wegner", "ids", "msa", "spav"] {
            let config = default_for(c).unwrap();
            assert_eq!(config.experiment.command(), c);
            config.model().unwrap();
        }
        assert!(default_for("nope").is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::parse(r#"{"experiment": {"kind": "ids", "sample": 3}}"#).is_err());
        assert!(Config::parse(r#"{"experiment": {"kind": "ids"}, "extra": 1}"#).is_err());
        assert!(Config::parse(r#"{"grid": {"dim": 1, "size": 3}, "experiment": {"kind": "ids"}}"#).is_err());
    }

    #[test]
    fn full_document_parses() {
        let text = r#"{
            "model": {
                "alpha": {"dim": 1, "entries": [[[0], 1.0], [[1], -0.5]]},
                "bump": {"kind": "indicator", "kappa": 2.0},
                "background": {"kind": "cosine", "amplitude": 0.5}
            },
            "density": {"family": "smooth_bump", "a": -0.5, "b": 0.5},
            "grid": {"dim": 1, "side": 12, "mesh": 4},
            "experiment": {"kind": "wegner", "energy": 1.5, "box_sizes": [8, 12, 16], "samples": 100}
        }"#;
        let c = Config::parse(text).unwrap();
        assert_eq!(c.grid().unwrap().len(), 48);
        c.model().unwrap();
    }

    #[test]
    fn seed_override_and_canonical_form() {
        let mut c = default_for("msa").unwrap();
        let before = c.canonical();
        c.experiment.set_seed(9);
        assert_eq!(c.experiment.seed(), 9);
        assert_ne!(before, c.canonical());
    }
}
