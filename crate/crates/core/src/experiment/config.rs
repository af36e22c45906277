use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ExperimentError;
use crate::engine::{DEFAULT_MAX_ITERS, DEFAULT_STEP_TOL};
use crate::random_env::{make_weight_schedule, BiasSpec, ChannelNoise, NoiseModel, WeightSchedule};

/// Default snapshot stride for plot data.
pub const DEFAULT_SNAPSHOT_STRIDE: usize = 10;

/// A complete experiment description. Every key is typed and unknown keys
/// are rejected at parse time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the command line and environment may override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub field: FieldSource,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default)]
    pub stop: StopSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSource {
    /// The built-in seven-node network.
    Fixture {},
    /// Poisson deployment with the given intensity inside the anchors.
    Poisson { density: f64, anchors: Vec<Vec<f64>> },
    /// A fixed number of sensors placed uniformly inside the anchors.
    Uniform { count: usize, anchors: Vec<Vec<f64>> },
    /// A field file (`id,role,c1,...,cm`).
    File { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Algorithm {
    Diloc {},
    DilocRel { alpha: f64 },
    Dlre { schedule: WeightSchedule },
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Diloc {} => "diloc",
            Algorithm::DilocRel { .. } => "diloc_rel",
            Algorithm::Dlre { .. } => "dlre",
        }
    }
}

/// Noise settings; the stream seed comes from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "one")]
    pub link_prob: f64,
    #[serde(default = "no_channel_noise")]
    pub channel_noise: ChannelNoise,
    #[serde(default)]
    pub matrix_fluct_var: f64,
    #[serde(default = "no_bias")]
    pub bias: BiasSpec,
}

fn one() -> f64 {
    1.0
}

fn no_channel_noise() -> ChannelNoise {
    ChannelNoise::Fixed { var: 0.0 }
}

fn no_bias() -> BiasSpec {
    BiasSpec::None {}
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { link_prob: 1.0, channel_noise: no_channel_noise(), matrix_fluct_var: 0.0, bias: BiasSpec::None {} }
    }
}

impl NoiseSpec {
    pub fn model(&self, seed: u64) -> NoiseModel {
        NoiseModel {
            link_prob: self.link_prob,
            channel_noise: self.channel_noise,
            matrix_fluct_var: self.matrix_fluct_var,
            bias: self.bias,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSpec {
    #[serde(default = "default_step_tol")]
    pub step_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
}

fn default_step_tol() -> f64 {
    DEFAULT_STEP_TOL
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for StopSpec {
    fn default() -> Self {
        Self { step_tol: DEFAULT_STEP_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Sensor ids with plot series; empty means every sensor.
    #[serde(default)]
    pub plot_sensors: Vec<usize>,
    /// Write `B` and `P` as coordinate lists.
    #[serde(default = "yes")]
    pub dump_matrices: bool,
}

fn default_stride() -> usize {
    DEFAULT_SNAPSHOT_STRIDE
}

fn yes() -> bool {
    true
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { snapshot_stride: DEFAULT_SNAPSHOT_STRIDE, plot_sensors: Vec::new(), dump_matrices: true }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fully resolved TOML, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.scenario.is_empty() || !self.scenario.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!("scenario `{}` must be non-empty and use [A-Za-z0-9_-]", self.scenario));
        }
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        match &self.field {
            FieldSource::Fixture {} if self.dim != 2 => return bad("the fixture field is two-dimensional".into()),
            FieldSource::Poisson { density, anchors } => {
                if !(*density > 0.0 && density.is_finite()) {
                    return bad(format!("density must be positive, got {density}"));
                }
                self.check_anchors(anchors)?;
            }
            FieldSource::Uniform { anchors, .. } => self.check_anchors(anchors)?,
            _ => {}
        }
        match self.algorithm {
            Algorithm::DilocRel { alpha } if !(alpha > 0.0 && alpha <= 1.0) => {
                return bad(format!("alpha must lie in (0, 1], got {alpha}"));
            }
            Algorithm::Dlre { schedule } => {
                make_weight_schedule(schedule).map_err(|e| ExperimentError::Config(e.to_string()))?;
            }
            _ => {}
        }
        if let Some(noise) = &self.noise {
            if !matches!(self.algorithm, Algorithm::Dlre { .. }) {
                return bad("a [noise] section requires the dlre algorithm".into());
            }
            noise.model(0).validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
        }
        if !(self.stop.step_tol >= 0.0) {
            return bad(format!("step_tol must be nonnegative, got {}", self.stop.step_tol));
        }
        if self.stop.step_tol == 0.0 && !matches!(self.algorithm, Algorithm::Dlre { .. }) {
            return bad("step_tol must be positive for deterministic runs".into());
        }
        if self.output.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1".into());
        }
        Ok(())
    }

    fn check_anchors(&self, anchors: &[Vec<f64>]) -> Result<(), ExperimentError> {
        if anchors.len() != self.dim + 1 || anchors.iter().any(|a| a.len() != self.dim) {
            return Err(ExperimentError::Config(format!(
                "expected {} anchors with {} coordinates each",
                self.dim + 1,
                self.dim
            )));
        }
        Ok(())
    }

    /// SHA-256 of the resolved config with the seed and output directory
    /// cleared, so runs that differ only in seed share a hash.
    pub fn config_hash(&self) -> String {
        let mut canon = self.clone();
        canon.seed = 0;
        canon.output_dir = None;
        let text = serde_json::to_string(&canon).expect("config serializes to JSON");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
scenario = "t"
dim = 2
[field]
source = "fixture"
[algorithm]
kind = "diloc"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.stop, StopSpec::default());
        assert_eq!(cfg.output.snapshot_stride, 10);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\nbogus = 1\n");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(ExperimentError::Config(_))));
        let text = MINIMAL.replace("kind = \"diloc\"", "kind = \"diloc\"\nalpha = 0.5");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn semantic_checks() {
        let rel = MINIMAL.replace("kind = \"diloc\"", "kind = \"diloc_rel\"\nalpha = 1.5");
        assert!(ExperimentConfig::from_toml(&rel).is_err());
        let dlre =
            MINIMAL.replace("kind = \"diloc\"", "kind = \"dlre\"\n[algorithm.schedule]\nkind = \"power\"\np = 0.5");
        assert!(ExperimentConfig::from_toml(&dlre).is_err());
        let noise_on_diloc = format!("{MINIMAL}\n[noise]\nlink_prob = 0.9\n");
        assert!(ExperimentConfig::from_toml(&noise_on_diloc).is_err());
    }

    #[test]
    fn hash_ignores_seed_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.seed = 99;
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.config_hash(), b.config_hash());
        b.stop.max_iters = 5;
        assert_ne!(a.config_hash(), b.config_hash());
    }
}
