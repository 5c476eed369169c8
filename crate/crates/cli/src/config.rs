//! Versioned JSON run configuration.

use std::path::{Path, PathBuf};

use qpt_core::channels::{self, ChannelDims};
use qpt_core::fom::{FigureKind, FigureSpec};
use qpt_core::qmat::ComplexMatrix;
use qpt_core::regions::{BinomMode, FitModel};
use qpt_core::tomodata::{Scheme, SettingsKind};
use qpt_core::walkers::{JumpKind, Method, WalkerConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Existing dataset file; relative paths are resolved against the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSpec>,
    pub figure: FigureConfig,
    #[serde(default)]
    pub walker: WalkerSection,
    #[serde(default)]
    pub histogram: HistogramConfig,
    #[serde(default)]
    pub region: RegionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub dims: ChannelDims,
    pub true_channel: ChannelSpec,
    pub scheme: Scheme,
    pub settings: SettingsKind,
    /// `σ_A` of the entangled input (ancilla-assisted); maximally mixed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_state: Option<ComplexMatrix>,
    /// Shots per setting group.
    pub shots: u64,
    #[serde(default)]
    pub seed: u64,
    /// Frequency rescaling factors; `analyze` runs the pipeline once per factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_sweep: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ChannelSpec {
    Identity,
    Depolarizing { p: f64 },
    Choi { matrix: ComplexMatrix },
    Kraus { operators: Vec<ComplexMatrix> },
}

impl ChannelSpec {
    pub fn choi(&self, dims: ChannelDims) -> Result<ComplexMatrix, CliError> {
        let square = || {
            if dims.d_a == dims.d_b {
                Ok(dims.d_a)
            } else {
                Err(CliError::Config(format!("{self:?} needs d_A = d_B")))
            }
        };
        let choi = match self {
            ChannelSpec::Identity => channels::identity_channel(square()?),
            ChannelSpec::Depolarizing { p } => channels::depolarizing(*p, square()?).map_err(CliError::config)?,
            ChannelSpec::Choi { matrix } => matrix.clone(),
            ChannelSpec::Kraus { operators } => channels::choi_of_kraus(operators, dims).map_err(CliError::config)?,
        };
        channels::check_choi(&choi, dims, 1e-8).map_err(CliError::config)?;
        Ok(choi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reference {
    Named(NamedReference),
    Choi(ComplexMatrix),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedReference {
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FigureConfig {
    pub kind: FigureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Reference>,
}

impl FigureConfig {
    pub fn spec(&self, dims: ChannelDims) -> Result<FigureSpec, CliError> {
        let reference = match &self.reference {
            None => None,
            Some(Reference::Named(NamedReference::Identity)) => {
                if dims.d_a != dims.d_b {
                    return Err(CliError::Config("identity reference needs d_A = d_B".into()));
                }
                Some(channels::identity_channel(dims.d_a))
            }
            Some(Reference::Choi(m)) => Some(m.clone()),
        };
        if self.kind == FigureKind::DiamondDistance && reference.is_none() {
            return Err(CliError::Config("the diamond distance needs a reference channel".into()));
        }
        Ok(FigureSpec { kind: self.kind, reference })
    }
}

fn default_rank_floor() -> f64 {
    channels::DEFAULT_RANK_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkerSection {
    #[serde(flatten)]
    pub config: WalkerConfig,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Defaults to the available parallelism.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_chains: Option<usize>,
    #[serde(default = "default_rank_floor")]
    pub rank_floor: f64,
}

fn default_method() -> Method {
    Method::Channel
}

impl Default for WalkerSection {
    fn default() -> Self {
        Self {
            config: WalkerConfig::default(),
            method: Method::Channel,
            n_chains: None,
            rank_floor: default_rank_floor(),
        }
    }
}

impl WalkerSection {
    pub fn chains(&self) -> usize {
        self.n_chains.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistogramConfig {
    pub n_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self { n_bins: 40, range: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionConfig {
    pub eps: f64,
    pub binom_mode: BinomMode,
    /// Fit model whose tail defines the region.
    pub fit_model: FitModel,
}

impl Default for RegionConfig {
    fn default() -> Self {
        Self { eps: 0.01, binom_mode: BinomMode::Exact, fit_model: FitModel::One }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(CliError::config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Structural checks that need no dataset.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.version != CONFIG_VERSION {
            return Err(CliError::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.dataset.is_none() && self.simulation.is_none() {
            return Err(CliError::Config("either `dataset` or `simulation` is required".into()));
        }
        self.walker.config.validate().map_err(CliError::config)?;
        let sphere = self.walker.config.jump == JumpKind::SphereGaussian;
        if sphere != (self.walker.method == Method::State) {
            return Err(CliError::Config(format!(
                "the {:?} method cannot use the {:?} jump (state walks use sphere-gaussian, channel walks eiH or elementary-rotation)",
                self.walker.method, self.walker.config.jump
            )));
        }
        if self.walker.n_chains == Some(0) {
            return Err(CliError::Config("n_chains must be positive".into()));
        }
        if self.histogram.n_bins < 2 {
            return Err(CliError::Config("n_bins must be at least 2".into()));
        }
        if !(self.region.eps > 0.0 && self.region.eps < 1.0) {
            return Err(CliError::Config(format!("eps = {} outside (0, 1)", self.region.eps)));
        }
        if let Some(sim) = &self.simulation {
            self.check_method(sim.scheme)?;
            if let Some(alphas) = &sim.alpha_sweep {
                if alphas.is_empty() || alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
                    return Err(CliError::Config("alpha_sweep values must lie in (0, 1]".into()));
                }
            }
        }
        Ok(())
    }

    /// The bipartite-state method needs the ancilla-assisted scheme.
    pub fn check_method(&self, scheme: Scheme) -> Result<(), CliError> {
        if self.walker.method == Method::State && scheme != Scheme::AncillaAssisted {
            return Err(CliError::Config("the state method works only with ancilla-assisted data".into()));
        }
        Ok(())
    }
}
