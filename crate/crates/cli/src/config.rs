use std::fs;
use std::path::{Path, PathBuf};

use nodewatch_core::autoencoder::TrainConfig;
use nodewatch_core::dataset::SplitSpec;
use nodewatch_core::detector::{EvalConfig, Protocol};
use nodewatch_core::synthgen::{FleetConfig, FleetMix, NodeProfile, DEFAULT_START};
use nodewatch_core::{seed, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything that determines a run. Stored as JSON; command-line flags
/// override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every other seed is derived from it.
    pub seed: u64,
    pub nodes: usize,
    pub features: usize,
    /// Five-minute intervals generated per node.
    pub horizon: usize,
    pub start_timestamp: i64,
    pub mix: FleetMix,
    /// Generator constants shared by all nodes before per-node jitter.
    pub profile: NodeProfile,
    /// Optimizer and network settings. `rng_seed` is replaced per node by a
    /// seed derived from the master seed.
    pub train: TrainConfig,
    pub train_fraction: f64,
    pub percentiles: Vec<u32>,
    pub paper_protocol: bool,
    pub calibration_fraction: f64,
    pub histogram_bins: usize,
    /// Worker threads for per-node work; 0 uses one per available core.
    pub workers: usize,
    pub out: PathBuf,
    /// Telemetry directory; defaults to `<out>/data`.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        RunConfig {
            seed: 42,
            nodes: 8,
            features: 32,
            horizon: 24_000,
            start_timestamp: DEFAULT_START,
            mix: FleetMix::default(),
            profile: NodeProfile::reference(""),
            train: TrainConfig::default(),
            train_fraction: 0.8,
            percentiles: eval.candidates,
            paper_protocol: false,
            calibration_fraction: eval.calibration_fraction,
            histogram_bins: eval.histogram_bins,
            workers: 0,
            out: PathBuf::from("out"),
            data: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.split_spec("").validate()?;
        self.eval_config().validate()?;
        if self.nodes == 0 {
            return Err(Error::InvalidConfig("nodes must be at least 1".into()));
        }
        Ok(())
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }

    pub fn fleet_config(&self) -> FleetConfig {
        FleetConfig {
            node_count: self.nodes,
            horizon: self.horizon,
            features: self.features,
            mix: self.mix.clone(),
            base_profile: self.profile.clone(),
            seed: seed::derive(self.seed, "synth"),
            start_timestamp: self.start_timestamp,
        }
    }

    pub fn train_config(&self, node_id: &str) -> TrainConfig {
        TrainConfig {
            rng_seed: seed::derive(self.seed, &format!("train/{node_id}")),
            ..self.train.clone()
        }
    }

    pub fn split_spec(&self, node_id: &str) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            rng_seed: seed::derive(self.seed, &format!("split/{node_id}")),
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            candidates: self.percentiles.clone(),
            protocol: if self.paper_protocol {
                Protocol::Paper
            } else {
                Protocol::HeldOut
            },
            calibration_fraction: self.calibration_fraction,
            seed: seed::derive(self.seed, "calibration"),
            histogram_bins: self.histogram_bins,
        }
    }

    /// SHA-256 of the canonical JSON form, ignoring output locations and the
    /// worker count, which do not affect results.
    pub fn hash(&self) -> String {
        let canonical = RunConfig {
            workers: 0,
            out: PathBuf::new(),
            data: None,
            ..self.clone()
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// Parses `90..99` (inclusive) or a comma-separated list such as `90,95,99`.
pub fn parse_percentiles(text: &str) -> std::result::Result<Vec<u32>, String> {
    let parse = |s: &str| {
        s.trim()
            .parse::<u32>()
            .map_err(|e| format!("invalid percentile {s:?}: {e}"))
    };
    let values: Vec<u32> = match text.split_once("..") {
        Some((lo, hi)) => {
            let hi = hi.strip_prefix('=').unwrap_or(hi);
            let (lo, hi) = (parse(lo)?, parse(hi)?);
            if lo > hi {
                return Err(format!("empty percentile range {text}"));
            }
            (lo..=hi).collect()
        }
        None => text
            .split(',')
            .map(parse)
            .collect::<std::result::Result<_, _>>()?,
    };
    if let Some(n) = values.iter().find(|n| !(1..=99).contains(*n)) {
        return Err(format!("percentile {n} outside 1..=99"));
    }
    Ok(values)
}
