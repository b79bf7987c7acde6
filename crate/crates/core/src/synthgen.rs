//! Synthetic per-node telemetry with load-following (healthy) and pinned
//! frequency (anomalous) governor regimes.
//!
//! Every interval carries a load `l`, a core frequency `f`, a power draw
//! `p = p_idle + c_dyn·l·f²`, a first-order thermal response to power and a
//! fan duty cycle driven by temperature. The five values are replicated per
//! core with independent measurement noise; remaining feature slots are
//! uninformative uniform noise. The constants are a stand-in for real
//! hardware, chosen only to give healthy data a learnable correlation
//! structure that the pinned governors break.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::write_csv_file;
use crate::error::{Error, Result};
use crate::seed;
use crate::telemetry::{Label, TelemetryRecord};

/// Length of one aggregation interval.
pub const INTERVAL_SECONDS: i64 = 300;
/// 2018-03-03T00:00:00Z.
pub const DEFAULT_START: i64 = 1_520_035_200;
pub const FAMILIES: [&str; 5] = ["load", "freq_ghz", "power_w", "temp_c", "fan_pct"];
pub const MIN_FEATURES: usize = 8;

/// Mean length, in intervals, of busy and idle phases.
const MEAN_PHASE: f64 = 24.0;
const LOAD_STEP_SIGMA: f64 = 0.05;
/// Pull of the load random walk back toward the phase level.
const LOAD_REVERSION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Governor {
    Conservative,
    Powersave,
    Performance,
}

impl Governor {
    pub fn label(self) -> Label {
        match self {
            Governor::Conservative => Label::Normal,
            Governor::Powersave => Label::AnomalyPowersave,
            Governor::Performance => Label::AnomalyPerformance,
        }
    }
}

/// Physical constants of one simulated node. Missing fields in JSON take
/// their reference values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeProfile {
    pub node_id: String,
    pub core_count: usize,
    /// GHz.
    pub f_min: f64,
    pub f_max: f64,
    /// Fraction of the gap to the load-proportional target frequency the
    /// conservative governor closes per interval; 1 tracks load exactly.
    pub governor_lag: f64,
    /// Watts at zero load.
    pub p_idle: f64,
    /// Watts per (load · GHz²).
    pub c_dyn: f64,
    /// Steady-state °C per watt above ambient.
    pub thermal_gain: f64,
    /// Fraction of the gap to steady-state temperature closed per interval.
    pub thermal_inertia: f64,
    pub t_ambient: f64,
    /// Measurement noise as a fraction of each family's nominal range.
    pub noise_sigma: f64,
}

impl Default for NodeProfile {
    fn default() -> Self {
        NodeProfile::reference("")
    }
}

impl NodeProfile {
    pub fn reference(node_id: impl Into<String>) -> Self {
        NodeProfile {
            node_id: node_id.into(),
            core_count: 4,
            f_min: 2.0,
            f_max: 4.0,
            governor_lag: 1.0,
            p_idle: 30.0,
            c_dyn: 5.0,
            thermal_gain: 0.45,
            thermal_inertia: 0.9,
            t_ambient: 25.0,
            noise_sigma: 0.005,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| {
            Err(Error::InvalidConfig(format!(
                "node profile {}: {m}",
                self.node_id
            )))
        };
        if self.core_count == 0 {
            return bad("core_count must be at least 1".into());
        }
        if !(self.f_min > 0.0 && self.f_min < self.f_max) {
            return bad(format!(
                "need 0 < f_min < f_max, got {} and {}",
                self.f_min, self.f_max
            ));
        }
        if !(self.governor_lag > 0.0 && self.governor_lag <= 1.0) {
            return bad(format!(
                "governor_lag must be in (0, 1], got {}",
                self.governor_lag
            ));
        }
        if !(self.thermal_inertia > 0.0 && self.thermal_inertia < 1.0) {
            return bad(format!(
                "thermal_inertia must be in (0, 1), got {}",
                self.thermal_inertia
            ));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.p_idle >= 0.0 && self.c_dyn > 0.0 && self.thermal_gain > 0.0) {
            return bad("p_idle, c_dyn and thermal_gain must be non-negative/positive".into());
        }
        Ok(())
    }

    fn max_dynamic_power(&self) -> f64 {
        self.c_dyn * self.f_max * self.f_max
    }

    /// Nominal range of each feature family, the unit for measurement noise.
    fn family_scales(&self) -> [f64; 5] {
        [
            1.0,
            self.f_max - self.f_min,
            self.max_dynamic_power(),
            self.thermal_gain * self.max_dynamic_power(),
            80.0,
        ]
    }
}

/// Noise-free physical state of a node during one interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeState {
    pub load: f64,
    pub freq: f64,
    pub power: f64,
    pub temp: f64,
    pub fan: f64,
}

impl NodeState {
    fn values(&self) -> [f64; 5] {
        [self.load, self.freq, self.power, self.temp, self.fan]
    }
}

/// Fan duty cycle in percent: 20 % up to 40 °C, 100 % from 80 °C.
pub fn fan_duty(temp: f64) -> f64 {
    (20.0 + 80.0 * (temp - 40.0) / 40.0).clamp(20.0, 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub policy: Governor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GovernorSchedule {
    pub segments: Vec<Segment>,
    pub idle: Vec<bool>,
}

impl GovernorSchedule {
    pub fn uniform(policy: Governor, idle: Vec<bool>) -> Self {
        GovernorSchedule {
            segments: vec![Segment {
                start: 0,
                end: idle.len(),
                policy,
            }],
            idle,
        }
    }

    pub fn horizon(&self) -> usize {
        self.idle.len()
    }

    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.idle.len() != horizon {
            return Err(Error::Schedule(format!(
                "{} idle flags for a horizon of {horizon}",
                self.idle.len()
            )));
        }
        let mut next = 0;
        for s in &self.segments {
            if s.start != next || s.end <= s.start {
                return Err(Error::Schedule(format!(
                    "segment [{}, {}) does not continue at interval {next}",
                    s.start, s.end
                )));
            }
            next = s.end;
        }
        if next != horizon {
            return Err(Error::Schedule(format!(
                "segments cover {next} of {horizon} intervals"
            )));
        }
        Ok(())
    }

    /// Active policy of every interval.
    pub fn policies(&self) -> Vec<Governor> {
        self.segments
            .iter()
            .flat_map(|s| std::iter::repeat_n(s.policy, s.end - s.start))
            .collect()
    }

    /// Maximal runs of equal idle flags as `(start, end, idle)`.
    pub fn idle_runs(&self) -> Vec<(usize, usize, bool)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for t in 1..=self.idle.len() {
            if t == self.idle.len() || self.idle[t] != self.idle[start] {
                runs.push((start, t, self.idle[start]));
                start = t;
            }
        }
        runs
    }
}

/// Alternating busy/idle phases with geometric lengths.
pub fn idle_phases<R: Rng>(horizon: usize, rng: &mut R) -> Vec<bool> {
    let geo = Geometric::new(1.0 / MEAN_PHASE).expect("valid probability");
    let mut idle = Vec::with_capacity(horizon);
    let mut state = rng.random_bool(0.5);
    while idle.len() < horizon {
        let len = 1 + geo.sample(rng) as usize;
        let take = len.min(horizon - idle.len());
        idle.extend(std::iter::repeat_n(state, take));
        state = !state;
    }
    idle
}

/// Load per interval: zero while idle; during each busy phase a clipped
/// Gaussian random walk around a level drawn from `[0.5, 1.0]`.
pub fn load_trace<R: Rng>(idle: &[bool], rng: &mut R) -> Vec<f64> {
    let step = Normal::new(0.0, LOAD_STEP_SIGMA).expect("valid sigma");
    let mut loads = Vec::with_capacity(idle.len());
    let mut level = 0.0;
    let mut load = 0.0;
    let mut was_idle = true;
    for &is_idle in idle {
        if is_idle {
            load = 0.0;
        } else {
            if was_idle {
                level = rng.random_range(0.5..=1.0);
                load = level;
            }
            load += LOAD_REVERSION * (level - load) + step.sample(rng);
            load = load.clamp(0.0, 1.0);
        }
        was_idle = is_idle;
        loads.push(load);
    }
    loads
}

/// Runs the frequency, power and thermal model over a load trace.
pub fn simulate(profile: &NodeProfile, policies: &[Governor], loads: &[f64]) -> Vec<NodeState> {
    assert_eq!(policies.len(), loads.len());
    let span = profile.f_max - profile.f_min;
    let mut freq = profile.f_min;
    let mut temp = profile.t_ambient + profile.thermal_gain * profile.p_idle;
    policies
        .iter()
        .zip(loads)
        .map(|(&policy, &load)| {
            freq = match policy {
                Governor::Conservative => {
                    let target = profile.f_min + span * load;
                    freq + profile.governor_lag * (target - freq)
                }
                Governor::Powersave => profile.f_min,
                Governor::Performance => profile.f_max,
            };
            let power = profile.p_idle + profile.c_dyn * load * freq * freq;
            let steady = profile.t_ambient + profile.thermal_gain * power;
            temp += profile.thermal_inertia * (steady - temp);
            NodeState {
                load,
                freq,
                power,
                temp,
                fan: fan_duty(temp),
            }
        })
        .collect()
}

/// Column names: the five families per core, then `aux{k}` noise slots.
pub fn feature_names(features: usize, core_count: usize) -> Vec<String> {
    let informative = (5 * core_count).min(features);
    let mut names: Vec<String> = (0..informative)
        .map(|i| format!("core{}_{}", i / 5, FAMILIES[i % 5]))
        .collect();
    names.extend((0..features - informative).map(|k| format!("aux{k}")));
    names
}

/// Generates one record per interval of the schedule.
pub fn generate_node(
    profile: &NodeProfile,
    schedule: &GovernorSchedule,
    horizon: usize,
    features: usize,
    seed: u64,
    start_timestamp: i64,
) -> Result<Vec<TelemetryRecord>> {
    profile.validate()?;
    if features < MIN_FEATURES {
        return Err(Error::InvalidConfig(format!(
            "need at least {MIN_FEATURES} features, got {features}"
        )));
    }
    if horizon < 1 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    schedule.validate(horizon)?;

    let mut load_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(1);

    let policies = schedule.policies();
    let loads = load_trace(&schedule.idle, &mut load_rng);
    let states = simulate(profile, &policies, &loads);

    let informative = (5 * profile.core_count).min(features);
    let scales = profile.family_scales();
    let unit = Normal::new(0.0, 1.0).expect("valid sigma");
    let records = states
        .iter()
        .enumerate()
        .map(|(t, state)| {
            let clean = state.values();
            let mut values = Vec::with_capacity(features);
            for i in 0..informative {
                let family = i % 5;
                let noise = profile.noise_sigma * scales[family] * unit.sample(&mut noise_rng);
                values.push(clean[family] + noise);
            }
            for _ in informative..features {
                values.push(noise_rng.random_range(0.0..1.0));
            }
            TelemetryRecord {
                node_id: profile.node_id.clone(),
                timestamp: start_timestamp + t as i64 * INTERVAL_SECONDS,
                features: values.into(),
                label: policies[t].label(),
                idle: schedule.idle[t],
            }
        })
        .collect();
    Ok(records)
}

/// Which pinned governor dominates a node's anomaly blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    PowersaveHeavy,
    PerformanceHeavy,
}

impl NodeKind {
    fn policies(self) -> (Governor, Governor) {
        match self {
            NodeKind::PowersaveHeavy => (Governor::Powersave, Governor::Performance),
            NodeKind::PerformanceHeavy => (Governor::Performance, Governor::Powersave),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetMix {
    /// Fraction of each node's horizon spent under a pinned governor.
    pub anomaly_fraction: f64,
    /// Number of contiguous anomalous blocks per node.
    pub blocks_per_node: usize,
    /// Blocks given to the node's dominant governor.
    pub dominant_blocks: usize,
}

impl Default for FleetMix {
    fn default() -> Self {
        FleetMix {
            anomaly_fraction: 0.2,
            blocks_per_node: 6,
            dominant_blocks: 5,
        }
    }
}

impl FleetMix {
    pub fn all_normal() -> Self {
        FleetMix {
            anomaly_fraction: 0.0,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.anomaly_fraction) {
            return Err(Error::InvalidConfig(format!(
                "anomaly_fraction must be in [0, 1), got {}",
                self.anomaly_fraction
            )));
        }
        if self.anomaly_fraction > 0.0 && self.blocks_per_node == 0 {
            return Err(Error::InvalidConfig(
                "blocks_per_node must be at least 1".into(),
            ));
        }
        if self.dominant_blocks > self.blocks_per_node {
            return Err(Error::InvalidConfig(
                "dominant_blocks cannot exceed blocks_per_node".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub node_count: usize,
    /// Intervals per node.
    pub horizon: usize,
    pub features: usize,
    pub mix: FleetMix,
    /// Constants shared by all nodes before per-node jitter; its `node_id`
    /// is ignored.
    pub base_profile: NodeProfile,
    pub seed: u64,
    pub start_timestamp: i64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        FleetConfig {
            node_count: 8,
            horizon: 24_000,
            features: 32,
            mix: FleetMix::default(),
            base_profile: NodeProfile::reference(""),
            seed: 42,
            start_timestamp: DEFAULT_START,
        }
    }
}

/// Replay information for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeManifest {
    pub node_id: String,
    pub seed: u64,
    pub kind: NodeKind,
    pub profile: NodeProfile,
    pub segments: Vec<Segment>,
    /// Idle runs as `[start, end)` interval ranges.
    pub idle_runs: Vec<(usize, usize)>,
    pub label_counts: BTreeMap<Label, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetManifest {
    pub config: FleetConfig,
    pub interval_seconds: i64,
    pub feature_names: Vec<String>,
    pub nodes: Vec<NodeManifest>,
}

#[derive(Debug, Clone)]
pub struct Fleet {
    pub manifest: FleetManifest,
    pub records: Vec<Vec<TelemetryRecord>>,
}

pub fn node_id(index: usize) -> String {
    format!("node{:02}", index + 1)
}

fn jitter_profile(base: &NodeProfile, node_id: &str, rng: &mut ChaCha8Rng) -> NodeProfile {
    let mut p = NodeProfile {
        node_id: node_id.to_owned(),
        ..base.clone()
    };
    p.c_dyn *= rng.random_range(0.95..1.05);
    p.thermal_gain *= rng.random_range(0.95..1.05);
    p.t_ambient += rng.random_range(-1.0..1.0);
    p
}

/// Places the anomalous blocks at random non-overlapping positions.
fn anomaly_schedule(
    horizon: usize,
    mix: &FleetMix,
    kind: NodeKind,
    idle: Vec<bool>,
    rng: &mut ChaCha8Rng,
) -> GovernorSchedule {
    let total = (mix.anomaly_fraction * horizon as f64).round() as usize;
    if total == 0 {
        return GovernorSchedule::uniform(Governor::Conservative, idle);
    }
    let blocks = mix.blocks_per_node.min(total);
    let (dominant, other) = kind.policies();
    let mut policies: Vec<Governor> = (0..blocks)
        .map(|i| {
            if i < mix.dominant_blocks {
                dominant
            } else {
                other
            }
        })
        .collect();
    policies.shuffle(rng);

    let free = horizon - total;
    let mut cuts: Vec<usize> = (0..blocks).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();

    let mut segments = Vec::new();
    let mut push = |start: usize, end: usize, policy| {
        if end > start {
            segments.push(Segment { start, end, policy });
        }
    };
    let mut t = 0;
    let mut prev_cut = 0;
    for (b, (&cut, &policy)) in cuts.iter().zip(&policies).enumerate() {
        let len = total / blocks + usize::from(b < total % blocks);
        let gap = cut - prev_cut;
        push(t, t + gap, Governor::Conservative);
        t += gap;
        push(t, t + len, policy);
        t += len;
        prev_cut = cut;
    }
    push(t, horizon, Governor::Conservative);

    // adjacent segments with the same policy are merged
    let mut merged: Vec<Segment> = Vec::with_capacity(segments.len());
    for s in segments {
        match merged.last_mut() {
            Some(last) if last.policy == s.policy => last.end = s.end,
            _ => merged.push(s),
        }
    }
    GovernorSchedule {
        segments: merged,
        idle,
    }
}

/// Generates a labeled fleet. Even-indexed nodes are powersave-heavy,
/// odd-indexed nodes performance-heavy.
pub fn generate_fleet(cfg: &FleetConfig) -> Result<Fleet> {
    if cfg.node_count < 1 {
        return Err(Error::InvalidConfig("node_count must be at least 1".into()));
    }
    cfg.mix.validate()?;
    cfg.base_profile.validate()?;
    let names = feature_names(cfg.features, cfg.base_profile.core_count);

    let mut nodes = Vec::with_capacity(cfg.node_count);
    let mut records = Vec::with_capacity(cfg.node_count);
    for i in 0..cfg.node_count {
        let id = node_id(i);
        let node_seed = seed::derive(cfg.seed, &id);
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(node_seed, "schedule"));
        let kind = if i % 2 == 0 {
            NodeKind::PowersaveHeavy
        } else {
            NodeKind::PerformanceHeavy
        };
        let profile = jitter_profile(&cfg.base_profile, &id, &mut rng);
        let idle = idle_phases(cfg.horizon, &mut rng);
        let schedule = anomaly_schedule(cfg.horizon, &cfg.mix, kind, idle, &mut rng);
        let recs = generate_node(
            &profile,
            &schedule,
            cfg.horizon,
            cfg.features,
            node_seed,
            cfg.start_timestamp,
        )?;

        let mut label_counts = BTreeMap::new();
        for r in &recs {
            *label_counts.entry(r.label).or_insert(0) += 1;
        }
        nodes.push(NodeManifest {
            node_id: id,
            seed: node_seed,
            kind,
            profile,
            segments: schedule.segments.clone(),
            idle_runs: schedule
                .idle_runs()
                .into_iter()
                .filter(|r| r.2)
                .map(|(s, e, _)| (s, e))
                .collect(),
            label_counts,
        });
        records.push(recs);
    }
    Ok(Fleet {
        manifest: FleetManifest {
            config: cfg.clone(),
            interval_seconds: INTERVAL_SECONDS,
            feature_names: names,
            nodes,
        },
        records,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Fleet {
    /// Writes `<node_id>.csv` per node plus the manifest; returns the CSV
    /// paths.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut paths = Vec::with_capacity(self.records.len());
        for (node, recs) in self.manifest.nodes.iter().zip(&self.records) {
            let path = dir.join(format!("{}.csv", node.node_id));
            write_csv_file(&path, &self.manifest.feature_names, recs)?;
            paths.push(path);
        }
        let manifest_path = dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(paths)
    }
}
