//! On-disk experiment description.
//!
//! A scenario is a single TOML document with sections `pipeline`, `cluster`,
//! `workload`, `knobs`, and `seed`, plus `ground_truth` (the simulator's
//! hidden per-operator performance and memory surfaces) and `initial` (the
//! declared starting deployment used by the static baseline and as the
//! common starting point for every scheduler). Parsing is strict: unknown
//! fields are an error.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_pipeline, ClusterSpec, Configuration, PipelineSpec, Violation,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("failed to read scenario file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

/// Distribution of one workload feature inside a regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureDist {
    Constant { value: f64 },
    /// Normal truncated at zero.
    Normal { mean: f64, std: f64 },
    Uniform { min: f64, max: f64 },
}

/// One phase of the input stream with its own feature distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSpec {
    pub name: String,
    /// Fraction of total input at which this regime begins; the first regime
    /// starts at 0 and fractions must be strictly increasing.
    pub start_fraction: f64,
    pub features: BTreeMap<String, FeatureDist>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub total_records: u64,
    /// Global order of the per-record feature vector.
    pub feature_names: Vec<String>,
    pub regimes: Vec<RegimeSpec>,
}

/// Hidden performance/memory surface for one operator.
///
/// Per-instance rate: `base_rate * g_batch(batch) * g_len(len)` with
/// `g_batch(b) = b / (b + batch_half)` (skipped when `batch_half` is 0) and
/// `g_len(l) = len_ref / l` over the declared length feature. Peak device
/// memory: `mem_base + mem_per_batch_len * batch * len + mem_per_seq * seq`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthSpec {
    pub base_rate: f64,
    #[serde(default)]
    pub batch_half: f64,
    /// Feature driving the inverse-length factor; none disables it.
    #[serde(default)]
    pub len_feature: Option<String>,
    #[serde(default)]
    pub len_ref: f64,
    #[serde(default)]
    pub mem_base: f64,
    #[serde(default)]
    pub mem_per_batch_len: f64,
    #[serde(default)]
    pub mem_per_seq: f64,
    /// Config dimension read as batch size.
    #[serde(default = "default_batch_dim")]
    pub batch_dim: String,
    /// Config dimension feeding `mem_per_seq`.
    #[serde(default = "default_seq_dim")]
    pub seq_dim: String,
    /// Batch size used when the operator is not tunable.
    #[serde(default = "default_fixed_batch")]
    pub fixed_batch: u32,
    /// Device memory (MB) available to one instance; 0 disables OOM.
    #[serde(default)]
    pub device_mem_cap: f64,
    /// Coefficient of variation of the multiplicative observation noise.
    #[serde(default)]
    pub noise_cv: f64,
    /// Probability that a window's observed throughput is additionally
    /// scaled by `outlier_factor` (transient stalls that pass signal checks).
    #[serde(default)]
    pub outlier_prob: f64,
    #[serde(default = "default_outlier_factor")]
    pub outlier_factor: f64,
    /// Fraction of a batch's duration the worker thread is actually
    /// occupied. Below 1.0 models asynchronous engines whose completions
    /// accrue while the worker is idle, which is what breaks useful-time
    /// instrumentation.
    #[serde(default = "default_busy_fraction")]
    pub busy_fraction: f64,
}

fn default_batch_dim() -> String {
    "batch_size".into()
}
fn default_seq_dim() -> String {
    "max_seq_len".into()
}
fn default_fixed_batch() -> u32 {
    1
}
fn default_outlier_factor() -> f64 {
    0.5
}
fn default_busy_fraction() -> f64 {
    1.0
}

/// Declared starting deployment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub placement: Vec<PlacementEntry>,
    /// Starting configuration per tunable operator (by name).
    #[serde(default)]
    pub configs: BTreeMap<String, Configuration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementEntry {
    pub operator: String,
    pub node: usize,
    pub count: usize,
}

macro_rules! knobs {
    ($($(#[$m:meta])* $name:ident : $ty:ty = $default:expr;)*) => {
        /// Every tunable of the framework, each optional in the scenario
        /// file with the stated default.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields, default)]
        pub struct Knobs {
            $($(#[$m])* pub $name: $ty,)*
        }

        impl Default for Knobs {
            fn default() -> Self {
                Knobs { $($name: $default,)* }
            }
        }
    };
}

knobs! {
    /// Metrics window length (seconds).
    metrics_window: f64 = 10.0;
    /// Queue-length sampling cadence inside a window (seconds).
    snapshot_resolution: f64 = 1.0;
    /// Longest an instance waits for a partial batch (seconds).
    max_batch_wait: f64 = 0.5;
    /// Per-queue backpressure watermark in records; 0 derives
    /// 4 x the largest batch size.
    backpressure_watermark: usize = 0;
    /// Smoothing factor for the online amplification estimate.
    amplification_smoothing: f64 = 0.2;
    /// Utilization threshold below which a window is considered starved.
    tau_u: f64 = 0.7;
    /// Standardized-residual threshold for model-based filtering.
    tau_z: f64 = 3.0;
    /// Queue drain slope (records/s) treated as anomalous.
    queue_drain_slope: f64 = 2.0;
    /// Queue growth slope (records/s) treated as anomalous.
    queue_growth_slope: f64 = 2.0;
    /// Accepted samples required before trusting the capacity model.
    n_min: usize = 8;
    /// Capacity model training-buffer capacity.
    gp_window: usize = 256;
    /// Smoothing factor of the cold-start moving average.
    ema_alpha: f64 = 0.5;
    /// Refit hyperparameters every this many accepted samples.
    refit_every: usize = 16;
    /// Reported relative stddev while in moving-average mode.
    ema_rel_stddev: f64 = 0.3;
    /// Cluster assignment distance threshold in normalized feature space.
    tau_d: f64 = 0.25;
    /// Maximum number of workload clusters.
    l_max: usize = 8;
    /// Cluster count decay factor.
    gamma: f64 = 0.95;
    /// Seconds between decay applications.
    decay_every: f64 = 60.0;
    /// Clusters below this decayed count are pruned.
    n_prune: f64 = 1.0;
    /// Samples a pending cluster needs before tuning may start.
    n_trigger: f64 = 20.0;
    /// Length of the cluster match history window.
    match_history: usize = 50;
    /// Random evaluations at the start of each tuning job.
    n_init: usize = 5;
    /// Total evaluations per tuning job.
    tuning_budget: usize = 30;
    /// Minimum feasibility probability for proposals and recommendations.
    eta: f64 = 0.6;
    /// Device-memory safety margin (MB).
    delta_margin: f64 = 2048.0;
    /// Candidate pool size for acquisition maximization.
    acq_pool: usize = 512;
    /// Simulated seconds one sandbox tuning evaluation occupies.
    tuning_eval_interval: f64 = 4.0;
    /// Rescheduling interval (simulated seconds).
    t_sched: f64 = 60.0;
    /// Objective weight of the peak-egress term.
    lambda1: f64 = 1e-4;
    /// Objective weight of the migration-cost term.
    lambda2: f64 = 1e-6;
    /// Hard cap on branch-and-bound nodes.
    bb_node_cap: usize = 1_000_000;
    /// Fixed per-round rolling batch cap; 0 derives ceil(p/2).
    b_max: usize = 0;
    /// Threshold autoscaler: backlog (records) that triggers scale-up.
    threshold_backlog_high: f64 = 64.0;
    /// Threshold autoscaler: utilization under which an operator may shed
    /// an instance when its backlog is empty.
    threshold_idle_util: f64 = 0.2;
}

/// A fully parsed experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub workload: WorkloadSpec,
    pub pipeline: PipelineSpec,
    pub cluster: ClusterSpec,
    #[serde(default)]
    pub knobs: Knobs,
    /// Keyed by operator name.
    #[serde(default)]
    pub ground_truth: BTreeMap<String, GroundTruthSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let mut scenario: Scenario = toml::from_str(text)?;
        scenario.assign_ids();
        let violations = scenario.validate();
        if violations.is_empty() {
            Ok(scenario)
        } else {
            Err(ScenarioError::Invalid(violations))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn assign_ids(&mut self) {
        for (i, op) in self.pipeline.operators.iter_mut().enumerate() {
            op.id = i + 1;
        }
        for (i, node) in self.cluster.nodes.iter_mut().enumerate() {
            node.id = i + 1;
        }
    }

    /// Static validation beyond what parsing enforces.
    pub fn validate(&self) -> Vec<Violation> {
        fn push(out: &mut Vec<Violation>, msg: String) {
            out.push(Violation { operator: None, message: msg });
        }
        let mut out = validate_pipeline(&self.pipeline, &self.cluster);

        if self.workload.regimes.is_empty() {
            push(&mut out, "workload needs at least one regime".into());
        } else {
            if self.workload.regimes[0].start_fraction != 0.0 {
                push(&mut out, "first regime must start at fraction 0".into());
            }
            for pair in self.workload.regimes.windows(2) {
                if pair[1].start_fraction <= pair[0].start_fraction {
                    push(&mut out, format!(
                        "regime '{}' does not start after '{}'",
                        pair[1].name, pair[0].name
                    ));
                }
            }
            for regime in &self.workload.regimes {
                if regime.start_fraction < 0.0 || regime.start_fraction >= 1.0 {
                    push(&mut out, format!("regime '{}' start_fraction outside [0,1)", regime.name));
                }
                for name in self.workload.feature_names.iter() {
                    if !regime.features.contains_key(name) {
                        push(&mut out, format!("regime '{}' missing feature '{}'", regime.name, name));
                    }
                }
                for name in regime.features.keys() {
                    if !self.workload.feature_names.contains(name) {
                        push(&mut out, format!("regime '{}' declares unknown feature '{}'", regime.name, name));
                    }
                }
            }
        }

        for op in &self.pipeline.operators {
            for f in &op.feature_schema {
                if !self.workload.feature_names.contains(f) {
                    out.push(Violation {
                        operator: Some(op.name.clone()),
                        message: format!("feature '{f}' not produced by the workload"),
                    });
                }
            }
        }

        for (name, gt) in &self.ground_truth {
            let Some(op) = self.pipeline.by_name(name) else {
                out.push(Violation { operator: None, message: format!("ground_truth for unknown operator '{name}'") });
                continue;
            };
            if gt.base_rate <= 0.0 {
                out.push(Violation { operator: Some(name.clone()), message: "base_rate must be positive".into() });
            }
            if !(0.0..=0.5).contains(&gt.noise_cv) {
                out.push(Violation { operator: Some(name.clone()), message: "noise_cv must be in [0, 0.5]".into() });
            }
            if !(0.0..=1.0).contains(&gt.busy_fraction) || gt.busy_fraction == 0.0 {
                out.push(Violation { operator: Some(name.clone()), message: "busy_fraction must be in (0, 1]".into() });
            }
            if let Some(f) = &gt.len_feature {
                if !op.feature_schema.contains(f) {
                    out.push(Violation {
                        operator: Some(name.clone()),
                        message: format!("len_feature '{f}' is not in the operator's feature schema"),
                    });
                }
                if gt.len_ref <= 0.0 {
                    out.push(Violation { operator: Some(name.clone()), message: "len_ref must be positive".into() });
                }
            }
            if op.tunable && !op.config_space.dims.iter().any(|d| d.name() == gt.batch_dim) {
                out.push(Violation {
                    operator: Some(name.clone()),
                    message: format!("batch_dim '{}' is not a config dimension", gt.batch_dim),
                });
            }
        }
        for op in &self.pipeline.operators {
            if !self.ground_truth.contains_key(&op.name) {
                out.push(Violation {
                    operator: Some(op.name.clone()),
                    message: "missing ground_truth section".into(),
                });
            }
        }

        for entry in &self.initial.placement {
            if self.pipeline.by_name(&entry.operator).is_none() {
                push(&mut out, format!("initial placement names unknown operator '{}'", entry.operator));
            }
            if entry.node == 0 || entry.node > self.cluster.len() {
                push(&mut out, format!("initial placement names unknown node {}", entry.node));
            }
        }
        for op in self.pipeline.operators.iter() {
            let placed: usize = self
                .initial
                .placement
                .iter()
                .filter(|e| e.operator == op.name)
                .map(|e| e.count)
                .sum();
            if placed == 0 {
                out.push(Violation {
                    operator: Some(op.name.clone()),
                    message: "initial placement must give every operator at least one instance".into(),
                });
            }
            if op.tunable {
                match self.initial.configs.get(&op.name) {
                    None => out.push(Violation {
                        operator: Some(op.name.clone()),
                        message: "tunable operator needs an initial config".into(),
                    }),
                    Some(cfg) if !cfg.conforms_to(&op.config_space) => out.push(Violation {
                        operator: Some(op.name.clone()),
                        message: "initial config does not conform to the config space".into(),
                    }),
                    _ => {}
                }
            }
        }
        // Joint capacity of the initial placement.
        for (k, node) in self.cluster.nodes.iter().enumerate() {
            let mut cpu = 0.0;
            let mut mem = 0.0;
            let mut acc = 0u32;
            for entry in &self.initial.placement {
                if entry.node != k + 1 {
                    continue;
                }
                if let Some(op) = self.pipeline.by_name(&entry.operator) {
                    cpu += op.cpu_per_instance * entry.count as f64;
                    mem += op.mem_per_instance * entry.count as f64;
                    acc += op.acc_per_instance * entry.count as u32;
                }
            }
            if cpu > node.cpu_cap + 1e-9 || mem > node.mem_cap + 1e-9 || acc > node.acc_cap {
                push(&mut out, format!("initial placement exceeds node {} capacity", k + 1));
            }
        }

        let k = &self.knobs;
        if !(0.0..=1.0).contains(&k.tau_u) {
            push(&mut out, "tau_u must be in [0,1]".into());
        }
        if k.tau_z <= 0.0 {
            push(&mut out, "tau_z must be positive".into());
        }
        if !(0.0 < k.ema_alpha && k.ema_alpha <= 1.0) {
            push(&mut out, "ema_alpha must be in (0,1]".into());
        }
        if !(0.0 < k.eta && k.eta < 1.0) {
            push(&mut out, "eta must be in (0,1)".into());
        }
        if k.delta_margin < 0.0 {
            push(&mut out, "delta_margin must be non-negative".into());
        }
        if k.tuning_budget < k.n_init {
            push(&mut out, "tuning_budget must be at least n_init".into());
        }
        if k.t_sched <= 0.0 {
            push(&mut out, "t_sched must be positive".into());
        }
        if !(0.0 < k.gamma && k.gamma < 1.0) {
            push(&mut out, "gamma must be in (0,1)".into());
        }
        out
    }

    /// Largest batch size any operator can run, for watermark derivation.
    pub fn largest_batch(&self) -> usize {
        let mut largest = 1usize;
        for op in &self.pipeline.operators {
            let gt_batch = self
                .ground_truth
                .get(&op.name)
                .map(|g| g.fixed_batch as usize)
                .unwrap_or(1);
            largest = largest.max(gt_batch);
            for dim in &op.config_space.dims {
                if let crate::model::ConfigDim::IntRange { name, max, .. } = dim {
                    let is_batch = self
                        .ground_truth
                        .get(&op.name)
                        .map(|g| &g.batch_dim == name)
                        .unwrap_or(false);
                    if is_batch {
                        largest = largest.max(*max as usize);
                    }
                }
            }
        }
        largest
    }

    /// Effective backpressure watermark in records.
    pub fn watermark(&self) -> usize {
        if self.knobs.backpressure_watermark > 0 {
            self.knobs.backpressure_watermark
        } else {
            4 * self.largest_batch()
        }
    }

    /// Initial deployment as a placement matrix.
    pub fn initial_placement_matrix(&self) -> Vec<Vec<usize>> {
        let mut m = vec![vec![0usize; self.cluster.len()]; self.pipeline.len()];
        for entry in &self.initial.placement {
            if let Some(op) = self.pipeline.by_name(&entry.operator) {
                m[op.id - 1][entry.node - 1] += entry.count;
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
seed = 7

[workload]
total_records = 1000
feature_names = ["input_tokens"]

[[workload.regimes]]
name = "only"
start_fraction = 0.0
[workload.regimes.features.input_tokens]
dist = "constant"
value = 400.0

[[pipeline.operators]]
name = "work"
cpu_per_instance = 1.0
mem_per_instance = 1.0
fanout = 1.0
feature_schema = ["input_tokens"]
nominal_rate = 10.0

[[cluster.nodes]]
cpu_cap = 4.0
mem_cap = 8.0
egress_bandwidth = 100.0

[ground_truth.work]
base_rate = 10.0

[[initial.placement]]
operator = "work"
node = 1
count = 1
"#;

    #[test]
    fn parses_minimal_scenario() {
        let s = Scenario::from_toml(MINIMAL).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.pipeline.operators[0].id, 1);
        assert_eq!(s.knobs.t_sched, 60.0);
        assert_eq!(s.watermark(), 4);
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = MINIMAL.replace("seed = 7", "seed = 7\nbogus = 1");
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse(_)), "{err}");
    }

    #[test]
    fn rejects_regime_order_violation() {
        let extra = r#"
[[workload.regimes]]
name = "bad"
start_fraction = 0.0
[workload.regimes.features.input_tokens]
dist = "constant"
value = 1.0
"#;
        let text = format!("{MINIMAL}\n{extra}");
        let err = Scenario::from_toml(&text).unwrap_err();
        match err {
            ScenarioError::Invalid(v) => {
                assert!(v.iter().any(|v| v.message.contains("does not start after")))
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn rejects_missing_ground_truth() {
        let text = MINIMAL.replace("[ground_truth.work]\nbase_rate = 10.0\n", "");
        let err = Scenario::from_toml(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid(_)));
    }
}
