//! Shared domain types: pipeline and cluster descriptions, configuration
//! spaces, metrics snapshots, and the deployment bookkeeping that every other
//! module manipulates.
//!
//! All types here are immutable values after construction and safe to share
//! across threads. Rates are per-instance unless the field name carries a
//! `_total` suffix.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// 1-based operator index within a pipeline.
pub type OperatorId = usize;
/// 1-based node index within a cluster.
pub type NodeId = usize;

/// One dimension of a tunable configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConfigDim {
    /// Inclusive integer range.
    IntRange { name: String, min: i64, max: i64 },
    Categorical { name: String, choices: Vec<String> },
    Boolean { name: String },
}

impl ConfigDim {
    pub fn name(&self) -> &str {
        match self {
            ConfigDim::IntRange { name, .. } => name,
            ConfigDim::Categorical { name, .. } => name,
            ConfigDim::Boolean { name } => name,
        }
    }

    /// Number of distinct values along this dimension.
    pub fn cardinality(&self) -> usize {
        match self {
            ConfigDim::IntRange { min, max, .. } => (max - min + 1).max(0) as usize,
            ConfigDim::Categorical { choices, .. } => choices.len(),
            ConfigDim::Boolean { .. } => 2,
        }
    }
}

/// The finite, mixed-type search space of one tunable operator.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSpace {
    pub dims: Vec<ConfigDim>,
}

impl ConfigSpace {
    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Total number of configurations in the space.
    pub fn combination_count(&self) -> usize {
        self.dims.iter().map(ConfigDim::cardinality).product()
    }
}

/// One value of a configuration dimension.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConfigValue {
    Int(i64),
    Bool(bool),
    Choice(String),
}

impl fmt::Display for ConfigValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigValue::Int(v) => write!(f, "{v}"),
            ConfigValue::Bool(v) => write!(f, "{v}"),
            ConfigValue::Choice(v) => write!(f, "{v}"),
        }
    }
}

/// A complete assignment of values to a [`ConfigSpace`].
///
/// Ordered map so that configurations compare and print deterministically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Configuration {
    pub values: BTreeMap<String, ConfigValue>,
}

impl Configuration {
    pub fn get_int(&self, name: &str) -> Option<i64> {
        match self.values.get(name) {
            Some(ConfigValue::Int(v)) => Some(*v),
            _ => None,
        }
    }

    /// Checks that every dimension is present exactly once and in-domain.
    pub fn conforms_to(&self, space: &ConfigSpace) -> bool {
        if self.values.len() != space.dims.len() {
            return false;
        }
        space.dims.iter().all(|dim| match (dim, self.values.get(dim.name())) {
            (ConfigDim::IntRange { min, max, .. }, Some(ConfigValue::Int(v))) => v >= min && v <= max,
            (ConfigDim::Categorical { choices, .. }, Some(ConfigValue::Choice(c))) => {
                choices.contains(c)
            }
            (ConfigDim::Boolean { .. }, Some(ConfigValue::Bool(_))) => true,
            _ => false,
        })
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (k, v) in &self.values {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{k}={v}")?;
            first = false;
        }
        Ok(())
    }
}

/// Static description of one pipeline operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorSpec {
    /// Ordinal index, 1..n consecutive along the chain.
    #[serde(default)]
    pub id: OperatorId,
    pub name: String,
    /// CPU cores consumed by each instance.
    pub cpu_per_instance: f64,
    /// Memory (GB) consumed by each instance.
    pub mem_per_instance: f64,
    /// Accelerator devices consumed by each instance (0 for CPU-only).
    #[serde(default)]
    pub acc_per_instance: u32,
    /// Size (MB) of each record this operator produces.
    #[serde(default)]
    pub out_record_size: f64,
    /// Expected output records per input record; must be positive.
    pub fanout: f64,
    #[serde(default)]
    pub tunable: bool,
    #[serde(default)]
    pub config_space: ConfigSpace,
    /// Seconds to launch a new instance.
    #[serde(default)]
    pub startup_cost: f64,
    /// Seconds to terminate an instance.
    #[serde(default)]
    pub shutdown_cost: f64,
    /// Seconds a restarted instance is unavailable, including estimator warm-up.
    #[serde(default)]
    pub coldstart_cost: f64,
    /// Ordered names of the workload features this operator's capacity
    /// depends on. Declared at pipeline definition time.
    pub feature_schema: Vec<String>,
    /// Datasheet per-instance rate (records/s) used by the scheduler before
    /// any observation has been accepted.
    pub nominal_rate: f64,
}

/// A linear chain of operators; operator 1 faces the source, operator n the sink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSpec {
    pub operators: Vec<OperatorSpec>,
}

impl PipelineSpec {
    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    pub fn operator(&self, id: OperatorId) -> &OperatorSpec {
        &self.operators[id - 1]
    }

    pub fn by_name(&self, name: &str) -> Option<&OperatorSpec> {
        self.operators.iter().find(|o| o.name == name)
    }
}

/// One cluster node with heterogeneous capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    #[serde(default)]
    pub id: NodeId,
    pub cpu_cap: f64,
    pub mem_cap: f64,
    #[serde(default)]
    pub acc_cap: u32,
    /// Outbound link limit (MB/s), enforced by the simulator.
    pub egress_bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub nodes: Vec<NodeSpec>,
}

impl ClusterSpec {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Upper bound on how many instances of `op` fit on `node`, by resources alone.
    pub fn node_fit(&self, node: &NodeSpec, op: &OperatorSpec) -> usize {
        let mut cap = usize::MAX;
        if op.cpu_per_instance > 0.0 {
            cap = cap.min((node.cpu_cap / op.cpu_per_instance + 1e-9) as usize);
        }
        if op.mem_per_instance > 0.0 {
            cap = cap.min((node.mem_cap / op.mem_per_instance + 1e-9) as usize);
        }
        if op.acc_per_instance > 0 {
            cap = cap.min((node.acc_cap / op.acc_per_instance) as usize);
        }
        if cap == usize::MAX {
            // Zero-footprint operator: bound by something sane.
            cap = 1024;
        }
        cap
    }

    /// Cluster-wide upper bound on the parallelism of `op`, ignoring other operators.
    pub fn cluster_fit(&self, op: &OperatorSpec) -> usize {
        self.nodes.iter().map(|n| self.node_fit(n, op)).sum()
    }
}

/// One windowed per-operator observation emitted by the metrics collector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub operator_id: OperatorId,
    pub window_start: f64,
    pub window_end: f64,
    pub records_in: u64,
    pub records_out: u64,
    /// Window-mean per-instance rate (records/s), observation noise included.
    pub observed_throughput: f64,
    /// Busy fraction in [0,1]; device utilization for accelerator operators,
    /// CPU utilization otherwise.
    pub utilization: f64,
    /// (time, queue length) samples taken inside the window.
    pub queue_len_series: Vec<(f64, f64)>,
    /// Mean workload features of the records processed in the window, in
    /// the operator's `feature_schema` order.
    pub feature_vector: Vec<f64>,
    /// Peak device memory (MB) seen in the window.
    pub peak_device_mem: f64,
    /// Wall-clock seconds during which the operator had at least one batch
    /// in flight. Feeds the useful-time baseline estimator.
    pub busy_time: f64,
    pub instance_count: usize,
}

impl MetricsSnapshot {
    pub fn window_len(&self) -> f64 {
        self.window_end - self.window_start
    }
}

/// How a capacity estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EstimateMode {
    Ema,
    Gp,
}

/// Sustainable per-instance capacity for one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub operator_id: OperatorId,
    /// Predictive mean (records/s per instance).
    pub mean: f64,
    /// Predictive standard deviation; a configured pessimistic constant in
    /// EMA mode.
    pub stddev: f64,
    pub mode: EstimateMode,
    /// Accepted observations backing the estimate. Zero means the consumer
    /// should fall back to the operator's declared nominal rate.
    pub sample_count: usize,
}

/// Rolling-update bookkeeping for one tunable operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingEntry {
    pub operator_id: OperatorId,
    /// Instances still on the current configuration.
    pub n_old: usize,
    /// Instances already moved to the candidate configuration.
    pub n_new: usize,
    pub current_config: Configuration,
    pub candidate_config: Option<Configuration>,
}

/// Current placement plus per-operator rolling-update state.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeploymentState {
    /// `placement[i][k]` = instances of operator i+1 on node k+1.
    pub placement: Vec<Vec<usize>>,
    pub rolling: BTreeMap<OperatorId, RollingEntry>,
}

impl DeploymentState {
    pub fn empty(n_ops: usize, n_nodes: usize) -> Self {
        DeploymentState {
            placement: vec![vec![0; n_nodes]; n_ops],
            rolling: BTreeMap::new(),
        }
    }

    pub fn parallelism(&self, op: OperatorId) -> usize {
        self.placement[op - 1].iter().sum()
    }

    /// Checks the n_old + n_new = total-instances invariant for every
    /// tracked operator. A violation is a program error in the caller.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (op, entry) in &self.rolling {
            let total = self.parallelism(*op);
            if entry.n_old + entry.n_new != total {
                return Err(format!(
                    "operator {op}: n_old {} + n_new {} != placed {total}",
                    entry.n_old, entry.n_new
                ));
            }
            if entry.candidate_config.is_none() && entry.n_new != 0 {
                return Err(format!("operator {op}: n_new {} without a candidate", entry.n_new));
            }
        }
        Ok(())
    }
}

/// A violation found while validating a scenario against a cluster.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub operator: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.operator {
            Some(op) => write!(f, "[{op}] {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Validates a pipeline against a cluster. Returns an empty list iff every
/// operator's per-instance demand fits on at least one node and all static
/// invariants hold.
pub fn validate_pipeline(pipeline: &PipelineSpec, cluster: &ClusterSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let viol = |out: &mut Vec<Violation>, op: Option<&OperatorSpec>, msg: String| {
        out.push(Violation { operator: op.map(|o| o.name.clone()), message: msg });
    };

    if pipeline.operators.is_empty() {
        viol(&mut out, None, "pipeline must contain at least one operator".into());
    }
    if cluster.nodes.is_empty() {
        viol(&mut out, None, "cluster must contain at least one node".into());
    }
    for (idx, op) in pipeline.operators.iter().enumerate() {
        if op.id != idx + 1 {
            viol(&mut out, Some(op), format!("operator id {} is not consecutive (expected {})", op.id, idx + 1));
        }
        if op.fanout <= 0.0 || !op.fanout.is_finite() {
            viol(&mut out, Some(op), "fanout must be positive".into());
        }
        if op.cpu_per_instance < 0.0 || op.mem_per_instance < 0.0 || op.out_record_size < 0.0 {
            viol(&mut out, Some(op), "resource requirements must be non-negative".into());
        }
        if op.startup_cost < 0.0 || op.shutdown_cost < 0.0 || op.coldstart_cost < 0.0 {
            viol(&mut out, Some(op), "lifecycle costs must be non-negative".into());
        }
        if op.nominal_rate <= 0.0 {
            viol(&mut out, Some(op), "nominal_rate must be positive".into());
        }
        if !op.tunable && !op.config_space.is_empty() {
            viol(&mut out, Some(op), "non-tunable operator declares a config space".into());
        }
        if op.tunable && op.config_space.is_empty() {
            viol(&mut out, Some(op), "tunable operator needs a non-empty config space".into());
        }
        for dim in &op.config_space.dims {
            if dim.cardinality() == 0 {
                viol(&mut out, Some(op), format!("config dimension {} has an empty domain", dim.name()));
            }
        }
        if !cluster.nodes.is_empty() {
            let fits_somewhere = cluster.nodes.iter().any(|n| {
                op.cpu_per_instance <= n.cpu_cap + 1e-9
                    && op.mem_per_instance <= n.mem_cap + 1e-9
                    && op.acc_per_instance <= n.acc_cap
            });
            if !fits_somewhere {
                viol(&mut out, Some(op), "per-instance demand fits on no node".into());
            }
        }
    }
    for node in &cluster.nodes {
        if node.cpu_cap < 0.0 || node.mem_cap < 0.0 || node.egress_bandwidth < 0.0 {
            viol(&mut out, None, format!("node {} has a negative capacity", node.id));
        }
    }
    out
}

/// Cumulative data amplification along the chain: `factors[i-1]` is the
/// record volume seen by operator i per original input record, and the
/// second element is the amplification at the pipeline output.
#[derive(Debug, Clone, PartialEq)]
pub struct Amplification {
    pub factors: Vec<f64>,
    pub output: f64,
}

impl Amplification {
    pub fn of(&self, op: OperatorId) -> f64 {
        self.factors[op - 1]
    }
}

/// Computes D_i = prod_{j<i} fanout_j with D_1 = 1, plus the output factor.
pub fn amplification_chain(pipeline: &PipelineSpec) -> Result<Amplification, Violation> {
    let mut factors = Vec::with_capacity(pipeline.len());
    let mut acc = 1.0f64;
    for op in &pipeline.operators {
        if op.fanout <= 0.0 || !op.fanout.is_finite() {
            return Err(Violation {
                operator: Some(op.name.clone()),
                message: "fanout must be positive".into(),
            });
        }
        factors.push(acc);
        acc *= op.fanout;
    }
    Ok(Amplification { factors, output: acc })
}
