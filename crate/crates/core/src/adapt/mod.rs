//! Workload adaptation: online regime clustering and per-regime
//! configuration tuning for tunable operators.
//!
//! The layer watches per-batch workload features, detects when a new regime
//! becomes dominant, runs one sandboxed tuning job per operator at a time,
//! and exposes the best-known configuration of the dominant regime to the
//! scheduler, which decides whether and when to apply it.

pub mod cluster;
pub mod encode;
pub mod tune;

use std::collections::BTreeMap;

pub use cluster::{ClusterId, ClusterParams, ClusterSet, TuneStatus, WorkloadCluster};
pub use encode::ThetaEncoder;
pub use tune::{
    expected_improvement_value, normal_cdf, normal_pdf, prob_feasible, EvalOutcome, Proposal,
    Recommendation, TuneAudit, TuneError, TuneMode, TuneParams, TuningJob,
};

use crate::model::{OperatorId, PipelineSpec};
use crate::scenario::Knobs;

#[derive(Debug)]
struct OpAdaptState {
    clusters: ClusterSet,
    encoder: ThetaEncoder,
    job: Option<TuningJob>,
    m_cap: f64,
    jobs_started: u64,
}

/// Per-operator clustering plus at most one active tuning job each.
#[derive(Debug)]
pub struct AdaptLayer {
    states: BTreeMap<OperatorId, OpAdaptState>,
    knobs: Knobs,
    mode: TuneMode,
    seed: u64,
    audit: Vec<TuneAudit>,
    audit_enabled: bool,
    ingest_calls: u64,
}

impl AdaptLayer {
    /// `device_caps` carries the per-instance device memory (MB) of each
    /// tunable operator.
    pub fn new(
        pipeline: &PipelineSpec,
        knobs: &Knobs,
        device_caps: &BTreeMap<OperatorId, f64>,
        mode: TuneMode,
        seed: u64,
    ) -> Self {
        let params = ClusterParams {
            tau_d: knobs.tau_d,
            l_max: knobs.l_max,
            gamma: knobs.gamma,
            n_prune: knobs.n_prune,
            n_trigger: knobs.n_trigger,
            history: knobs.match_history,
        };
        let states = pipeline
            .operators
            .iter()
            .filter(|op| op.tunable)
            .map(|op| {
                (
                    op.id,
                    OpAdaptState {
                        clusters: ClusterSet::new(params.clone()),
                        encoder: ThetaEncoder::new(&op.config_space),
                        job: None,
                        m_cap: device_caps.get(&op.id).copied().unwrap_or(0.0),
                        jobs_started: 0,
                    },
                )
            })
            .collect();
        AdaptLayer {
            states,
            knobs: knobs.clone(),
            mode,
            seed,
            audit: Vec::new(),
            audit_enabled: false,
            ingest_calls: 0,
        }
    }

    pub fn enable_audit(&mut self) {
        self.audit_enabled = true;
    }

    pub fn audit(&self) -> &[TuneAudit] {
        &self.audit
    }

    pub fn ingest_calls(&self) -> u64 {
        self.ingest_calls
    }

    pub fn tunable_operators(&self) -> impl Iterator<Item = OperatorId> + '_ {
        self.states.keys().copied()
    }

    pub fn clusters(&self, op: OperatorId) -> Option<&ClusterSet> {
        self.states.get(&op).map(|s| &s.clusters)
    }

    pub fn job_active(&self, op: OperatorId) -> bool {
        self.states.get(&op).map_or(false, |s| s.job.is_some())
    }

    /// Feeds one per-batch feature sample and starts a tuning job when the
    /// dominant cluster qualifies.
    pub fn ingest_features(&mut self, op: OperatorId, x: &[f64]) {
        self.ingest_calls += 1;
        let mode = self.mode;
        let knobs = self.knobs.clone();
        let seed = self.seed;
        let Some(state) = self.states.get_mut(&op) else { return };
        let id = state.clusters.assign(x);
        if state.clusters.should_trigger_tuning(id, state.job.is_some()) {
            let centroid = state.clusters.get(id).expect("cluster exists").centroid.clone();
            state.clusters.get_mut(id).expect("cluster exists").status = TuneStatus::Tuning;
            let params = TuneParams {
                budget: knobs.tuning_budget,
                n_init: knobs.n_init,
                eta: knobs.eta,
                delta: knobs.delta_margin,
                m_cap: state.m_cap,
                pool_size: knobs.acq_pool,
                mode,
            };
            let job_seed = seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add(op as u64)
                .wrapping_add(state.jobs_started << 16);
            state.jobs_started += 1;
            state.job = Some(TuningJob::new(op, id, centroid, state.encoder.clone(), params, job_seed));
        }
    }

    /// Applies cluster count decay; call on the configured cadence.
    pub fn decay_tick(&mut self) {
        for state in self.states.values_mut() {
            state.clusters.decay_and_prune();
            // A job whose target regime faded away is abandoned.
            if let Some(job) = &state.job {
                if state.clusters.get(job.cluster_id).is_none() {
                    state.job = None;
                }
            }
        }
    }

    /// Next sandbox evaluation for the operator's active job, if any.
    /// Finishing jobs are finalized into the owning cluster.
    pub fn next_eval(&mut self, op: OperatorId) -> Option<(crate::model::Configuration, Vec<f64>)> {
        let state = self.states.get_mut(&op)?;
        let job = state.job.as_mut()?;
        match job.propose_next() {
            Proposal::Candidate(cfg) => {
                let centroid = job.centroid.clone();
                Some((cfg, centroid))
            }
            Proposal::Complete => {
                Self::finalize_job(state, &mut self.audit, self.audit_enabled);
                None
            }
        }
    }

    /// Records a sandbox result; finalizes the job once its budget is spent.
    pub fn report_eval(
        &mut self,
        op: OperatorId,
        config: crate::model::Configuration,
        outcome: EvalOutcome,
    ) -> Result<(), TuneError> {
        let Some(state) = self.states.get_mut(&op) else { return Ok(()) };
        let Some(job) = state.job.as_mut() else { return Ok(()) };
        job.record_evaluation(config, outcome)?;
        if job.budget_left() == 0 {
            Self::finalize_job(state, &mut self.audit, self.audit_enabled);
        }
        Ok(())
    }

    fn finalize_job(state: &mut OpAdaptState, audit: &mut Vec<TuneAudit>, audit_enabled: bool) {
        let Some(job) = state.job.take() else { return };
        if audit_enabled {
            audit.extend(job.audit().iter().cloned());
        }
        let cluster_id = job.cluster_id;
        match job.best_recommendation() {
            Some(rec) => {
                if let Some(c) = state.clusters.get_mut(cluster_id) {
                    c.status = TuneStatus::Tuned;
                    c.best_config = Some(rec.config.clone());
                    c.best_predicted_ut = Some(rec.predicted_ut);
                }
            }
            None => {
                if let Some(c) = state.clusters.get_mut(cluster_id) {
                    c.status = TuneStatus::Pending;
                }
            }
        }
    }

    /// Recommendation of the dominant regime, when that regime is tuned.
    pub fn recommendation(&self, op: OperatorId) -> Option<Recommendation> {
        let state = self.states.get(&op)?;
        let dom = state.clusters.dominant()?;
        let c = state.clusters.get(dom)?;
        if c.status != TuneStatus::Tuned {
            return None;
        }
        Some(Recommendation {
            operator_id: op,
            cluster_id: dom,
            config: c.best_config.clone()?,
            predicted_ut: c.best_predicted_ut?,
        })
    }

    /// Mean feature vector of the dominant regime, used to answer capacity
    /// queries at the workload the pipeline is actually seeing.
    pub fn dominant_centroid(&self, op: OperatorId) -> Option<Vec<f64>> {
        let state = self.states.get(&op)?;
        let dom = state.clusters.dominant()?;
        state.clusters.get(dom).map(|c| c.centroid.clone())
    }
}
