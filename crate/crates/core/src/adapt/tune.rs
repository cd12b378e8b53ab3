//! Memory-constrained configuration tuning.
//!
//! A tuning job searches one operator's configuration space for the highest
//! sustainable throughput under the dominant workload, treating peak device
//! memory as a black-box constraint. Two surrogate models are maintained
//! from the evaluations; proposals maximize expected improvement weighted by
//! the probability of staying under the memory cap, with a hard feasibility
//! gate and a blocklist of configurations that already blew up.

use std::collections::BTreeSet;

use serde::Serialize;
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::adapt::cluster::ClusterId;
use crate::adapt::encode::ThetaEncoder;
use crate::gp::{GpConfig, GpModel};
use crate::model::{Configuration, OperatorId};
use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum TuneError {
    #[error("configuration was already evaluated")]
    DuplicateProposal,
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Probability that a normally distributed memory draw stays at or below
/// `limit`. Zero spread degenerates to a step by the sign of the slack.
pub fn prob_feasible(mem_mean: f64, mem_std: f64, limit: f64) -> f64 {
    if mem_std <= 0.0 {
        return if limit - mem_mean >= 0.0 { 1.0 } else { 0.0 };
    }
    normal_cdf((limit - mem_mean) / mem_std)
}

/// Closed-form expected improvement of N(mean, std^2) over `best`.
pub fn expected_improvement_value(mean: f64, std: f64, best: f64) -> f64 {
    if std <= 0.0 {
        return (mean - best).max(0.0);
    }
    let u = (mean - best) / std;
    (std * (u * normal_cdf(u) + normal_pdf(u))).max(0.0)
}

/// Result of one sandbox evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum EvalOutcome {
    /// Sustained throughput (records/s per instance) and peak memory (MB).
    Measured { ut: f64, mem: f64 },
    /// The evaluation ran out of device memory.
    Oom,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Candidate(Configuration),
    /// Budget or search space exhausted.
    Complete,
}

/// Whether the feasibility machinery is active. The unconstrained variant
/// is the ablation baseline: plain expected improvement, out-of-memory
/// evaluations recorded as zero-throughput observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TuneMode {
    Constrained,
    UnconstrainedEi,
}

/// Final output of a finished job.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub operator_id: OperatorId,
    pub cluster_id: ClusterId,
    pub config: Configuration,
    /// Surrogate-predicted sustainable throughput of `config`.
    pub predicted_ut: f64,
}

/// One audit row per evaluation, captured at proposal time.
#[derive(Debug, Clone, Serialize)]
pub struct TuneAudit {
    pub operator_id: OperatorId,
    pub config: String,
    pub ut_mean: f64,
    pub ut_std: f64,
    pub mem_mean: f64,
    pub mem_std: f64,
    pub pof: f64,
    pub ei: f64,
    pub acquisition: f64,
    pub outcome: Option<EvalOutcome>,
}

#[derive(Debug, Clone)]
pub struct TuneParams {
    pub budget: usize,
    pub n_init: usize,
    /// Feasibility gate.
    pub eta: f64,
    /// Safety margin (MB) below the device cap.
    pub delta: f64,
    /// Device memory cap (MB) per instance.
    pub m_cap: f64,
    pub pool_size: usize,
    pub mode: TuneMode,
}

#[derive(Debug)]
pub struct TuningJob {
    pub operator_id: OperatorId,
    pub cluster_id: ClusterId,
    /// Workload features this job tunes for.
    pub centroid: Vec<f64>,
    params: TuneParams,
    encoder: ThetaEncoder,
    ut_gp: GpModel,
    mem_gp: GpModel,
    infeasible: BTreeSet<Configuration>,
    evals: Vec<(Configuration, EvalOutcome)>,
    proposed: BTreeSet<Configuration>,
    best_feasible: Option<(Configuration, f64)>,
    pool: Vec<Configuration>,
    audit: Vec<TuneAudit>,
}

impl TuningJob {
    pub fn new(
        operator_id: OperatorId,
        cluster_id: ClusterId,
        centroid: Vec<f64>,
        encoder: ThetaEncoder,
        params: TuneParams,
        seed: u64,
    ) -> Self {
        let dims = encoder.encoded_dims();
        let groups = Some(encoder.groups());
        // Surrogates refit on every observation: with a few dozen points the
        // cost is negligible and scale mistakes are what cause bad proposals.
        let gp_cfg = |_| GpConfig { capacity: 128, refit_every: 1, groups: groups.clone() };
        let ut_gp = GpModel::new(dims, gp_cfg(0));
        let mem_gp = GpModel::new(dims, gp_cfg(1));

        // Space-filling pool, rotated by the seed and deduplicated. Small
        // spaces are then topped up to full coverage; the Halton prefix
        // still decides the warm-up order.
        let mut pool = Vec::new();
        let mut seen = BTreeSet::new();
        let total = encoder.space().combination_count();
        let target = params.pool_size.min(total);
        let offset = (seed % 8191) as usize;
        let mut index = offset;
        while pool.len() < target && index < offset + 64 * params.pool_size {
            let cfg = encoder.halton_config(index);
            if seen.insert(cfg.clone()) {
                pool.push(cfg);
            }
            index += 1;
        }
        if total <= params.pool_size {
            for cfg in encoder.enumerate_all() {
                if seen.insert(cfg.clone()) {
                    pool.push(cfg);
                }
            }
        }
        TuningJob {
            operator_id,
            cluster_id,
            centroid,
            params,
            encoder,
            ut_gp,
            mem_gp,
            infeasible: BTreeSet::new(),
            evals: Vec::new(),
            proposed: BTreeSet::new(),
            best_feasible: None,
            pool,
            audit: Vec::new(),
        }
    }

    pub fn evals(&self) -> &[(Configuration, EvalOutcome)] {
        &self.evals
    }

    pub fn oom_count(&self) -> usize {
        self.evals.iter().filter(|(_, o)| matches!(o, EvalOutcome::Oom)).count()
    }

    pub fn best_feasible(&self) -> Option<&(Configuration, f64)> {
        self.best_feasible.as_ref()
    }

    pub fn budget_left(&self) -> usize {
        self.params.budget.saturating_sub(self.evals.len())
    }

    pub fn audit(&self) -> &[TuneAudit] {
        &self.audit
    }

    /// Probability that `config` satisfies the memory constraint. Known
    /// failures are hard zeros; an untrained surrogate yields the 0.5 prior.
    pub fn pof(&self, config: &Configuration) -> f64 {
        if self.infeasible.contains(config) {
            return 0.0;
        }
        if self.mem_gp.is_empty() {
            return 0.5;
        }
        let z = self.encoder.encode(config);
        match self.mem_gp.predict(&z) {
            Ok(p) => prob_feasible(
                p.mean,
                (p.var + self.mem_gp.noise_var()).sqrt(),
                self.params.m_cap - self.params.delta,
            ),
            Err(_) => 0.5,
        }
    }

    /// Expected throughput improvement of `config` over the best feasible
    /// observation; the plain surrogate mean before any feasible result.
    pub fn expected_improvement(&self, config: &Configuration) -> f64 {
        let z = self.encoder.encode(config);
        let Ok(p) = self.ut_gp.predict(&z) else {
            return 1.0; // No model yet: every candidate is equally promising.
        };
        match &self.best_feasible {
            Some((_, best)) => expected_improvement_value(p.mean, p.var.sqrt(), *best),
            None => p.mean.max(0.0),
        }
    }

    fn candidate_set(&self) -> Vec<Configuration> {
        let mut cands = self.pool.clone();
        // Local refinement around the best evaluated configs.
        let mut ranked: Vec<&(Configuration, EvalOutcome)> = self
            .evals
            .iter()
            .filter(|(_, o)| matches!(o, EvalOutcome::Measured { .. }))
            .collect();
        ranked.sort_by(|a, b| {
            let ua = match a.1 {
                EvalOutcome::Measured { ut, .. } => ut,
                _ => 0.0,
            };
            let ub = match b.1 {
                EvalOutcome::Measured { ut, .. } => ut,
                _ => 0.0,
            };
            ub.total_cmp(&ua)
        });
        for (cfg, _) in ranked.into_iter().take(5) {
            cands.extend(self.encoder.neighbors(cfg));
        }
        let mut seen = BTreeSet::new();
        cands.retain(|c| {
            !self.proposed.contains(c) && !self.infeasible.contains(c) && seen.insert(c.clone())
        });
        cands
    }

    /// Next configuration to evaluate, or `Complete` when the budget or the
    /// space is exhausted. Never returns a known-infeasible or an already
    /// proposed configuration.
    pub fn propose_next(&mut self) -> Proposal {
        if self.evals.len() >= self.params.budget {
            return Proposal::Complete;
        }
        if self.evals.len() < self.params.n_init {
            // Space-filling warm-up straight from the pool order.
            for cfg in &self.pool {
                if !self.proposed.contains(cfg) && !self.infeasible.contains(cfg) {
                    let cfg = cfg.clone();
                    self.push_audit(&cfg);
                    self.proposed.insert(cfg.clone());
                    return Proposal::Candidate(cfg);
                }
            }
            return Proposal::Complete;
        }

        let cands = self.candidate_set();
        if cands.is_empty() {
            return Proposal::Complete;
        }
        let scored = par::map_collect(&cands, |cfg| {
            let pof = match self.params.mode {
                TuneMode::Constrained => self.pof(cfg),
                TuneMode::UnconstrainedEi => 1.0,
            };
            let ei = self.expected_improvement(cfg);
            (ei * pof, pof)
        });
        let chosen = match self.params.mode {
            TuneMode::Constrained => {
                let gated = par::argmax_by_key(&scored, |(alpha, pof)| {
                    if *pof >= self.params.eta {
                        *alpha
                    } else {
                        f64::NEG_INFINITY
                    }
                });
                match gated {
                    Some(i) if scored[i].1 >= self.params.eta => i,
                    // Nothing passes the gate: fall back to the safest candidate.
                    _ => par::argmax_by_key(&scored, |(_, pof)| *pof).expect("non-empty"),
                }
            }
            TuneMode::UnconstrainedEi => {
                par::argmax_by_key(&scored, |(alpha, _)| *alpha).expect("non-empty")
            }
        };
        let cfg = cands[chosen].clone();
        self.push_audit(&cfg);
        self.proposed.insert(cfg.clone());
        Proposal::Candidate(cfg)
    }

    fn push_audit(&mut self, cfg: &Configuration) {
        let z = self.encoder.encode(cfg);
        let (ut_mean, ut_std) = self.ut_gp.predict(&z).map(|p| (p.mean, p.var.sqrt())).unwrap_or((0.0, 0.0));
        let (mem_mean, mem_std) =
            self.mem_gp.predict(&z).map(|p| (p.mean, p.var.sqrt())).unwrap_or((0.0, 0.0));
        let pof = self.pof(cfg);
        let ei = self.expected_improvement(cfg);
        self.audit.push(TuneAudit {
            operator_id: self.operator_id,
            config: cfg.to_string(),
            ut_mean,
            ut_std,
            mem_mean,
            mem_std,
            pof,
            ei,
            acquisition: ei * pof,
            outcome: None,
        });
    }

    /// Records one evaluation result. Out-of-memory outcomes blocklist the
    /// configuration and contribute a memory observation censored at the cap.
    pub fn record_evaluation(
        &mut self,
        config: Configuration,
        outcome: EvalOutcome,
    ) -> Result<(), TuneError> {
        if self.evals.iter().any(|(c, _)| *c == config) {
            return Err(TuneError::DuplicateProposal);
        }
        self.proposed.insert(config.clone());
        let z = self.encoder.encode(&config);
        match outcome {
            EvalOutcome::Measured { ut, mem } => {
                let _ = self.ut_gp.update(&z, ut);
                let _ = self.mem_gp.update(&z, mem);
                if self.best_feasible.as_ref().map_or(true, |(_, b)| ut > *b) {
                    self.best_feasible = Some((config.clone(), ut));
                }
            }
            EvalOutcome::Oom => {
                let _ = self.mem_gp.update(&z, self.params.m_cap);
                match self.params.mode {
                    TuneMode::Constrained => {
                        self.infeasible.insert(config.clone());
                    }
                    TuneMode::UnconstrainedEi => {
                        // No feasibility model: learn the crash as zero rate.
                        let _ = self.ut_gp.update(&z, 0.0);
                    }
                }
            }
        }
        if let Some(last) = self.audit.iter_mut().rev().find(|a| a.config == config.to_string()) {
            last.outcome = Some(outcome);
        }
        self.evals.push((config, outcome));
        Ok(())
    }

    /// Best evaluated configuration by predicted throughput among those
    /// passing the feasibility gate. Ties break to the higher feasibility,
    /// then the lexicographically smaller configuration.
    pub fn best_recommendation(&self) -> Option<Recommendation> {
        let mut best: Option<(&Configuration, f64, f64)> = None;
        for (cfg, outcome) in &self.evals {
            if !matches!(outcome, EvalOutcome::Measured { .. }) {
                continue;
            }
            let pof = self.pof(cfg);
            if self.params.mode == TuneMode::Constrained && pof < self.params.eta {
                continue;
            }
            let z = self.encoder.encode(cfg);
            let mu = match self.ut_gp.predict(&z) {
                Ok(p) => p.mean,
                Err(_) => continue,
            };
            let better = match &best {
                None => true,
                Some((bcfg, bmu, bpof)) => {
                    mu > *bmu
                        || (mu == *bmu && pof > *bpof)
                        || (mu == *bmu && pof == *bpof && cfg < *bcfg)
                }
            };
            if better {
                best = Some((cfg, mu, pof));
            }
        }
        best.map(|(cfg, mu, _)| Recommendation {
            operator_id: self.operator_id,
            cluster_id: self.cluster_id,
            config: cfg.clone(),
            predicted_ut: mu,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConfigDim, ConfigSpace, ConfigValue};

    fn space() -> ConfigSpace {
        ConfigSpace {
            dims: vec![ConfigDim::IntRange { name: "batch_size".into(), min: 1, max: 32 }],
        }
    }

    fn job(mode: TuneMode) -> TuningJob {
        let params = TuneParams {
            budget: 12,
            n_init: 3,
            eta: 0.6,
            delta: 10.0,
            m_cap: 100.0,
            pool_size: 64,
            mode,
        };
        TuningJob::new(1, 0, vec![0.5], ThetaEncoder::new(&space()), params, 7)
    }

    fn cfg(batch: i64) -> Configuration {
        let mut c = Configuration::default();
        c.values.insert("batch_size".into(), ConfigValue::Int(batch));
        c
    }

    #[test]
    fn pof_symmetry_and_tail() {
        assert_eq!(prob_feasible(90.0, 5.0, 90.0), 0.5);
        let p = prob_feasible(80.0, 5.0, 90.0);
        assert!((p - 0.9772).abs() < 5e-4, "{p}");
        assert_eq!(prob_feasible(50.0, 0.0, 90.0), 1.0);
        assert_eq!(prob_feasible(95.0, 0.0, 90.0), 0.0);
    }

    #[test]
    fn pof_is_zero_for_blocklisted() {
        let mut j = job(TuneMode::Constrained);
        j.record_evaluation(cfg(32), EvalOutcome::Oom).unwrap();
        assert_eq!(j.pof(&cfg(32)), 0.0);
        assert!(j.pof(&cfg(4)) > 0.0);
    }

    #[test]
    fn ei_closed_form_landmarks() {
        assert_eq!(expected_improvement_value(5.0, 0.0, 5.0), 0.0);
        assert_eq!(expected_improvement_value(4.0, 0.0, 5.0), 0.0);
        assert_eq!(expected_improvement_value(7.0, 0.0, 5.0), 2.0);
        let phi0 = expected_improvement_value(5.0, 1.0, 5.0);
        assert!((phi0 - 0.39894).abs() < 1e-4, "{phi0}");
    }

    #[test]
    fn first_feasible_eval_sets_best() {
        let mut j = job(TuneMode::Constrained);
        j.record_evaluation(cfg(2), EvalOutcome::Measured { ut: 5.0, mem: 20.0 }).unwrap();
        assert_eq!(j.best_feasible().unwrap().1, 5.0);
        j.record_evaluation(cfg(3), EvalOutcome::Oom).unwrap();
        assert_eq!(j.best_feasible().unwrap().1, 5.0);
        assert_eq!(j.oom_count(), 1);
    }

    #[test]
    fn duplicate_recording_is_an_error() {
        let mut j = job(TuneMode::Constrained);
        j.record_evaluation(cfg(2), EvalOutcome::Measured { ut: 5.0, mem: 20.0 }).unwrap();
        assert_eq!(
            j.record_evaluation(cfg(2), EvalOutcome::Measured { ut: 6.0, mem: 20.0 }),
            Err(TuneError::DuplicateProposal)
        );
    }

    #[test]
    fn proposals_are_unique_and_avoid_blocklist() {
        let mut j = job(TuneMode::Constrained);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..12 {
            match j.propose_next() {
                Proposal::Candidate(c) => {
                    assert!(seen.insert(c.clone()), "re-proposed {c}");
                    let batch = c.get_int("batch_size").unwrap();
                    // Everything above 16 explodes.
                    let outcome = if batch > 16 {
                        EvalOutcome::Oom
                    } else {
                        EvalOutcome::Measured { ut: batch as f64, mem: 3.0 * batch as f64 }
                    };
                    j.record_evaluation(c, outcome).unwrap();
                }
                Proposal::Complete => break,
            }
        }
        assert_eq!(j.propose_next(), Proposal::Complete, "budget exhausted");
    }

    #[test]
    fn gate_fallback_returns_safest() {
        let mut j = job(TuneMode::Constrained);
        // Fill init with high-memory observations so every PoF is tiny.
        j.record_evaluation(cfg(2), EvalOutcome::Measured { ut: 1.0, mem: 99.0 }).unwrap();
        j.record_evaluation(cfg(8), EvalOutcome::Measured { ut: 2.0, mem: 99.5 }).unwrap();
        j.record_evaluation(cfg(16), EvalOutcome::Measured { ut: 3.0, mem: 99.9 }).unwrap();
        let Proposal::Candidate(c) = j.propose_next() else {
            panic!("expected a candidate")
        };
        // The fallback must pick the candidate with the highest PoF.
        let best_pof = j
            .candidate_set()
            .iter()
            .map(|cand| j.pof(cand))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((j.pof(&c) - best_pof).abs() < 1e-12);
    }

    #[test]
    fn recommendation_respects_gate() {
        let mut j = job(TuneMode::Constrained);
        // Two feasible evals; the higher-throughput one is memory-risky.
        j.record_evaluation(cfg(4), EvalOutcome::Measured { ut: 10.0, mem: 40.0 }).unwrap();
        j.record_evaluation(cfg(31), EvalOutcome::Measured { ut: 12.0, mem: 95.0 }).unwrap();
        let rec = j.best_recommendation().unwrap();
        assert_eq!(rec.config.get_int("batch_size"), Some(4), "gated pick, got {}", rec.config);
    }

    #[test]
    fn no_feasible_eval_means_no_recommendation() {
        let mut j = job(TuneMode::Constrained);
        j.record_evaluation(cfg(30), EvalOutcome::Oom).unwrap();
        j.record_evaluation(cfg(31), EvalOutcome::Oom).unwrap();
        assert!(j.best_recommendation().is_none());
    }

    #[test]
    fn single_feasible_eval_is_recommended() {
        let mut j = job(TuneMode::Constrained);
        j.record_evaluation(cfg(4), EvalOutcome::Measured { ut: 10.0, mem: 40.0 }).unwrap();
        let rec = j.best_recommendation().unwrap();
        assert_eq!(rec.config, cfg(4));
        assert!(rec.predicted_ut > 0.0);
    }
}
