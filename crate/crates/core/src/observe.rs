//! Sustainable-capacity estimation.
//!
//! Raw windowed throughput measurements confound an operator's intrinsic
//! capacity with pipeline effects: an operator starved by its upstream or
//! buried under a transient backlog reports rates that say nothing about
//! what it could sustain. This module filters such windows in two stages
//! (cheap runtime signals first, then a standardized-residual test against
//! the capacity model itself) and feeds the survivors into a per-operator
//! Gaussian process over workload features. Until enough samples accumulate,
//! and again after every configuration transition, a moving average stands
//! in for the model.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::gp::{GpConfig, GpModel};
use crate::model::{CapacityEstimate, EstimateMode, MetricsSnapshot, OperatorId, PipelineSpec};
use crate::scenario::Knobs;

#[derive(Debug, Error, PartialEq)]
pub enum ObserveError {
    #[error("no data")]
    NoData,
    #[error("unknown operator {0}")]
    UnknownOperator(OperatorId),
}

/// Why a snapshot was excluded from the capacity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum RejectReason {
    /// No live instances during the window.
    NoInstances,
    /// Utilization below the starvation threshold.
    Starved,
    /// Input queue draining faster than the allowed slope.
    Draining,
    /// Input queue growing faster than the allowed slope.
    Backlogged,
    /// Standardized residual against the model exceeded the threshold.
    Outlier,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterDecision {
    Accept,
    Reject(RejectReason),
}

impl FilterDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, FilterDecision::Accept)
    }
}

/// Thresholds of the two-stage filter.
#[derive(Debug, Clone)]
pub struct FilterConfig {
    /// Utilization below this is starvation.
    pub tau_u: f64,
    /// Standardized-residual bound; rejection requires strictly more.
    pub tau_z: f64,
    pub queue_drain_slope: f64,
    pub queue_growth_slope: f64,
    /// Accepted samples needed before the model is trusted.
    pub n_min: usize,
    pub ema_alpha: f64,
    /// Relative stddev reported while in moving-average mode.
    pub ema_rel_stddev: f64,
}

impl FilterConfig {
    pub fn from_knobs(k: &Knobs) -> Self {
        FilterConfig {
            tau_u: k.tau_u,
            tau_z: k.tau_z,
            queue_drain_slope: k.queue_drain_slope,
            queue_growth_slope: k.queue_growth_slope,
            n_min: k.n_min,
            ema_alpha: k.ema_alpha,
            ema_rel_stddev: k.ema_rel_stddev,
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self::from_knobs(&Knobs::default())
    }
}

/// Least-squares slope of the queue-length series; fewer than two points
/// count as flat.
pub fn queue_slope(series: &[(f64, f64)]) -> f64 {
    if series.len() < 2 {
        return 0.0;
    }
    let n = series.len() as f64;
    let mean_t = series.iter().map(|(t, _)| t).sum::<f64>() / n;
    let mean_q = series.iter().map(|(_, q)| q).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, q) in series {
        num += (t - mean_t) * (q - mean_q);
        den += (t - mean_t) * (t - mean_t);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Stage 1: runtime-signal checks that need no model.
pub fn signal_filter(s: &MetricsSnapshot, f: &FilterConfig) -> FilterDecision {
    if s.instance_count == 0 {
        return FilterDecision::Reject(RejectReason::NoInstances);
    }
    if s.utilization < f.tau_u {
        return FilterDecision::Reject(RejectReason::Starved);
    }
    let slope = queue_slope(&s.queue_len_series);
    if slope < -f.queue_drain_slope {
        return FilterDecision::Reject(RejectReason::Draining);
    }
    if slope > f.queue_growth_slope {
        return FilterDecision::Reject(RejectReason::Backlogged);
    }
    FilterDecision::Accept
}

/// Stage 2: standardized residual against the current model, observation
/// noise included. Rejection requires strictly exceeding `tau_z`.
pub fn model_filter(gp: &GpModel, x: &[f64], y: f64, tau_z: f64) -> FilterDecision {
    let Ok(pred) = gp.predict(x) else {
        return FilterDecision::Accept;
    };
    let sigma = (pred.var + gp.noise_var()).sqrt();
    if sigma == 0.0 {
        return if y == pred.mean {
            FilterDecision::Accept
        } else {
            FilterDecision::Reject(RejectReason::Outlier)
        };
    }
    let z = (y - pred.mean) / sigma;
    if z.abs() > tau_z {
        FilterDecision::Reject(RejectReason::Outlier)
    } else {
        FilterDecision::Accept
    }
}

/// One row of the estimator audit log.
#[derive(Debug, Clone, Serialize)]
pub struct AuditEntry {
    pub window_end: f64,
    pub operator_id: OperatorId,
    pub accepted: bool,
    pub reason: Option<RejectReason>,
    pub mode: EstimateMode,
    pub observed: f64,
    pub estimate_mean: f64,
    pub estimate_stddev: f64,
}

/// Per-operator estimator: moving average while cold, Gaussian process once
/// `n_min` filtered samples have accumulated.
#[derive(Debug)]
pub struct OperatorEstimator {
    pub operator_id: OperatorId,
    config: FilterConfig,
    gp: GpModel,
    ema: Option<f64>,
    accepted_count: usize,
    rejected: BTreeMap<RejectReason, usize>,
}

impl OperatorEstimator {
    pub fn new(operator_id: OperatorId, feature_dims: usize, config: FilterConfig, knobs: &Knobs) -> Self {
        let gp = GpModel::new(
            feature_dims,
            GpConfig { capacity: knobs.gp_window, refit_every: knobs.refit_every, groups: None },
        );
        OperatorEstimator {
            operator_id,
            config,
            gp,
            ema: None,
            accepted_count: 0,
            rejected: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> EstimateMode {
        if self.accepted_count < self.config.n_min {
            EstimateMode::Ema
        } else {
            EstimateMode::Gp
        }
    }

    pub fn accepted_count(&self) -> usize {
        self.accepted_count
    }

    pub fn rejected_counts(&self) -> &BTreeMap<RejectReason, usize> {
        &self.rejected
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    /// Runs the two-stage filter on one snapshot and absorbs it if accepted.
    /// Stage 2 only runs once the model is live; stage-1 rejects never reach it.
    pub fn ingest(&mut self, s: &MetricsSnapshot) -> FilterDecision {
        let stage1 = signal_filter(s, &self.config);
        if let FilterDecision::Reject(reason) = stage1 {
            *self.rejected.entry(reason).or_default() += 1;
            return stage1;
        }
        let y = s.observed_throughput;
        if self.mode() == EstimateMode::Gp {
            let stage2 = model_filter(&self.gp, &s.feature_vector, y, self.config.tau_z);
            if let FilterDecision::Reject(reason) = stage2 {
                *self.rejected.entry(reason).or_default() += 1;
                return stage2;
            }
        }
        self.ema = Some(match self.ema {
            None => y,
            Some(prev) => self.config.ema_alpha * y + (1.0 - self.config.ema_alpha) * prev,
        });
        if self.gp.update(&s.feature_vector, y).is_ok() {
            self.accepted_count += 1;
        }
        FilterDecision::Accept
    }

    /// Capacity estimate at workload features `x`.
    pub fn estimate(&self, x: &[f64]) -> CapacityEstimate {
        match self.mode() {
            EstimateMode::Ema => {
                let mean = self.ema.unwrap_or(0.0);
                CapacityEstimate {
                    operator_id: self.operator_id,
                    mean,
                    stddev: self.config.ema_rel_stddev * mean,
                    mode: EstimateMode::Ema,
                    sample_count: self.accepted_count,
                }
            }
            EstimateMode::Gp => match self.gp.predict(x) {
                Ok(p) => CapacityEstimate {
                    operator_id: self.operator_id,
                    mean: p.mean,
                    stddev: p.var.sqrt(),
                    mode: EstimateMode::Gp,
                    sample_count: self.accepted_count,
                },
                Err(_) => CapacityEstimate {
                    operator_id: self.operator_id,
                    mean: self.ema.unwrap_or(0.0),
                    stddev: self.config.ema_rel_stddev * self.ema.unwrap_or(0.0),
                    mode: EstimateMode::Ema,
                    sample_count: self.accepted_count,
                },
            },
        }
    }

    /// Forgets everything learned under the previous configuration.
    pub fn invalidate(&mut self) {
        self.gp.reset();
        self.ema = None;
        self.accepted_count = 0;
    }
}

/// The observation layer: one estimator per operator.
#[derive(Debug)]
pub struct ObserveLayer {
    estimators: BTreeMap<OperatorId, OperatorEstimator>,
    audit: Vec<AuditEntry>,
    audit_enabled: bool,
    ingest_calls: u64,
}

impl ObserveLayer {
    pub fn new(pipeline: &PipelineSpec, knobs: &Knobs) -> Self {
        let config = FilterConfig::from_knobs(knobs);
        let estimators = pipeline
            .operators
            .iter()
            .map(|op| {
                (op.id, OperatorEstimator::new(op.id, op.feature_schema.len(), config.clone(), knobs))
            })
            .collect();
        ObserveLayer { estimators, audit: Vec::new(), audit_enabled: false, ingest_calls: 0 }
    }

    pub fn enable_audit(&mut self) {
        self.audit_enabled = true;
    }

    pub fn audit(&self) -> &[AuditEntry] {
        &self.audit
    }

    pub fn ingest_calls(&self) -> u64 {
        self.ingest_calls
    }

    pub fn estimator(&self, op: OperatorId) -> Option<&OperatorEstimator> {
        self.estimators.get(&op)
    }

    pub fn ingest(&mut self, s: &MetricsSnapshot) -> Result<FilterDecision, ObserveError> {
        self.ingest_calls += 1;
        let est = self
            .estimators
            .get_mut(&s.operator_id)
            .ok_or(ObserveError::UnknownOperator(s.operator_id))?;
        let decision = est.ingest(s);
        if self.audit_enabled {
            let snap = est.estimate(&s.feature_vector);
            self.audit.push(AuditEntry {
                window_end: s.window_end,
                operator_id: s.operator_id,
                accepted: decision.is_accept(),
                reason: match decision {
                    FilterDecision::Accept => None,
                    FilterDecision::Reject(r) => Some(r),
                },
                mode: snap.mode,
                observed: s.observed_throughput,
                estimate_mean: snap.mean,
                estimate_stddev: snap.stddev,
            });
        }
        Ok(decision)
    }

    pub fn estimate(&self, op: OperatorId, x: &[f64]) -> Result<CapacityEstimate, ObserveError> {
        self.estimators
            .get(&op)
            .map(|e| e.estimate(x))
            .ok_or(ObserveError::UnknownOperator(op))
    }

    pub fn invalidate(&mut self, op: OperatorId) {
        if let Some(e) = self.estimators.get_mut(&op) {
            e.invalidate();
        }
    }
}

/// Baseline rate estimator: processed records divided by worker-occupied
/// time. Reliable for synchronous operators, systematically wrong for
/// asynchronous ones whose completions accrue while the worker idles.
pub fn useful_time_estimate(s: &MetricsSnapshot) -> Result<f64, ObserveError> {
    if s.busy_time <= 0.0 {
        return Err(ObserveError::NoData);
    }
    Ok(s.records_out as f64 / s.busy_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::GpParams;

    fn snapshot(util: f64, series: Vec<(f64, f64)>, y: f64, instances: usize) -> MetricsSnapshot {
        MetricsSnapshot {
            operator_id: 1,
            window_start: 0.0,
            window_end: 10.0,
            records_in: 100,
            records_out: 100,
            observed_throughput: y,
            utilization: util,
            queue_len_series: series,
            feature_vector: vec![1.0],
            peak_device_mem: 0.0,
            busy_time: 10.0,
            instance_count: instances,
        }
    }

    fn config() -> FilterConfig {
        FilterConfig::default()
    }

    #[test]
    fn starved_window_is_rejected() {
        let s = snapshot(0.3, vec![], 5.0, 1);
        assert_eq!(signal_filter(&s, &config()), FilterDecision::Reject(RejectReason::Starved));
    }

    #[test]
    fn flat_queue_high_utilization_accepted() {
        let s = snapshot(0.95, vec![(0.0, 5.0), (1.0, 5.0), (2.0, 5.0)], 5.0, 1);
        assert_eq!(signal_filter(&s, &config()), FilterDecision::Accept);
    }

    #[test]
    fn draining_queue_is_rejected() {
        let series: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 100.0 - 10.0 * i as f64)).collect();
        let s = snapshot(0.95, series, 5.0, 1);
        assert_eq!(signal_filter(&s, &config()), FilterDecision::Reject(RejectReason::Draining));
    }

    #[test]
    fn growing_queue_is_rejected() {
        let series: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 10.0 * i as f64)).collect();
        let s = snapshot(0.95, series, 5.0, 1);
        assert_eq!(signal_filter(&s, &config()), FilterDecision::Reject(RejectReason::Backlogged));
    }

    #[test]
    fn zero_instances_rejected() {
        let s = snapshot(0.0, vec![], 0.0, 0);
        assert_eq!(signal_filter(&s, &config()), FilterDecision::Reject(RejectReason::NoInstances));
    }

    #[test]
    fn short_series_counts_as_flat() {
        assert_eq!(queue_slope(&[(0.0, 50.0)]), 0.0);
        assert_eq!(queue_slope(&[]), 0.0);
    }

    fn trained_gp(mean: f64) -> GpModel {
        let mut gp = GpModel::with_params(
            1,
            32,
            GpParams { lengthscales: vec![1.0], signal_var: 25.0, noise_var: 0.0, mean: 0.0 },
        );
        gp.update(&[1.0], mean).unwrap();
        gp
    }

    #[test]
    fn residual_zero_accepts() {
        let gp = trained_gp(100.0);
        let pred = gp.predict(&[1.0]).unwrap();
        assert_eq!(model_filter(&gp, &[1.0], pred.mean, 3.0), FilterDecision::Accept);
    }

    #[test]
    fn residual_beyond_threshold_rejects() {
        // Far from data the predictive sigma is sqrt(signal_var) = 5.
        let gp = trained_gp(100.0);
        let pred = gp.predict(&[50.0]).unwrap();
        let sigma = (pred.var + gp.noise_var()).sqrt();
        let y = pred.mean + 4.0 * sigma;
        assert_eq!(
            model_filter(&gp, &[50.0], y, 3.0),
            FilterDecision::Reject(RejectReason::Outlier)
        );
    }

    #[test]
    fn residual_exactly_at_threshold_accepts() {
        let gp = trained_gp(100.0);
        let pred = gp.predict(&[50.0]).unwrap();
        let sigma = (pred.var + gp.noise_var()).sqrt();
        let y = pred.mean + 3.0 * sigma;
        assert_eq!(model_filter(&gp, &[50.0], y, 3.0), FilterDecision::Accept);
    }

    fn estimator() -> OperatorEstimator {
        OperatorEstimator::new(1, 1, config(), &Knobs::default())
    }

    #[test]
    fn ema_arithmetic_matches_by_hand() {
        let mut est = estimator();
        for y in [10.0, 12.0, 14.0] {
            let s = snapshot(0.95, vec![], y, 1);
            assert!(est.ingest(&s).is_accept());
        }
        let cap = est.estimate(&[1.0]);
        assert_eq!(cap.mode, EstimateMode::Ema);
        assert_eq!(cap.mean, 12.5);
        assert_eq!(cap.stddev, 0.3 * 12.5);
    }

    #[test]
    fn switches_to_model_after_n_min() {
        let mut est = estimator();
        for _ in 0..20 {
            let s = snapshot(0.95, vec![], 10.0, 1);
            assert!(est.ingest(&s).is_accept());
        }
        assert_eq!(est.mode(), EstimateMode::Gp);
        let cap = est.estimate(&[1.0]);
        assert_eq!(cap.mode, EstimateMode::Gp);
        assert_eq!(cap.sample_count, 20);
        assert!((cap.mean - 10.0).abs() < 0.5, "mean {}", cap.mean);
    }

    #[test]
    fn invalidate_returns_to_ema_and_reseeds() {
        let mut est = estimator();
        for _ in 0..20 {
            est.ingest(&snapshot(0.95, vec![], 10.0, 1));
        }
        assert_eq!(est.mode(), EstimateMode::Gp);
        est.invalidate();
        assert_eq!(est.mode(), EstimateMode::Ema);
        assert_eq!(est.accepted_count(), 0);
        assert_eq!(est.estimate(&[1.0]).mean, 0.0);
        assert_eq!(est.estimate(&[1.0]).sample_count, 0);
        // First post-transition accept reseeds the average.
        est.ingest(&snapshot(0.95, vec![], 42.0, 1));
        assert_eq!(est.estimate(&[1.0]).mean, 42.0);
    }

    #[test]
    fn invalidate_on_fresh_estimator_is_noop() {
        let mut est = estimator();
        est.invalidate();
        assert_eq!(est.mode(), EstimateMode::Ema);
        assert_eq!(est.estimate(&[1.0]).mean, 0.0);
    }

    #[test]
    fn stage_two_never_sees_stage_one_rejects() {
        let mut est = estimator();
        for _ in 0..20 {
            est.ingest(&snapshot(0.95, vec![], 10.0, 1));
        }
        let before = *est.rejected_counts().get(&RejectReason::Outlier).unwrap_or(&0);
        // Wild outlier, but starved: must be counted as Starved, not Outlier.
        est.ingest(&snapshot(0.1, vec![], 500.0, 1));
        assert_eq!(*est.rejected_counts().get(&RejectReason::Outlier).unwrap_or(&0), before);
        assert_eq!(*est.rejected_counts().get(&RejectReason::Starved).unwrap_or(&0), 1);
    }

    #[test]
    fn useful_time_baseline() {
        let mut s = snapshot(0.95, vec![], 10.0, 1);
        s.records_out = 100;
        s.busy_time = 10.0;
        assert_eq!(useful_time_estimate(&s).unwrap(), 10.0);
        s.records_out = 0;
        assert_eq!(useful_time_estimate(&s).unwrap(), 0.0);
        s.busy_time = 0.0;
        assert_eq!(useful_time_estimate(&s).unwrap_err(), ObserveError::NoData);
    }
}
