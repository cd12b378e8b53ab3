//! Online workload clustering.
//!
//! Incoming feature vectors are assigned to the nearest centroid within a
//! distance threshold (measured in running min-max normalized space) or
//! spawn a new cluster, merging the two closest when the cluster budget is
//! exhausted. Counts decay over time so obsolete regimes fade out, and a
//! short match history identifies the currently dominant regime.

use std::collections::VecDeque;

use serde::Serialize;

use crate::model::Configuration;

pub type ClusterId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TuneStatus {
    Pending,
    Tuning,
    Tuned,
}

/// One workload regime.
#[derive(Debug, Clone, Serialize)]
pub struct WorkloadCluster {
    pub id: ClusterId,
    pub centroid: Vec<f64>,
    /// Decayed sample count.
    pub count: f64,
    pub status: TuneStatus,
    pub best_config: Option<Configuration>,
    pub best_predicted_ut: Option<f64>,
}

/// Running per-dimension min-max scaler.
#[derive(Debug, Clone, Default)]
struct Scaler {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Scaler {
    fn absorb(&mut self, x: &[f64]) {
        if self.lo.is_empty() {
            self.lo = x.to_vec();
            self.hi = x.to_vec();
            return;
        }
        for d in 0..x.len() {
            self.lo[d] = self.lo[d].min(x[d]);
            self.hi[d] = self.hi[d].max(x[d]);
        }
    }

    fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(d, v)| {
                let span = self.hi[d] - self.lo[d];
                if span <= 0.0 {
                    0.0
                } else {
                    (v - self.lo[d]) / span
                }
            })
            .collect()
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone)]
pub struct ClusterParams {
    /// Assignment distance threshold in normalized space.
    pub tau_d: f64,
    pub l_max: usize,
    /// Count decay factor per decay application.
    pub gamma: f64,
    /// Clusters whose decayed count falls below this are removed.
    pub n_prune: f64,
    /// Count a pending cluster needs before tuning may start.
    pub n_trigger: f64,
    /// Match-history window length.
    pub history: usize,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { tau_d: 0.25, l_max: 8, gamma: 0.95, n_prune: 1.0, n_trigger: 20.0, history: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct ClusterSet {
    params: ClusterParams,
    clusters: Vec<WorkloadCluster>,
    scaler: Scaler,
    history: VecDeque<ClusterId>,
    next_id: ClusterId,
}

impl ClusterSet {
    pub fn new(params: ClusterParams) -> Self {
        ClusterSet {
            params,
            clusters: Vec::new(),
            scaler: Scaler::default(),
            history: VecDeque::new(),
            next_id: 0,
        }
    }

    pub fn clusters(&self) -> &[WorkloadCluster] {
        &self.clusters
    }

    pub fn get(&self, id: ClusterId) -> Option<&WorkloadCluster> {
        self.clusters.iter().find(|c| c.id == id)
    }

    pub fn get_mut(&mut self, id: ClusterId) -> Option<&mut WorkloadCluster> {
        self.clusters.iter_mut().find(|c| c.id == id)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Assigns `x` to a cluster, updating the centroid incrementally, or
    /// creates a new cluster (merging the two closest first when at the
    /// limit). Returns the assigned cluster id.
    pub fn assign(&mut self, x: &[f64]) -> ClusterId {
        self.scaler.absorb(x);
        let xn = self.scaler.normalize(x);
        let nearest = self
            .clusters
            .iter()
            .enumerate()
            .map(|(i, c)| (i, dist(&xn, &self.scaler.normalize(&c.centroid))))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let id = match nearest {
            Some((idx, d)) if d <= self.params.tau_d => {
                let c = &mut self.clusters[idx];
                let n = c.count;
                for dim in 0..x.len() {
                    c.centroid[dim] += (x[dim] - c.centroid[dim]) / (n + 1.0);
                }
                c.count = n + 1.0;
                c.id
            }
            _ => {
                if self.clusters.len() >= self.params.l_max {
                    self.merge_closest();
                }
                let id = self.next_id;
                self.next_id += 1;
                self.clusters.push(WorkloadCluster {
                    id,
                    centroid: x.to_vec(),
                    count: 1.0,
                    status: TuneStatus::Pending,
                    best_config: None,
                    best_predicted_ut: None,
                });
                id
            }
        };
        self.history.push_back(id);
        while self.history.len() > self.params.history {
            self.history.pop_front();
        }
        id
    }

    /// Merges the two closest clusters into a count-weighted one. The member
    /// with the larger count survives and keeps its id and tuning state,
    /// unless only the smaller one holds a tuned configuration.
    pub fn merge_closest(&mut self) {
        if self.clusters.len() < 2 {
            return;
        }
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..self.clusters.len() {
            for j in (i + 1)..self.clusters.len() {
                let d = dist(
                    &self.scaler.normalize(&self.clusters[i].centroid),
                    &self.scaler.normalize(&self.clusters[j].centroid),
                );
                if best.map_or(true, |(_, _, bd)| d < bd) {
                    best = Some((i, j, d));
                }
            }
        }
        let (i, j, _) = best.expect("at least two clusters");
        // Dominant side: larger count, ties to the smaller index.
        let (keep, drop) = if self.clusters[j].count > self.clusters[i].count { (j, i) } else { (i, j) };
        let (total, merged_centroid) = {
            let a = &self.clusters[keep];
            let b = &self.clusters[drop];
            let total = a.count + b.count;
            let centroid = a
                .centroid
                .iter()
                .zip(&b.centroid)
                .map(|(ca, cb)| (ca * a.count + cb * b.count) / total)
                .collect();
            (total, centroid)
        };
        let dropped = self.clusters[drop].clone();
        let survivor = &mut self.clusters[keep];
        survivor.centroid = merged_centroid;
        survivor.count = total;
        if survivor.status != TuneStatus::Tuned && dropped.status == TuneStatus::Tuned {
            survivor.status = TuneStatus::Tuned;
            survivor.best_config = dropped.best_config;
            survivor.best_predicted_ut = dropped.best_predicted_ut;
        }
        let (kept_id, dropped_id) = (survivor.id, dropped.id);
        self.clusters.remove(drop);
        for id in self.history.iter_mut() {
            if *id == dropped_id {
                *id = kept_id;
            }
        }
    }

    /// Applies count decay and prunes clusters that fell below the floor.
    pub fn decay_and_prune(&mut self) {
        for c in self.clusters.iter_mut() {
            c.count *= self.params.gamma;
        }
        let floor = self.params.n_prune;
        self.clusters.retain(|c| c.count >= floor);
    }

    /// Plurality cluster of the match history; ties break to the larger
    /// count, then the lower id. Entries for pruned clusters are ignored.
    pub fn dominant(&self) -> Option<ClusterId> {
        if self.history.is_empty() {
            return None;
        }
        let mut votes: Vec<(ClusterId, usize)> = Vec::new();
        for id in &self.history {
            if self.get(*id).is_none() {
                continue;
            }
            match votes.iter_mut().find(|(v, _)| v == id) {
                Some((_, n)) => *n += 1,
                None => votes.push((*id, 1)),
            }
        }
        votes
            .into_iter()
            .max_by(|(ida, na), (idb, nb)| {
                na.cmp(nb)
                    .then_with(|| {
                        let ca = self.get(*ida).map(|c| c.count).unwrap_or(0.0);
                        let cb = self.get(*idb).map(|c| c.count).unwrap_or(0.0);
                        ca.total_cmp(&cb)
                    })
                    .then(idb.cmp(ida))
            })
            .map(|(id, _)| id)
    }

    /// Whether a tuning job should start for `id`. `job_active` is whether
    /// the owning operator already has a job running.
    pub fn should_trigger_tuning(&self, id: ClusterId, job_active: bool) -> bool {
        if job_active {
            return false;
        }
        let Some(c) = self.get(id) else { return false };
        c.status == TuneStatus::Pending
            && c.count >= self.params.n_trigger
            && self.dominant() == Some(id)
    }

    /// Total decayed count across clusters.
    pub fn total_count(&self) -> f64 {
        self.clusters.iter().map(|c| c.count).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(params: ClusterParams) -> ClusterSet {
        ClusterSet::new(params)
    }

    #[test]
    fn incremental_centroid_update() {
        let mut cs = set(ClusterParams { tau_d: 10.0, ..Default::default() });
        cs.assign(&[0.0, 0.0]);
        let id = cs.assign(&[2.0, 2.0]);
        let c = cs.get(id).unwrap();
        assert_eq!(c.centroid, vec![1.0, 1.0]);
        assert_eq!(c.count, 2.0);
    }

    #[test]
    fn empty_set_spawns_pending_cluster() {
        let mut cs = set(ClusterParams::default());
        let id = cs.assign(&[3.0, 4.0]);
        let c = cs.get(id).unwrap();
        assert_eq!(c.centroid, vec![3.0, 4.0]);
        assert_eq!(c.count, 1.0);
        assert_eq!(c.status, TuneStatus::Pending);
    }

    #[test]
    fn at_limit_far_sample_merges_then_adds() {
        let mut cs = set(ClusterParams { tau_d: 0.05, l_max: 3, ..Default::default() });
        cs.assign(&[0.0]);
        cs.assign(&[10.0]);
        cs.assign(&[5.0]);
        assert_eq!(cs.len(), 3);
        cs.assign(&[100.0]);
        assert_eq!(cs.len(), 3, "merge must keep the set at the limit");
        // The closest pair (0 and 5 in the rescaled space) merged.
        let centroids: Vec<f64> = cs.clusters().iter().map(|c| c.centroid[0]).collect();
        assert!(centroids.contains(&2.5), "{centroids:?}");
        assert!(centroids.contains(&10.0), "{centroids:?}");
        assert!(centroids.contains(&100.0), "{centroids:?}");
    }

    #[test]
    fn merge_weights_centroids_by_count() {
        let mut cs = set(ClusterParams { tau_d: 0.2, l_max: 8, ..Default::default() });
        // Build (0,0) with count 3 and (4,4) with count 1, far apart.
        cs.assign(&[0.0, 0.0]);
        cs.assign(&[0.0, 0.0]);
        cs.assign(&[0.0, 0.0]);
        cs.assign(&[4.0, 4.0]);
        cs.merge_closest();
        assert_eq!(cs.len(), 1);
        let c = &cs.clusters()[0];
        assert_eq!(c.centroid, vec![1.0, 1.0]);
        assert_eq!(c.count, 4.0);
    }

    #[test]
    fn merge_keeps_tuned_config_of_dominant_side() {
        let mut cs = set(ClusterParams { tau_d: 0.2, l_max: 8, ..Default::default() });
        for _ in 0..5 {
            cs.assign(&[0.0]);
        }
        let a = cs.clusters()[0].id;
        cs.assign(&[9.0]);
        let mut cfg = Configuration::default();
        cfg.values.insert("batch".into(), crate::model::ConfigValue::Int(8));
        let ca = cs.get_mut(a).unwrap();
        ca.status = TuneStatus::Tuned;
        ca.best_config = Some(cfg.clone());
        cs.merge_closest();
        assert_eq!(cs.len(), 1);
        let c = &cs.clusters()[0];
        assert_eq!(c.status, TuneStatus::Tuned);
        assert_eq!(c.best_config.as_ref(), Some(&cfg));
    }

    #[test]
    fn decay_and_prune_applies_gamma_and_floor() {
        let mut cs = set(ClusterParams { gamma: 0.95, n_prune: 1.0, ..Default::default() });
        for _ in 0..10 {
            cs.assign(&[0.0]);
        }
        cs.decay_and_prune();
        assert_eq!(cs.clusters()[0].count, 9.5);
        let id2 = cs.assign(&[50.0]);
        // A single-sample cluster decays below the prune floor immediately.
        cs.decay_and_prune();
        assert!(cs.get(id2).is_none());
    }

    #[test]
    fn dominant_cluster_steadily_fed_survives_decay() {
        let mut cs = set(ClusterParams { gamma: 0.95, n_prune: 1.0, ..Default::default() });
        let mut id = 0;
        // Two assignments per decay application: the fixed point of
        // n -> 0.95 (n + 2) is 38, comfortably above the prune floor.
        for _ in 0..300 {
            cs.assign(&[0.0]);
            id = cs.assign(&[0.0]);
            cs.decay_and_prune();
        }
        let c = cs.get(id).expect("cluster survives");
        assert!(c.count > 1.0);
        assert!((c.count - 38.0).abs() < 2.0, "count {}", c.count);
    }

    #[test]
    fn trigger_requires_pending_count_and_dominance() {
        let mut cs = set(ClusterParams { n_trigger: 3.0, ..Default::default() });
        let id = cs.assign(&[0.0]);
        assert!(!cs.should_trigger_tuning(id, false), "count too low");
        cs.assign(&[0.0]);
        cs.assign(&[0.0]);
        assert!(cs.should_trigger_tuning(id, false));
        assert!(!cs.should_trigger_tuning(id, true), "job already active");
        cs.get_mut(id).unwrap().status = TuneStatus::Tuned;
        assert!(!cs.should_trigger_tuning(id, false), "already tuned");
    }

    #[test]
    fn dominant_is_plurality_with_count_tiebreak() {
        let mut cs = set(ClusterParams { tau_d: 0.01, ..Default::default() });
        let a = cs.assign(&[0.0]);
        cs.assign(&[0.001]);
        let b = cs.assign(&[100.0]);
        assert_ne!(a, b);
        // History [a, a, b]: plurality a.
        assert_eq!(cs.dominant(), Some(a));
        let mut cs2 = set(ClusterParams { tau_d: 0.01, ..Default::default() });
        let a2 = cs2.assign(&[0.0]);
        let b2 = cs2.assign(&[100.0]);
        // Tie 1-1, equal counts: lower id wins.
        assert_eq!(cs2.dominant(), Some(a2.min(b2)));
        cs2.assign(&[100.0]);
        cs2.assign(&[0.0]);
        // Tie 2-2, now give b2 a higher count.
        cs2.assign(&[100.0]);
        cs2.assign(&[100.0]);
        assert_eq!(cs2.dominant(), Some(b2));
    }

    #[test]
    fn dominant_ignores_pruned_entries() {
        let mut cs = set(ClusterParams { tau_d: 0.01, gamma: 0.5, n_prune: 1.0, ..Default::default() });
        let a = cs.assign(&[0.0]);
        for _ in 0..5 {
            cs.assign(&[0.0]);
        }
        let b = cs.assign(&[100.0]);
        cs.decay_and_prune(); // b decays to 0.5 and is pruned
        assert!(cs.get(b).is_none());
        assert_eq!(cs.dominant(), Some(a));
    }

    #[test]
    fn empty_history_has_no_dominant() {
        let cs = set(ClusterParams::default());
        assert_eq!(cs.dominant(), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Without decay, total count equals the number of assignments
            // regardless of merges.
            #[test]
            fn counts_are_conserved(samples in proptest::collection::vec(
                proptest::collection::vec(-50.0f64..50.0, 2), 1..200)) {
                let mut cs = set(ClusterParams { l_max: 4, ..Default::default() });
                for s in &samples {
                    cs.assign(s);
                }
                prop_assert!((cs.total_count() - samples.len() as f64).abs() < 1e-9);
            }

            // A cluster that takes every sample holds the exact mean.
            #[test]
            fn centroid_is_arithmetic_mean(samples in proptest::collection::vec(0.0f64..1.0, 1..100)) {
                let mut cs = set(ClusterParams { tau_d: 1000.0, ..Default::default() });
                for s in &samples {
                    cs.assign(&[*s]);
                }
                prop_assert_eq!(cs.len(), 1);
                let mean = samples.iter().sum::<f64>() / samples.len() as f64;
                let c = &cs.clusters()[0];
                prop_assert!((c.centroid[0] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            }
        }
    }
}
