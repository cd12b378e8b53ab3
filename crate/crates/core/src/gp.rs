//! Gaussian process regression with a Matérn 5/2 kernel, a constant mean,
//! and a sliding training window.
//!
//! The model is deliberately small and deterministic: appends extend the
//! cached Cholesky factor in place, evictions preserve coverage of the
//! observed input space, and hyperparameters are fit by coordinate search
//! over log-space grids scaled to the buffer statistics, so no gradients or
//! RNG are involved anywhere.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::par;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("model has no training data")]
    NoData,
    #[error("non-finite input")]
    NonFinite,
    #[error("covariance factorization failed after jitter escalation")]
    Factorization,
}

/// Kernel and mean hyperparameters. Lengthscales are per group; the model
/// maps each input dimension to a group so one-hot blocks can share one.
#[derive(Debug, Clone, PartialEq)]
pub struct GpParams {
    pub lengthscales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    /// Latent variance, observation noise excluded.
    pub var: f64,
}

#[derive(Debug, Clone)]
pub struct GpConfig {
    /// Training-buffer capacity W.
    pub capacity: usize,
    /// Refit hyperparameters every this many updates; 0 disables fitting.
    pub refit_every: usize,
    /// Group index per input dimension; dimensions sharing a group share a
    /// lengthscale. `None` gives every dimension its own.
    pub groups: Option<Vec<usize>>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig { capacity: 256, refit_every: 16, groups: None }
    }
}

const JITTER_REL: f64 = 1e-6;
/// Eviction grid resolution per feature dimension.
const EVICT_BINS: usize = 4;

#[derive(Debug, Clone)]
struct Sample {
    x: Vec<f64>,
    y: f64,
    seq: u64,
}

/// Matérn 5/2 GP with cached factorization of (K + sigma_n^2 I).
#[derive(Debug, Clone)]
pub struct GpModel {
    dims: usize,
    groups: Vec<usize>,
    n_groups: usize,
    capacity: usize,
    refit_every: usize,
    params: GpParams,
    samples: Vec<Sample>,
    next_seq: u64,
    updates_since_fit: usize,
    /// Lower Cholesky factor of (K + noise I + jitter I).
    chol: Option<DMatrix<f64>>,
    /// (K + noise I)^-1 (y - mean), kept in sync with `chol`.
    alpha: DVector<f64>,
    jitter: f64,
}

impl GpModel {
    pub fn new(dims: usize, cfg: GpConfig) -> Self {
        let groups = cfg.groups.unwrap_or_else(|| (0..dims).collect());
        assert_eq!(groups.len(), dims, "group map must cover every dimension");
        let n_groups = groups.iter().copied().max().map_or(0, |g| g + 1);
        let params = GpParams {
            lengthscales: vec![1.0; n_groups],
            signal_var: 1.0,
            noise_var: 0.1,
            mean: 0.0,
        };
        GpModel {
            dims,
            groups,
            n_groups,
            capacity: cfg.capacity.max(1),
            refit_every: cfg.refit_every,
            params: params.clone(),
            samples: Vec::new(),
            next_seq: 0,
            updates_since_fit: 0,
            chol: None,
            alpha: DVector::zeros(0),
            jitter: JITTER_REL * params.signal_var,
        }
    }

    /// Model with fixed hyperparameters and fitting disabled.
    pub fn with_params(dims: usize, capacity: usize, params: GpParams) -> Self {
        let mut gp = GpModel::new(dims, GpConfig { capacity, refit_every: 0, groups: None });
        assert_eq!(params.lengthscales.len(), dims);
        gp.jitter = JITTER_REL * params.signal_var;
        gp.params = params;
        gp
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn params(&self) -> &GpParams {
        &self.params
    }

    pub fn noise_var(&self) -> f64 {
        self.params.noise_var
    }

    pub fn points(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.samples.iter().map(|s| (s.x.as_slice(), s.y))
    }

    /// Drops all training data and returns hyperparameters to their priors.
    pub fn reset(&mut self) {
        let fresh = GpModel::new(
            self.dims,
            GpConfig {
                capacity: self.capacity,
                refit_every: self.refit_every,
                groups: Some(self.groups.clone()),
            },
        );
        *self = fresh;
    }

    fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        matern52(a, b, &self.groups, &self.params.lengthscales, self.params.signal_var)
    }

    /// Appends one observation, evicting if the buffer is full.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<(), GpError> {
        if x.len() != self.dims {
            return Err(GpError::NonFinite);
        }
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        let sample = Sample { x: x.to_vec(), y, seq: self.next_seq };
        self.next_seq += 1;
        let evicted = if self.samples.len() >= self.capacity {
            let idx = self.eviction_index();
            self.samples.remove(idx);
            true
        } else {
            false
        };
        self.samples.push(sample);
        self.updates_since_fit += 1;

        // Mean tracks the buffer, so alpha must be refreshed regardless.
        self.params.mean = self.samples.iter().map(|s| s.y).sum::<f64>() / self.samples.len() as f64;

        if self.refit_every > 0 && self.updates_since_fit >= self.refit_every && self.samples.len() >= 2 {
            self.updates_since_fit = 0;
            self.fit();
            self.refactorize()?;
        } else if evicted || self.chol.is_none() {
            self.refactorize()?;
        } else {
            self.append_factor()?;
        }
        Ok(())
    }

    /// Picks the victim: oldest sample in the most populated cell of a
    /// coarse grid over the observed feature ranges, so extremes survive.
    fn eviction_index(&self) -> usize {
        let n = self.samples.len();
        debug_assert!(n > 0);
        let mut lo = vec![f64::INFINITY; self.dims];
        let mut hi = vec![f64::NEG_INFINITY; self.dims];
        for s in &self.samples {
            for d in 0..self.dims {
                lo[d] = lo[d].min(s.x[d]);
                hi[d] = hi[d].max(s.x[d]);
            }
        }
        let mut cells: BTreeMap<Vec<u8>, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            let key: Vec<u8> = (0..self.dims)
                .map(|d| {
                    let span = hi[d] - lo[d];
                    if span <= 0.0 {
                        0u8
                    } else {
                        let b = ((s.x[d] - lo[d]) / span * EVICT_BINS as f64).floor() as isize;
                        b.clamp(0, EVICT_BINS as isize - 1) as u8
                    }
                })
                .collect();
            cells.entry(key).or_default().push(i);
        }
        let busiest = cells
            .values()
            .max_by_key(|members| members.len())
            .expect("non-empty buffer");
        *busiest
            .iter()
            .min_by_key(|&&i| self.samples[i].seq)
            .expect("non-empty cell")
    }

    fn refactorize(&mut self) -> Result<(), GpError> {
        let n = self.samples.len();
        if n == 0 {
            self.chol = None;
            self.alpha = DVector::zeros(0);
            return Ok(());
        }
        self.jitter = JITTER_REL * self.params.signal_var;
        for _ in 0..4 {
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let v = self.kernel(&self.samples[i].x, &self.samples[j].x);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
                k[(i, i)] += self.params.noise_var + self.jitter;
            }
            if let Some(chol) = nalgebra::Cholesky::new(k) {
                self.chol = Some(chol.unpack());
                self.refresh_alpha();
                return Ok(());
            }
            self.jitter *= 10.0;
        }
        Err(GpError::Factorization)
    }

    /// Extends the Cholesky factor by one bordered row for the newest sample.
    fn append_factor(&mut self) -> Result<(), GpError> {
        let n = self.samples.len();
        let new = &self.samples[n - 1];
        let l_old = self.chol.take().expect("factor present");
        let m = l_old.nrows();
        debug_assert_eq!(m, n - 1);
        let mut k_new = DVector::zeros(m);
        for i in 0..m {
            k_new[i] = self.kernel(&self.samples[i].x, &new.x);
        }
        let row = l_old.solve_lower_triangular(&k_new).ok_or(GpError::Factorization)?;
        let kappa = self.kernel(&new.x, &new.x) + self.params.noise_var + self.jitter;
        let d2 = kappa - row.dot(&row);
        if d2 <= 0.0 {
            // Near-singular border: fall back to a full rebuild with
            // escalated jitter rather than guessing.
            self.chol = None;
            return self.refactorize();
        }
        let mut l = DMatrix::zeros(n, n);
        l.view_mut((0, 0), (m, m)).copy_from(&l_old);
        for i in 0..m {
            l[(n - 1, i)] = row[i];
        }
        l[(n - 1, n - 1)] = d2.sqrt();
        self.chol = Some(l);
        self.refresh_alpha();
        Ok(())
    }

    fn refresh_alpha(&mut self) {
        let l = self.chol.as_ref().expect("factor present");
        let n = self.samples.len();
        let r = DVector::from_iterator(n, self.samples.iter().map(|s| s.y - self.params.mean));
        let z = l.solve_lower_triangular(&r).expect("lower solve");
        self.alpha = l.transpose().solve_upper_triangular(&z).expect("upper solve");
    }

    /// Predictive mean and latent variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, GpError> {
        if self.samples.is_empty() {
            return Err(GpError::NoData);
        }
        if x.len() != self.dims || x.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite);
        }
        let l = self.chol.as_ref().ok_or(GpError::NoData)?;
        let n = self.samples.len();
        let kstar = DVector::from_iterator(n, self.samples.iter().map(|s| self.kernel(&s.x, x)));
        let mean = self.params.mean + kstar.dot(&self.alpha);
        let v = l.solve_lower_triangular(&kstar).ok_or(GpError::Factorization)?;
        let var = (self.kernel(x, x) - v.dot(&v)).max(0.0);
        Ok(Prediction { mean, var })
    }

    /// Log marginal likelihood of the buffer under `params`.
    fn log_marginal(&self, params: &GpParams) -> f64 {
        let n = self.samples.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = matern52(
                    &self.samples[i].x,
                    &self.samples[j].x,
                    &self.groups,
                    &params.lengthscales,
                    params.signal_var,
                );
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += params.noise_var + JITTER_REL * params.signal_var;
        }
        let Some(chol) = nalgebra::Cholesky::new(k) else {
            return f64::NEG_INFINITY;
        };
        let r = DVector::from_iterator(n, self.samples.iter().map(|s| s.y - params.mean));
        let alpha = chol.solve(&r);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * r.dot(&alpha) - log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Refits hyperparameters and rebuilds the factorization under them.
    pub fn refit_now(&mut self) -> Result<(), GpError> {
        self.fit();
        self.refactorize()
    }

    /// Coordinate search over log-space grids, two refinement rounds.
    /// Grid centers scale with the buffer statistics, which standardizes
    /// features and targets implicitly.
    fn fit(&mut self) {
        let n = self.samples.len();
        if n < 2 {
            return;
        }
        let mean_y = self.samples.iter().map(|s| s.y).sum::<f64>() / n as f64;
        let var_y = (self.samples.iter().map(|s| (s.y - mean_y).powi(2)).sum::<f64>() / n as f64)
            .max(1e-8 * (1.0 + mean_y.abs()));
        let mut group_scale = vec![0.0f64; self.n_groups.max(1)];
        let mut group_dims = vec![0usize; self.n_groups.max(1)];
        for d in 0..self.dims {
            let mean_x = self.samples.iter().map(|s| s.x[d]).sum::<f64>() / n as f64;
            let std_x = (self.samples.iter().map(|s| (s.x[d] - mean_x).powi(2)).sum::<f64>()
                / n as f64)
                .sqrt();
            group_scale[self.groups[d]] += std_x;
            group_dims[self.groups[d]] += 1;
        }
        for g in 0..self.n_groups {
            group_scale[g] = (group_scale[g] / group_dims[g].max(1) as f64).max(1e-6);
        }

        let mut best = GpParams {
            lengthscales: group_scale.clone(),
            signal_var: var_y,
            noise_var: 0.05 * var_y,
            mean: mean_y,
        };
        let mut best_lml = self.log_marginal(&best);

        // Coordinate order: each group lengthscale, then signal, then noise.
        let n_coords = self.n_groups + 2;
        let mut spans = vec![(0.1f64, 10.0f64); n_coords];
        spans[self.n_groups + 1] = (1e-3, 2.0); // noise multiplier span

        for _round in 0..2 {
            for coord in 0..n_coords {
                let (lo, hi) = spans[coord];
                let center = match coord {
                    c if c < self.n_groups => best.lengthscales[c] / group_scale[c],
                    c if c == self.n_groups => best.signal_var / var_y,
                    _ => best.noise_var / var_y,
                };
                let candidates: Vec<f64> = log_grid(center * lo, center * hi, 5);
                let evals = par::map_collect_heavy(&candidates, |mult| {
                    let mut p = best.clone();
                    match coord {
                        c if c < self.n_groups => p.lengthscales[c] = mult * group_scale[c],
                        c if c == self.n_groups => p.signal_var = mult * var_y,
                        _ => p.noise_var = mult * var_y,
                    }
                    (self.log_marginal(&p), p)
                });
                for (lml, p) in evals {
                    if lml > best_lml + 1e-12 {
                        best_lml = lml;
                        best = p;
                    }
                }
            }
            // Second round: tighten every span around the incumbent.
            for span in spans.iter_mut() {
                *span = (span.0.sqrt(), span.1.sqrt());
            }
        }
        self.params = best;
        self.jitter = JITTER_REL * self.params.signal_var;
    }
}

/// Matérn 5/2 covariance with grouped per-dimension lengthscales.
pub fn matern52(a: &[f64], b: &[f64], groups: &[usize], lengthscales: &[f64], signal_var: f64) -> f64 {
    let mut r2 = 0.0;
    for d in 0..a.len() {
        let l = lengthscales[groups[d]];
        let t = (a[d] - b[d]) / l;
        r2 += t * t;
    }
    let s = (5.0 * r2).sqrt();
    signal_var * (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn log_grid(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.max(1e-12).ln(), hi.max(1e-12).ln());
    (0..steps)
        .map(|i| (llo + (lhi - llo) * i as f64 / (steps - 1) as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fixed_params(dims: usize) -> GpParams {
        GpParams {
            lengthscales: vec![1.5; dims],
            signal_var: 2.0,
            noise_var: 0.01,
            mean: 0.0,
        }
    }

    #[test]
    fn empty_model_reports_no_data() {
        let gp = GpModel::new(1, GpConfig::default());
        assert_eq!(gp.predict(&[0.0]).unwrap_err(), GpError::NoData);
    }

    #[test]
    fn single_point_interpolates() {
        let mut gp = GpModel::with_params(1, 16, fixed_params(1));
        gp.params.noise_var = 0.0;
        gp.update(&[2.0], 5.0).unwrap();
        let p = gp.predict(&[2.0]).unwrap();
        assert!((p.mean - 5.0).abs() < 1e-6 * 5.0, "mean {}", p.mean);
    }

    #[test]
    fn far_field_reverts_to_mean_and_signal_var() {
        let mut gp = GpModel::with_params(1, 16, fixed_params(1));
        for (x, y) in [(0.0, 1.0), (1.0, 3.0), (2.0, 2.0)] {
            gp.update(&[x], y).unwrap();
        }
        let p = gp.predict(&[1e4]).unwrap();
        assert_relative_eq!(p.mean, gp.params().mean, epsilon = 1e-9);
        assert_relative_eq!(p.var, gp.params().signal_var, epsilon = 1e-9);
    }

    #[test]
    fn buffer_respects_capacity() {
        let mut gp = GpModel::with_params(1, 8, fixed_params(1));
        for i in 0..20 {
            gp.update(&[i as f64], i as f64).unwrap();
        }
        assert_eq!(gp.len(), 8);
    }

    #[test]
    fn duplicate_inputs_stay_positive_definite() {
        let mut gp = GpModel::with_params(1, 16, fixed_params(1));
        for _ in 0..6 {
            gp.update(&[1.0], 2.0).unwrap();
        }
        let p = gp.predict(&[1.0]).unwrap();
        assert!(p.mean.is_finite() && p.var >= 0.0);
    }

    #[test]
    fn rejects_non_finite() {
        let mut gp = GpModel::new(1, GpConfig::default());
        assert_eq!(gp.update(&[f64::NAN], 1.0).unwrap_err(), GpError::NonFinite);
        assert_eq!(gp.update(&[1.0], f64::INFINITY).unwrap_err(), GpError::NonFinite);
    }

    #[test]
    fn eviction_keeps_extremes() {
        // Cluster many points in the middle, two at the extremes; the
        // extremes must survive eviction pressure.
        let mut gp = GpModel::with_params(1, 8, fixed_params(1));
        gp.update(&[0.0], 0.0).unwrap();
        gp.update(&[100.0], 1.0).unwrap();
        for i in 0..30 {
            gp.update(&[50.0 + (i % 3) as f64], 0.5).unwrap();
        }
        let xs: Vec<f64> = gp.points().map(|(x, _)| x[0]).collect();
        assert!(xs.contains(&0.0), "low extreme evicted: {xs:?}");
        assert!(xs.contains(&100.0), "high extreme evicted: {xs:?}");
    }

    #[test]
    fn conditioning_never_raises_variance_at_site() {
        let mut params = fixed_params(1);
        params.noise_var = 0.0;
        let mut gp = GpModel::with_params(1, 32, params);
        gp.update(&[0.0], 1.0).unwrap();
        gp.update(&[3.0], 2.0).unwrap();
        let before = gp.predict(&[1.0]).unwrap().var;
        gp.update(&[1.0], 1.4).unwrap();
        let after = gp.predict(&[1.0]).unwrap().var;
        assert!(after <= before + 1e-12, "{after} > {before}");
    }

    #[test]
    fn fit_learns_scale_of_noisy_quadratic() {
        let mut gp = GpModel::new(1, GpConfig { capacity: 64, refit_every: 0, groups: None });
        for i in 0..40 {
            let x = i as f64 / 4.0;
            gp.update(&[x], 3.0 + 0.5 * x * x).unwrap();
        }
        gp.refit_now().unwrap();
        // After fitting, in-sample prediction should be tight.
        let p = gp.predict(&[5.0]).unwrap();
        assert!((p.mean - (3.0 + 0.5 * 25.0)).abs() < 1.0, "mean {}", p.mean);
    }
}
