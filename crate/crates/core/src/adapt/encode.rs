//! Mixed-space configuration encoding and low-discrepancy sampling.
//!
//! Integer ranges map to log-scaled reals in [0,1], booleans to {0,1}, and
//! categoricals to one-hot blocks whose dimensions share one kernel
//! lengthscale group. A Halton sequence over the same geometry provides
//! deterministic space-filling candidates.

use crate::model::{ConfigDim, ConfigSpace, ConfigValue, Configuration};

#[derive(Debug, Clone)]
pub struct ThetaEncoder {
    space: ConfigSpace,
    dims: usize,
    groups: Vec<usize>,
}

impl ThetaEncoder {
    pub fn new(space: &ConfigSpace) -> Self {
        let mut dims = 0;
        let mut groups = Vec::new();
        for (g, dim) in space.dims.iter().enumerate() {
            match dim {
                ConfigDim::Categorical { choices, .. } => {
                    for _ in choices {
                        groups.push(g);
                        dims += 1;
                    }
                }
                _ => {
                    groups.push(g);
                    dims += 1;
                }
            }
        }
        ThetaEncoder { space: space.clone(), dims, groups }
    }

    pub fn encoded_dims(&self) -> usize {
        self.dims
    }

    /// Kernel lengthscale group per encoded dimension.
    pub fn groups(&self) -> Vec<usize> {
        self.groups.clone()
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn encode(&self, config: &Configuration) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dims);
        for dim in &self.space.dims {
            match (dim, config.values.get(dim.name())) {
                (ConfigDim::IntRange { min, max, .. }, Some(ConfigValue::Int(v))) => {
                    out.push(log_unit(*v, *min, *max));
                }
                (ConfigDim::Boolean { .. }, Some(ConfigValue::Bool(b))) => {
                    out.push(if *b { 1.0 } else { 0.0 });
                }
                (ConfigDim::Categorical { choices, .. }, Some(ConfigValue::Choice(c))) => {
                    for choice in choices {
                        out.push(if choice == c { 1.0 } else { 0.0 });
                    }
                }
                _ => panic!("configuration does not conform to the space"),
            }
        }
        out
    }

    /// Deterministic space-filling configuration at Halton index `index`.
    pub fn halton_config(&self, index: usize) -> Configuration {
        let mut cfg = Configuration::default();
        for (d, dim) in self.space.dims.iter().enumerate() {
            let u = halton(index as u64 + 1, PRIMES[d % PRIMES.len()]);
            let value = match dim {
                ConfigDim::IntRange { min, max, .. } => {
                    ConfigValue::Int(int_from_unit(u, *min, *max))
                }
                ConfigDim::Boolean { .. } => ConfigValue::Bool(u >= 0.5),
                ConfigDim::Categorical { choices, .. } => {
                    let idx = ((u * choices.len() as f64) as usize).min(choices.len() - 1);
                    ConfigValue::Choice(choices[idx].clone())
                }
            };
            cfg.values.insert(dim.name().to_string(), value);
        }
        cfg
    }

    /// All single-dimension neighbors of `config`: adjacent integers, the
    /// flipped boolean, every other category.
    pub fn neighbors(&self, config: &Configuration) -> Vec<Configuration> {
        let mut out = Vec::new();
        for dim in &self.space.dims {
            match (dim, config.values.get(dim.name())) {
                (ConfigDim::IntRange { min, max, .. }, Some(ConfigValue::Int(v))) => {
                    for cand in [v - 1, v + 1] {
                        if cand >= *min && cand <= *max {
                            let mut c = config.clone();
                            c.values.insert(dim.name().into(), ConfigValue::Int(cand));
                            out.push(c);
                        }
                    }
                }
                (ConfigDim::Boolean { .. }, Some(ConfigValue::Bool(b))) => {
                    let mut c = config.clone();
                    c.values.insert(dim.name().into(), ConfigValue::Bool(!b));
                    out.push(c);
                }
                (ConfigDim::Categorical { choices, .. }, Some(ConfigValue::Choice(cur))) => {
                    for choice in choices {
                        if choice != cur {
                            let mut c = config.clone();
                            c.values.insert(dim.name().into(), ConfigValue::Choice(choice.clone()));
                            out.push(c);
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Every configuration in the (finite) space, lexicographic by dim order.
    pub fn enumerate_all(&self) -> Vec<Configuration> {
        let mut out = vec![Configuration::default()];
        for dim in &self.space.dims {
            let mut next = Vec::new();
            for base in &out {
                match dim {
                    ConfigDim::IntRange { min, max, .. } => {
                        for v in *min..=*max {
                            let mut c = base.clone();
                            c.values.insert(dim.name().into(), ConfigValue::Int(v));
                            next.push(c);
                        }
                    }
                    ConfigDim::Boolean { .. } => {
                        for b in [false, true] {
                            let mut c = base.clone();
                            c.values.insert(dim.name().into(), ConfigValue::Bool(b));
                            next.push(c);
                        }
                    }
                    ConfigDim::Categorical { choices, .. } => {
                        for choice in choices {
                            let mut c = base.clone();
                            c.values.insert(dim.name().into(), ConfigValue::Choice(choice.clone()));
                            next.push(c);
                        }
                    }
                }
            }
            out = next;
        }
        out
    }
}

/// Log-scaled position of `v` within [min, max], shifted when the range
/// includes values below 1.
fn log_unit(v: i64, min: i64, max: i64) -> f64 {
    if max <= min {
        return 0.0;
    }
    let shift = if min < 1 { 1 - min } else { 0 };
    let (lo, hi, vv) = ((min + shift) as f64, (max + shift) as f64, (v + shift) as f64);
    (vv.ln() - lo.ln()) / (hi.ln() - lo.ln())
}

/// Inverse of [`log_unit`]: nearest integer at unit position `u`.
fn int_from_unit(u: f64, min: i64, max: i64) -> i64 {
    if max <= min {
        return min;
    }
    let shift = if min < 1 { 1 - min } else { 0 };
    let (lo, hi) = ((min + shift) as f64, (max + shift) as f64);
    let raw = (lo.ln() + u * (hi.ln() - lo.ln())).exp().round() as i64 - shift;
    raw.clamp(min, max)
}

const PRIMES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Van der Corput radical inverse of `i` in the given base.
fn halton(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ConfigSpace {
        ConfigSpace {
            dims: vec![
                ConfigDim::IntRange { name: "batch_size".into(), min: 1, max: 64 },
                ConfigDim::Boolean { name: "prefix_cache".into() },
                ConfigDim::Categorical {
                    name: "kv_layout".into(),
                    choices: vec!["paged".into(), "contiguous".into(), "chunked".into()],
                },
            ],
        }
    }

    #[test]
    fn encoding_shape_and_groups() {
        let enc = ThetaEncoder::new(&space());
        assert_eq!(enc.encoded_dims(), 5);
        assert_eq!(enc.groups(), vec![0, 1, 2, 2, 2]);
    }

    #[test]
    fn int_encoding_is_log_scaled_and_invertible_at_ends() {
        let enc = ThetaEncoder::new(&space());
        let mut cfg = enc.halton_config(0);
        cfg.values.insert("batch_size".into(), ConfigValue::Int(1));
        assert_eq!(enc.encode(&cfg)[0], 0.0);
        cfg.values.insert("batch_size".into(), ConfigValue::Int(64));
        assert_eq!(enc.encode(&cfg)[0], 1.0);
        assert_eq!(int_from_unit(0.0, 1, 64), 1);
        assert_eq!(int_from_unit(1.0, 1, 64), 64);
        assert_eq!(int_from_unit(0.5, 1, 64), 8);
    }

    #[test]
    fn one_hot_encoding() {
        let enc = ThetaEncoder::new(&space());
        let mut cfg = enc.halton_config(0);
        cfg.values.insert("kv_layout".into(), ConfigValue::Choice("contiguous".into()));
        let z = enc.encode(&cfg);
        assert_eq!(&z[2..], &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn halton_covers_and_is_deterministic() {
        let enc = ThetaEncoder::new(&space());
        let a: Vec<_> = (0..32).map(|i| enc.halton_config(i)).collect();
        let b: Vec<_> = (0..32).map(|i| enc.halton_config(i)).collect();
        assert_eq!(a, b);
        let distinct: std::collections::BTreeSet<_> = a.iter().map(|c| format!("{c}")).collect();
        assert!(distinct.len() > 16, "only {} distinct configs", distinct.len());
    }

    #[test]
    fn neighbors_stay_in_domain() {
        let enc = ThetaEncoder::new(&space());
        let mut cfg = enc.halton_config(0);
        cfg.values.insert("batch_size".into(), ConfigValue::Int(1));
        let ns = enc.neighbors(&cfg);
        // batch 1 has one int neighbor (2), bool flips, two other categories.
        assert_eq!(ns.len(), 4);
        assert!(ns.iter().all(|c| c.conforms_to(&space())));
    }

    #[test]
    fn enumerate_all_counts_match() {
        let enc = ThetaEncoder::new(&space());
        let all = enc.enumerate_all();
        assert_eq!(all.len(), 64 * 2 * 3);
        assert_eq!(all.len(), space().combination_count());
    }
}
