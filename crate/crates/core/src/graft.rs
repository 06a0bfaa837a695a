//! Synthetic spurious features.
//!
//! Two constructions: grafting (minority examples receive a random subset of
//! embedding dimensions from an opposite-class donor) and the additive
//! severe shift (`x ± s_tilde` depending on the spurious bit).

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{euclidean_norm, DatasetMeta, Example};
use crate::error::{Error, Result};

/// Dimensions overwritten by grafting, plus the minority ratios used for
/// context and query examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraftSpec {
    pub dims: Vec<usize>,
    pub context_minority_ratio: f64,
    pub query_minority_ratio: f64,
}

impl GraftSpec {
    pub const DEFAULT_CONTEXT_RATIO: f64 = 0.10;
    pub const DEFAULT_QUERY_RATIO: f64 = 0.50;

    pub fn new(mut dims: Vec<usize>, context_minority_ratio: f64, query_minority_ratio: f64) -> Result<Self> {
        dims.sort_unstable();
        if dims.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("graft dimensions must be distinct".into()));
        }
        check_ratio(context_minority_ratio)?;
        check_ratio(query_minority_ratio)?;
        Ok(GraftSpec { dims, context_minority_ratio, query_minority_ratio })
    }

    pub fn k(&self) -> usize {
        self.dims.len()
    }

    /// Shifts every dimension index by `offset` (used to keep grafts off the
    /// leading token-type dimensions).
    pub fn offset(mut self, offset: usize) -> Self {
        for d in &mut self.dims {
            *d += offset;
        }
        self
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if (0.0..=0.5).contains(&r) {
        Ok(())
    } else {
        Err(Error::Config(format!("minority ratio {r} outside [0, 0.5]")))
    }
}

/// Draws `k ~ Uniform{0..=k_max}` and a uniform random `k`-subset of `0..d`.
pub fn sample_graft_spec<R: Rng + ?Sized>(
    d: usize,
    k_max: usize,
    ratios: (f64, f64),
    rng: &mut R,
) -> Result<GraftSpec> {
    if k_max > d {
        return Err(Error::Config(format!("k_max {k_max} exceeds dimension {d}")));
    }
    let k = rng.random_range(0..=k_max);
    let dims = index::sample(rng, d, k).into_vec();
    GraftSpec::new(dims, ratios.0, ratios.1)
}

/// Number of minority examples for a class of `n` at ratio `r`.
pub fn minority_count(n: usize, ratio: f64) -> usize {
    // The epsilon absorbs representation error such as 0.1 * 30 = 3.0000000000000004
    // or 0.29 * 100 = 28.999999999999996.
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Which class and position a grafted example's features came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Donor {
    pub class: u8,
    pub index: usize,
}

/// Grafting result: class A examples (label 0) in input order, followed by
/// class B examples (label 1). `donors[i]` is set for minority examples.
#[derive(Debug, Clone)]
pub struct Grafted {
    pub examples: Vec<Example>,
    pub donors: Vec<Option<Donor>>,
}

/// Applies the grafting operation to two classes.
///
/// In each class `floor(ratio * len)` examples, chosen uniformly without
/// replacement, become minority: their `spec.dims` entries are copied from a
/// donor drawn uniformly (independently per example) from the other class's
/// non-minority examples, and their spurious bit is set to `1 - y`.
pub fn apply_graft<R: Rng + ?Sized>(
    class_a: &[Vec<f32>],
    class_b: &[Vec<f32>],
    spec: &GraftSpec,
    ratio: f64,
    rng: &mut R,
) -> Result<Grafted> {
    if class_a.is_empty() || class_b.is_empty() {
        return Err(Error::InsufficientPool("grafting needs two non-empty classes".into()));
    }
    check_ratio(ratio)?;
    let d = class_a[0].len();
    for x in class_a.iter().chain(class_b) {
        if x.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: x.len() });
        }
    }
    if let Some(&bad) = spec.dims.iter().find(|&&i| i >= d) {
        return Err(Error::Config(format!("graft dimension {bad} out of range for d={d}")));
    }

    let classes = [class_a, class_b];
    let m = [minority_count(class_a.len(), ratio), minority_count(class_b.len(), ratio)];
    let mut is_minority = [vec![false; class_a.len()], vec![false; class_b.len()]];
    for c in 0..2 {
        for i in index::sample(rng, classes[c].len(), m[c]) {
            is_minority[c][i] = true;
        }
    }
    let donor_pools: [Vec<usize>; 2] = [0, 1].map(|c| (0..classes[c].len()).filter(|&i| !is_minority[c][i]).collect());
    for c in 0..2 {
        if m[c] > 0 && donor_pools[1 - c].is_empty() {
            return Err(Error::InsufficientPool(format!(
                "class {} has {} minority examples but no donors in the other class",
                c, m[c]
            )));
        }
    }

    let mut examples = Vec::with_capacity(class_a.len() + class_b.len());
    let mut donors = Vec::with_capacity(examples.capacity());
    for c in 0..2 {
        let y = c as u8;
        for (i, x) in classes[c].iter().enumerate() {
            if is_minority[c][i] {
                let pool = &donor_pools[1 - c];
                let donor_index = pool[rng.random_range(0..pool.len())];
                let donor = &classes[1 - c][donor_index];
                let mut grafted = x.clone();
                for &dim in &spec.dims {
                    grafted[dim] = donor[dim];
                }
                examples.push(Example::new(grafted, y, 1 - y));
                donors.push(Some(Donor { class: 1 - y, index: donor_index }));
            } else {
                examples.push(Example::new(x.clone(), y, y));
                donors.push(None);
            }
        }
    }
    Ok(Grafted { examples, donors })
}

/// The additive spurious vector and its norm relative to the average
/// embedding norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SevereShiftSpec {
    pub s_tilde: Vec<f32>,
    pub rho: f64,
}

/// Draws a uniformly random direction and scales it to `rho * avg_norm`.
pub fn make_severe_shift<R: Rng + ?Sized>(meta: &DatasetMeta, rho: f64, rng: &mut R) -> Result<SevereShiftSpec> {
    if !(meta.avg_norm > 0.0) {
        return Err(Error::Config("average embedding norm must be positive".into()));
    }
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Config(format!("rho must be a non-negative number, got {rho}")));
    }
    let direction: Vec<f64> = loop {
        let v: Vec<f64> = (0..meta.d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|a| a / norm).collect();
        }
    };
    let scale = rho * meta.avg_norm;
    let s_tilde = direction.into_iter().map(|a| (a * scale) as f32).collect();
    Ok(SevereShiftSpec { s_tilde, rho })
}

impl SevereShiftSpec {
    pub fn norm(&self) -> f64 {
        euclidean_norm(&self.s_tilde)
    }

    /// Undoes [`apply_severe_shift`].
    pub fn invert(&self, e: &Example) -> Result<Example> {
        shift(e, &self.s_tilde, -1.0)
    }
}

/// `x + s_tilde` when `s == 1`, `x - s_tilde` otherwise.
pub fn apply_severe_shift(e: &Example, spec: &SevereShiftSpec) -> Result<Example> {
    shift(e, &spec.s_tilde, 1.0)
}

fn shift(e: &Example, s_tilde: &[f32], direction: f32) -> Result<Example> {
    if e.dim() != s_tilde.len() {
        return Err(Error::DimensionMismatch { expected: s_tilde.len(), got: e.dim() });
    }
    let sign = if e.s == 1 { direction } else { -direction };
    let x = e.x.iter().zip(s_tilde).map(|(&a, &b)| a + sign * b).collect();
    Ok(Example { x, ..e.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::SeedableRng;

    fn class(n: usize, d: usize, base: f32) -> Vec<Vec<f32>> {
        (0..n).map(|i| (0..d).map(|j| base + (i * d + j) as f32).collect()).collect()
    }

    #[test]
    fn zero_k_max_gives_empty_dims() {
        let mut rng = stream(0, "t", 0);
        for _ in 0..100 {
            assert!(sample_graft_spec(12, 0, (0.1, 0.5), &mut rng).unwrap().dims.is_empty());
        }
        assert!(sample_graft_spec(12, 13, (0.1, 0.5), &mut rng).is_err());
    }

    #[test]
    fn k_mean_matches_uniform() {
        let mut rng = stream(1, "t", 0);
        let n = 100_000;
        let mut total = 0usize;
        for _ in 0..n {
            let spec = sample_graft_spec(768, 199, (0.1, 0.5), &mut rng).unwrap();
            assert!(spec.k() <= 199);
            assert!(spec.dims.windows(2).all(|w| w[0] < w[1]));
            total += spec.k();
        }
        let mean = total as f64 / n as f64;
        assert!((mean - 99.5).abs() < 2.0, "mean k {mean}");
    }

    #[test]
    fn fig3_setting() {
        let a = class(5, 12, 0.0);
        let b = class(5, 12, 1000.0);
        let spec = GraftSpec::new(vec![1, 6, 9], 0.4, 0.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let out = apply_graft(&a, &b, &spec, 0.4, &mut rng).unwrap();
        assert_eq!(out.examples.len(), 10);
        for c in 0..2u8 {
            let grafted: Vec<&Example> = out.examples.iter().filter(|e| e.y == c && e.is_minority()).collect();
            assert_eq!(grafted.len(), 2);
            for e in grafted {
                // values from class B are >= 1000, class A values are < 1000
                let from_other = spec.dims.iter().all(|&k| (e.x[k] >= 1000.0) != (c == 1));
                assert!(from_other);
            }
        }
    }

    #[test]
    fn empty_dims_still_flip_spurious_bits() {
        let a = class(30, 6, 0.0);
        let b = class(30, 6, 500.0);
        let spec = GraftSpec::new(vec![], 0.1, 0.5).unwrap();
        let mut rng = stream(2, "t", 0);
        let out = apply_graft(&a, &b, &spec, 0.1, &mut rng).unwrap();
        let originals: Vec<&Vec<f32>> = a.iter().chain(&b).collect();
        for (e, x) in out.examples.iter().zip(originals) {
            assert_eq!(&e.x, x);
        }
        assert_eq!(out.examples.iter().filter(|e| e.is_minority()).count(), 6);
    }

    #[test]
    fn degenerate_inputs() {
        let spec = GraftSpec::new(vec![0], 0.5, 0.5).unwrap();
        let mut rng = stream(3, "t", 0);
        // one minority per class, each with exactly one donor left
        let out = apply_graft(&class(2, 4, 0.0), &class(2, 4, 10.0), &spec, 0.5, &mut rng).unwrap();
        assert_eq!(out.donors.iter().flatten().count(), 2);
        assert!(apply_graft(&[], &class(2, 4, 10.0), &spec, 0.5, &mut rng).is_err());
        assert!(apply_graft(&class(2, 4, 0.0), &class(2, 4, 10.0), &spec, 0.6, &mut rng).is_err());
        let wide = GraftSpec::new(vec![7], 0.5, 0.5).unwrap();
        assert!(apply_graft(&class(2, 4, 0.0), &class(2, 4, 10.0), &wide, 0.5, &mut rng).is_err());
    }

    #[test]
    fn minority_count_floor() {
        assert_eq!(minority_count(9, 0.1), 0);
        assert_eq!(minority_count(10, 0.1), 1);
        assert_eq!(minority_count(30, 0.1), 3);
        assert_eq!(minority_count(100, 0.29), 29);
        assert_eq!(minority_count(32, 0.5), 16);
    }

    #[test]
    fn severe_shift_norms() {
        let meta = DatasetMeta { d: 16, n_examples: 10, source: crate::data::DataSource::Synthetic, avg_norm: 5.0 };
        let mut rng = stream(4, "t", 0);
        let zero = make_severe_shift(&meta, 0.0, &mut rng).unwrap();
        assert!(zero.s_tilde.iter().all(|&v| v == 0.0));
        let one = make_severe_shift(&meta, 1.0, &mut rng).unwrap();
        assert!((one.norm() / 5.0 - 1.0).abs() < 1e-6);
        let part = make_severe_shift(&meta, 0.4, &mut rng).unwrap();
        assert!((part.norm() / 5.0 - 0.4).abs() < 1e-6);
        let bad = DatasetMeta { avg_norm: 0.0, ..meta };
        assert!(make_severe_shift(&bad, 1.0, &mut rng).is_err());
    }

    #[test]
    fn severe_shift_linearity_and_identity() {
        let meta = DatasetMeta { d: 4, n_examples: 1, source: crate::data::DataSource::Synthetic, avg_norm: 2.0 };
        let mut rng = stream(5, "t", 0);
        let spec = make_severe_shift(&meta, 1.0, &mut rng).unwrap();
        let e1 = Example::new(vec![0.5, -1.0, 2.0, 0.0], 1, 1);
        let e0 = e1.clone().with_spurious(0);
        let a = apply_severe_shift(&e1, &spec).unwrap();
        let b = apply_severe_shift(&e0, &spec).unwrap();
        for k in 0..4 {
            assert!((a.x[k] - b.x[k] - 2.0 * spec.s_tilde[k]).abs() < 1e-6);
        }
        assert_eq!((a.y, a.s, a.g), (1, 1, 3));
        let zero = make_severe_shift(&meta, 0.0, &mut rng).unwrap();
        assert_eq!(apply_severe_shift(&e1, &zero).unwrap().x, e1.x);
        assert!(apply_severe_shift(&Example::new(vec![0.0; 3], 0, 0), &spec).is_err());
    }
}
