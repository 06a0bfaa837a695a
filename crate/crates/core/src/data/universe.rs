use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataSource, DatasetMeta, Example};
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of a synthetic universe of Gaussian classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseConfig {
    pub d: usize,
    pub n_classes: usize,
    /// Examples per class, split evenly between train and holdout.
    pub pool_size: usize,
    pub noise_scale: f64,
    pub prototype_scale: f64,
    pub ood_fraction: f64,
}

impl Default for UniverseConfig {
    fn default() -> Self {
        UniverseConfig {
            d: 32,
            n_classes: 80,
            pool_size: 400,
            noise_scale: 1.0,
            prototype_scale: 1.0,
            ood_fraction: 0.25,
        }
    }
}

impl UniverseConfig {
    pub const MIN_POOL: usize = 20;

    pub fn validate(&self) -> Result<()> {
        if self.d < 8 {
            return Err(Error::Config(format!("universe d must be >= 8, got {}", self.d)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config("universe needs at least 2 classes".into()));
        }
        if self.pool_size < Self::MIN_POOL {
            return Err(Error::Config(format!("pool_size must be >= {}, got {}", Self::MIN_POOL, self.pool_size)));
        }
        if !(self.prototype_scale > 0.0) || !self.prototype_scale.is_finite() {
            return Err(Error::Config("prototype_scale must be positive".into()));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::Config("noise_scale must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.ood_fraction) {
            return Err(Error::Config("ood_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_ood(&self) -> usize {
        let n = (self.ood_fraction * self.n_classes as f64).round() as usize;
        n.min(self.n_classes - 1)
    }
}

/// One class: its prototype and the train/holdout halves of its examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPool {
    pub class_id: usize,
    pub prototype: Option<Vec<f32>>,
    pub train_split: Vec<Vec<f32>>,
    pub holdout_split: Vec<Vec<f32>>,
}

/// A set of classes with a disjoint in-distribution / out-of-distribution split.
#[derive(Debug, Clone, PartialEq)]
pub struct Universe {
    pub d: usize,
    pub classes: Vec<ClassPool>,
    pub id_classes: Vec<usize>,
    pub ood_classes: Vec<usize>,
    pub rng_seed: u64,
}

impl Universe {
    pub fn meta(&self) -> DatasetMeta {
        let rows =
            self.classes.iter().flat_map(|c| c.train_split.iter().chain(c.holdout_split.iter())).map(|v| v.as_slice());
        let source = if self.classes.iter().all(|c| c.prototype.is_some()) {
            DataSource::Synthetic
        } else {
            DataSource::Ingested
        };
        DatasetMeta::from_embeddings(self.d, source, rows)
    }

    pub fn class(&self, id: usize) -> &ClassPool {
        &self.classes[id]
    }

    /// Every embedding, class by class, train split before holdout.
    pub fn all_embeddings(&self) -> impl Iterator<Item = &[f32]> {
        self.classes.iter().flat_map(|c| c.train_split.iter().chain(c.holdout_split.iter())).map(|v| v.as_slice())
    }

    /// Builds a universe from labeled examples: one class per label value,
    /// every other example goes to holdout.
    pub fn from_examples(d: usize, examples: &[Example], seed: u64) -> Self {
        let mut classes: Vec<ClassPool> = (0..2)
            .map(|class_id| ClassPool { class_id, prototype: None, train_split: Vec::new(), holdout_split: Vec::new() })
            .collect();
        for (i, e) in examples.iter().enumerate() {
            let pool = &mut classes[e.y as usize];
            if i % 2 == 0 {
                pool.train_split.push(e.x.clone());
            } else {
                pool.holdout_split.push(e.x.clone());
            }
        }
        Universe { d, classes, id_classes: vec![0, 1], ood_classes: Vec::new(), rng_seed: seed }
    }
}

/// Generates a universe of Gaussian classes: a prototype per class drawn
/// from `N(0, prototype_scale^2 I)`, examples at `prototype + N(0, noise_scale^2 I)`.
pub fn make_synthetic_universe(cfg: &UniverseConfig, seed: u64) -> Result<Universe> {
    cfg.validate()?;
    let d = cfg.d;
    let n_train = cfg.pool_size / 2;
    let classes = (0..cfg.n_classes)
        .map(|class_id| {
            let mut proto_rng = rng::stream(seed, "universe-prototype", class_id as u64);
            let prototype: Vec<f32> =
                (0..d).map(|_| (cfg.prototype_scale * proto_rng.sample::<f64, _>(StandardNormal)) as f32).collect();
            let mut noise_rng = rng::stream(seed, "universe-example", class_id as u64);
            let mut examples: Vec<Vec<f32>> = (0..cfg.pool_size)
                .map(|_| {
                    prototype
                        .iter()
                        .map(|&p| {
                            let eps: f64 = noise_rng.sample(StandardNormal);
                            (f64::from(p) + cfg.noise_scale * eps) as f32
                        })
                        .collect()
                })
                .collect();
            let holdout_split = examples.split_off(n_train);
            ClassPool { class_id, prototype: Some(prototype), train_split: examples, holdout_split }
        })
        .collect();

    let mut order: Vec<usize> = (0..cfg.n_classes).collect();
    order.shuffle(&mut rng::stream(seed, "universe-split", 0));
    let n_ood = cfg.n_ood();
    let mut ood_classes = order[..n_ood].to_vec();
    let mut id_classes = order[n_ood..].to_vec();
    ood_classes.sort_unstable();
    id_classes.sort_unstable();

    Ok(Universe { d, classes, id_classes, ood_classes, rng_seed: seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UniverseConfig {
        UniverseConfig { d: 8, n_classes: 50, pool_size: 20, noise_scale: 0.5, prototype_scale: 1.0, ood_fraction: 0.2 }
    }

    #[test]
    fn zero_noise_gives_prototypes() {
        let cfg = UniverseConfig { noise_scale: 0.0, ..small() };
        let u = make_synthetic_universe(&cfg, 3).unwrap();
        for c in &u.classes {
            let p = c.prototype.as_ref().unwrap();
            assert!(c.train_split.iter().chain(&c.holdout_split).all(|x| x == p));
        }
    }

    #[test]
    fn same_seed_same_universe() {
        let a = make_synthetic_universe(&small(), 7).unwrap();
        let b = make_synthetic_universe(&small(), 7).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_universe(&small(), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn ood_split_sizes() {
        let u = make_synthetic_universe(&small(), 1).unwrap();
        assert_eq!(u.ood_classes.len(), 10);
        assert_eq!(u.id_classes.len(), 40);
        assert!(u.ood_classes.iter().all(|c| !u.id_classes.contains(c)));
    }

    #[test]
    fn splits_are_halves() {
        let u = make_synthetic_universe(&small(), 1).unwrap();
        for c in &u.classes {
            assert_eq!(c.train_split.len(), 10);
            assert_eq!(c.holdout_split.len(), 10);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        for bad in [
            UniverseConfig { d: 4, ..small() },
            UniverseConfig { n_classes: 1, ..small() },
            UniverseConfig { pool_size: 10, ..small() },
            UniverseConfig { prototype_scale: 0.0, ..small() },
            UniverseConfig { noise_scale: -1.0, ..small() },
            UniverseConfig { ood_fraction: 1.0, ..small() },
        ] {
            assert!(matches!(make_synthetic_universe(&bad, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn average_norm_matches_gaussian_scale() {
        let cfg = UniverseConfig {
            d: 32,
            n_classes: 100,
            pool_size: 100,
            noise_scale: 0.7,
            prototype_scale: 1.3,
            ood_fraction: 0.1,
        };
        let u = make_synthetic_universe(&cfg, 11).unwrap();
        let meta = u.meta();
        assert_eq!(meta.n_examples, 10_000);
        let expected = (32f64).sqrt() * (1.3f64 * 1.3 + 0.7 * 0.7).sqrt();
        assert!((meta.avg_norm - expected).abs() / expected < 0.05, "{} vs {}", meta.avg_norm, expected);
    }
}
