use std::sync::Arc;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::sampling::{context_group_counts, sample_context, sample_queries};
use super::{Scheme, SequenceRecipe};
use crate::data::{DatasetMeta, Example, Universe};
use crate::error::{Error, Result};
use crate::graft::{apply_graft, apply_severe_shift, sample_graft_spec, GraftSpec, SevereShiftSpec};
use crate::rng::StreamRng;

/// Training episodes draw queries from the training pools; evaluation
/// episodes draw them from the holdout pools.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

/// Raw material for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub context: Vec<Example>,
    /// `n` queries for the proposed scheme, one for the naive scheme.
    pub queries: Vec<Example>,
}

pub trait TaskSource: Send + Sync {
    fn meta(&self) -> &DatasetMeta;

    fn sample_episode(&self, recipe: &SequenceRecipe, split: Split, rng: &mut StreamRng) -> Result<Episode>;

    fn dim(&self) -> usize {
        self.meta().d
    }
}

fn into_group_pools(examples: Vec<Example>) -> [Vec<Example>; 4] {
    let mut pools: [Vec<Example>; 4] = Default::default();
    for e in examples {
        pools[e.g as usize].push(e);
    }
    pools
}

/// Group distribution of a context, used for the naive training query.
fn count_dist(counts: &[usize; 4]) -> [f64; 4] {
    let total: usize = counts.iter().sum();
    counts.map(|c| c as f64 / total as f64)
}

/// One fixed binary task with a planted spurious feature. Context examples
/// always come from the training pools.
#[derive(Debug, Clone)]
pub struct SingleTask {
    meta: DatasetMeta,
    train: [Vec<Example>; 4],
    holdout: [Vec<Example>; 4],
}

impl SingleTask {
    /// Pool ratio used when grafting the two classes into four groups.
    pub const POOL_MINORITY_RATIO: f64 = 0.5;

    /// Grafts classes `class_a` (label 0) and `class_b` (label 1) of the
    /// universe, then optionally applies a severe shift.
    pub fn from_universe(
        universe: &Universe,
        class_a: usize,
        class_b: usize,
        graft: &GraftSpec,
        shift: Option<&SevereShiftSpec>,
        rng: &mut StreamRng,
    ) -> Result<Self> {
        if class_a == class_b || class_a >= universe.classes.len() || class_b >= universe.classes.len() {
            return Err(Error::Config(format!("invalid class pair ({class_a}, {class_b})")));
        }
        let (a, b) = (universe.class(class_a), universe.class(class_b));
        let mut splits = Vec::with_capacity(2);
        for (xa, xb) in [(&a.train_split, &b.train_split), (&a.holdout_split, &b.holdout_split)] {
            let mut grafted = apply_graft(xa, xb, graft, Self::POOL_MINORITY_RATIO, rng)?.examples;
            if let Some(spec) = shift {
                grafted = grafted.iter().map(|e| apply_severe_shift(e, spec)).collect::<Result<_>>()?;
            }
            splits.push(grafted);
        }
        let holdout = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Self::from_examples(universe.meta(), train, holdout)
    }

    pub fn from_examples(meta: DatasetMeta, train: Vec<Example>, holdout: Vec<Example>) -> Result<Self> {
        for e in train.iter().chain(&holdout) {
            if e.dim() != meta.d {
                return Err(Error::DimensionMismatch { expected: meta.d, got: e.dim() });
            }
        }
        if train.is_empty() || holdout.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(SingleTask { meta, train: into_group_pools(train), holdout: into_group_pools(holdout) })
    }

    pub fn train_pools(&self) -> &[Vec<Example>; 4] {
        &self.train
    }

    pub fn holdout_pools(&self) -> &[Vec<Example>; 4] {
        &self.holdout
    }
}

impl TaskSource for SingleTask {
    fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    fn sample_episode(&self, recipe: &SequenceRecipe, split: Split, rng: &mut StreamRng) -> Result<Episode> {
        recipe.validate()?;
        let ctx = sample_context(&self.train, recipe, rng)?;
        let queries = match (recipe.scheme, split) {
            (Scheme::Naive, Split::Train) => {
                let dist = count_dist(&context_group_counts(recipe)?);
                sample_queries(&self.train, &dist, 1, &ctx.refs, rng)?
            }
            (Scheme::Proposed, Split::Train) => {
                sample_queries(&self.train, &recipe.query_group_dist, recipe.n, &ctx.refs, rng)?
            }
            (Scheme::Naive, Split::Eval) => sample_queries(&self.holdout, &recipe.query_group_dist, 1, &[], rng)?,
            (Scheme::Proposed, Split::Eval) => {
                sample_queries(&self.holdout, &recipe.query_group_dist, recipe.n, &[], rng)?
            }
        };
        Ok(Episode { context: ctx.examples, queries })
    }
}

/// Which classes of a universe evaluation episodes are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassSet {
    Id,
    Ood,
}

/// A fresh binary task per episode: a random class pair, a random graft
/// spec (`GraftSpec`), a grafted context and grafted queries with half of each
/// class in its minority group. Training always uses in-distribution
/// classes; evaluation uses `eval_classes`.
#[derive(Debug, Clone)]
pub struct GraftedUniverseTask {
    universe: Arc<Universe>,
    meta: DatasetMeta,
    pub k_max: usize,
    pub eval_classes: ClassSet,
}

impl GraftedUniverseTask {
    /// Dimensions 0..3 carry token types and are never grafted.
    pub const RESERVED_DIMS: usize = 3;

    pub fn new(universe: Arc<Universe>, k_max: usize, eval_classes: ClassSet) -> Result<Self> {
        let free = universe.d.saturating_sub(Self::RESERVED_DIMS);
        if k_max > free {
            return Err(Error::Config(format!("k_max {k_max} exceeds the {free} graftable dimensions")));
        }
        if universe.id_classes.len() < 2 {
            return Err(Error::Config("need at least two in-distribution classes".into()));
        }
        if eval_classes == ClassSet::Ood && universe.ood_classes.len() < 2 {
            return Err(Error::Config("need at least two out-of-distribution classes".into()));
        }
        let meta = universe.meta();
        Ok(GraftedUniverseTask { universe, meta, k_max, eval_classes })
    }

    /// Default graft size: roughly a quarter of the dimensions.
    pub fn default_k_max(d: usize) -> usize {
        (d / 4).min(d.saturating_sub(Self::RESERVED_DIMS))
    }

    pub fn universe(&self) -> &Universe {
        &self.universe
    }
}

impl TaskSource for GraftedUniverseTask {
    fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    fn sample_episode(&self, recipe: &SequenceRecipe, split: Split, rng: &mut StreamRng) -> Result<Episode> {
        recipe.validate()?;
        if recipe.scheme != Scheme::Proposed {
            return Err(Error::Config("the grafted universe task supports the proposed scheme only".into()));
        }
        if recipe.context_group_dist.is_some() {
            return Err(Error::Config("the grafted universe task fixes its own context distribution".into()));
        }
        if !recipe.n.is_multiple_of(2) {
            return Err(Error::Config(format!("class-balanced context needs an even n, got {}", recipe.n)));
        }
        let classes = match (split, self.eval_classes) {
            (Split::Train, _) | (Split::Eval, ClassSet::Id) => &self.universe.id_classes,
            (Split::Eval, ClassSet::Ood) => &self.universe.ood_classes,
        };
        let pair = index::sample(rng, classes.len(), 2);
        let (a, b) = (self.universe.class(classes[pair.index(0)]), self.universe.class(classes[pair.index(1)]));
        let spec = sample_graft_spec(
            self.universe.d - Self::RESERVED_DIMS,
            self.k_max,
            (GraftSpec::DEFAULT_CONTEXT_RATIO, GraftSpec::DEFAULT_QUERY_RATIO),
            rng,
        )?
        .offset(Self::RESERVED_DIMS);

        let half = recipe.n / 2;
        let mut ctx_x: [Vec<Vec<f32>>; 2] = Default::default();
        let mut qry_x: [Vec<Vec<f32>>; 2] = Default::default();
        for (c, class) in [a, b].into_iter().enumerate() {
            let pool = &class.train_split;
            if pool.len() <= half {
                return Err(Error::InsufficientPool(format!(
                    "class {} has {} training examples, context needs {} plus queries",
                    class.class_id,
                    pool.len(),
                    half
                )));
            }
            let picked = index::sample(rng, pool.len(), half).into_vec();
            ctx_x[c] = picked.iter().map(|&i| pool[i].clone()).collect();
            let source: Vec<&Vec<f32>> = match split {
                Split::Train => {
                    let mut used = vec![false; pool.len()];
                    for &i in &picked {
                        used[i] = true;
                    }
                    pool.iter().zip(used).filter(|(_, u)| !u).map(|(x, _)| x).collect()
                }
                Split::Eval => class.holdout_split.iter().collect(),
            };
            if source.is_empty() {
                return Err(Error::InsufficientPool(format!("class {} has no query examples", class.class_id)));
            }
            qry_x[c] = (0..half).map(|_| source[rng.random_range(0..source.len())].clone()).collect();
        }
        let mut context = apply_graft(&ctx_x[0], &ctx_x[1], &spec, spec.context_minority_ratio, rng)?.examples;
        let mut queries = apply_graft(&qry_x[0], &qry_x[1], &spec, spec.query_minority_ratio, rng)?.examples;
        context.shuffle(rng);
        queries.shuffle(rng);
        Ok(Episode { context, queries })
    }
}

/// Evaluation-time relabeling probes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relabel {
    /// `y -> 1 - y` for every example.
    SwapLabels,
    /// The spurious bit becomes the label and vice versa.
    PredictSpurious,
}

impl Relabel {
    pub fn apply(self, e: &Example) -> Example {
        match self {
            Relabel::SwapLabels => e.clone().with_label(1 - e.y),
            Relabel::PredictSpurious => Example::new(e.x.clone(), e.s, e.y),
        }
    }
}

pub struct RelabeledTask<T> {
    pub inner: T,
    pub relabel: Relabel,
}

impl<T: TaskSource> TaskSource for RelabeledTask<T> {
    fn meta(&self) -> &DatasetMeta {
        self.inner.meta()
    }

    fn sample_episode(&self, recipe: &SequenceRecipe, split: Split, rng: &mut StreamRng) -> Result<Episode> {
        let ep = self.inner.sample_episode(recipe, split, rng)?;
        Ok(Episode {
            context: ep.context.iter().map(|e| self.relabel.apply(e)).collect(),
            queries: ep.queries.iter().map(|e| self.relabel.apply(e)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_universe, UniverseConfig};
    use crate::rng::stream;

    fn universe() -> Universe {
        let cfg = UniverseConfig { d: 16, n_classes: 10, pool_size: 120, ood_fraction: 0.3, ..Default::default() };
        make_synthetic_universe(&cfg, 5).unwrap()
    }

    #[test]
    fn single_task_pools_and_episodes() {
        let u = universe();
        let spec = GraftSpec::new(vec![4, 5, 6], 0.1, 0.5).unwrap();
        let task = SingleTask::from_universe(&u, 0, 1, &spec, None, &mut stream(0, "t", 0)).unwrap();
        assert_eq!(task.train_pools().iter().map(Vec::len).collect::<Vec<_>>(), vec![30, 30, 30, 30]);

        let recipe = SequenceRecipe::new(Scheme::Proposed, 20);
        let ep = task.sample_episode(&recipe, Split::Train, &mut stream(0, "e", 0)).unwrap();
        assert_eq!(ep.context.len(), 20);
        assert_eq!(ep.queries.len(), 20);
        for q in &ep.queries {
            assert!(!ep.context.contains(q));
        }
        let naive = SequenceRecipe::new(Scheme::Naive, 20);
        let mut rng = stream(0, "e", 1);
        let mut minority = 0;
        for _ in 0..2000 {
            let ep = task.sample_episode(&naive, Split::Train, &mut rng).unwrap();
            assert_eq!(ep.queries.len(), 1);
            minority += usize::from(ep.queries[0].is_minority());
        }
        // the naive training query follows the context distribution (10% minority)
        assert!((minority as f64 / 2000.0 - 0.1).abs() < 0.03, "{minority}");
    }

    #[test]
    fn eval_queries_come_from_holdout() {
        let u = universe();
        let spec = GraftSpec::new(vec![], 0.1, 0.5).unwrap();
        let task = SingleTask::from_universe(&u, 2, 3, &spec, None, &mut stream(0, "t", 0)).unwrap();
        let holdout: Vec<&Vec<f32>> = u.class(2).holdout_split.iter().chain(&u.class(3).holdout_split).collect();
        let ep = task
            .sample_episode(&SequenceRecipe::new(Scheme::Proposed, 10), Split::Eval, &mut stream(1, "e", 0))
            .unwrap();
        for q in &ep.queries {
            assert!(holdout.contains(&&q.x));
        }
    }

    #[test]
    fn severe_shift_is_applied_to_both_splits() {
        let u = universe();
        let spec = GraftSpec::new(vec![], 0.1, 0.5).unwrap();
        let shift = SevereShiftSpec { s_tilde: vec![100.0; 16], rho: 1.0 };
        let task = SingleTask::from_universe(&u, 0, 1, &spec, Some(&shift), &mut stream(0, "t", 0)).unwrap();
        for pools in [task.train_pools(), task.holdout_pools()] {
            for (g, pool) in pools.iter().enumerate() {
                let sign = if g % 2 == 1 { 1.0 } else { -1.0 };
                assert!(pool.iter().all(|e| e.x[7] * sign > 50.0));
            }
        }
    }

    #[test]
    fn universe_episodes() {
        let u = Arc::new(universe());
        let task = GraftedUniverseTask::new(u.clone(), 4, ClassSet::Ood).unwrap();
        let recipe = SequenceRecipe::new(Scheme::Proposed, 20);
        let ep = task.sample_episode(&recipe, Split::Train, &mut stream(0, "e", 0)).unwrap();
        let mut ctx = [0; 4];
        for e in &ep.context {
            ctx[e.g as usize] += 1;
        }
        assert_eq!(ctx, [9, 1, 1, 9]);
        let mut qry = [0; 4];
        for e in &ep.queries {
            qry[e.g as usize] += 1;
        }
        assert_eq!(qry, [5, 5, 5, 5]);

        let ood: Vec<&Vec<f32>> = u.ood_classes.iter().flat_map(|&c| &u.class(c).train_split).collect();
        let ep = task.sample_episode(&recipe, Split::Eval, &mut stream(0, "e", 1)).unwrap();
        // majority context examples are untouched ood training embeddings
        for e in ep.context.iter().filter(|e| !e.is_minority()) {
            assert!(ood.contains(&&e.x));
        }
        assert!(task
            .sample_episode(&SequenceRecipe::new(Scheme::Naive, 20), Split::Train, &mut stream(0, "e", 0))
            .is_err());
        assert!(GraftedUniverseTask::new(u, 14, ClassSet::Ood).is_err());
    }

    #[test]
    fn relabel_probes() {
        let e = Example::new(vec![0.0; 4], 1, 0);
        let swapped = Relabel::SwapLabels.apply(&e);
        assert_eq!((swapped.y, swapped.s, swapped.g), (0, 0, 0));
        let spur = Relabel::PredictSpurious.apply(&e);
        assert_eq!((spur.y, spur.s, spur.g), (0, 1, 1));
    }
}
