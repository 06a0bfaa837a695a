use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::SequenceRecipe;
use crate::data::Example;
use crate::error::{Error, Result};
use crate::graft::minority_count;

/// Position of an example inside a per-group pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExampleRef {
    pub group: u8,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct SampledContext {
    pub examples: Vec<Example>,
    pub refs: Vec<ExampleRef>,
}

/// Converts a probability vector into integer counts summing to `n`
/// (largest remainder; ties go to the lower group index).
pub fn largest_remainder_counts(dist: &[f64; 4], n: usize) -> [usize; 4] {
    let quotas: Vec<f64> = dist.iter().map(|p| p * n as f64).collect();
    let mut counts = [0usize; 4];
    for g in 0..4 {
        counts[g] = (quotas[g] + 1e-9).floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - counts[a] as f64;
        let rb = quotas[b] - counts[b] as f64;
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &g in order.iter().take(n.saturating_sub(assigned)) {
        counts[g] += 1;
    }
    counts
}

/// Per-group context counts for a recipe: the explicit distribution when
/// set, otherwise `n/2` per class with `floor(0.1 * n/2)` minority examples.
pub fn context_group_counts(recipe: &SequenceRecipe) -> Result<[usize; 4]> {
    let n = recipe.n;
    match &recipe.context_group_dist {
        Some(dist) => Ok(largest_remainder_counts(dist, n)),
        None => {
            if !n.is_multiple_of(2) {
                return Err(Error::Config(format!("class-balanced context needs an even n, got {n}")));
            }
            let half = n / 2;
            let m = minority_count(half, 0.1);
            Ok([half - m, m, m, half - m])
        }
    }
}

/// Draws a context without replacement with exact per-group counts, in a
/// uniformly shuffled order.
pub fn sample_context<R: Rng + ?Sized>(
    pools: &[Vec<Example>; 4],
    recipe: &SequenceRecipe,
    rng: &mut R,
) -> Result<SampledContext> {
    let counts = context_group_counts(recipe)?;
    let mut refs = Vec::with_capacity(recipe.n);
    for g in 0..4 {
        if counts[g] > pools[g].len() {
            return Err(Error::InsufficientPool(format!(
                "group {g} needs {} examples, pool has {}",
                counts[g],
                pools[g].len()
            )));
        }
        refs.extend(
            index::sample(rng, pools[g].len(), counts[g]).into_iter().map(|index| ExampleRef { group: g as u8, index }),
        );
    }
    refs.shuffle(rng);
    let examples = refs.iter().map(|r| pools[r.group as usize][r.index].clone()).collect();
    Ok(SampledContext { examples, refs })
}

/// Draws `n_queries` i.i.d. examples: a group from `dist`, then a uniform
/// member of that group's pool that is not listed in `exclude`.
pub fn sample_queries<R: Rng + ?Sized>(
    pools: &[Vec<Example>; 4],
    dist: &[f64; 4],
    n_queries: usize,
    exclude: &[ExampleRef],
    rng: &mut R,
) -> Result<Vec<Example>> {
    let excluded: HashSet<ExampleRef> = exclude.iter().copied().collect();
    let mut available: [Vec<usize>; 4] = Default::default();
    for g in 0..4 {
        if dist[g] <= 0.0 {
            continue;
        }
        available[g] =
            (0..pools[g].len()).filter(|&index| !excluded.contains(&ExampleRef { group: g as u8, index })).collect();
        if available[g].is_empty() {
            return Err(Error::InsufficientPool(format!("group {g} has no examples left for queries")));
        }
    }
    let mut queries = Vec::with_capacity(n_queries);
    for _ in 0..n_queries {
        let g = draw_group(dist, rng);
        let pick = available[g][rng.random_range(0..available[g].len())];
        queries.push(pools[g][pick].clone());
    }
    Ok(queries)
}

pub(crate) fn draw_group<R: Rng + ?Sized>(dist: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (g, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = g;
        acc += p;
        if u < acc {
            return g;
        }
    }
    last
}
