use std::collections::BTreeMap;

use rayon::prelude::*;

use super::metrics::{compute_metrics, Metric, PredictionTriplet};
use super::report::{aggregate_seeds, ReportRow};
use crate::baselines::{erm_fit, grid_select, groupdro_fit, knn_predict, DroHyper, ErmHyper};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{forward, ModelParams};
use crate::rng;
use crate::seqbuild::{
    build_naive_sequence, build_proposed_sequence, Episode, Scheme, SequenceRecipe, Split, TaskSource,
};

/// Triplets per context length.
pub type LengthTriplets = BTreeMap<usize, Vec<PredictionTriplet>>;

fn eval_recipe(recipe: &SequenceRecipe) -> SequenceRecipe {
    SequenceRecipe { permute: false, hint_prob: 0.0, ..recipe.clone() }
}

fn check_lengths(recipe: &SequenceRecipe, lengths: &[usize]) -> Result<()> {
    if lengths.is_empty() {
        return Err(Error::Config("no evaluation lengths".into()));
    }
    for &len in lengths {
        if len > recipe.n {
            return Err(Error::LengthExtrapolation { requested: len, trained: recipe.n });
        }
        if len == 0 && recipe.scheme == Scheme::Proposed {
            return Err(Error::Config("the proposed scheme has no prediction without context".into()));
        }
    }
    Ok(())
}

fn eval_episode(
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    seed: u64,
    index: usize,
) -> Result<(Episode, rng::StreamRng)> {
    let mut rng = rng::stream(seed, "eval-sequence", index as u64);
    let ep = task.sample_episode(recipe, Split::Eval, &mut rng)?;
    Ok((ep, rng))
}

fn counts_of(context: &[Example]) -> [u32; 4] {
    let mut c = [0u32; 4];
    for e in context {
        c[e.g as usize] += 1;
    }
    c
}

fn collect(lengths: &[usize], per_episode: Vec<Vec<PredictionTriplet>>) -> LengthTriplets {
    let mut out: LengthTriplets = lengths.iter().map(|&l| (l, Vec::with_capacity(per_episode.len()))).collect();
    for ts in per_episode {
        for t in ts {
            out.get_mut(&t.context_len).unwrap().push(t);
        }
    }
    out
}

/// Evaluates a trained model on `n_eval` sequences without permutation or
/// hinting. Proposed sequences are read at the query whose visible context
/// has the requested length; naive sequences are rebuilt per length from
/// the context prefix and the held-out query.
pub fn evaluate_icl(
    params: &ModelParams<f32>,
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    lengths: &[usize],
    n_eval: usize,
    seed: u64,
) -> Result<LengthTriplets> {
    check_lengths(recipe, lengths)?;
    let recipe = eval_recipe(recipe);
    let per_episode: Vec<Vec<PredictionTriplet>> = (0..n_eval)
        .into_par_iter()
        .map(|i| -> Result<Vec<PredictionTriplet>> {
            let (ep, mut rng) = eval_episode(task, &recipe, seed, i)?;
            let mut out = Vec::with_capacity(lengths.len());
            match recipe.scheme {
                Scheme::Proposed => {
                    let seq = build_proposed_sequence(&ep.context, &ep.queries, &recipe, &params.codebook, &mut rng)?;
                    let probs = forward(params, &seq)?;
                    for &len in lengths {
                        let j = seq.context_len_at.iter().position(|&c| c == len).unwrap();
                        out.push(PredictionTriplet {
                            context_counts: seq.context_group_counts[j],
                            query_group: seq.query_groups[j],
                            predicted: u8::from(probs[j] > 0.5),
                            label: seq.targets[j],
                            context_len: len,
                        });
                    }
                }
                Scheme::Naive => {
                    let query = ep.queries.first().ok_or_else(|| Error::Config("episode without a query".into()))?;
                    for &len in lengths {
                        let mut examples = ep.context[..len].to_vec();
                        examples.push(query.clone());
                        let seq = build_naive_sequence(&examples, &recipe, &params.codebook, &mut rng)?;
                        let p = *forward(params, &seq)?.last().unwrap();
                        out.push(PredictionTriplet {
                            context_counts: counts_of(&ep.context[..len]),
                            query_group: query.g,
                            predicted: u8::from(p > 0.5),
                            label: query.y,
                            context_len: len,
                        });
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(collect(lengths, per_episode))
}

/// A conventional learner fitted on each context prefix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineMethod {
    Knn,
    Erm(ErmHyper),
    GroupDro(DroHyper),
}

impl BaselineMethod {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Knn => "1nn",
            BaselineMethod::Erm(_) => "erm",
            BaselineMethod::GroupDro(_) => "groupdro",
        }
    }

    fn predict(&self, context: &[Example], query: &[f32]) -> Result<u8> {
        match self {
            BaselineMethod::Knn => knn_predict(context, query),
            BaselineMethod::Erm(h) => Ok(erm_fit(context, h)?.predict(query)),
            BaselineMethod::GroupDro(h) => Ok(groupdro_fit(context, h)?.predict(query)),
        }
    }
}

/// Fits the method on the first `len` raw context examples of each
/// evaluation episode and predicts its first query. Episodes are the ones
/// [`evaluate_icl`] draws for the same recipe and seed.
pub fn evaluate_baseline(
    method: &BaselineMethod,
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    lengths: &[usize],
    n_eval: usize,
    seed: u64,
) -> Result<LengthTriplets> {
    check_lengths(recipe, lengths)?;
    if lengths.contains(&0) {
        return Err(Error::Config("baselines need at least one context example".into()));
    }
    let recipe = eval_recipe(recipe);
    let per_episode: Vec<Vec<PredictionTriplet>> = (0..n_eval)
        .into_par_iter()
        .map(|i| -> Result<Vec<PredictionTriplet>> {
            let (ep, _) = eval_episode(task, &recipe, seed, i)?;
            let query = ep.queries.first().ok_or_else(|| Error::Config("episode without a query".into()))?;
            lengths
                .iter()
                .map(|&len| {
                    let ctx = &ep.context[..len];
                    Ok(PredictionTriplet {
                        context_counts: counts_of(ctx),
                        query_group: query.g,
                        predicted: method.predict(ctx, &query.x)?,
                        label: query.y,
                        context_len: len,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(collect(lengths, per_episode))
}

/// Evaluates every grid candidate on every seed, picks the best candidate
/// per context length by the mean of `selection` over seeds, and returns
/// the chosen candidate's rows plus the chosen index per length.
pub fn select_baseline(
    candidates: &[BaselineMethod],
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    lengths: &[usize],
    n_eval: usize,
    seeds: &[u64],
    selection: Metric,
) -> Result<(Vec<ReportRow>, BTreeMap<usize, usize>)> {
    let name = candidates.first().ok_or_else(|| Error::Config("empty hyperparameter grid".into()))?.name();
    if seeds.is_empty() {
        return Err(Error::Config("no evaluation seeds".into()));
    }
    let mut results: Vec<Vec<LengthTriplets>> = Vec::with_capacity(candidates.len());
    for method in candidates {
        let per_seed = seeds
            .iter()
            .map(|&s| evaluate_baseline(method, task, recipe, lengths, n_eval, s))
            .collect::<Result<Vec<_>>>()?;
        results.push(per_seed);
    }
    let mut rows = Vec::new();
    let mut chosen = BTreeMap::new();
    for &len in lengths {
        let scores: Vec<Vec<f64>> = results
            .iter()
            .map(|per_seed| {
                per_seed
                    .iter()
                    .map(|sets| {
                        compute_metrics(&sets[&len])
                            .into_iter()
                            .find(|(m, _)| *m == selection)
                            .and_then(|(_, v)| v)
                            .unwrap_or(f64::NEG_INFINITY)
                    })
                    .collect()
            })
            .collect();
        let best = grid_select(&scores)?;
        chosen.insert(len, best);
        let per_seed: Vec<(u64, LengthTriplets)> = seeds
            .iter()
            .zip(&results[best])
            .map(|(&s, sets)| (s, BTreeMap::from([(len, sets[&len].clone())])))
            .collect();
        rows.extend(aggregate_seeds(name, "-", &per_seed)?);
    }
    Ok((rows, chosen))
}
