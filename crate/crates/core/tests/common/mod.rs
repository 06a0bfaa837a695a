//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use icl_forge::data::Example;
use icl_forge::eval::PredictionTriplet;
use icl_forge::graft::{apply_graft, sample_graft_spec, GraftSpec};
use icl_forge::model::{forward_cached, loss, loss_and_grad, ModelConfig, ModelParams};
use icl_forge::rng::stream;
use icl_forge::seqbuild::{build_sequence, AnnotationCodebook, IclSequence, LabelMode, Scheme, SequenceRecipe};
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

// ---- layout ----

/// 1-indexed rule for the proposed layout: token i sees j unless j lies
/// in the future, or j is an earlier query (every third token).
pub fn proposed_allows(i: usize, j: usize) -> bool {
    !(i < j || (i > j && j.is_multiple_of(3)))
}

pub fn proposed_position(i: usize) -> usize {
    2 * ((i - 1) / 3) + (i - 1) % 3
}

// ---- metrics ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reference {
    pub accuracy: Option<f64>,
    pub groups: [Option<f64>; 4],
    pub worst: Option<f64>,
    pub majority: Option<f64>,
    pub minority: Option<f64>,
}

fn frac(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Straight recount. A query is in the minority (majority) when no group
/// has strictly fewer (more) context examples than its own.
pub fn reference_metrics(ts: &[PredictionTriplet]) -> Reference {
    let mut hits = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut min_hit, mut min_tot, mut maj_hit, mut maj_tot) = (0, 0, 0, 0);
    for t in ts {
        let g = t.query_group as usize;
        let ok = usize::from(t.predicted == t.label);
        totals[g] += 1;
        hits[g] += ok;
        let own = t.context_counts[g];
        let lo = *t.context_counts.iter().min().unwrap();
        let hi = *t.context_counts.iter().max().unwrap();
        if own == lo {
            min_tot += 1;
            min_hit += ok;
        }
        if own == hi {
            maj_tot += 1;
            maj_hit += ok;
        }
    }
    let groups: [Option<f64>; 4] = std::array::from_fn(|g| frac(hits[g], totals[g]));
    let worst =
        if groups.iter().all(Option::is_some) { groups.iter().map(|g| g.unwrap()).reduce(f64::min) } else { None };
    Reference {
        accuracy: frac(hits.iter().sum(), totals.iter().sum()),
        groups,
        worst,
        majority: frac(maj_hit, maj_tot),
        minority: frac(min_hit, min_tot),
    }
}

pub fn random_triplets<R: Rng>(rng: &mut R) -> Vec<PredictionTriplet> {
    let n = rng.random_range(0..40);
    let spread = rng.random_range(1..6);
    (0..n)
        .map(|_| PredictionTriplet {
            context_counts: std::array::from_fn(|_| rng.random_range(0..spread)),
            query_group: rng.random_range(0..4),
            predicted: rng.random_range(0..2),
            label: rng.random_range(0..2),
            context_len: 0,
        })
        .collect()
}

/// Nearest neighbour by sorting all candidates on (distance, index).
pub fn reference_knn(context: &[Example], query: &[f32]) -> u8 {
    let mut order: Vec<(f64, usize)> = context
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let d: f64 = e.x.iter().zip(query).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
            (d, i)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    context[order[0].1].y
}

/// Small integer coordinates so exact distance ties occur often.
pub fn random_knn_case<R: Rng>(rng: &mut R) -> (Vec<Example>, Vec<f32>) {
    let d = rng.random_range(1..5);
    let n = rng.random_range(1..12);
    let point = |rng: &mut R| (0..d).map(|_| rng.random_range(-2..=2) as f32).collect::<Vec<f32>>();
    let context = (0..n).map(|_| Example::new(point(rng), rng.random_range(0..2), 0)).collect();
    (context, point(rng))
}

// ---- grafting ----

/// Counts of grafting-rule violations over `cases` random instances.
pub fn graft_violations(cases: usize, seed: u64) -> usize {
    let mut rng = stream(seed, "graft-oracle", 0);
    let mut bad = 0;
    for _ in 0..cases {
        let d = rng.random_range(3..10);
        let (na, nb) = (rng.random_range(2..25), rng.random_range(2..25));
        let draw = |n: usize, rng: &mut icl_forge::rng::StreamRng| -> Vec<Vec<f32>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0f32)).collect()).collect()
        };
        let a = draw(na, &mut rng);
        let b = draw(nb, &mut rng);
        let ratio = [0.0, 0.1, 0.3, 0.5][rng.random_range(0..4)];
        let spec = sample_graft_spec(d, d, (ratio, ratio), &mut rng).unwrap();
        let out = apply_graft(&a, &b, &spec, ratio, &mut rng).unwrap();
        let mut minority = [0usize; 2];
        for (i, e) in out.examples.iter().enumerate() {
            let (y, orig) = if i < na { (0u8, &a[i]) } else { (1u8, &b[i - na]) };
            if e.y != y {
                bad += 1;
            }
            match out.donors[i] {
                None => bad += usize::from(e.x != *orig || e.s != y),
                Some(donor) => {
                    minority[y as usize] += 1;
                    let src = if donor.class == 0 { &a[donor.index] } else { &b[donor.index] };
                    let slot = if donor.class == 0 { donor.index } else { na + donor.index };
                    bad += usize::from(donor.class == y || e.s == y || out.donors[slot].is_some());
                    for c in 0..d {
                        let want = if spec.dims.contains(&c) { src[c] } else { orig[c] };
                        bad += usize::from(e.x[c] != want);
                    }
                }
            }
        }
        let floor = |n: usize| (0..=n).take_while(|m| (*m as f64) <= ratio * n as f64 + 1e-9).last().unwrap();
        bad += usize::from(minority != [floor(na), floor(nb)]);
    }
    bad
}

/// Chi-square goodness-of-fit p-value of the graft size against
/// Uniform{0..=k_max}.
pub fn graft_k_uniformity_p(draws: usize, k_max: usize, seed: u64) -> f64 {
    let mut rng = stream(seed, "graft-k-chi2", 0);
    let mut counts = vec![0usize; k_max + 1];
    for _ in 0..draws {
        let spec: GraftSpec = sample_graft_spec(32, k_max, (0.1, 0.5), &mut rng).unwrap();
        counts[spec.k()] += 1;
    }
    let expected = draws as f64 / (k_max + 1) as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new(k_max as f64).unwrap().cdf(stat)
}

// ---- model ----

pub fn random_examples<R: Rng>(count: usize, d: usize, rng: &mut R) -> Vec<Example> {
    (0..count)
        .map(|_| {
            let x = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();
            Example::new(x, rng.random_range(0..2), rng.random_range(0..2))
        })
        .collect()
}

/// A random sequence with `n` context examples and a model whose
/// every parameter is perturbed off its initial value.
pub fn random_instance<S: icl_forge::linalg::Scalar>(
    n: usize,
    d: usize,
    d_model: usize,
    seed: u64,
    input_layernorm: bool,
    scheme: Scheme,
) -> (ModelParams<S>, IclSequence) {
    let mut rng = stream(seed, "model-instance", 0);
    let ex = random_examples(2 * n, d, &mut rng);
    let cb = AnnotationCodebook::new(d, 1.3, LabelMode::Group, &mut rng).unwrap();
    let mut recipe = SequenceRecipe::new(scheme, n);
    recipe.label_mode = LabelMode::Group;
    recipe.permute = true;
    let seq = build_sequence(&ex[..n], &ex[n..], &recipe, &cb, &mut rng).unwrap();
    let cfg = ModelConfig {
        d_in: d,
        d_model,
        n_layers: 1,
        n_heads: 2,
        d_ff: 2 * d_model,
        input_layernorm,
        max_positions: recipe.max_position() + 1,
    };
    let mut params = ModelParams::<S>::init(cfg, cb, seed).unwrap();
    for v in params.theta.iter_mut() {
        *v = *v + S::of(rng.random_range(-0.1..0.1));
    }
    (params, seq)
}

/// Largest `|analytic - fd| / max(|analytic|, |fd|, floor)` over all
/// parameters, with central differences at step `h`.
pub fn gradient_error(params: &ModelParams<f64>, seq: &IclSequence, h: f64, floor: f64) -> (f64, String) {
    let mut grad = vec![0.0; params.n_params()];
    loss_and_grad(params, seq, 1.0, &mut grad).unwrap();
    let mut p = params.clone();
    let mut worst = (0.0, String::new());
    for t in &params.layout.tensors {
        for i in t.range() {
            let orig = p.theta[i];
            p.theta[i] = orig + h;
            let up = loss(&p, seq).unwrap();
            p.theta[i] = orig - h;
            let down = loss(&p, seq).unwrap();
            p.theta[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(floor);
            if rel > worst.0 {
                worst = (rel, format!("{}[{}]: analytic {:e}, fd {:e}", t.name, i - t.offset, grad[i], fd));
            }
        }
    }
    worst
}

/// Largest relative change of any other prediction's logit when one
/// query token is overwritten with noise; also returns the smallest change
/// of the perturbed query's own logit.
pub fn query_leakage(params: &ModelParams<f32>, seq: &IclSequence, seed: u64) -> (f64, f64) {
    let base: Vec<f32> = forward_cached(params, seq).unwrap().logits().to_vec();
    let mut rng = stream(seed, "query-leak", 0);
    let mut leak = 0.0f64;
    let mut own = f64::INFINITY;
    for (k, &tok) in seq.predict_at.iter().enumerate() {
        let mut s = seq.clone();
        for v in s.token_mut(tok).iter_mut().skip(3) {
            *v += rng.random_range(-2.0..2.0f32);
        }
        let out = forward_cached(params, &s).unwrap().logits().to_vec();
        for (m, (&a, &b)) in base.iter().zip(&out).enumerate() {
            let rel = f64::from((a - b).abs()) / f64::from(a.abs()).max(1e-6);
            if m == k {
                own = own.min(rel);
            } else {
                leak = leak.max(rel);
            }
        }
    }
    (leak, own)
}
