use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    attention_mask, position_indices, AnnotationCodebook, IclSequence, LabelMode, Scheme, SequenceRecipe, TokenType,
};
use crate::data::Example;
use crate::error::{Error, Result};

/// Annotation token: `(2y-1) v_label`, plus `(2s-1) v_spur` in group mode.
pub fn encode_annotation(e: &Example, codebook: &AnnotationCodebook) -> Vec<f32> {
    let ys = 2.0 * f32::from(e.y) - 1.0;
    match codebook.mode {
        LabelMode::LabelOnly => codebook.v_label.iter().map(|&v| ys * v).collect(),
        LabelMode::Group => {
            let ss = 2.0 * f32::from(e.s) - 1.0;
            codebook.v_label.iter().zip(&codebook.v_spur).map(|(&l, &s)| ys * l + ss * s).collect()
        }
    }
}

fn check_inputs(examples: &[&Example], recipe: &SequenceRecipe, codebook: &AnnotationCodebook) -> Result<usize> {
    if codebook.mode != recipe.label_mode {
        return Err(Error::Config("codebook and recipe disagree on the annotation mode".into()));
    }
    let d = codebook.dim();
    if d < 4 {
        return Err(Error::Config(format!("token dimension must be at least 4, got {d}")));
    }
    for e in examples {
        if e.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: e.dim() });
        }
    }
    Ok(d)
}

fn prefix_counts(context: &[Example]) -> Vec<[u32; 4]> {
    let mut counts = Vec::with_capacity(context.len() + 1);
    let mut acc = [0u32; 4];
    counts.push(acc);
    for e in context {
        acc[e.g as usize] += 1;
        counts.push(acc);
    }
    counts
}

/// Naive layout over `examples = (x_1, ..., x_n, x_{n+1})`: predictions at
/// every example token, the one at `x_i` seeing `i - 1` context examples.
pub fn build_naive_sequence<R: Rng + ?Sized>(
    examples: &[Example],
    recipe: &SequenceRecipe,
    codebook: &AnnotationCodebook,
    rng: &mut R,
) -> Result<IclSequence> {
    if examples.len() < 2 {
        return Err(Error::Config("naive sequence needs at least one context example and a query".into()));
    }
    let d = check_inputs(&examples.iter().collect::<Vec<_>>(), recipe, codebook)?;
    let n = examples.len() - 1;
    let t = 2 * n + 1;
    let mut tokens = Vec::with_capacity(t * d);
    let mut token_types = Vec::with_capacity(t);
    for e in &examples[..n] {
        tokens.extend_from_slice(&e.x);
        token_types.push(TokenType::ContextX);
        tokens.extend(encode_annotation(e, codebook));
        token_types.push(TokenType::Annotation);
    }
    tokens.extend_from_slice(&examples[n].x);
    token_types.push(TokenType::ContextX);

    let counts = prefix_counts(&examples[..n]);
    let seq = IclSequence {
        scheme: Scheme::Naive,
        d,
        tokens,
        token_types,
        positions: position_indices(Scheme::Naive, t)?,
        mask: attention_mask(Scheme::Naive, t)?,
        predict_at: (0..=n).map(|i| 2 * i).collect(),
        targets: examples.iter().map(|e| e.y).collect(),
        query_groups: examples.iter().map(|e| e.g).collect(),
        context_len_at: (0..=n).collect(),
        context_group_counts: counts,
    };
    Ok(permute_with_recipe(seq, recipe, rng))
}

/// Replaces each query, independently with probability `p`, by a uniformly
/// chosen context example at or before its own slot. Returns which queries
/// were replaced.
pub fn apply_hinting<R: Rng + ?Sized>(context: &[Example], queries: &mut [Example], p: f64, rng: &mut R) -> Vec<bool> {
    let mut hinted = vec![false; queries.len()];
    if p <= 0.0 {
        return hinted;
    }
    for (i, q) in queries.iter_mut().enumerate() {
        if rng.random::<f64>() < p {
            let j = rng.random_range(0..=i);
            *q = context[j].clone();
            hinted[i] = true;
        }
    }
    hinted
}

/// Proposed layout `(x_i, a_i, q_i)` for `i = 1..n` with hinting applied
/// first; predictions at every query token.
pub fn build_proposed_sequence<R: Rng + ?Sized>(
    context: &[Example],
    queries: &[Example],
    recipe: &SequenceRecipe,
    codebook: &AnnotationCodebook,
    rng: &mut R,
) -> Result<IclSequence> {
    let n = context.len();
    if n == 0 {
        return Err(Error::Config("proposed sequence needs at least one context example".into()));
    }
    if queries.len() != n {
        return Err(Error::Shape(format!("{} queries for {} context examples", queries.len(), n)));
    }
    let d = check_inputs(&context.iter().chain(queries).collect::<Vec<_>>(), recipe, codebook)?;
    let mut queries = queries.to_vec();
    apply_hinting(context, &mut queries, recipe.hint_prob, rng);

    let t = 3 * n;
    let mut tokens = Vec::with_capacity(t * d);
    let mut token_types = Vec::with_capacity(t);
    for (x, q) in context.iter().zip(&queries) {
        tokens.extend_from_slice(&x.x);
        token_types.push(TokenType::ContextX);
        tokens.extend(encode_annotation(x, codebook));
        token_types.push(TokenType::Annotation);
        tokens.extend_from_slice(&q.x);
        token_types.push(TokenType::Query);
    }
    let counts = prefix_counts(context);
    let seq = IclSequence {
        scheme: Scheme::Proposed,
        d,
        tokens,
        token_types,
        positions: position_indices(Scheme::Proposed, t)?,
        mask: attention_mask(Scheme::Proposed, t)?,
        predict_at: (0..n).map(|i| 3 * i + 2).collect(),
        targets: queries.iter().map(|q| q.y).collect(),
        query_groups: queries.iter().map(|q| q.g).collect(),
        context_len_at: (1..=n).collect(),
        context_group_counts: counts[1..].to_vec(),
    };
    Ok(permute_with_recipe(seq, recipe, rng))
}

/// Dispatches on the recipe's scheme. Naive sequences use `queries[0]` as
/// the final example.
pub fn build_sequence<R: Rng + ?Sized>(
    context: &[Example],
    queries: &[Example],
    recipe: &SequenceRecipe,
    codebook: &AnnotationCodebook,
    rng: &mut R,
) -> Result<IclSequence> {
    match recipe.scheme {
        Scheme::Naive => {
            let last = queries.first().ok_or_else(|| Error::Config("naive sequence needs a final query".into()))?;
            let mut all = context.to_vec();
            all.push(last.clone());
            build_naive_sequence(&all, recipe, codebook, rng)
        }
        Scheme::Proposed => build_proposed_sequence(context, queries, recipe, codebook, rng),
    }
}

fn permute_with_recipe<R: Rng + ?Sized>(seq: IclSequence, recipe: &SequenceRecipe, rng: &mut R) -> IclSequence {
    permute_tokens(seq, recipe.permute, recipe.permute_annotations, rng)
}

/// Optionally permutes embedding dimensions (one permutation shared by every
/// token of the sequence), then writes the one-hot token type into
/// dimensions 0..3.
pub fn apply_permutation_and_types<R: Rng + ?Sized>(seq: IclSequence, permute: bool, rng: &mut R) -> IclSequence {
    permute_tokens(seq, permute, true, rng)
}

/// Like [`apply_permutation_and_types`], leaving annotation tokens in place
/// when `annotations` is false.
pub fn permute_tokens<R: Rng + ?Sized>(
    mut seq: IclSequence,
    permute: bool,
    annotations: bool,
    rng: &mut R,
) -> IclSequence {
    let d = seq.d;
    if permute {
        let mut perm: Vec<usize> = (0..d).collect();
        perm.shuffle(rng);
        let mut scratch = vec![0f32; d];
        for (row, ty) in seq.tokens.chunks_exact_mut(d).zip(&seq.token_types) {
            if !annotations && *ty == TokenType::Annotation {
                continue;
            }
            for (k, &src) in perm.iter().enumerate() {
                scratch[k] = row[src];
            }
            row.copy_from_slice(&scratch);
        }
    }
    for (row, ty) in seq.tokens.chunks_exact_mut(d).zip(&seq.token_types) {
        row[..3].copy_from_slice(&ty.one_hot());
    }
    seq
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn codebook(d: usize, mode: LabelMode) -> AnnotationCodebook {
        AnnotationCodebook::new(d, 2.0, mode, &mut stream(0, "cb", 0)).unwrap()
    }

    fn examples(n: usize, d: usize) -> Vec<Example> {
        (0..n)
            .map(|i| {
                let x = (0..d).map(|k| (i * 100 + k) as f32 + 0.5).collect();
                Example::new(x, (i % 2) as u8, ((i / 2) % 2) as u8)
            })
            .collect()
    }

    #[test]
    fn annotation_signs() {
        let cb = codebook(8, LabelMode::LabelOnly);
        let pos = encode_annotation(&Example::new(vec![0.0; 8], 1, 0), &cb);
        let neg = encode_annotation(&Example::new(vec![0.0; 8], 0, 1), &cb);
        assert_eq!(pos, cb.v_label);
        assert_eq!(neg, cb.v_label.iter().map(|v| -v).collect::<Vec<_>>());

        let cb = codebook(8, LabelMode::Group);
        let a = encode_annotation(&Example::new(vec![0.0; 8], 1, 0), &cb);
        for k in 0..8 {
            assert_eq!(a[k], cb.v_label[k] - cb.v_spur[k]);
        }
        let mut sum = [0f32; 8];
        for (y, s) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            for (acc, v) in sum.iter_mut().zip(encode_annotation(&Example::new(vec![0.0; 8], y, s), &cb)) {
                *acc += v;
            }
        }
        assert!(sum.iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn smallest_naive_sequence() {
        let recipe = SequenceRecipe::new(Scheme::Naive, 1);
        let ex = examples(2, 6);
        let seq =
            build_naive_sequence(&ex, &recipe, &codebook(6, LabelMode::LabelOnly), &mut stream(0, "s", 0)).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.predict_at, vec![0, 2]);
        assert_eq!(seq.context_len_at, vec![0, 1]);
        assert_eq!(seq.targets, vec![0, 1]);
        assert_eq!(seq.context_group_counts, vec![[0; 4], [1, 0, 0, 0]]);
    }

    #[test]
    fn proposed_without_hints_keeps_queries() {
        let recipe = SequenceRecipe::new(Scheme::Proposed, 3);
        let ctx = examples(3, 6);
        let q = examples(6, 6)[3..].to_vec();
        let seq =
            build_proposed_sequence(&ctx, &q, &recipe, &codebook(6, LabelMode::LabelOnly), &mut stream(0, "s", 0))
                .unwrap();
        assert_eq!(seq.predict_at, vec![2, 5, 8]);
        assert_eq!(seq.positions, vec![0, 1, 2, 2, 3, 4, 4, 5, 6]);
        assert_eq!(seq.context_len_at, vec![1, 2, 3]);
        for (i, qe) in q.iter().enumerate() {
            assert_eq!(&seq.token(3 * i + 2)[3..], &qe.x[3..]);
            assert_eq!(seq.targets[i], qe.y);
        }
        let err =
            build_proposed_sequence(&ctx, &q[..2], &recipe, &codebook(6, LabelMode::LabelOnly), &mut stream(0, "s", 0));
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn full_hinting_copies_earlier_context() {
        let mut recipe = SequenceRecipe::new(Scheme::Proposed, 12);
        recipe.hint_prob = 1.0;
        let ctx = examples(12, 6);
        let q = examples(24, 6)[12..].to_vec();
        let seq =
            build_proposed_sequence(&ctx, &q, &recipe, &codebook(6, LabelMode::LabelOnly), &mut stream(3, "s", 0))
                .unwrap();
        for i in 0..12 {
            let qt = seq.token(3 * i + 2);
            let found = (0..=i).any(|j| seq.token(3 * j)[3..] == qt[3..]);
            assert!(found, "query {i} is not a copy of an earlier context example");
        }
    }

    #[test]
    fn hint_frequency() {
        let ctx = examples(10, 4);
        let mut rng = stream(9, "h", 0);
        let mut replaced = 0usize;
        let mut total = 0usize;
        while total < 100_000 {
            let mut q = ctx.clone();
            replaced += apply_hinting(&ctx, &mut q, 0.25, &mut rng).iter().filter(|&&h| h).count();
            total += q.len();
        }
        let freq = replaced as f64 / total as f64;
        assert!((freq - 0.25).abs() < 0.005, "{freq}");
    }

    #[test]
    fn type_codes_and_permutation() {
        let mut recipe = SequenceRecipe::new(Scheme::Naive, 4);
        let ex = examples(5, 10);
        let cb = codebook(10, LabelMode::LabelOnly);
        let plain = build_naive_sequence(&ex, &recipe, &cb, &mut stream(0, "s", 0)).unwrap();
        for i in 0..plain.len() {
            assert_eq!(plain.token(i)[..3], plain.token_types[i].one_hot());
        }
        // identity permutation: untouched beyond dims 0..3
        assert_eq!(&plain.token(0)[3..], &ex[0].x[3..]);

        recipe.permute = true;
        let perm = build_naive_sequence(&ex, &recipe, &cb, &mut stream(0, "s", 0)).unwrap();
        for i in 0..perm.len() {
            assert_eq!(perm.token(i)[..3], perm.token_types[i].one_hot());
        }
        let mut original = ex[1].x.clone();
        let mut permuted = perm.token(2)[3..].to_vec();
        original.sort_by(f32::total_cmp);
        permuted.sort_by(f32::total_cmp);
        assert!(permuted.iter().all(|v| original.binary_search_by(|o| o.total_cmp(v)).is_ok()));
    }
}
