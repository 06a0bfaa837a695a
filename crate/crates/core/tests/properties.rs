mod common;

use icl_forge::baselines::{erm_fit_trace, groupdro_fit_trace, knn_predict, DroHyper, ErmHyper};
use icl_forge::data::Example;
use icl_forge::eval::{compute_metrics, Metric};
use icl_forge::experiments::{train_or_resume, ExperimentPlan, SuiteKind, Variant};
use icl_forge::rng::stream;
use icl_forge::seqbuild::{attention_mask, position_indices, Scheme};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn layout_matches_closed_forms() {
    for t in (3..=48).step_by(3) {
        let m = attention_mask(Scheme::Proposed, t).unwrap();
        let p = position_indices(Scheme::Proposed, t).unwrap();
        for i in 1..=t {
            assert_eq!(p[i - 1] as usize, common::proposed_position(i));
            for j in 1..=t {
                assert_eq!(m.allows(i - 1, j - 1), common::proposed_allows(i, j), "t={t} i={i} j={j}");
            }
        }
    }
}

#[test]
fn later_predictions_ignore_earlier_queries() {
    for seed in 0..20 {
        let (params, seq) = common::random_instance::<f32>(16, 12, 16, seed, false, Scheme::Proposed);
        let (leak, own) = common::query_leakage(&params, &seq, seed);
        assert_eq!(leak, 0.0, "seed {seed}");
        assert!(own > 0.0, "perturbation must reach its own prediction");
    }
}

#[test]
fn metrics_match_recount() {
    let mut rng = stream(5, "metric-prop", 0);
    for _ in 0..2000 {
        let ts = common::random_triplets(&mut rng);
        let r = common::reference_metrics(&ts);
        for (metric, value) in compute_metrics(&ts) {
            let want = match metric {
                Metric::Accuracy => r.accuracy,
                Metric::WorstGroup => r.worst,
                Metric::Group(g) => r.groups[g as usize],
                Metric::MajorityGroup => r.majority,
                Metric::MinorityGroup => r.minority,
            };
            assert_eq!(value, want, "{metric:?} on {ts:?}");
        }
    }
}

#[test]
fn knn_matches_sorted_scan() {
    let mut rng = stream(6, "knn-prop", 0);
    for _ in 0..2000 {
        let (ctx, q) = common::random_knn_case(&mut rng);
        assert_eq!(knn_predict(&ctx, &q).unwrap(), common::reference_knn(&ctx, &q));
    }
}

#[test]
fn grafting_rules_hold() {
    assert_eq!(common::graft_violations(2000, 1), 0);
}

#[test]
fn graft_size_is_uniform() {
    let p = common::graft_k_uniformity_p(20_000, 8, 2);
    assert!(p > 0.01, "chi-square p = {p}");
}

fn balanced_context(per_group: usize, d: usize, seed: u64) -> Vec<Example> {
    let mut rng = stream(seed, "balanced", 0);
    let mut out = Vec::new();
    for g in 0..4u8 {
        for _ in 0..per_group {
            let x = (0..d).map(|_| rng.random_range(-1.0..1.0f32)).collect();
            out.push(Example::new(x, g / 2, g % 2));
        }
    }
    out
}

#[test]
fn dro_without_reweighting_is_erm() {
    for (per_group, l2) in [(1, 0.0), (3, 0.0), (5, 1.0), (8, 0.5)] {
        let ctx = balanced_context(per_group, 6, per_group as u64);
        let erm = erm_fit_trace(&ctx, &ErmHyper { lr: 0.05, epochs: 60, l2 }).unwrap();
        let dro = groupdro_fit_trace(&ctx, &DroHyper { lr: 0.05, epochs: 60, eta: 0.0, l2 }).unwrap();
        assert_eq!(erm, dro.models);
    }
}

#[test]
fn dro_differs_from_erm_when_reweighting() {
    let mut ctx = balanced_context(4, 6, 9);
    ctx.truncate(13);
    let erm = erm_fit_trace(&ctx, &ErmHyper { lr: 0.05, epochs: 30, l2: 0.0 }).unwrap();
    let dro = groupdro_fit_trace(&ctx, &DroHyper { lr: 0.05, epochs: 30, eta: 1.0, l2: 0.0 }).unwrap();
    assert_ne!(erm.last(), dro.models.last());
}

fn tiny_plan() -> ExperimentPlan {
    let mut plan = ExperimentPlan::defaults(SuiteKind::SingleTask);
    plan.universe.d = 8;
    plan.universe.n_classes = 8;
    plan.universe.pool_size = 40;
    plan.single.graft_k = 2;
    plan.n = 8;
    plan.model.d_in = 8;
    plan.model.d_model = 16;
    plan.model.n_layers = 1;
    plan.model.d_ff = 32;
    plan.train.n_sequences = 128;
    plan.train.batch_size = 8;
    plan.train.warmup_steps = 4;
    plan.lengths = vec![2, 8];
    plan.variants = vec![Variant::parse("Proposed + P + I").unwrap()];
    plan.validate().unwrap();
    plan
}

#[test]
fn training_is_independent_of_thread_count() {
    let plan = tiny_plan();
    let universe = icl_forge::experiments::build_universe(&plan).unwrap();
    let task = icl_forge::experiments::single_task(&plan, &universe).unwrap();
    let recipe = plan.variants[0].recipe(plan.n, plan.hint_prob, plan.permute_annotations);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut outputs = Vec::new();
    for (dir, threads) in dirs.iter().zip([1, 4]) {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let (params, log) =
            pool.install(|| train_or_resume(&task, &recipe, &plan, 1e-3, 0, dir.path(), &mut |_| {})).unwrap();
        outputs.push((icl_forge::model::write_checkpoint(&params), log.to_csv()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

proptest! {
    #[test]
    fn naive_mask_is_lower_triangular(t in 1usize..64) {
        let m = attention_mask(Scheme::Naive, t).unwrap();
        let p = position_indices(Scheme::Naive, t).unwrap();
        for i in 0..t {
            prop_assert_eq!(p[i] as usize, i);
            for j in 0..t {
                prop_assert_eq!(m.allows(i, j), j <= i);
            }
        }
    }

    #[test]
    fn proposed_rejects_partial_triples(t in 1usize..200) {
        prop_assume!(t % 3 != 0);
        prop_assert!(attention_mask(Scheme::Proposed, t).is_err());
    }

    #[test]
    fn knn_returns_label_of_exact_match(
        xs in proptest::collection::vec(proptest::collection::vec(-10i8..10, 3), 1..20),
        pick in 0usize..20,
    ) {
        let ctx: Vec<Example> = xs.iter().enumerate()
            .map(|(i, x)| Example::new(x.iter().map(|&v| f32::from(v)).collect(), (i % 2) as u8, 0))
            .collect();
        let q = ctx[pick % ctx.len()].x.clone();
        let first = ctx.iter().position(|e| e.x == q).unwrap();
        prop_assert_eq!(knn_predict(&ctx, &q).unwrap(), ctx[first].y);
    }
}
