use icl_forge::eval::{compute_metrics, Metric, PredictionTriplet};
use icl_forge::graft::{apply_graft, GraftSpec};
use icl_forge::rng::stream;
use icl_forge::seqbuild::{attention_mask, position_indices, Scheme};
use rand::Rng;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Tally {
    pub passed: usize,
    pub failed: usize,
}

impl Tally {
    fn check(&mut self, ok: bool) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }
}

/// Mask and position entries against the closed-form definitions, for all
/// lengths up to 48.
pub fn check_layout() -> (Tally, Tally) {
    let (mut mask, mut pos) = (Tally::default(), Tally::default());
    for t in 1..=48usize {
        let m = attention_mask(Scheme::Naive, t).unwrap();
        let p = position_indices(Scheme::Naive, t).unwrap();
        for i in 0..t {
            for j in 0..t {
                mask.check(m.allows(i, j) == (j <= i));
            }
            pos.check(p[i] as usize == i);
        }
        if t % 3 != 0 {
            mask.check(attention_mask(Scheme::Proposed, t).is_err());
            pos.check(position_indices(Scheme::Proposed, t).is_err());
            continue;
        }
        let m = attention_mask(Scheme::Proposed, t).unwrap();
        let p = position_indices(Scheme::Proposed, t).unwrap();
        for i in 1..=t {
            for j in 1..=t {
                let expected = if i < j { false } else { !(i > j && j % 3 == 0) };
                mask.check(m.allows(i - 1, j - 1) == expected);
            }
            pos.check(p[i - 1] as usize == 2 * ((i - 1) / 3) + (i - 1) % 3);
        }
    }
    (mask, pos)
}

/// Randomized grafting cases: donor dims copied, other dims untouched,
/// exact minority counts, flipped spurious bits.
pub fn check_graft(cases: usize) -> Tally {
    let mut tally = Tally::default();
    let mut rng = stream(7, "selfcheck-graft", 0);
    for _ in 0..cases {
        let d = rng.random_range(4..12);
        let (na, nb) = (rng.random_range(2..20), rng.random_range(2..20));
        let mut draw = |n: usize| -> Vec<Vec<f32>> {
            (0..n).map(|_| (0..d).map(|_| rng.random_range(-5.0..5.0f32)).collect()).collect()
        };
        let (a, b) = (draw(na), draw(nb));
        let k = rng.random_range(0..=d);
        let dims = rand::seq::index::sample(&mut rng, d, k).into_vec();
        let ratio = [0.0, 0.1, 0.25, 0.5][rng.random_range(0..4)];
        let spec = GraftSpec::new(dims, ratio, ratio).unwrap();
        let out = apply_graft(&a, &b, &spec, ratio, &mut rng).unwrap();
        let originals: Vec<&Vec<f32>> = a.iter().chain(&b).collect();
        let mut minority = [0usize; 2];
        for (i, (e, donor)) in out.examples.iter().zip(&out.donors).enumerate() {
            let y = usize::from(i >= na);
            tally.check(usize::from(e.y) == y);
            match donor {
                None => {
                    tally.check(e.x == *originals[i] && usize::from(e.s) == y);
                }
                Some(dn) => {
                    minority[y] += 1;
                    let src = if dn.class == 0 { &a[dn.index] } else { &b[dn.index] };
                    let donor_slot = if dn.class == 0 { dn.index } else { na + dn.index };
                    tally.check(out.donors[donor_slot].is_none());
                    let ok =
                        (0..d).all(
                            |c| {
                                if spec.dims.contains(&c) {
                                    e.x[c] == src[c]
                                } else {
                                    e.x[c] == originals[i][c]
                                }
                            },
                        );
                    tally.check(ok && usize::from(e.s) == 1 - y && usize::from(dn.class) == 1 - y);
                }
            }
        }
        let expect = |n: usize| ((ratio * n as f64) + 1e-9).floor() as usize;
        tally.check(minority == [expect(na), expect(nb)]);
    }
    tally
}

fn brute_metrics(ts: &[PredictionTriplet]) -> Vec<(Metric, Option<f64>)> {
    let frac = |sel: Vec<&PredictionTriplet>| {
        if sel.is_empty() {
            None
        } else {
            Some(sel.iter().filter(|t| t.predicted == t.label).count() as f64 / sel.len() as f64)
        }
    };
    let group = |g: u8| frac(ts.iter().filter(|t| t.query_group == g).collect());
    let groups: Vec<Option<f64>> = (0..4).map(group).collect();
    // undefined as soon as one group has no predictions
    let worst = groups.iter().try_fold(f64::INFINITY, |w, g| g.map(|v| w.min(v)));
    let minority = frac(
        ts.iter().filter(|t| (0..4).all(|g| t.context_counts[t.query_group as usize] <= t.context_counts[g])).collect(),
    );
    let majority = frac(
        ts.iter().filter(|t| (0..4).all(|g| t.context_counts[t.query_group as usize] >= t.context_counts[g])).collect(),
    );
    vec![
        (Metric::Accuracy, frac(ts.iter().collect())),
        (Metric::WorstGroup, worst),
        (Metric::Group(0), groups[0]),
        (Metric::Group(1), groups[1]),
        (Metric::Group(2), groups[2]),
        (Metric::Group(3), groups[3]),
        (Metric::MajorityGroup, majority),
        (Metric::MinorityGroup, minority),
    ]
}

/// Randomized triplet sets against a direct recount.
pub fn check_metrics(cases: usize) -> Tally {
    let mut tally = Tally::default();
    let mut rng = stream(11, "selfcheck-metrics", 0);
    for _ in 0..cases {
        let n = rng.random_range(0..30);
        let ts: Vec<PredictionTriplet> = (0..n)
            .map(|_| PredictionTriplet {
                context_counts: std::array::from_fn(|_| rng.random_range(0..4)),
                query_group: rng.random_range(0..4),
                predicted: rng.random_range(0..2),
                label: rng.random_range(0..2),
                context_len: 0,
            })
            .collect();
        tally.check(compute_metrics(&ts) == brute_metrics(&ts));
    }
    tally
}

/// Runs every check; returns `(name, tally)` rows.
pub fn run() -> Vec<(&'static str, Tally)> {
    let (mask, pos) = check_layout();
    vec![("mask", mask), ("position", pos), ("graft", check_graft(500)), ("metric", check_metrics(2000))]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for (name, t) in super::run() {
            assert_eq!(t.failed, 0, "{name}");
            assert!(t.passed > 0, "{name}");
        }
    }
}
