use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One prediction with the group histogram of the context it saw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionTriplet {
    pub context_counts: [u32; 4],
    pub query_group: u8,
    pub predicted: u8,
    pub label: u8,
    pub context_len: usize,
}

impl PredictionTriplet {
    pub fn correct(&self) -> bool {
        self.predicted == self.label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Accuracy,
    WorstGroup,
    Group(u8),
    MajorityGroup,
    MinorityGroup,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::Accuracy,
        Metric::WorstGroup,
        Metric::Group(0),
        Metric::Group(1),
        Metric::Group(2),
        Metric::Group(3),
        Metric::MajorityGroup,
        Metric::MinorityGroup,
    ];

    pub fn name(self) -> String {
        match self {
            Metric::Accuracy => "accuracy".into(),
            Metric::WorstGroup => "worst_group".into(),
            Metric::Group(g) => format!("group{g}"),
            Metric::MajorityGroup => "majority_group".into(),
            Metric::MinorityGroup => "minority_group".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| Error::Config(format!("unknown metric {s:?}")))
    }
}

fn ratio(correct: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| correct as f64 / total as f64)
}

pub fn accuracy(triplets: &[PredictionTriplet]) -> Option<f64> {
    ratio(triplets.iter().filter(|t| t.correct()).count(), triplets.len())
}

/// Accuracy restricted to each query group; `None` for empty groups.
pub fn group_accuracies(triplets: &[PredictionTriplet]) -> [Option<f64>; 4] {
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    for t in triplets {
        total[t.query_group as usize] += 1;
        correct[t.query_group as usize] += usize::from(t.correct());
    }
    std::array::from_fn(|g| ratio(correct[g], total[g]))
}

/// Lowest per-group accuracy; every group must be present.
pub fn worst_group_accuracy(triplets: &[PredictionTriplet]) -> Result<f64> {
    let mut worst = f64::INFINITY;
    for (g, acc) in group_accuracies(triplets).into_iter().enumerate() {
        let acc = acc.ok_or_else(|| Error::UndefinedMetric(format!("no predictions for group {g}")))?;
        worst = worst.min(acc);
    }
    Ok(worst)
}

/// The query's group is among the least represented groups of its context.
pub fn is_minority_prediction(t: &PredictionTriplet) -> bool {
    let min = *t.context_counts.iter().min().unwrap();
    t.context_counts[t.query_group as usize] == min
}

/// The query's group is among the most represented groups of its context.
pub fn is_majority_prediction(t: &PredictionTriplet) -> bool {
    let max = *t.context_counts.iter().max().unwrap();
    t.context_counts[t.query_group as usize] == max
}

/// `(minority, majority)` accuracies; `None` when the subset is empty.
pub fn minority_majority_accuracy(triplets: &[PredictionTriplet]) -> (Option<f64>, Option<f64>) {
    let subset = |f: fn(&PredictionTriplet) -> bool| {
        let sel: Vec<&PredictionTriplet> = triplets.iter().filter(|t| f(t)).collect();
        ratio(sel.iter().filter(|t| t.correct()).count(), sel.len())
    };
    (subset(is_minority_prediction), subset(is_majority_prediction))
}

/// Every metric of a triplet set, undefined values as `None`.
pub fn compute_metrics(triplets: &[PredictionTriplet]) -> Vec<(Metric, Option<f64>)> {
    let groups = group_accuracies(triplets);
    let (minority, majority) = minority_majority_accuracy(triplets);
    Metric::ALL
        .into_iter()
        .map(|m| {
            let v = match m {
                Metric::Accuracy => accuracy(triplets),
                Metric::WorstGroup => worst_group_accuracy(triplets).ok(),
                Metric::Group(g) => groups[g as usize],
                Metric::MajorityGroup => majority,
                Metric::MinorityGroup => minority,
            };
            (m, v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(counts: [u32; 4], g: u8, pred: u8) -> PredictionTriplet {
        PredictionTriplet { context_counts: counts, query_group: g, predicted: pred, label: g / 2, context_len: 0 }
    }

    #[test]
    fn worst_group_is_the_minimum() {
        let mut ts = Vec::new();
        for (g, correct) in [(0u8, 9), (1, 7), (2, 19), (3, 8)] {
            let n = if g == 2 { 20 } else { 10 };
            for i in 0..n {
                let right = g / 2;
                ts.push(t([1; 4], g, if i < correct { right } else { 1 - right }));
            }
        }
        assert_eq!(worst_group_accuracy(&ts).unwrap(), 0.7);
        assert_eq!(group_accuracies(&ts), [Some(0.9), Some(0.7), Some(0.95), Some(0.8)]);
        assert!(worst_group_accuracy(&ts[..10]).is_err());
    }

    #[test]
    fn minority_majority_membership() {
        assert!(is_minority_prediction(&t([45, 5, 5, 45], 1, 0)));
        assert!(!is_majority_prediction(&t([45, 5, 5, 45], 1, 0)));
        let tie = t([3, 3, 3, 3], 2, 1);
        assert!(is_minority_prediction(&tie) && is_majority_prediction(&tie));
        let (min, maj) = minority_majority_accuracy(&[t([45, 5, 5, 45], 0, 0)]);
        assert_eq!((min, maj), (None, Some(1.0)));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in Metric::ALL {
            assert_eq!(Metric::parse(&m.name()).unwrap(), m);
        }
        assert!(Metric::parse("nope").is_err());
    }
}
