//! Retrieval metrics over ranked candidate lists.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

/// 1-based rank of the best-placed positive, or `None` without positives.
pub fn first_positive_rank(ranking: &[usize], labels: &[u8]) -> Option<usize> {
    ranking.iter().position(|&c| labels[c] == 1).map(|p| p + 1)
}

/// 1 if a positive is in the top `k`, else 0; `None` without positives.
pub fn recall_at_k(ranking: &[usize], labels: &[u8], k: usize) -> Option<f64> {
    first_positive_rank(ranking, labels).map(|r| if r <= k { 1.0 } else { 0.0 })
}

/// Reciprocal rank of the best-placed positive; `None` without positives.
pub fn mrr(ranking: &[usize], labels: &[u8]) -> Option<f64> {
    first_positive_rank(ranking, labels).map(|r| 1.0 / r as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(rename = "recall@1")]
    pub recall_at_1: f64,
    #[serde(rename = "recall@10")]
    pub recall_at_10: f64,
    #[serde(rename = "recall@50")]
    pub recall_at_50: f64,
    pub mrr: f64,
    /// Dialogues included in the averages.
    pub evaluated: usize,
    /// Dialogues without any positive, left out of the averages.
    pub skipped: usize,
    /// Per dialogue, the 1-based rank of the best positive.
    pub ranks: Vec<Option<usize>>,
}

impl EvalReport {
    /// Averages metrics over `(ranking, labels)` pairs.
    pub fn from_rankings<'a>(items: impl IntoIterator<Item = (&'a [usize], &'a [u8])>) -> Self {
        let ranks: Vec<Option<usize>> = items
            .into_iter()
            .map(|(ranking, labels)| first_positive_rank(ranking, labels))
            .collect();
        let found: Vec<usize> = ranks.iter().flatten().copied().collect();
        let skipped = ranks.len() - found.len();
        if skipped > 0 {
            warn!("{skipped} dialogue(s) without a positive candidate excluded from metrics");
        }
        let n = found.len();
        let avg = |f: &dyn Fn(usize) -> f64| {
            if n == 0 {
                0.0
            } else {
                found.iter().map(|&r| f(r)).sum::<f64>() / n as f64
            }
        };
        let recall = |k: usize| avg(&|r| if r <= k { 1.0 } else { 0.0 });
        EvalReport {
            recall_at_1: recall(1),
            recall_at_10: recall(10),
            recall_at_50: recall(50),
            mrr: avg(&|r| 1.0 / r as f64),
            evaluated: n,
            skipped,
            ranks,
        }
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>8}", "metric", "value")?;
        writeln!(f, "{:<12} {:>8.4}", "recall@1", self.recall_at_1)?;
        writeln!(f, "{:<12} {:>8.4}", "recall@10", self.recall_at_10)?;
        writeln!(f, "{:<12} {:>8.4}", "recall@50", self.recall_at_50)?;
        writeln!(f, "{:<12} {:>8.4}", "mrr", self.mrr)?;
        writeln!(f, "{:<12} {:>8}", "evaluated", self.evaluated)?;
        write!(f, "{:<12} {:>8}", "skipped", self.skipped)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ranking_with_positive_at(rank: usize, n: usize) -> (Vec<usize>, Vec<u8>) {
        let ranking: Vec<usize> = (0..n).collect();
        let mut labels = vec![0; n];
        labels[rank - 1] = 1;
        (ranking, labels)
    }

    #[test]
    fn single_dialogue_metrics() {
        let (r, l) = ranking_with_positive_at(1, 100);
        assert_eq!(recall_at_k(&r, &l, 10), Some(1.0));
        assert_eq!(mrr(&r, &l), Some(1.0));
        let (r, l) = ranking_with_positive_at(4, 100);
        assert_eq!(recall_at_k(&r, &l, 10), Some(1.0));
        assert_eq!(mrr(&r, &l), Some(0.25));
        let (r, l) = ranking_with_positive_at(11, 100);
        assert_eq!(recall_at_k(&r, &l, 10), Some(0.0));
        assert_eq!(mrr(&r, &l), Some(1.0 / 11.0));
        assert_eq!(mrr(&r, &[0; 100]), None);
    }

    #[test]
    fn report_skips_dialogues_without_positives() {
        let (r1, l1) = ranking_with_positive_at(2, 5);
        let (r2, _) = ranking_with_positive_at(1, 5);
        let none = [0u8; 5];
        let rep = EvalReport::from_rankings([(&r1[..], &l1[..]), (&r2[..], &none[..])]);
        assert_eq!(rep.evaluated, 1);
        assert_eq!(rep.skipped, 1);
        assert_eq!(rep.recall_at_1, 0.0);
        assert_eq!(rep.recall_at_10, 1.0);
        assert_eq!(rep.mrr, 0.5);
        assert_eq!(rep.ranks, vec![Some(2), None]);
        let json = serde_json::to_value(&rep).unwrap();
        assert!(json.get("recall@10").is_some());
    }
}
