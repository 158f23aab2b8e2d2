//! ROC-AUC and recall for binary labels.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("ROC-AUC needs both classes present")]
    SingleClass,
    #[error("recall needs at least one positive")]
    NoPositives,
    #[error("scores must not be NaN")]
    NaN,
}

/// Area under the ROC curve by the rank-sum statistic, ties counted one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::NaN);
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based average ranks of the positives, kept doubled so tied
    // groups contribute exact integers.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let doubled_avg_rank = (i + 1 + j) as u128;
        let positives = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        rank_sum2 += doubled_avg_rank * positives;
        i = j;
    }
    let (p, n) = (pos as u128, neg as u128);
    let u2 = rank_sum2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Fraction of positives with `score >= threshold`.
pub fn recall_at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let (mut tp, mut positives) = (0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if l {
            positives += 1;
            if s >= threshold {
                tp += 1;
            }
        }
    }
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    Ok(tp as f64 / positives as f64)
}
