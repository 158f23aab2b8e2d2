//! Per-class annotation batches and the simulated annotator.

use rand::seq::index;
use rand::Rng;

use crate::annotation::{AnnotationEvent, PRETRAIN_CYCLE};
use crate::graph::Transaction;

/// Draws up to `n_fraud` fraud and `n_legit` legit ids without replacement.
/// Transactions without a label count as legit. Output is sorted by id.
pub fn sample_classes(part: &[Transaction], n_fraud: usize, n_legit: usize, rng: &mut impl Rng) -> Vec<String> {
    let (fraud, legit): (Vec<&Transaction>, Vec<&Transaction>) = part.iter().partition(|t| t.is_fraud());
    let mut out = Vec::with_capacity(n_fraud + n_legit);
    for (class, want) in [(&fraud, n_fraud), (&legit, n_legit)] {
        let k = want.min(class.len());
        let mut picked: Vec<usize> = index::sample(rng, class.len(), k).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| class[i].id.clone()));
    }
    out.sort();
    out
}

/// `min(per_class, available)` ids of each ground-truth class.
pub fn sample_annotation_batch(part: &[Transaction], per_class: usize, rng: &mut impl Rng) -> Vec<String> {
    sample_classes(part, per_class, per_class, rng)
}

/// Simulated analyst: fraud scores 100 and legit 0, each flipped with
/// probability `noise`. One coin is drawn per id whatever the noise level.
pub fn oracle_annotate(
    ids: &[String],
    truth: impl Fn(&str) -> bool,
    noise: f64,
    rng: &mut impl Rng,
) -> Vec<AnnotationEvent> {
    let noise = noise.clamp(0.0, 1.0);
    ids.iter()
        .map(|id| {
            let flip = rng.random::<f64>() < noise;
            let fraud = truth(id) != flip;
            AnnotationEvent {
                node_id: id.clone(),
                score: if fraud { 100.0 } else { 0.0 },
                annotator: "oracle".to_string(),
                ts: 0,
                cycle: PRETRAIN_CYCLE,
            }
        })
        .collect()
}
