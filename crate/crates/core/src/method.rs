//! The uniform scoring interface every trained method implements.

use ndarray::ArrayView1;

use crate::datamodel::{CandidateSet, ClassId};

/// A trained zero-shot method: a compatibility score per candidate class and
/// an argmax predictor. Implementations are immutable after training, so the
/// trait is `Send + Sync` and scoring may run concurrently.
pub trait TrainedMethod: Send + Sync {
    /// Compatibility of image embedding `x` with `class`; higher is better.
    /// `class` must be a member of `candidates`.
    fn score(&self, x: ArrayView1<'_, f64>, class: ClassId, candidates: &CandidateSet<'_>) -> f64;

    /// Argmax of `score` over the candidate set. Exact ties break toward the
    /// smallest class id. Methods with routing logic (CMT*) override this.
    fn predict(&self, x: ArrayView1<'_, f64>, candidates: &CandidateSet<'_>) -> ClassId {
        argmax_by_score(candidates, |class| self.score(x, class, candidates))
    }
}

/// Shared argmax with the smallest-id tie rule: candidates are visited in
/// ascending id order and a later candidate wins only on a strictly larger
/// score.
pub fn argmax_by_score(
    candidates: &CandidateSet<'_>,
    mut score: impl FnMut(ClassId) -> f64,
) -> ClassId {
    let ids = candidates.ids();
    let mut best_id = ids[0];
    let mut best = score(best_id);
    for &id in &ids[1..] {
        let s = score(id);
        if s > best {
            best = s;
            best_id = id;
        }
    }
    best_id
}
