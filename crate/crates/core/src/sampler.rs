//! Negative sampling by uniform head/tail corruption.

use rand::Rng;

use crate::data::Triple;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Head,
    Tail,
}

/// Corruptions grouped by the positive they were drawn from.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativeBatch {
    per_positive: Vec<Vec<Triple>>,
    slots: Vec<Vec<Slot>>,
}

impl NegativeBatch {
    /// Assemble from pre-drawn corruptions; `slots` mirrors `per_positive`.
    pub fn new(per_positive: Vec<Vec<Triple>>, slots: Vec<Vec<Slot>>) -> Self {
        Self { per_positive, slots }
    }

    pub fn per_positive(&self) -> &[Vec<Triple>] {
        &self.per_positive
    }

    pub fn corrupted_slots(&self) -> &[Vec<Slot>] {
        &self.slots
    }

    /// All corruptions in positive-major order.
    pub fn flatten(&self) -> Vec<Triple> {
        self.per_positive.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.per_positive.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draw `k` corruptions for each positive. The slot is head or tail with
/// probability one half; the replacement is uniform over all entities other
/// than the one being replaced. Accidentally-true corruptions are kept.
pub fn sample_negatives<G: Rng + ?Sized>(
    positives: &[Triple],
    k: usize,
    num_entities: usize,
    rng: &mut G,
) -> Result<NegativeBatch> {
    if k == 0 {
        return Err(Error::ZeroNegatives);
    }
    if num_entities < 2 {
        return Err(Error::TooFewEntities);
    }
    let mut per_positive = Vec::with_capacity(positives.len());
    let mut slots = Vec::with_capacity(positives.len());
    let upper = (num_entities - 1) as u32;
    for pos in positives {
        let mut negs = Vec::with_capacity(k);
        let mut sl = Vec::with_capacity(k);
        for _ in 0..k {
            let slot = if rng.random_bool(0.5) {
                Slot::Head
            } else {
                Slot::Tail
            };
            let original = match slot {
                Slot::Head => pos.head,
                Slot::Tail => pos.tail,
            };
            let mut e = rng.random_range(0..upper);
            if e >= original {
                e += 1;
            }
            let neg = match slot {
                Slot::Head => Triple::new(e, pos.relation, pos.tail),
                Slot::Tail => Triple::new(pos.head, pos.relation, e),
            };
            negs.push(neg);
            sl.push(slot);
        }
        per_positive.push(negs);
        slots.push(sl);
    }
    Ok(NegativeBatch {
        per_positive,
        slots,
    })
}
