//! Deterministic argmax / top-k over score vectors.
//!
//! Ties are broken toward the smaller key so every selection is a pure
//! function of the scores, independent of iteration accidents.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(PartialEq)]
struct Entry {
    score: f64,
    key: u32,
    pos: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    // Greater = better: higher score first, then the smaller key.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Index of the maximum score; ties keep the earliest index. None on empty.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            None => best = Some(i),
            Some(b) if s > scores[b] => best = Some(i),
            _ => {}
        }
    }
    best
}

/// Positions of the top-k scores ordered by (score desc, position asc).
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    top_k_keyed(scores.iter().copied().enumerate().map(|(i, s)| (s, i as u32)), k)
        .into_iter()
        .map(|(pos, _)| pos)
        .collect()
}

/// Top-k positions of `scores` where ties are broken by the caller-supplied
/// key at the same position (ascending). Returns (position, key) pairs in
/// (score desc, key asc) order.
pub fn top_k_by_key(scores: &[f64], keys: &[u32], k: usize) -> Vec<(usize, u32)> {
    debug_assert_eq!(scores.len(), keys.len());
    top_k_keyed(
        scores.iter().copied().zip(keys.iter().copied()),
        k,
    )
}

fn top_k_keyed<I>(items: I, k: usize) -> Vec<(usize, u32)>
where
    I: IntoIterator<Item = (f64, u32)>,
{
    if k == 0 {
        return Vec::new();
    }
    // Min-heap of the best k so far: the root is the worst kept entry.
    let mut heap: BinaryHeap<std::cmp::Reverse<Entry>> = BinaryHeap::new();
    for (pos, (score, key)) in items.into_iter().enumerate() {
        let e = Entry { score, key, pos };
        if heap.len() < k {
            heap.push(std::cmp::Reverse(e));
        } else if let Some(worst) = heap.peek() {
            if e > worst.0 {
                heap.pop();
                heap.push(std::cmp::Reverse(e));
            }
        }
    }
    let mut kept: Vec<Entry> = heap.into_iter().map(|r| r.0).collect();
    kept.sort_by(|a, b| b.cmp(a));
    kept.into_iter().map(|e| (e.pos, e.key)).collect()
}
