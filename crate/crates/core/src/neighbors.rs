//! Exact k-nearest selection shared by geographic pairing and KNN regression.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

// Ordered by (distance, index) so the heap top is the current worst keeper.
#[derive(PartialEq)]
struct Ranked(Neighbor);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .distance
            .total_cmp(&other.0.distance)
            .then(self.0.index.cmp(&other.0.index))
    }
}

/// The `k` candidates with the smallest distance, nearest first. Equal
/// distances are broken by lower candidate index. Returns fewer than `k`
/// when there are fewer candidates.
pub fn k_nearest<I>(distances: I, k: usize) -> Vec<Neighbor>
where
    I: IntoIterator<Item = f64>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
    for (index, distance) in distances.into_iter().enumerate() {
        let cand = Ranked(Neighbor { index, distance });
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(top) = heap.peek() {
            if cand < *top {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
