//! Binary indexed tree over per-site aggregate rates.
//!
//! The CTMC engine keeps one nonnegative rate per owner site; selection draws
//! `r` uniform in `[0, total)` and walks the tree to the first index whose
//! prefix sum exceeds `r`. Updates and queries are `O(log n)`.

use alloc::vec;
use alloc::vec::Vec;

/// Fenwick tree holding nonnegative `f64` weights.
#[derive(Debug, Clone)]
pub struct Fenwick {
    tree: Vec<f64>,
    leaf: Vec<f64>,
}

impl Fenwick {
    /// Creates a tree of `n` zero weights.
    pub fn new(n: usize) -> Self {
        Fenwick {
            tree: vec![0.0; n + 1],
            leaf: vec![0.0; n],
        }
    }

    /// Number of leaves.
    pub fn len(&self) -> usize {
        self.leaf.len()
    }

    /// True when the tree has no leaves.
    pub fn is_empty(&self) -> bool {
        self.leaf.is_empty()
    }

    /// Current weight at `i`.
    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.leaf[i]
    }

    /// Sets the weight at `i`.
    pub fn set(&mut self, i: usize, w: f64) {
        debug_assert!(w >= 0.0 && w.is_finite());
        let delta = w - self.leaf[i];
        if delta == 0.0 {
            return;
        }
        self.leaf[i] = w;
        let mut j = i + 1;
        while j < self.tree.len() {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
    }

    /// Total weight. Exact only up to accumulated update round-off; callers
    /// that need a fresh sum should `rebuild` periodically.
    pub fn total(&self) -> f64 {
        let mut j = self.leaf.len();
        let mut s = 0.0;
        while j > 0 {
            s += self.tree[j];
            j &= j - 1;
        }
        s
    }

    /// Recomputes all internal nodes from the stored leaf weights, clearing
    /// incremental floating-point drift.
    pub fn rebuild(&mut self) {
        for v in self.tree.iter_mut() {
            *v = 0.0;
        }
        for i in 0..self.leaf.len() {
            let w = self.leaf[i];
            let mut j = i + 1;
            while j < self.tree.len() {
                self.tree[j] += w;
                j += j & j.wrapping_neg();
            }
        }
    }

    /// Finds the smallest index whose inclusive prefix sum exceeds `r`.
    ///
    /// `r` must satisfy `0 <= r < total()`; if round-off pushes the walk past
    /// the end, the last index with positive weight is returned.
    pub fn find(&self, mut r: f64) -> usize {
        let n = self.leaf.len();
        let mut mask = n.next_power_of_two();
        let mut idx = 0usize; // 1-based prefix position
        while mask > 0 {
            let next = idx + mask;
            if next < self.tree.len() && self.tree[next] <= r {
                r -= self.tree[next];
                idx = next;
            }
            mask >>= 1;
        }
        if idx < n {
            idx
        } else {
            // Round-off fell off the end: take the last positive leaf.
            (0..n).rev().find(|&i| self.leaf[i] > 0.0).unwrap_or(n - 1)
        }
    }
}
