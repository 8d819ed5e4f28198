//! Complete binary tree of nonnegative weights with O(log n) update and
//! proportional sampling.

#[derive(Debug, Clone)]
pub struct SumTree {
    len: usize,
    leaves: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(len: usize) -> Self {
        let leaves = len.max(1).next_power_of_two();
        Self { len, leaves, nodes: vec![0.0; 2 * leaves] }
    }

    pub fn from_weights(weights: &[f64]) -> Self {
        let mut t = Self::new(weights.len());
        t.nodes[t.leaves..t.leaves + weights.len()].copy_from_slice(weights);
        for i in (1..t.leaves).rev() {
            t.nodes[i] = t.nodes[2 * i] + t.nodes[2 * i + 1];
        }
        t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.leaves + i]
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Sets leaf `i`; ancestors are recomputed from their children so no
    /// rounding error accumulates across updates.
    pub fn set(&mut self, i: usize, w: f64) {
        debug_assert!(w >= 0.0 && w.is_finite());
        let mut j = self.leaves + i;
        self.nodes[j] = w;
        j /= 2;
        while j >= 1 {
            self.nodes[j] = self.nodes[2 * j] + self.nodes[2 * j + 1];
            j /= 2;
        }
    }

    /// Leaf whose cumulative range contains `u ∈ [0, total)`; never returns a
    /// zero-weight leaf while the total is positive.
    pub fn find(&self, mut u: f64) -> usize {
        let mut j = 1;
        while j < self.leaves {
            let left = self.nodes[2 * j];
            let right = self.nodes[2 * j + 1];
            if (u < left && left > 0.0) || right <= 0.0 {
                j *= 2;
            } else {
                u -= left;
                j = 2 * j + 1;
            }
        }
        j - self.leaves
    }
}
