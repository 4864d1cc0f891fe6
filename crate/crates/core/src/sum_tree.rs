/// Binary sum tree over `capacity` leaves (a power of two).
///
/// Node 1 is the root, node `i` has children `2i` and `2i + 1`, and leaf `j`
/// lives at node `capacity + j`. Updates recompute every ancestor from its
/// children rather than propagating deltas, so parents never drift from the
/// sum of their children.
#[derive(Clone, Debug)]
pub struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    pub fn new(min_leaves: usize) -> Self {
        let capacity = min_leaves.max(1).next_power_of_two();
        SumTree {
            capacity,
            nodes: vec![0.0; 2 * capacity],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.capacity + leaf]
    }

    pub fn set(&mut self, leaf: usize, weight: f64) {
        assert!(
            weight >= 0.0 && weight.is_finite(),
            "sum tree weights must be finite and non-negative, got {weight}"
        );
        let mut i = self.capacity + leaf;
        self.nodes[i] = weight;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Smallest leaf `j` whose inclusive prefix sum exceeds `mass`, for
    /// `mass` in `[0, total)`. Never returns a zero-weight leaf while the
    /// total is positive.
    pub fn find_prefix(&self, mass: f64) -> usize {
        let mut u = mass.max(0.0);
        let mut i = 1;
        while i < self.capacity {
            let left = self.nodes[2 * i];
            if u < left {
                i *= 2;
            } else {
                u -= left;
                i = 2 * i + 1;
            }
        }
        let leaf = i - self.capacity;
        if self.nodes[i] > 0.0 {
            return leaf;
        }
        // Rounding pushed the descent past the last positive leaf.
        (0..leaf)
            .rev()
            .chain(leaf + 1..self.capacity)
            .find(|&j| self.get(j) > 0.0)
            .unwrap_or(leaf)
    }

    /// Largest absolute gap between an internal node and the sum of its children.
    pub fn max_inconsistency(&self) -> f64 {
        (1..self.capacity)
            .map(|i| (self.nodes[i] - self.nodes[2 * i] - self.nodes[2 * i + 1]).abs())
            .fold(0.0, f64::max)
    }

    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.capacity..].iter().sum()
    }
}
