/// Complete binary tree over `capacity` non-negative leaves; every internal
/// node holds the sum of its children.
///
/// Updates recompute each ancestor from its two children instead of adding a
/// delta, so the root never accumulates drift beyond one summation's rounding.
#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    /// Index of the first leaf in `nodes` (a power of two).
    base: usize,
    nodes: Vec<f64>,
    populated: usize,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let base = capacity.max(1).next_power_of_two();
        SumTree {
            capacity,
            base,
            nodes: vec![0.0; 2 * base],
            populated: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    /// Number of leaves with positive priority.
    pub fn populated(&self) -> usize {
        self.populated
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.nodes[self.base + leaf]
    }

    pub fn set(&mut self, leaf: usize, priority: f64) {
        assert!(leaf < self.capacity, "leaf {leaf} out of range");
        debug_assert!(priority >= 0.0 && priority.is_finite());
        let mut i = self.base + leaf;
        let old = self.nodes[i];
        match (old > 0.0, priority > 0.0) {
            (false, true) => self.populated += 1,
            (true, false) => self.populated -= 1,
            _ => {}
        }
        self.nodes[i] = priority;
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    /// Leaf whose cumulative interval contains `mass`. Never returns a
    /// zero-priority leaf while the tree holds any mass.
    pub fn find(&self, mass: f64) -> usize {
        let mut mass = mass.clamp(0.0, self.total());
        let mut i = 1;
        while i < self.base {
            let left = self.nodes[2 * i];
            let right = self.nodes[2 * i + 1];
            if (mass < left || right <= 0.0) && left > 0.0 {
                i *= 2;
            } else {
                mass -= left;
                i = 2 * i + 1;
            }
        }
        i - self.base
    }

    /// Exact leaf sum, for integrity checks.
    pub fn leaf_sum(&self) -> f64 {
        self.nodes[self.base..self.base + self.capacity].iter().sum()
    }

    /// Recompute every internal node from the leaves.
    pub fn rebuild(&mut self) {
        for i in (1..self.base).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
        self.populated = self.nodes[self.base..].iter().filter(|&&p| p > 0.0).count();
    }

    pub fn clear(&mut self) {
        self.nodes.iter_mut().for_each(|v| *v = 0.0);
        self.populated = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn find_walks_cumulative_intervals() {
        let mut t = SumTree::new(5);
        for (i, p) in [1.0, 0.0, 2.0, 3.0, 4.0].iter().enumerate() {
            t.set(i, *p);
        }
        assert_eq!(t.total(), 10.0);
        assert_eq!(t.populated(), 4);
        assert_eq!(t.find(0.0), 0);
        assert_eq!(t.find(0.999), 0);
        assert_eq!(t.find(1.0), 2);
        assert_eq!(t.find(2.999), 2);
        assert_eq!(t.find(3.0), 3);
        assert_eq!(t.find(6.5), 4);
        assert_eq!(t.find(10.0), 4);
        assert_eq!(t.find(1e9), 4);
    }

    #[test]
    fn zero_leaves_are_never_returned() {
        let mut t = SumTree::new(8);
        t.set(6, 1.0);
        for k in 0..=100 {
            assert_eq!(t.find(k as f64 / 100.0), 6);
        }
        t.set(6, 0.0);
        assert_eq!(t.populated(), 0);
        assert_eq!(t.total(), 0.0);
    }
}
