//! Canonical ordering of unordered ward pairs.
//!
//! Pairs `(i, j)` with `i < j` are numbered lexicographically. In one-based
//! terms the position of `(i, j)` among the `N(N-1)/2` pairs is
//! `N(N-1)/2 - (N-i+1)(N-i)/2 + j - i`. The design matrix, the pair
//! difference covariance and every schedule distribution share this order.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    n: usize,
}

impl PairIndex {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn wards(&self) -> usize {
        self.n
    }

    /// Number of unordered pairs, `N(N-1)/2`.
    pub fn len(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Zero-based position of the unordered pair `{i, j}`.
    ///
    /// # Panics
    /// If `i == j` or either index is out of range.
    pub fn index(&self, i: usize, j: usize) -> usize {
        assert!(i != j && i < self.n && j < self.n, "invalid pair ({i}, {j})");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`PairIndex::index`]; always returns `i < j`.
    pub fn pair(&self, k: usize) -> (usize, usize) {
        assert!(k < self.len(), "pair index {k} out of range");
        // rows of the strict upper triangle have lengths n-1, n-2, ...
        let mut i = 0;
        let mut start = 0;
        loop {
            let row = self.n - i - 1;
            if k < start + row {
                return (i, i + 1 + (k - start));
            }
            start += row;
            i += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + Clone + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }
}
