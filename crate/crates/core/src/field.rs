//! Sampled containers: per-node tables and two-time fields on the grid triangle.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// One `rows × cols` block per grid node, stored row-major back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSeries<T> {
    rows: usize,
    cols: usize,
    nodes: usize,
    data: Vec<T>,
}

impl<T: Scalar> NodeSeries<T> {
    pub fn zeros(rows: usize, cols: usize, nodes: usize) -> Self {
        Self {
            rows,
            cols,
            nodes,
            data: vec![T::zero(); rows * cols * nodes],
        }
    }

    /// Builds a series by evaluating `f(i, block)` for every node.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        nodes: usize,
        mut f: impl FnMut(usize, &mut [T]),
    ) -> Self {
        let mut s = Self::zeros(rows, cols, nodes);
        for i in 0..nodes {
            f(i, s.at_mut(i));
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn block(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[T] {
        let b = self.block();
        &self.data[i * b..(i + 1) * b]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize) -> &mut [T] {
        let b = self.block();
        &mut self.data[i * b..(i + 1) * b]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == T::zero())
    }
}

/// Row offset of `(i, i)` in a flattened triangle with `n + 1` nodes.
#[inline]
pub(crate) fn tri_offset(steps: usize, i: usize) -> usize {
    i * (steps + 1) - i * i.saturating_sub(1) / 2
}

/// `f(t_i, s_j)` for `0 ≤ i ≤ j ≤ N`, one `rows × cols` block per sample.
///
/// Samples below the diagonal do not exist; asking for one panics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangularField<T> {
    rows: usize,
    cols: usize,
    steps: usize,
    data: Vec<T>,
}

impl<T: Scalar> TriangularField<T> {
    pub fn zeros(rows: usize, cols: usize, steps: usize) -> Self {
        let count = (steps + 1) * (steps + 2) / 2;
        Self {
            rows,
            cols,
            steps,
            data: vec![T::zero(); rows * cols * count],
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        steps: usize,
        mut f: impl FnMut(usize, usize, &mut [T]),
    ) -> Self {
        let mut out = Self::zeros(rows, cols, steps);
        for i in 0..=steps {
            for j in i..=steps {
                f(i, j, out.at_mut(i, j));
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn block(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        assert!(
            i <= j && j <= self.steps,
            "sample ({i}, {j}) is off the triangle"
        );
        (tri_offset(self.steps, i) + (j - i)) * self.block()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[T] {
        let k = self.index(i, j);
        &self.data[k..k + self.block()]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut [T] {
        let k = self.index(i, j);
        let b = self.block();
        &mut self.data[k..k + b]
    }

    /// Samples `f(t_i, s_j)` for `j = i..=N`, contiguous.
    pub fn row(&self, i: usize) -> &[T] {
        let start = self.index(i, i);
        &self.data[start..start + (self.steps + 1 - i) * self.block()]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let start = self.index(i, i);
        let len = (self.steps + 1 - i) * self.block();
        &mut self.data[start..start + len]
    }

    pub fn diag(&self, i: usize) -> &[T] {
        self.at(i, i)
    }

    /// The diagonal `f(t_i, t_i)` as a node series.
    pub fn diagonal(&self) -> NodeSeries<T> {
        NodeSeries::from_fn(self.rows, self.cols, self.steps + 1, |i, out| {
            out.copy_from_slice(self.diag(i))
        })
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == T::zero())
    }

    /// Largest entrywise deviation from `other`; fields must share shape.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.data.len(), other.data.len(), "field shapes differ");
        crate::dense::max_abs_diff(&self.data, &other.data)
    }

    pub fn max_abs(&self) -> T {
        crate::dense::max_abs(&self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            steps: self.steps,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.data.len(), other.data.len(), "field shapes differ");
        Self {
            rows: self.rows,
            cols: self.cols,
            steps: self.steps,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_tile_the_triangle() {
        let f = TriangularField::<f64>::from_fn(1, 1, 5, |i, j, b| b[0] = (10 * i + j) as f64);
        assert_eq!(f.as_slice().len(), 21);
        for i in 0..=5 {
            for j in i..=5 {
                assert_eq!(f.at(i, j)[0], (10 * i + j) as f64);
            }
            assert_eq!(f.row(i).len(), 6 - i);
        }
    }

    #[test]
    #[should_panic]
    fn below_diagonal_panics() {
        let f = TriangularField::<f64>::zeros(1, 1, 3);
        let _ = f.at(2, 1);
    }
}
