//! Uniform axes, their tensor products, and multilinear interpolation stencils.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fractional offsets closer than this to a node snap onto the node, so that
/// points produced by on-grid arithmetic interpolate as exact lookups.
const SNAP: f64 = 1e-10;

/// A uniformly spaced one-dimensional grid with `n >= 2` nodes on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    lo: f64,
    hi: f64,
    n: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::domain(format!("axis bounds must be finite, got [{lo}, {hi}]")));
        }
        if lo >= hi {
            return Err(Error::domain(format!("axis requires lo < hi, got [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::domain(format!("axis requires at least 2 nodes, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i < self.n);
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.node(i))
    }

    /// Whether `x` lies in `[lo, hi]` up to a relative slack of one part in 1e9.
    pub fn contains(&self, x: f64) -> bool {
        let slack = 1e-9 * (self.hi - self.lo);
        x >= self.lo - slack && x <= self.hi + slack
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lo, self.hi)
    }

    /// Index of the node nearest to `x` after clamping. Midpoints round up.
    pub fn nearest(&self, x: f64) -> usize {
        let t = (self.clamp(x) - self.lo) / self.spacing();
        (t + 0.5).floor().min((self.n - 1) as f64) as usize
    }

    /// Cell containing the clamped `x`: returns `(i, frac)` with
    /// `x = (1 - frac) * node(i) + frac * node(i + 1)` and `i <= n - 2`.
    pub fn bracket(&self, x: f64) -> (usize, f64) {
        let t = (self.clamp(x) - self.lo) / self.spacing();
        let rounded = t.round();
        let t = if (t - rounded).abs() < SNAP { rounded } else { t };
        let last = (self.n - 2) as f64;
        let i = t.floor().min(last);
        (i as usize, (t - i).clamp(0.0, 1.0))
    }
}

/// Row-major tensor product of axes; axis 0 varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGrid {
    axes: Vec<GridAxis>,
}

impl StateGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::domain("state grid needs at least one axis"));
        }
        Ok(Self { axes })
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(GridAxis::len).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(GridAxis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.axes)
            .fold(0, |acc, (&i, axis)| acc * axis.len() + i)
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut multi = vec![0; self.axes.len()];
        for (slot, axis) in multi.iter_mut().zip(&self.axes).rev() {
            *slot = flat % axis.len();
            flat /= axis.len();
        }
        multi
    }

    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .into_iter()
            .zip(&self.axes)
            .map(|(i, axis)| axis.node(i))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.axes.len() && x.iter().zip(&self.axes).all(|(&v, a)| a.contains(v))
    }

    pub fn clamp_in_place(&self, x: &mut [f64]) {
        for (v, axis) in x.iter_mut().zip(&self.axes) {
            *v = axis.clamp(*v);
        }
    }

    pub fn nearest(&self, x: &[f64]) -> usize {
        self.axes
            .iter()
            .zip(x)
            .fold(0, |acc, (axis, &v)| acc * axis.len() + axis.nearest(v))
    }

    /// Multilinear stencil of `x`: flat node indices with nonnegative weights
    /// summing to one. Zero-weight corners are dropped.
    pub fn stencil(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = vec![(0usize, 1.0f64)];
        for (axis, &v) in self.axes.iter().zip(x) {
            let (i, frac) = axis.bracket(v);
            let n = axis.len();
            let mut next = Vec::with_capacity(out.len() * 2);
            for &(idx, w) in &out {
                if frac < 1.0 {
                    next.push((idx * n + i, w * (1.0 - frac)));
                }
                if frac > 0.0 {
                    next.push((idx * n + i + 1, w * frac));
                }
            }
            out = next;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_endpoints_and_monotone_nodes() {
        let a = GridAxis::new(0.0, 5.0, 51).unwrap();
        assert_eq!(a.node(0), 0.0);
        assert_eq!(a.node(50), 5.0);
        let nodes: Vec<f64> = a.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        assert!((a.spacing() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn axis_rejects_degenerate() {
        assert!(GridAxis::new(1.0, 1.0, 3).is_err());
        assert!(GridAxis::new(0.0, 1.0, 1).is_err());
        assert!(GridAxis::new(2.0, 1.0, 3).is_err());
        assert!(GridAxis::new(0.0, f64::NAN, 3).is_err());
    }

    #[test]
    fn bracket_snaps_on_nodes() {
        let a = GridAxis::new(0.0, 2.0, 21).unwrap();
        for i in 0..21 {
            let (j, frac) = a.bracket(a.node(i));
            let back = a.node(j) * (1.0 - frac) + a.node((j + 1).min(20)) * frac;
            assert_eq!(back, a.node(i));
            assert!(frac == 0.0 || frac == 1.0);
        }
        assert_eq!(a.bracket(-1.0), (0, 0.0));
        assert_eq!(a.bracket(3.0), (19, 1.0));
        let (i, f) = a.bracket(0.15);
        assert_eq!(i, 1);
        assert!((f - 0.5).abs() < 1e-12);
    }

    #[test]
    fn nearest_rounds_half_up() {
        let a = GridAxis::new(0.0, 1.0, 11).unwrap();
        assert_eq!(a.nearest(0.04), 0);
        assert_eq!(a.nearest(0.06), 1);
        assert_eq!(a.nearest(7.0), 10);
    }

    #[test]
    fn flat_and_multi_index_roundtrip() {
        let g = StateGrid::new(vec![
            GridAxis::new(0.0, 5.0, 6).unwrap(),
            GridAxis::new(0.0, 6.0, 4).unwrap(),
        ])
        .unwrap();
        for k in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(k)), k);
        }
        assert_eq!(g.node(g.flat_index(&[2, 3])), vec![2.0, 6.0]);
    }

    #[test]
    fn stencil_weights_sum_to_one_and_reproduce_point() {
        let g = StateGrid::new(vec![
            GridAxis::new(0.0, 5.0, 6).unwrap(),
            GridAxis::new(0.0, 6.0, 4).unwrap(),
        ])
        .unwrap();
        let x = [2.3, 4.1];
        let st = g.stencil(&x);
        assert_eq!(st.len(), 4);
        let total: f64 = st.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-14);
        for d in 0..2 {
            let coord: f64 = st.iter().map(|&(k, w)| w * g.node(k)[d]).sum();
            assert!((coord - x[d]).abs() < 1e-12);
        }
        assert_eq!(g.stencil(&[2.0, 2.0]), vec![(g.flat_index(&[2, 1]), 1.0)]);
    }
}
