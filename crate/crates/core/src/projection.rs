//! Projection kernels onto boxes and nonnegative orthants.
//!
//! Every feasible set in the agent dynamics is a Cartesian product of
//! intervals, so elementwise clamping is the entire projection story. Ties at
//! a bound return the bound; there is no tolerance band, which keeps the
//! simulator bitwise deterministic. Non-finite inputs pass through unclamped
//! so that a diverging state cannot masquerade as a feasible one.

use alloc::vec::Vec;

/// A product of closed intervals. Entries may be `-inf`/`+inf` for
/// unconstrained coordinates and `lo == hi` encodes a singleton (used for
/// devices a bus does not have).
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Construction error: some `lo[i] > hi[i]` or a bound is NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvalidBounds {
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
}

impl core::fmt::Display for InvalidBounds {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "invalid box bounds at coordinate {}: lo = {}, hi = {}",
            self.index, self.lo, self.hi
        )
    }
}

impl core::error::Error for InvalidBounds {}

impl BoxSet {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, InvalidBounds> {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        for (i, (&l, &h)) in lo.iter().zip(hi.iter()).enumerate() {
            if !(l <= h) {
                return Err(InvalidBounds { index: i, lo: l, hi: h });
            }
        }
        Ok(BoxSet { lo, hi })
    }

    /// The whole space: every coordinate unbounded.
    pub fn free(dim: usize) -> Self {
        BoxSet {
            lo: alloc::vec![f64::NEG_INFINITY; dim],
            hi: alloc::vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    #[inline]
    pub fn clamp_coord(&self, i: usize, x: f64) -> f64 {
        clamp(x, self.lo[i], self.hi[i])
    }

    pub fn project_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim(), "projection dimension mismatch");
        assert_eq!(out.len(), self.dim(), "projection dimension mismatch");
        for i in 0..x.len() {
            out[i] = clamp(x[i], self.lo[i], self.hi[i]);
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.violation(x) <= tol
    }

    /// Worst distance by which `x` escapes the box (0 for members).
    pub fn violation(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        let mut worst = 0.0;
        for i in 0..x.len() {
            let below = self.lo[i] - x[i];
            let above = x[i] - self.hi[i];
            if below > worst {
                worst = below;
            }
            if above > worst {
                worst = above;
            }
        }
        worst
    }
}

#[inline]
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    // Explicit comparisons keep NaN as NaN instead of laundering it to a bound.
    if x < lo {
        lo
    } else if x > hi {
        hi
    } else {
        x
    }
}

/// Nearest point of the box to `x` (elementwise clamp). Idempotent.
pub fn project_box(x: &[f64], set: &BoxSet) -> Vec<f64> {
    let mut out = alloc::vec![0.0; x.len()];
    set.project_into(x, &mut out);
    out
}

/// Nearest point of the nonnegative orthant to `x` (elementwise max with 0).
pub fn project_nonneg(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| nonneg(v)).collect()
}

#[inline]
pub fn nonneg(x: f64) -> f64 {
    if x < 0.0 {
        0.0
    } else {
        x
    }
}

pub fn project_nonneg_in_place(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = nonneg(*v);
    }
}
