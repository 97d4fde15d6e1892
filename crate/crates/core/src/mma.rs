//! Emulated 16x8x16 FP16-32 matrix multiply-accumulate.
//!
//! Arithmetic contract, fixed so that every engine in the crate can be
//! checked bit-for-bit against every other:
//!
//! * FP16 operands are widened to FP32 (exact) and multiplied in FP32. The
//!   product of two 11-bit significands fits in 22 bits and the exponent range
//!   of FP16 squared sits well inside FP32's normal range, so products are
//!   exact.
//! * Each accumulator element adds its 16 products in ascending `k`, every
//!   addition rounded toward zero.
//! * Chained MMAs continue the same sequence, so accumulating slices in
//!   ascending order is identical to one long sequential RZ sum.

use half::f16;

use crate::error::{Error, Result};

/// Rows of a P fragment (points) and of the accumulator.
pub const FRAG_M: usize = 16;
/// Columns of a Q fragment (query points) and of the accumulator.
pub const FRAG_N: usize = 8;
/// Inner dimension consumed by one MMA.
pub const FRAG_K: usize = 16;

pub(crate) type WideP = [[f32; FRAG_K]; FRAG_M];
pub(crate) type WideQ = [[f32; FRAG_N]; FRAG_K];
pub(crate) type AccTile = [[f32; FRAG_N]; FRAG_M];

/// FP32 addition rounded toward zero.
///
/// The round-to-nearest sum and its exact error term (TwoSum) tell us which
/// neighbour of the exact result was picked; when it was the one further from
/// zero we step back by one ulp. Overflowed sums are returned as infinities so
/// callers can detect them.
#[inline(always)]
pub fn rz_add(a: f32, b: f32) -> f32 {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    let rounded_away =
        (err != 0.0) & (s.abs() != f32::INFINITY) & (((err.to_bits() ^ s.to_bits()) >> 31) == 1);
    f32::from_bits(s.to_bits() - rounded_away as u32)
}

/// 16 points x 16 dimensions, row = point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentP {
    values: [[f16; FRAG_K]; FRAG_M],
}

/// 16 dimensions x 8 query points (transposed role), row = dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentQ {
    values: [[f16; FRAG_N]; FRAG_K],
}

/// 16 x 8 FP32 accumulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FragmentAcc {
    values: AccTile,
}

fn check_finite_f16<const R: usize, const C: usize>(values: &[[f16; C]; R]) -> Result<()> {
    for (r, row) in values.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Argument(format!(
                    "fragment entry ({r}, {c}) is not finite"
                )));
            }
        }
    }
    Ok(())
}

impl FragmentP {
    pub fn new(values: [[f16; FRAG_K]; FRAG_M]) -> Result<Self> {
        check_finite_f16(&values)?;
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: [[f16::ZERO; FRAG_K]; FRAG_M],
        }
    }

    pub fn identity() -> Self {
        let mut values = [[f16::ZERO; FRAG_K]; FRAG_M];
        for (i, row) in values.iter_mut().enumerate() {
            row[i] = f16::ONE;
        }
        Self { values }
    }

    pub fn get(&self, point: usize, k: usize) -> f16 {
        self.values[point][k]
    }

    pub(crate) fn widen(&self) -> WideP {
        self.values.map(|row| row.map(f16::to_f32))
    }
}

impl FragmentQ {
    pub fn new(values: [[f16; FRAG_N]; FRAG_K]) -> Result<Self> {
        check_finite_f16(&values)?;
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: [[f16::ZERO; FRAG_N]; FRAG_K],
        }
    }

    pub fn get(&self, k: usize, query: usize) -> f16 {
        self.values[k][query]
    }

    pub(crate) fn widen(&self) -> WideQ {
        self.values.map(|row| row.map(f16::to_f32))
    }
}

impl FragmentAcc {
    pub fn new(values: [[f32; FRAG_N]; FRAG_M]) -> Result<Self> {
        check_acc(&values)?;
        Ok(Self { values })
    }

    pub fn zeros() -> Self {
        Self {
            values: [[0.0; FRAG_N]; FRAG_M],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row][col]
    }

    pub fn values(&self) -> &[[f32; FRAG_N]; FRAG_M] {
        &self.values
    }
}

#[inline]
fn check_acc(acc: &AccTile) -> Result<()> {
    for (row, lane) in acc.iter().enumerate() {
        for (col, v) in lane.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Overflow { row, col });
            }
        }
    }
    Ok(())
}

/// Accumulates `p x q` into `acc` on already-widened operands.
///
/// Returns the first accumulator position that left the finite range.
#[inline]
pub(crate) fn mma_wide(p: &WideP, q: &WideQ, acc: &mut AccTile) -> Result<()> {
    for k in 0..FRAG_K {
        let qk = &q[k];
        for (acc_row, p_row) in acc.iter_mut().zip(p.iter()) {
            let pv = p_row[k];
            for (a, &qv) in acc_row.iter_mut().zip(qk.iter()) {
                *a = rz_add(*a, pv * qv);
            }
        }
    }
    check_acc(acc)
}

/// `D = P x Q + C` under the crate's rounding contract.
pub fn mma(p: &FragmentP, q: &FragmentQ, c: &FragmentAcc) -> Result<FragmentAcc> {
    let mut values = c.values;
    mma_wide(&p.widen(), &q.widen(), &mut values)?;
    Ok(FragmentAcc { values })
}

/// Squared distance from a dot product and the two squared norms.
///
/// Evaluated as `((-2 * a) + s_i) + s_j` with ordinary FP32 rounding; a
/// negative result (nearly coincident points) is clamped to zero.
#[inline(always)]
pub fn combine_distance(a: f32, s_i: f32, s_j: f32) -> f32 {
    let d = (-2.0 * a + s_i) + s_j;
    if d < 0.0 {
        0.0
    } else {
        d
    }
}
