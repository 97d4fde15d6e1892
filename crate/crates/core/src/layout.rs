//! Shared-memory layout simulator for the staging buffers.
//!
//! A staged 64-dimension k-slice of one point occupies one 128-byte row made
//! of eight 16-byte slots (8 FP16 dimensions each). A slot spans a group of
//! four 4-byte banks, so two concurrent accesses to the same slot index in
//! different rows hit the same banks. Conflicts are therefore counted at
//! slot granularity.
//!
//! Point indices at this API are 1-based to match the usual statement of
//! the swizzle; slices and slots are 0-based.

use std::fmt;

use crate::error::{Error, Result};

pub const SLOTS_PER_ROW: usize = 8;
pub const LANES_PER_PHASE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SlotAddress {
    pub row: usize,
    pub slot: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Swizzled,
    RowMajor,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Layout::Swizzled => f.write_str("swizzled"),
            Layout::RowMajor => f.write_str("row-major"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    pub lane: usize,
    pub addr: SlotAddress,
}

/// Ordered transaction phases, eight concurrent 16-byte accesses each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessTrace {
    pub phases: Vec<[Access; LANES_PER_PHASE]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictReport {
    pub per_phase: Vec<usize>,
    pub max: usize,
}

impl ConflictReport {
    pub fn conflict_free(&self) -> bool {
        self.max == 1
    }
}

/// Destination of 8-dimension slice `s` of point `i`:
/// `8 * (i - 1) + (s ^ ((i - 1) % 8))`. The XOR applies to the slot only.
pub fn swizzle_address(i: usize, s: usize) -> Result<SlotAddress> {
    if i == 0 {
        return Err(Error::Argument("point index is 1-based".into()));
    }
    if s >= SLOTS_PER_ROW {
        return Err(Error::Argument(format!("slice {s} out of range 0..8")));
    }
    let row = i - 1;
    let flat = SLOTS_PER_ROW * row + (s ^ (row % SLOTS_PER_ROW));
    Ok(SlotAddress {
        row: flat / SLOTS_PER_ROW,
        slot: flat % SLOTS_PER_ROW,
    })
}

/// Recovers the logical slice stored at `addr` (XOR is an involution).
pub fn unswizzle_slot(addr: SlotAddress) -> usize {
    addr.slot ^ (addr.row % SLOTS_PER_ROW)
}

fn address(layout: Layout, i: usize, s: usize) -> Result<SlotAddress> {
    match layout {
        Layout::Swizzled => swizzle_address(i, s),
        Layout::RowMajor => {
            if i == 0 || s >= SLOTS_PER_ROW {
                return Err(Error::Argument(format!("invalid point/slice ({i}, {s})")));
            }
            Ok(SlotAddress { row: i - 1, slot: s })
        }
    }
}

fn phase(layout: Layout, first_point: usize, slice: usize) -> Result<[Access; LANES_PER_PHASE]> {
    let mut accesses = [Access {
        lane: 0,
        addr: SlotAddress { row: 0, slot: 0 },
    }; LANES_PER_PHASE];
    for (lane, a) in accesses.iter_mut().enumerate() {
        *a = Access {
            lane,
            addr: address(layout, first_point + lane, slice)?,
        };
    }
    Ok(accesses)
}

/// Storing a 64-dimension k-slice of points `first_point..first_point+8`:
/// phase `s` writes slice `s` of all eight points.
pub fn store_trace(first_point: usize, layout: Layout) -> Result<AccessTrace> {
    if first_point == 0 {
        return Err(Error::Argument("point index is 1-based".into()));
    }
    let phases = (0..SLOTS_PER_ROW)
        .map(|s| phase(layout, first_point, s))
        .collect::<Result<_>>()?;
    Ok(AccessTrace { phases })
}

/// The four phases of loading a 16x16 fragment (16 points, slices
/// `slice_base` and `slice_base + 1`): points 1-8 then 9-16 of the first
/// slice, then the same for the second.
pub fn ldmatrix_trace(first_point: usize, slice_base: usize, layout: Layout) -> Result<AccessTrace> {
    if first_point == 0 {
        return Err(Error::Argument("point index is 1-based".into()));
    }
    if slice_base + 1 >= SLOTS_PER_ROW {
        return Err(Error::Argument(format!(
            "slice pair base {slice_base} leaves no room for a second slice"
        )));
    }
    let phases = vec![
        phase(layout, first_point, slice_base)?,
        phase(layout, first_point + 8, slice_base)?,
        phase(layout, first_point, slice_base + 1)?,
        phase(layout, first_point + 8, slice_base + 1)?,
    ];
    Ok(AccessTrace { phases })
}

/// Per phase: the largest number of accesses landing on one slot.
pub fn count_conflicts(trace: &AccessTrace) -> ConflictReport {
    let per_phase: Vec<usize> = trace
        .phases
        .iter()
        .map(|phase| {
            let mut hits = [0usize; SLOTS_PER_ROW];
            for a in phase {
                hits[a.addr.slot] += 1;
            }
            hits.into_iter().max().unwrap_or(0)
        })
        .collect();
    let max = per_phase.iter().copied().max().unwrap_or(0);
    ConflictReport { per_phase, max }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn trace_of_slots(slots: [usize; 8]) -> AccessTrace {
        let mut phase = [Access {
            lane: 0,
            addr: SlotAddress { row: 0, slot: 0 },
        }; 8];
        for (lane, (a, s)) in phase.iter_mut().zip(slots).enumerate() {
            *a = Access {
                lane,
                addr: SlotAddress { row: lane, slot: s },
            };
        }
        AccessTrace {
            phases: vec![phase],
        }
    }

    #[test]
    fn swizzle_examples() {
        assert_eq!(swizzle_address(1, 3).unwrap(), SlotAddress { row: 0, slot: 3 });
        assert_eq!(swizzle_address(2, 0).unwrap(), SlotAddress { row: 1, slot: 1 });
        assert_eq!(swizzle_address(9, 3).unwrap(), SlotAddress { row: 8, slot: 3 });
        assert!(swizzle_address(1, 8).is_err());
        assert!(swizzle_address(0, 0).is_err());
    }

    #[test]
    fn swizzle_is_a_bijection_and_involution() {
        let mut seen = HashSet::new();
        for i in 1..=256 {
            let mut slots = HashSet::new();
            for s in 0..8 {
                let addr = swizzle_address(i, s).unwrap();
                assert_eq!(addr.row, i - 1);
                assert_eq!(unswizzle_slot(addr), s);
                slots.insert(addr.slot);
                assert!(seen.insert(addr));
            }
            assert_eq!(slots.len(), 8);
        }
    }

    #[test]
    fn count_conflicts_examples() {
        assert_eq!(count_conflicts(&trace_of_slots([0, 1, 2, 3, 4, 5, 6, 7])).max, 1);
        assert_eq!(count_conflicts(&trace_of_slots([5; 8])).max, 8);
        assert_eq!(count_conflicts(&trace_of_slots([0, 0, 1, 1, 2, 2, 3, 3])).max, 2);
    }

    #[test]
    fn store_trace_swizzled_phases_are_permutations() {
        let t = store_trace(1, Layout::Swizzled).unwrap();
        assert_eq!(t.phases.len(), 8);
        for phase in &t.phases {
            let mut slots: Vec<_> = phase.iter().map(|a| a.addr.slot).collect();
            slots.sort_unstable();
            assert_eq!(slots, (0..8).collect::<Vec<_>>());
        }
        let slots = |t: &AccessTrace| -> Vec<Vec<usize>> {
            t.phases
                .iter()
                .map(|p| p.iter().map(|a| a.addr.slot).collect())
                .collect()
        };
        assert_eq!(slots(&t), slots(&store_trace(9, Layout::Swizzled).unwrap()));
    }

    #[test]
    fn store_trace_row_major_collides() {
        let t = store_trace(1, Layout::RowMajor).unwrap();
        for (s, phase) in t.phases.iter().enumerate() {
            assert!(phase.iter().all(|a| a.addr.slot == s));
        }
        assert_eq!(count_conflicts(&t).per_phase, vec![8; 8]);
    }

    #[test]
    fn ldmatrix_phase_order() {
        let t = ldmatrix_trace(1, 2, Layout::RowMajor).unwrap();
        let rows: Vec<usize> = t.phases.iter().map(|p| p[0].addr.row).collect();
        let slots: Vec<usize> = t.phases.iter().map(|p| p[0].addr.slot).collect();
        assert_eq!(rows, vec![0, 8, 0, 8]);
        assert_eq!(slots, vec![2, 2, 3, 3]);
        assert!(ldmatrix_trace(1, 7, Layout::Swizzled).is_err());
    }

    #[test]
    fn ldmatrix_conflict_profiles() {
        for first in (1..=128).step_by(16) {
            for base in 0..7 {
                let sw = count_conflicts(&ldmatrix_trace(first, base, Layout::Swizzled).unwrap());
                assert_eq!(sw.per_phase, vec![1; 4]);
                let rm = count_conflicts(&ldmatrix_trace(first, base, Layout::RowMajor).unwrap());
                assert_eq!(rm.per_phase, vec![8; 4]);
            }
        }
    }
}
