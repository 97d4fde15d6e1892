//! Join output: canonical (i, j)-sorted pair lists and the binary pairs file.
//!
//! Pairs file layout, all little-endian: `u64` pair count, then per pair
//! `u32 i`, `u32 j`, `f32 dist_sq`. Indices are 0-based.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pair<D = f32> {
    pub i: u32,
    pub j: u32,
    pub dist_sq: D,
}

/// All ordered pairs within `epsilon`, self-pairs included, sorted by
/// `(i, j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet<D = f32> {
    pairs: Vec<Pair<D>>,
    n: usize,
    epsilon: f64,
}

impl<D: Copy + Into<f64>> ResultSet<D> {
    /// Sorts `pairs` into canonical order.
    pub fn new(mut pairs: Vec<Pair<D>>, n: usize, epsilon: f64) -> Self {
        pairs.sort_unstable_by_key(|p| (p.i, p.j));
        Self { pairs, n, epsilon }
    }

    pub fn pairs(&self) -> &[Pair<D>] {
        &self.pairs
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs whose first index is `i`, sorted by `j`.
    pub fn neighbors(&self, i: u32) -> &[Pair<D>] {
        let lo = self.pairs.partition_point(|p| p.i < i);
        let hi = self.pairs.partition_point(|p| p.i <= i);
        &self.pairs[lo..hi]
    }

    /// `(i, j)` pairs only, for set comparisons across precisions.
    pub fn index_pairs(&self) -> Vec<(u32, u32)> {
        self.pairs.iter().map(|p| (p.i, p.j)).collect()
    }

    pub fn has_all_self_pairs(&self) -> bool {
        (0..self.n as u32).all(|i| self.neighbors(i).iter().any(|p| p.j == i))
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs.iter().all(|p| {
            self.neighbors(p.j)
                .binary_search_by_key(&p.i, |q| q.j)
                .is_ok()
        })
    }

    pub fn indices_in_range(&self) -> bool {
        self.pairs
            .iter()
            .all(|p| (p.i as usize) < self.n && (p.j as usize) < self.n)
    }
}

impl ResultSet<f32> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 12 * self.pairs.len());
        out.extend_from_slice(&(self.pairs.len() as u64).to_le_bytes());
        for p in &self.pairs {
            out.extend_from_slice(&p.i.to_le_bytes());
            out.extend_from_slice(&p.j.to_le_bytes());
            out.extend_from_slice(&p.dist_sq.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], n: usize, epsilon: f64) -> Result<Self> {
        let header = bytes
            .get(..8)
            .ok_or_else(|| Error::format(0, "pairs file shorter than its count header"))?;
        let count = u64::from_le_bytes(header.try_into().unwrap());
        let body = &bytes[8..];
        if body.len() as u64 != count.saturating_mul(12) {
            return Err(Error::format(
                8,
                format!("header declares {count} pairs but body holds {} bytes", body.len()),
            ));
        }
        let pairs = body
            .chunks_exact(12)
            .map(|c| Pair {
                i: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                j: u32::from_le_bytes(c[4..8].try_into().unwrap()),
                dist_sq: f32::from_le_bytes(c[8..12].try_into().unwrap()),
            })
            .collect();
        let rs = ResultSet::new(pairs, n, epsilon);
        if !rs.indices_in_range() {
            return Err(Error::format(8, format!("pair index exceeds dataset size {n}")));
        }
        Ok(rs)
    }

    pub fn write_pairs(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pairs(path: impl AsRef<Path>, n: usize, epsilon: f64) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, n, epsilon)
    }
}
