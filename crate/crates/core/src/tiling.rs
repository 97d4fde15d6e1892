//! Tiled epsilon self-join.
//!
//! The distance matrix is cut into `block_side x block_side` block tiles
//! handed out from a rasterized work queue. A block tile stages
//! `block_kslice` dimensions of its row and column points at a time, and
//! every `warp_side x warp_side` warp tile inside it walks the staged slice
//! in `warp_kslice` (16) steps, loading P fragments (16 points) and Q
//! fragments (8 points) and running one MMA per fragment pair.
//!
//! Each accumulator only ever sees its own products in ascending `k`, so any
//! legal configuration and any worker count produce bit-identical distances.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::dataset::HalfDataset;
use crate::error::{Error, Result};
use crate::mma::{combine_distance, mma_wide, AccTile, WideP, WideQ, FRAG_K, FRAG_M, FRAG_N};
use crate::result::{Pair, ResultSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TileConfig {
    pub block_side: usize,
    pub block_kslice: usize,
    pub warp_side: usize,
    pub warp_kslice: usize,
    /// Side, in block tiles, of the squares the work queue is ordered by.
    /// 1 degenerates to plain row-major order.
    pub dispatch_square: usize,
    /// 2 stages the next block k-slice before consuming the current one.
    pub prefetch_depth: usize,
    pub workers: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            block_side: 128,
            block_kslice: 64,
            warp_side: 64,
            warp_kslice: 16,
            dispatch_square: 8,
            prefetch_depth: 2,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

impl TileConfig {
    /// One block tile and one warp tile covering all `n_padded` points.
    pub fn single_tile(n_padded: usize) -> Self {
        Self {
            block_side: n_padded,
            warp_side: n_padded,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.warp_kslice != FRAG_K {
            return fail(format!("warp_kslice must be {FRAG_K}, got {}", self.warp_kslice));
        }
        if self.warp_side == 0 || !self.warp_side.is_multiple_of(FRAG_M) || !self.warp_side.is_multiple_of(FRAG_N) {
            return fail(format!(
                "warp_side {} must be a positive multiple of {FRAG_M} and {FRAG_N}",
                self.warp_side
            ));
        }
        if self.block_side == 0 || !self.block_side.is_multiple_of(self.warp_side) {
            return fail(format!(
                "block_side {} must be a positive multiple of warp_side {}",
                self.block_side, self.warp_side
            ));
        }
        if self.block_kslice == 0 || !self.block_kslice.is_multiple_of(self.warp_kslice) {
            return fail(format!(
                "block_kslice {} must be a positive multiple of warp_kslice {}",
                self.block_kslice, self.warp_kslice
            ));
        }
        if self.dispatch_square == 0 {
            return fail("dispatch_square must be at least 1".into());
        }
        if !(1..=2).contains(&self.prefetch_depth) {
            return fail(format!("prefetch_depth must be 1 or 2, got {}", self.prefetch_depth));
        }
        if self.workers == 0 {
            return fail("workers must be at least 1".into());
        }
        Ok(())
    }

    fn check_dataset(&self, hd: &HalfDataset) -> Result<()> {
        self.validate()?;
        if !hd.n_padded().is_multiple_of(self.block_side) {
            return Err(Error::Config(format!(
                "padded point count {} is not a multiple of block_side {}",
                hd.n_padded(),
                self.block_side
            )));
        }
        if !hd.d_padded().is_multiple_of(self.warp_kslice) {
            return Err(Error::Config(format!(
                "padded dimensionality {} is not a multiple of warp_kslice {}",
                hd.d_padded(),
                self.warp_kslice
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub row_block: usize,
    pub col_block: usize,
}

/// Orders the grid in `square x square` groups: groups row-major over the
/// grid, tiles row-major inside each group, edge groups truncated.
pub fn rasterize_tiles(grid_rows: usize, grid_cols: usize, square: usize) -> Vec<TileCoord> {
    let square = square.max(1);
    let mut order = Vec::with_capacity(grid_rows * grid_cols);
    for group_row in (0..grid_rows).step_by(square) {
        for group_col in (0..grid_cols).step_by(square) {
            for row_block in group_row..(group_row + square).min(grid_rows) {
                for col_block in group_col..(group_col + square).min(grid_cols) {
                    order.push(TileCoord {
                        row_block,
                        col_block,
                    });
                }
            }
        }
    }
    order
}

/// Work counters for reuse accounting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TileCounters {
    pub block_iterations: u64,
    /// FP16 values copied into staging buffers (row and column slabs).
    pub staged_elements: u64,
    pub p_fragment_loads: u64,
    pub q_fragment_loads: u64,
    pub mma_ops: u64,
    /// Scalar multiply-accumulates performed.
    pub accumulator_updates: u64,
}

impl TileCounters {
    fn add(&mut self, other: &TileCounters) {
        self.block_iterations += other.block_iterations;
        self.staged_elements += other.staged_elements;
        self.p_fragment_loads += other.p_fragment_loads;
        self.q_fragment_loads += other.q_fragment_loads;
        self.mma_ops += other.mma_ops;
        self.accumulator_updates += other.accumulator_updates;
    }
}

/// Per-worker buffers, reused across tiles.
struct Scratch {
    /// `prefetch_depth` pairs of (row slab, column slab), `block_side x
    /// block_kslice` widened values each, point-major.
    stages: Vec<(Vec<f32>, Vec<f32>)>,
    /// Accumulator fragments of the block tile, indexed
    /// `row_frag * (block_side / FRAG_N) + col_frag`.
    acc: Vec<AccTile>,
    p_frags: Vec<WideP>,
    q_frags: Vec<WideQ>,
}

impl Scratch {
    fn new(cfg: &TileConfig) -> Self {
        let slab = cfg.block_side * cfg.block_kslice;
        Self {
            stages: (0..cfg.prefetch_depth)
                .map(|_| (vec![0.0; slab], vec![0.0; slab]))
                .collect(),
            acc: vec![[[0.0; FRAG_N]; FRAG_M]; (cfg.block_side / FRAG_M) * (cfg.block_side / FRAG_N)],
            p_frags: vec![[[0.0; FRAG_K]; FRAG_M]; cfg.warp_side / FRAG_M],
            q_frags: vec![[[0.0; FRAG_N]; FRAG_K]; cfg.warp_side / FRAG_N],
        }
    }
}

struct TileJob<'a> {
    hd: &'a HalfDataset,
    cfg: &'a TileConfig,
    eps_sq: f32,
}

impl TileJob<'_> {
    /// Copies dims `[k0, k0 + width)` of the tile's row and column points
    /// into a staging pair, widening to FP32.
    fn stage(
        &self,
        coord: TileCoord,
        k0: usize,
        width: usize,
        stage: &mut (Vec<f32>, Vec<f32>),
        counters: &mut TileCounters,
    ) {
        let bs = self.cfg.block_side;
        let bk = self.cfg.block_kslice;
        let (rows, cols) = stage;
        for (slab, block) in [(rows, coord.row_block), (cols, coord.col_block)] {
            for p in 0..bs {
                let src = &self.hd.row(block * bs + p)[k0..k0 + width];
                for (dst, h) in slab[p * bk..p * bk + width].iter_mut().zip(src) {
                    *dst = h.to_f32();
                }
            }
        }
        counters.block_iterations += 1;
        counters.staged_elements += 2 * (bs * width) as u64;
    }

    /// Runs every warp tile of the block over one staged k-slice.
    fn consume(
        &self,
        stage: &(Vec<f32>, Vec<f32>),
        width: usize,
        acc: &mut [AccTile],
        p_frags: &mut [WideP],
        q_frags: &mut [WideQ],
        counters: &mut TileCounters,
    ) -> std::result::Result<(), (usize, usize)> {
        let bs = self.cfg.block_side;
        let bk = self.cfg.block_kslice;
        let ws = self.cfg.warp_side;
        let col_frags = bs / FRAG_N;
        let (rows, cols) = stage;
        for warp_row in (0..bs).step_by(ws) {
            for warp_col in (0..bs).step_by(ws) {
                for kk in (0..width).step_by(FRAG_K) {
                    for (f, frag) in p_frags.iter_mut().enumerate() {
                        let base = warp_row + f * FRAG_M;
                        for (r, dst) in frag.iter_mut().enumerate() {
                            let off = (base + r) * bk + kk;
                            dst.copy_from_slice(&rows[off..off + FRAG_K]);
                        }
                    }
                    for (f, frag) in q_frags.iter_mut().enumerate() {
                        let base = warp_col + f * FRAG_N;
                        for (c, point) in (base..base + FRAG_N).enumerate() {
                            let off = point * bk + kk;
                            for (k, &v) in cols[off..off + FRAG_K].iter().enumerate() {
                                frag[k][c] = v;
                            }
                        }
                    }
                    counters.p_fragment_loads += p_frags.len() as u64;
                    counters.q_fragment_loads += q_frags.len() as u64;
                    for (pf, p) in p_frags.iter().enumerate() {
                        let row_frag = (warp_row / FRAG_M) + pf;
                        for (qf, q) in q_frags.iter().enumerate() {
                            let col_frag = (warp_col / FRAG_N) + qf;
                            let tile = &mut acc[row_frag * col_frags + col_frag];
                            if let Err(Error::Overflow { row, col }) = mma_wide(p, q, tile) {
                                return Err((row_frag * FRAG_M + row, col_frag * FRAG_N + col));
                            }
                        }
                    }
                    let mmas = (p_frags.len() * q_frags.len()) as u64;
                    counters.mma_ops += mmas;
                    counters.accumulator_updates += mmas * (FRAG_M * FRAG_N * FRAG_K) as u64;
                }
            }
        }
        Ok(())
    }

    fn run(
        &self,
        coord: TileCoord,
        scratch: &mut Scratch,
        counters: &mut TileCounters,
        out: &mut Vec<Pair>,
    ) -> Result<()> {
        let bs = self.cfg.block_side;
        let n = self.hd.n_logical();
        let (row0, col0) = (coord.row_block * bs, coord.col_block * bs);
        if row0 >= n || col0 >= n {
            return Ok(());
        }
        let d = self.hd.d_padded();
        let bk = self.cfg.block_kslice;
        let slices: Vec<(usize, usize)> = (0..d).step_by(bk).map(|k0| (k0, bk.min(d - k0))).collect();

        let Scratch {
            stages,
            acc,
            p_frags,
            q_frags,
        } = scratch;
        acc.fill([[0.0; FRAG_N]; FRAG_M]);
        let overflow = |(r, c): (usize, usize)| Error::Overflow {
            row: row0 + r,
            col: col0 + c,
        };

        if stages.len() >= 2 {
            // double buffering: slice s+1 is staged before slice s is consumed
            let (front, back) = stages.split_at_mut(1);
            let (mut cur, mut next) = (&mut front[0], &mut back[0]);
            if let Some(&(k0, w)) = slices.first() {
                self.stage(coord, k0, w, cur, counters);
            }
            for (s, &(_, width)) in slices.iter().enumerate() {
                if let Some(&(k0, w)) = slices.get(s + 1) {
                    self.stage(coord, k0, w, next, counters);
                }
                self.consume(cur, width, acc, p_frags, q_frags, counters)
                    .map_err(overflow)?;
                std::mem::swap(&mut cur, &mut next);
            }
        } else {
            let stage = &mut stages[0];
            for &(k0, width) in &slices {
                self.stage(coord, k0, width, stage, counters);
                self.consume(stage, width, acc, p_frags, q_frags, counters)
                    .map_err(overflow)?;
            }
        }

        let norms = self.hd.norms();
        let col_frags = bs / FRAG_N;
        let rows = bs.min(n - row0);
        let cols = bs.min(n - col0);
        for r in 0..rows {
            let i = row0 + r;
            let row_tiles = &acc[(r / FRAG_M) * col_frags..(r / FRAG_M + 1) * col_frags];
            for c in 0..cols {
                let j = col0 + c;
                let a = row_tiles[c / FRAG_N][r % FRAG_M][c % FRAG_N];
                let dist_sq = combine_distance(a, norms[i], norms[j]);
                if dist_sq <= self.eps_sq {
                    out.push(Pair {
                        i: i as u32,
                        j: j as u32,
                        dist_sq,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Distances of one block tile, filtered by `dist_sq <= eps_sq` and by
/// the index range of real (non-padding) points.
pub fn compute_block_tile(
    hd: &HalfDataset,
    coord: TileCoord,
    eps_sq: f32,
    cfg: &TileConfig,
) -> Result<Vec<Pair>> {
    compute_block_tile_instrumented(hd, coord, eps_sq, cfg).map(|(pairs, _)| pairs)
}

pub fn compute_block_tile_instrumented(
    hd: &HalfDataset,
    coord: TileCoord,
    eps_sq: f32,
    cfg: &TileConfig,
) -> Result<(Vec<Pair>, TileCounters)> {
    cfg.check_dataset(hd)?;
    if !(eps_sq >= 0.0) {
        return Err(Error::Argument(format!("eps_sq must be >= 0, got {eps_sq}")));
    }
    let grid = hd.n_padded() / cfg.block_side;
    if coord.row_block >= grid || coord.col_block >= grid {
        return Err(Error::Argument(format!("tile {coord:?} outside {grid}x{grid} grid")));
    }
    let job = TileJob { hd, cfg, eps_sq };
    let mut scratch = Scratch::new(cfg);
    let mut counters = TileCounters::default();
    let mut out = Vec::new();
    job.run(coord, &mut scratch, &mut counters, &mut out)?;
    Ok((out, counters))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JoinTimings {
    pub kernel: Duration,
    pub merge: Duration,
}

#[derive(Debug, Clone)]
pub struct JoinOutput {
    pub results: ResultSet,
    pub timings: JoinTimings,
    pub counters: TileCounters,
}

/// Full self-join: pairs with squared distance `<= epsilon^2`, `epsilon^2`
/// computed once in FP32.
pub fn self_join(hd: &HalfDataset, epsilon: f32, cfg: &TileConfig) -> Result<ResultSet> {
    self_join_detailed(hd, epsilon, cfg).map(|o| o.results)
}

pub fn self_join_detailed(hd: &HalfDataset, epsilon: f32, cfg: &TileConfig) -> Result<JoinOutput> {
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::Argument(format!(
            "epsilon must be finite and >= 0, got {epsilon}"
        )));
    }
    cfg.check_dataset(hd)?;
    let eps_sq = epsilon * epsilon;
    let grid = hd.n_padded() / cfg.block_side;
    let order = rasterize_tiles(grid, grid, cfg.dispatch_square);
    let job = TileJob { hd, cfg, eps_sq };

    let kernel_start = Instant::now();
    let cursor = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let first_error: Mutex<Option<(usize, Error)>> = Mutex::new(None);

    let worker = || {
        let mut scratch = Scratch::new(cfg);
        let mut counters = TileCounters::default();
        let mut out = Vec::new();
        while !stop.load(Ordering::Relaxed) {
            let idx = cursor.fetch_add(1, Ordering::Relaxed);
            let Some(&coord) = order.get(idx) else { break };
            if let Err(e) = job.run(coord, &mut scratch, &mut counters, &mut out) {
                stop.store(true, Ordering::Relaxed);
                let mut slot = first_error.lock().unwrap();
                if slot.as_ref().is_none_or(|(i, _)| idx < *i) {
                    *slot = Some((idx, e));
                }
                break;
            }
        }
        (out, counters)
    };

    let workers = cfg.workers.min(order.len()).max(1);
    let buffers: Vec<(Vec<Pair>, TileCounters)> = if workers == 1 {
        vec![worker()]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers).map(|_| s.spawn(worker)).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("join worker panicked"))
                .collect()
        })
    };
    let kernel = kernel_start.elapsed();
    if let Some((_, e)) = first_error.into_inner().unwrap() {
        return Err(e);
    }

    let merge_start = Instant::now();
    let total: usize = buffers.iter().map(|(b, _)| b.len()).sum();
    let mut pairs = Vec::with_capacity(total);
    let mut counters = TileCounters::default();
    for (buf, c) in buffers {
        pairs.extend(buf);
        counters.add(&c);
    }
    let results = ResultSet::new(pairs, hd.n_logical(), epsilon as f64);
    let merge = merge_start.elapsed();

    Ok(JoinOutput {
        results,
        timings: JoinTimings { kernel, merge },
        counters,
    })
}
