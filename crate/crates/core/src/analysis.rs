//! Reuse calculus, accuracy metrics, selectivity, epsilon calibration and
//! throughput reporting.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::result::ResultSet;
use crate::tiling::TileConfig;

/// Default histogram resolution; odd so one bin is centred on zero error.
pub const DEFAULT_HISTOGRAM_BINS: usize = 61;
pub const MAX_CALIBRATION_ITERATIONS: usize = 40;

/// Peak throughput and bandwidths of the target accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct HardwareModel {
    /// TFLOPS.
    pub peak_tflops: f64,
    pub element_bytes: f64,
    /// TB/s.
    pub dram_bw: f64,
    /// TB/s, effective L2 figure used for the global-memory requirement.
    pub l2_bw: f64,
    /// TB/s.
    pub smem_bw: f64,
}

impl HardwareModel {
    /// A100 figures: 312 TFLOPS FP16, 1.5 TB/s DRAM, 6.4 TB/s L2,
    /// 17.9 TB/s shared memory.
    pub fn a100() -> Self {
        Self {
            peak_tflops: 312.0,
            element_bytes: 2.0,
            dram_bw: 1.5,
            l2_bw: 6.4,
            smem_bw: 17.9,
        }
    }

    /// Same device with the L2 path replaced by raw DRAM bandwidth.
    pub fn without_l2(self) -> Self {
        Self {
            l2_bw: self.dram_bw,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("peak_tflops", self.peak_tflops),
            ("element_bytes", self.element_bytes),
            ("dram_bw", self.dram_bw),
            ("l2_bw", self.l2_bw),
            ("smem_bw", self.smem_bw),
        ];
        for (name, v) in fields {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RequiredReuse {
    pub global: u64,
    pub shared: u64,
}

/// How many times each element must be reused to keep the MMA units fed:
/// one element per FLOP at peak (two FLOPs per two elements), converted to
/// bytes, divided by the bandwidth of the level, rounded to nearest.
pub fn required_reuse(hw: &HardwareModel) -> RequiredReuse {
    // the 1e12 factors of TFLOPS and TB/s cancel
    let demand = hw.peak_tflops * hw.element_bytes;
    RequiredReuse {
        global: round_half_up(demand / hw.l2_bw),
        shared: round_half_up(demand / hw.smem_bw),
    }
}

/// Nearest integer, halves up. Decimal bandwidth figures are inexact in
/// binary, so quotients within 1e-9 (relative) of a half count as the half.
fn round_half_up(q: f64) -> u64 {
    let floor = q.floor();
    if q - floor >= 0.5 - 1e-9 * q.abs().max(1.0) {
        floor as u64 + 1
    } else {
        floor as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TileReuse {
    /// Multiply-adds fed by each element staged per block tile.
    pub block_reuse: u64,
    /// Multiply-adds fed by each element loaded into a warp tile's fragments.
    pub warp_reuse: u64,
    /// MMAs each P fragment (16 points) takes part in: one per Q fragment
    /// column group of the warp tile, `warp_side / 8`.
    pub p_fragment_uses: u64,
    /// MMAs each Q fragment (8 points) takes part in, `warp_side / 16`.
    pub q_fragment_uses: u64,
    pub required: RequiredReuse,
    pub global_ok: bool,
    pub shared_ok: bool,
}

pub fn tile_reuse(cfg: &TileConfig, hw: &HardwareModel) -> TileReuse {
    let required = required_reuse(hw);
    let block_reuse = cfg.block_side as u64;
    let warp_reuse = cfg.warp_side as u64;
    TileReuse {
        block_reuse,
        warp_reuse,
        p_fragment_uses: (cfg.warp_side / 8) as u64,
        q_fragment_uses: (cfg.warp_side / 16) as u64,
        required,
        global_ok: block_reuse >= required.global,
        shared_ok: warp_reuse >= required.shared,
    }
}

fn check_same_n<A, B>(test: &ResultSet<A>, truth: &ResultSet<B>) -> Result<()>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    if test.n() != truth.n() {
        return Err(Error::Argument(format!(
            "result sets cover different datasets (n={} vs n={})",
            test.n(),
            truth.n()
        )));
    }
    Ok(())
}

/// Mean over points of |N_test ∩ N_truth| / |N_test ∪ N_truth|, a point
/// with two empty neighbour sets scoring 1. Self-matches count in both.
pub fn overlap_accuracy<A, B>(test: &ResultSet<A>, truth: &ResultSet<B>) -> Result<f64>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check_same_n(test, truth)?;
    let n = test.n();
    if n == 0 {
        return Ok(1.0);
    }
    let mut total = 0.0f64;
    for i in 0..n as u32 {
        let (a, b) = (test.neighbors(i), truth.neighbors(i));
        let (mut x, mut y, mut inter) = (0, 0, 0usize);
        while x < a.len() && y < b.len() {
            match a[x].j.cmp(&b[y].j) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    x += 1;
                    y += 1;
                }
            }
        }
        let union = a.len() + b.len() - inter;
        total += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Linear bins over `[lo, hi]`; the maximum lands in the last bin.
    pub fn build(values: &[f64], bins: usize) -> Self {
        let bins = bins.max(1);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut counts = vec![0u64; bins];
        if values.is_empty() {
            return Self { lo: 0.0, hi: 0.0, counts };
        }
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - lo) / width) as usize).min(bins - 1)
            } else {
                bins / 2
            };
            counts[b] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn bin_edges(&self, b: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + b as f64 * width, self.lo + (b + 1) as f64 * width)
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let bins = self.counts.len();
        let width = (self.hi - self.lo) / bins as f64;
        if width > 0.0 {
            (((v - self.lo) / width).max(0.0) as usize).min(bins - 1)
        } else {
            bins / 2
        }
    }

    pub fn mode_bin(&self) -> usize {
        let mut best = 0;
        for (b, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = b;
            }
        }
        best
    }

    /// `bin_lo,bin_hi,count` rows with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (b, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(b);
            out.push_str(&format!("{lo:e},{hi:e},{c}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStats {
    pub matched: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub histogram: Histogram,
}

/// Signed per-pair distance error `sqrt(test) - sqrt(truth)` over pairs
/// present in both sets.
pub fn distance_errors<A, B>(test: &ResultSet<A>, truth: &ResultSet<B>) -> Result<Vec<f64>>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    check_same_n(test, truth)?;
    let (a, b) = (test.pairs(), truth.pairs());
    let (mut x, mut y) = (0, 0);
    let mut errors = Vec::new();
    while x < a.len() && y < b.len() {
        match (a[x].i, a[x].j).cmp(&(b[y].i, b[y].j)) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                let da: f64 = a[x].dist_sq.into();
                let db: f64 = b[y].dist_sq.into();
                errors.push(da.max(0.0).sqrt() - db.max(0.0).sqrt());
                x += 1;
                y += 1;
            }
        }
    }
    Ok(errors)
}

pub fn distance_error_stats<A, B>(
    test: &ResultSet<A>,
    truth: &ResultSet<B>,
    bins: usize,
) -> Result<ErrorStats>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    let errors = distance_errors(test, truth)?;
    if errors.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let m = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / m;
    let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / m;
    Ok(ErrorStats {
        matched: errors.len(),
        mean,
        std: var.sqrt(),
        histogram: Histogram::build(&errors, bins),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyReport {
    pub overlap: f64,
    pub err_mean: f64,
    pub err_std: f64,
    pub matched: usize,
    pub histogram: Histogram,
}

pub fn accuracy_report<A, B>(
    test: &ResultSet<A>,
    truth: &ResultSet<B>,
    bins: usize,
) -> Result<AccuracyReport>
where
    A: Copy + Into<f64>,
    B: Copy + Into<f64>,
{
    let overlap = overlap_accuracy(test, truth)?;
    let stats = distance_error_stats(test, truth, bins)?;
    Ok(AccuracyReport {
        overlap,
        err_mean: stats.mean,
        err_std: stats.std,
        matched: stats.matched,
        histogram: stats.histogram,
    })
}

/// Mean number of neighbours per point, self excluded: `(|R| - n) / n`.
pub fn selectivity<D: Copy + Into<f64>>(rs: &ResultSet<D>) -> f64 {
    let n = rs.n().max(1) as f64;
    (rs.len() as f64 - rs.n() as f64) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct Calibration {
    pub epsilon: f64,
    /// Selectivity estimated from the sample, scaled to the full dataset.
    pub estimated_s: f64,
    pub iterations: usize,
    pub sample: usize,
}

/// Sorted FP64 distances of all unordered sample pairs; counting them at a
/// radius is the same as running the FP64 join on the sample.
struct SampleDistances {
    sorted: Vec<f64>,
    m: usize,
    scale: f64,
}

impl SampleDistances {
    fn new(sample: &Dataset, n_full: usize) -> Self {
        use rayon::prelude::*;
        let m = sample.n();
        let mut sorted: Vec<f64> = (0..m)
            .into_par_iter()
            .flat_map_iter(|i| {
                let pi = sample.row(i);
                (i + 1..m).map(move |j| {
                    pi.iter()
                        .zip(sample.row(j))
                        .map(|(&a, &b)| {
                            let t = a as f64 - b as f64;
                            t * t
                        })
                        .sum::<f64>()
                        .sqrt()
                })
            })
            .collect();
        sorted.sort_unstable_by(f64::total_cmp);
        let scale = if m > 1 {
            (n_full - 1) as f64 / (m - 1) as f64
        } else {
            0.0
        };
        Self { sorted, m, scale }
    }

    fn selectivity_at(&self, eps: f64) -> f64 {
        let within = self.sorted.partition_point(|&d| d <= eps);
        2.0 * within as f64 / self.m as f64 * self.scale
    }

    fn max_distance(&self) -> f64 {
        self.sorted.last().copied().unwrap_or(0.0)
    }
}

/// Bisection on epsilon until the sample-estimated selectivity is within
/// `tol * target_s` of the target, or the iteration budget runs out.
pub fn calibrate_epsilon(
    ds: &Dataset,
    target_s: f64,
    tol: f64,
    sample: usize,
    seed: u64,
) -> Result<Calibration> {
    if !(target_s > 0.0) || !target_s.is_finite() {
        return Err(Error::Argument(format!("target selectivity must be > 0, got {target_s}")));
    }
    if !(tol >= 0.0) {
        return Err(Error::Argument(format!("tolerance must be >= 0, got {tol}")));
    }
    let n = ds.n();
    if sample > n {
        return Err(Error::Argument(format!(
            "sample size {sample} exceeds dataset size {n}"
        )));
    }
    if target_s > (n - 1) as f64 {
        return Err(Error::Calibration {
            message: format!("target selectivity {target_s} unreachable with {n} points"),
            lo_s: 0.0,
            hi_s: (n - 1) as f64,
        });
    }
    if sample < 2 {
        return Err(Error::Argument("calibration sample needs at least 2 points".into()));
    }
    let sampled = if sample == n {
        ds.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = rand::seq::index::sample(&mut rng, n, sample).into_vec();
        idx.sort_unstable();
        ds.select(&idx)?
    };
    let dists = SampleDistances::new(&sampled, n);

    let accept = |s: f64| (s - target_s).abs() <= tol * target_s;
    let mut lo = 0.0f64;
    let mut hi = dists.max_distance();
    if hi == 0.0 {
        hi = 1.0;
    }
    let (s_lo, s_hi) = (dists.selectivity_at(lo), dists.selectivity_at(hi));
    if s_lo > target_s * (1.0 + tol) || s_hi < target_s * (1.0 - tol) {
        return Err(Error::Calibration {
            message: "initial interval does not bracket the target".into(),
            lo_s: s_lo,
            hi_s: s_hi,
        });
    }

    let mut eps = 0.5 * (lo + hi);
    let mut s = dists.selectivity_at(eps);
    let mut iterations = 1;
    while !accept(s) && iterations < MAX_CALIBRATION_ITERATIONS {
        if s < target_s {
            lo = eps;
        } else {
            hi = eps;
        }
        eps = 0.5 * (lo + hi);
        s = dists.selectivity_at(eps);
        iterations += 1;
    }
    Ok(Calibration {
        epsilon: eps,
        estimated_s: s,
        iterations,
        sample,
    })
}

/// `2 * n_padded^2 * d_padded / elapsed`, in TFLOPS.
pub fn derived_flops(n_padded: usize, d_padded: usize, elapsed_seconds: f64) -> f64 {
    let n = n_padded as f64;
    2.0 * n * n * d_padded as f64 / elapsed_seconds / 1e12
}

/// Ordered metric collection with text and JSON renderings.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    entries: Vec<Metric>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub metric: String,
    pub value: serde_json::Value,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, metric: &str, value: impl Into<serde_json::Value>) -> &mut Self {
        self.entries.push(Metric {
            metric: metric.to_owned(),
            value: value.into(),
        });
        self
    }

    pub fn entries(&self) -> &[Metric] {
        &self.entries
    }

    pub fn get(&self, metric: &str) -> Option<&serde_json::Value> {
        self.entries.iter().find(|m| m.metric == metric).map(|m| &m.value)
    }

    /// One `key=value` line per metric.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.entries {
            let v = match &m.value {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{}={}\n", m.metric, v));
        }
        out
    }

    /// JSON array of `{"metric": ..., "value": ...}` objects.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("metrics serialize")
    }
}
