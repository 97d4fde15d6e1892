//! Command-line front end. Every subcommand is an ordinary function over
//! parsed arguments that writes its report to a `Write`, so the binary is a
//! thin shell around [`run`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    accuracy_report, calibrate_epsilon, derived_flops, required_reuse, selectivity, tile_reuse,
    Calibration, HardwareModel, MetricReport, DEFAULT_HISTOGRAM_BINS,
};
use crate::dataset::{generate_synthetic, load_fvecs, to_half, Dataset, DEFAULT_KSLICE};
use crate::error::{Error, Result};
use crate::layout::{count_conflicts, ldmatrix_trace, store_trace, Layout};
use crate::oracle::brute_force_fp64;
use crate::result::ResultSet;
use crate::tiling::{self_join_detailed, TileConfig};

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_CALIBRATION_SAMPLE: usize = 2000;

#[derive(Debug, Parser)]
#[command(name = "halfjoin", version, about = "FP16-32 Euclidean distance self-join")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the mixed-precision self-join.
    Join(JoinArgs),
    /// Compare the mixed-precision join against the FP64 brute-force join.
    Accuracy(AccuracyArgs),
    /// Sweep dataset sizes and dimensionalities and emit timing CSV.
    ///
    /// CSV columns: variant, n, d, n_padded, d_padded, block_side,
    /// warp_side, dispatch_square, prefetch_depth, workers, epsilon, pairs,
    /// convert_s, kernel_s, merge_s, total_s, kernel_tflops, total_tflops.
    /// kernel_tflops uses the join kernel time only; total_tflops adds
    /// conversion and merge.
    Bench(BenchArgs),
    /// Find the epsilon that yields a target selectivity.
    Calibrate(CalibrateArgs),
    /// Print bank-conflict degrees for swizzled and row-major staging.
    VerifyLayout,
    /// Print required and achieved data reuse for a hardware model.
    Reuse(ReuseArgs),
}

/// `NxD`, e.g. `1000x64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
}

impl FromStr for SyntheticSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let (n, d) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected NxD, got {s:?}"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Self {
            n: parse(n)?,
            d: parse(d)?,
        })
    }
}

#[derive(Debug, Clone, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["synthetic", "fvecs"])))]
pub struct SourceArgs {
    /// Uniform synthetic dataset of N points in D dimensions.
    #[arg(long, value_name = "NxD")]
    pub synthetic: Option<SyntheticSpec>,
    /// fvecs file to load.
    #[arg(long, value_name = "PATH")]
    pub fvecs: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Lower bound of synthetic coordinates.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub lo: f32,
    /// Upper bound (exclusive) of synthetic coordinates.
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub hi: f32,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EpsilonArgs {
    /// Search radius.
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f32>,
    /// Calibrate epsilon to this selectivity instead.
    #[arg(long, conflicts_with = "epsilon")]
    pub target_selectivity: Option<f64>,
    /// Relative tolerance on the calibrated selectivity.
    #[arg(long, default_value_t = 0.05)]
    pub calib_tol: f64,
    /// Points sampled for calibration (capped at the dataset size).
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLE)]
    pub calib_sample: usize,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub block_side: Option<usize>,
    #[arg(long)]
    pub block_kslice: Option<usize>,
    #[arg(long)]
    pub warp_side: Option<usize>,
    #[arg(long)]
    pub dispatch_square: Option<usize>,
    #[arg(long)]
    pub prefetch_depth: Option<usize>,
    /// Dispatch block tiles in plain row-major order.
    #[arg(long)]
    pub no_raster_order: bool,
    /// Stage each k-slice only when it is consumed.
    #[arg(long)]
    pub no_prefetch: bool,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<TileConfig> {
        let mut cfg = TileConfig::default();
        if let Some(v) = self.block_side {
            cfg.block_side = v;
        }
        if let Some(v) = self.block_kslice {
            cfg.block_kslice = v;
        }
        if let Some(v) = self.warp_side {
            cfg.warp_side = v;
        }
        if let Some(v) = self.dispatch_square {
            cfg.dispatch_square = v;
        }
        if let Some(v) = self.prefetch_depth {
            cfg.prefetch_depth = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if self.no_raster_order {
            cfg.dispatch_square = 1;
        }
        if self.no_prefetch {
            cfg.prefetch_depth = 1;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct JoinArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub epsilon: EpsilonArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write the pair list in the binary pairs format.
    #[arg(long, value_name = "PATH")]
    pub pairs_out: Option<PathBuf>,
    /// Write the run manifest as JSON.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct AccuracyArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub epsilon: EpsilonArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Compare a previous `join` run (its manifest and pairs file) instead
    /// of running the mixed join again.
    #[arg(long, value_name = "MANIFEST")]
    pub test_run: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_HISTOGRAM_BINS)]
    pub bins: usize,
    /// Write the distance-error histogram as CSV.
    #[arg(long, value_name = "PATH")]
    pub histogram_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Comma-separated dataset sizes.
    #[arg(long, value_delimiter = ',', default_value = "4096")]
    pub n: Vec<usize>,
    /// Comma-separated dimensionalities.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    pub d: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Fixed search radius; by default `radius_scale * sqrt(d / 6)`, a
    /// fraction of the mean distance between unit-uniform points.
    #[arg(long)]
    pub epsilon: Option<f32>,
    #[arg(long, default_value_t = 0.5)]
    pub radius_scale: f32,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Also run each cell with every optimization switched off in turn.
    #[arg(long)]
    pub leave_one_out: bool,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Write CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub csv: Option<PathBuf>,
    /// Write one manifest per CSV row as a JSON array.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[arg(long)]
    pub target_selectivity: f64,
    #[arg(long, default_value_t = 0.05)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_CALIBRATION_SAMPLE)]
    pub sample: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub sample_seed: u64,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct ReuseArgs {
    #[arg(long, default_value_t = 312.0)]
    pub peak_tflops: f64,
    #[arg(long, default_value_t = 2.0)]
    pub element_bytes: f64,
    #[arg(long, default_value_t = 1.5)]
    pub dram_bw: f64,
    #[arg(long, default_value_t = 6.4)]
    pub l2_bw: f64,
    #[arg(long, default_value_t = 17.9)]
    pub smem_bw: f64,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SourceDesc {
    Synthetic {
        n: usize,
        d: usize,
        seed: u64,
        lo: f32,
        hi: f32,
    },
    Fvecs {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub ingest_s: f64,
    pub calibrate_s: f64,
    pub convert_s: f64,
    pub join_s: f64,
    pub merge_s: f64,
}

impl PhaseTimings {
    pub fn total_s(&self) -> f64 {
        self.ingest_s + self.calibrate_s + self.convert_s + self.join_s + self.merge_s
    }
}

/// Everything needed to reproduce a run's result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub source: SourceDesc,
    pub n: usize,
    pub d: usize,
    pub dataset_hash: String,
    pub epsilon: f64,
    pub target_selectivity: Option<f64>,
    pub calibration: Option<Calibration>,
    pub config: TileConfig,
    pub variant: Option<String>,
    pub pairs: usize,
    pub pairs_file: Option<PathBuf>,
    pub timings: PhaseTimings,
}

impl RunManifest {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self).expect("manifest serializes"))
    }
}

fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn load_source(src: &SourceArgs) -> Result<(Dataset, SourceDesc)> {
    match (&src.synthetic, &src.fvecs) {
        (Some(spec), None) => {
            let ds = generate_synthetic(spec.n, spec.d, src.seed, src.lo, src.hi)?;
            let desc = SourceDesc::Synthetic {
                n: spec.n,
                d: spec.d,
                seed: src.seed,
                lo: src.lo,
                hi: src.hi,
            };
            Ok((ds, desc))
        }
        (None, Some(path)) => Ok((load_fvecs(path)?, SourceDesc::Fvecs { path: path.clone() })),
        _ => Err(Error::Argument("give exactly one of --synthetic or --fvecs".into())),
    }
}

fn validate_epsilon_args(args: &EpsilonArgs, required: bool) -> Result<()> {
    match (args.epsilon, args.target_selectivity) {
        (Some(eps), _) if !(eps >= 0.0) || !eps.is_finite() => Err(Error::Argument(format!(
            "epsilon must be finite and >= 0, got {eps}"
        ))),
        (_, Some(s)) if !(s > 0.0) || !s.is_finite() => Err(Error::Argument(format!(
            "target selectivity must be > 0, got {s}"
        ))),
        (None, None) if required => Err(Error::Argument(
            "give --epsilon or --target-selectivity".into(),
        )),
        _ => Ok(()),
    }
}

/// Resolved radius plus the calibration that produced it, if any.
fn resolve_epsilon(
    args: &EpsilonArgs,
    ds: &Dataset,
    seed: u64,
    timings: &mut PhaseTimings,
) -> Result<(f32, Option<Calibration>)> {
    if let Some(eps) = args.epsilon {
        return Ok((eps, None));
    }
    let target = args
        .target_selectivity
        .ok_or_else(|| Error::Argument("give --epsilon or --target-selectivity".into()))?;
    let start = Instant::now();
    let sample = args.calib_sample.min(ds.n());
    let cal = calibrate_epsilon(ds, target, args.calib_tol, sample, seed)?;
    timings.calibrate_s = start.elapsed().as_secs_f64();
    Ok((cal.epsilon as f32, Some(cal)))
}

/// Converted dataset shape and join output of one mixed-precision run.
pub struct MixedRun {
    pub results: ResultSet,
    pub n_padded: usize,
    pub d_padded: usize,
    pub timings: PhaseTimings,
}

/// FP16 conversion and tiled join with phase timings.
pub fn run_mixed(ds: &Dataset, epsilon: f32, cfg: &TileConfig) -> Result<MixedRun> {
    let mut timings = PhaseTimings::default();
    let start = Instant::now();
    let hd = to_half(ds, cfg.block_side, DEFAULT_KSLICE)?;
    timings.convert_s = start.elapsed().as_secs_f64();
    let out = self_join_detailed(&hd, epsilon, cfg)?;
    timings.join_s = out.timings.kernel.as_secs_f64();
    timings.merge_s = out.timings.merge.as_secs_f64();
    Ok(MixedRun {
        results: out.results,
        n_padded: hd.n_padded(),
        d_padded: hd.d_padded(),
        timings,
    })
}

fn emit(out: &mut dyn Write, report: &MetricReport, format: OutputFormat) -> Result<()> {
    let text = match format {
        OutputFormat::Text => report.to_text(),
        OutputFormat::Json => report.to_json() + "\n",
    };
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_join(args: &JoinArgs, out: &mut dyn Write) -> Result<RunManifest> {
    validate_epsilon_args(&args.epsilon, true)?;
    let cfg = args.config.resolve()?;

    let mut timings = PhaseTimings::default();
    let start = Instant::now();
    let (ds, source) = load_source(&args.source)?;
    timings.ingest_s = start.elapsed().as_secs_f64();
    let (epsilon, calibration) = resolve_epsilon(&args.epsilon, &ds, args.source.seed, &mut timings)?;

    let run = run_mixed(&ds, epsilon, &cfg)?;
    timings.convert_s = run.timings.convert_s;
    timings.join_s = run.timings.join_s;
    timings.merge_s = run.timings.merge_s;

    if let Some(path) = &args.pairs_out {
        run.results.write_pairs(path)?;
    }
    let manifest = RunManifest {
        command: "join".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        source,
        n: ds.n(),
        d: ds.d(),
        dataset_hash: ds.content_hash(),
        epsilon: epsilon as f64,
        target_selectivity: args.epsilon.target_selectivity,
        calibration,
        config: cfg,
        variant: None,
        pairs: run.results.len(),
        pairs_file: args.pairs_out.clone(),
        timings,
    };
    if let Some(path) = &args.manifest {
        manifest.write(path)?;
    }

    let mut report = MetricReport::new();
    report
        .push("n", ds.n())
        .push("d", ds.d())
        .push("n_padded", run.n_padded)
        .push("d_padded", run.d_padded)
        .push("epsilon", epsilon as f64)
        .push("pairs", run.results.len())
        .push("selectivity", selectivity(&run.results))
        .push("ingest_s", timings.ingest_s)
        .push("calibrate_s", timings.calibrate_s)
        .push("convert_s", timings.convert_s)
        .push("kernel_s", timings.join_s)
        .push("merge_s", timings.merge_s)
        .push("total_s", timings.total_s())
        .push(
            "kernel_tflops",
            derived_flops(run.n_padded, run.d_padded, timings.join_s.max(1e-9)),
        )
        .push("dataset_hash", manifest.dataset_hash.clone());
    emit(out, &report, args.format)?;
    Ok(manifest)
}

/// Loads the result set a previous `join` run recorded, refusing runs made
/// on a different dataset.
pub fn load_recorded_run(manifest_path: &Path, dataset_hash: &str) -> Result<(RunManifest, ResultSet)> {
    let manifest = RunManifest::read(manifest_path)?;
    if manifest.dataset_hash != dataset_hash {
        return Err(Error::DatasetMismatch(format!(
            "run {} was made on dataset {}, current dataset is {}",
            manifest_path.display(),
            manifest.dataset_hash,
            dataset_hash
        )));
    }
    let pairs_file = manifest.pairs_file.clone().ok_or_else(|| {
        Error::Argument(format!("run {} recorded no pairs file", manifest_path.display()))
    })?;
    let pairs_path = if pairs_file.is_relative() && !pairs_file.exists() {
        manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&pairs_file)
    } else {
        pairs_file
    };
    let rs = ResultSet::read_pairs(&pairs_path, manifest.n, manifest.epsilon)?;
    Ok((manifest, rs))
}

pub fn cmd_accuracy(args: &AccuracyArgs, out: &mut dyn Write) -> Result<crate::analysis::AccuracyReport> {
    validate_epsilon_args(&args.epsilon, args.test_run.is_none())?;
    let cfg = args.config.resolve()?;
    let (ds, _) = load_source(&args.source)?;
    let hash = ds.content_hash();

    let mut timings = PhaseTimings::default();
    let (test, epsilon) = match &args.test_run {
        Some(path) => {
            let (manifest, rs) = load_recorded_run(path, &hash)?;
            (rs, manifest.epsilon as f32)
        }
        None => {
            let (eps, _) = resolve_epsilon(&args.epsilon, &ds, args.source.seed, &mut timings)?;
            (run_mixed(&ds, eps, &cfg)?.results, eps)
        }
    };
    let truth = brute_force_fp64(&ds, epsilon as f64)?;
    let acc = accuracy_report(&test, &truth, args.bins)?;

    if let Some(path) = &args.histogram_csv {
        write_file(path, acc.histogram.to_csv())?;
    }
    let mut report = MetricReport::new();
    report
        .push("n", ds.n())
        .push("d", ds.d())
        .push("epsilon", epsilon as f64)
        .push("pairs_mixed", test.len())
        .push("pairs_fp64", truth.len())
        .push("selectivity_mixed", selectivity(&test))
        .push("selectivity_fp64", selectivity(&truth))
        .push("overlap", acc.overlap)
        .push("matched", acc.matched)
        .push("err_mean", acc.err_mean)
        .push("err_std", acc.err_std)
        .push("hist_lo", acc.histogram.lo)
        .push("hist_hi", acc.histogram.hi)
        .push(
            "hist_counts",
            acc.histogram
                .counts
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
    emit(out, &report, args.format)?;
    Ok(acc)
}

pub fn cmd_calibrate(args: &CalibrateArgs, out: &mut dyn Write) -> Result<Calibration> {
    let (ds, _) = load_source(&args.source)?;
    let sample = args.sample.min(ds.n());
    let cal = calibrate_epsilon(&ds, args.target_selectivity, args.tol, sample, args.sample_seed)?;
    let mut report = MetricReport::new();
    report
        .push("epsilon", cal.epsilon)
        .push("estimated_selectivity", cal.estimated_s)
        .push("iterations", cal.iterations)
        .push("sample", cal.sample);
    emit(out, &report, args.format)?;
    Ok(cal)
}

/// Conflict degrees of the first fragment for both layouts, after checking
/// every fragment origin over points 1..=128 and every slice pair.
pub fn cmd_verify_layout(out: &mut dyn Write) -> Result<bool> {
    let mut lines = Vec::new();
    let mut ok = true;
    let mut summary = Vec::new();
    for layout in [Layout::Swizzled, Layout::RowMajor] {
        let expected = match layout {
            Layout::Swizzled => 1,
            Layout::RowMajor => 8,
        };
        let mut worst_store = 0;
        for first in 1..=128 {
            for base in 0..7 {
                let r = count_conflicts(&ldmatrix_trace(first, base, layout)?);
                ok &= r.per_phase.iter().all(|&d| d == expected);
            }
            worst_store = worst_store.max(count_conflicts(&store_trace(first, layout)?).max);
        }
        let first = count_conflicts(&ldmatrix_trace(1, 0, layout)?);
        let phases: Vec<String> = first.per_phase.iter().map(usize::to_string).collect();
        lines.push(format!(
            "{:<10} ldmatrix phases: {}  store max: {}",
            layout.to_string(),
            phases.join(" "),
            worst_store
        ));
        summary.push(format!("{layout}: {}", phases.join(" ")));
        if layout == Layout::Swizzled {
            ok &= worst_store == 1;
        }
    }
    let text = format!(
        "{}\n{}\nresult: {}\n",
        lines.join("\n"),
        summary.join("; "),
        if ok { "pass" } else { "fail" }
    );
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))?;
    Ok(ok)
}

pub fn cmd_reuse(args: &ReuseArgs, out: &mut dyn Write) -> Result<crate::analysis::TileReuse> {
    let hw = HardwareModel {
        peak_tflops: args.peak_tflops,
        element_bytes: args.element_bytes,
        dram_bw: args.dram_bw,
        l2_bw: args.l2_bw,
        smem_bw: args.smem_bw,
    };
    hw.validate()?;
    let cfg = args.config.resolve()?;
    let req = required_reuse(&hw);
    let r = tile_reuse(&cfg, &hw);
    let flag = |b: bool| if b { "pass" } else { "fail" };
    let mut report = MetricReport::new();
    report
        .push("required_global_reuse", req.global)
        .push("required_shared_reuse", req.shared)
        .push("block_reuse", r.block_reuse)
        .push("warp_reuse", r.warp_reuse)
        .push("p_fragment_uses", r.p_fragment_uses)
        .push("q_fragment_uses", r.q_fragment_uses)
        .push("global", flag(r.global_ok))
        .push("shared", flag(r.shared_ok));
    emit(out, &report, args.format)?;
    Ok(r)
}

pub const BENCH_CSV_HEADER: &str = "variant,n,d,n_padded,d_padded,block_side,warp_side,dispatch_square,prefetch_depth,workers,epsilon,pairs,convert_s,kernel_s,merge_s,total_s,kernel_tflops,total_tflops";

/// Configurations compared by `bench --leave-one-out`, each with one
/// optimization disabled.
pub fn leave_one_out_variants(base: &TileConfig) -> Vec<(String, TileConfig)> {
    let mut variants = vec![("default".to_string(), *base)];
    variants.push((
        "no-raster-order".into(),
        TileConfig {
            dispatch_square: 1,
            ..*base
        },
    ));
    variants.push((
        "no-prefetch".into(),
        TileConfig {
            prefetch_depth: 1,
            ..*base
        },
    ));
    if base.block_side != base.warp_side {
        variants.push((
            "no-block-sharing".into(),
            TileConfig {
                block_side: base.warp_side,
                ..*base
            },
        ));
    }
    if base.warp_side > 16 && (base.warp_side / 2).is_multiple_of(16) {
        variants.push((
            format!("warp-side-{}", base.warp_side / 2),
            TileConfig {
                warp_side: base.warp_side / 2,
                ..*base
            },
        ));
    }
    variants
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub manifest: RunManifest,
    pub n_padded: usize,
    pub d_padded: usize,
}

impl BenchRow {
    pub fn kernel_tflops(&self) -> f64 {
        derived_flops(self.n_padded, self.d_padded, self.manifest.timings.join_s.max(1e-9))
    }

    pub fn csv_line(&self) -> String {
        let m = &self.manifest;
        let t = &m.timings;
        let total = t.convert_s + t.join_s + t.merge_s;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6e},{:.6e}",
            m.variant.as_deref().unwrap_or("default"),
            m.n,
            m.d,
            self.n_padded,
            self.d_padded,
            m.config.block_side,
            m.config.warp_side,
            m.config.dispatch_square,
            m.config.prefetch_depth,
            m.config.workers,
            m.epsilon,
            m.pairs,
            t.convert_s,
            t.join_s,
            t.merge_s,
            total,
            self.kernel_tflops(),
            derived_flops(self.n_padded, self.d_padded, total.max(1e-9)),
        )
    }
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<Vec<BenchRow>> {
    if args.n.is_empty() || args.d.is_empty() || args.n.contains(&0) || args.d.contains(&0) {
        return Err(Error::Argument("sweep needs nonzero --n and --d values".into()));
    }
    if let Some(eps) = args.epsilon {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(Error::Argument(format!("epsilon must be finite and >= 0, got {eps}")));
        }
    }
    if args.repeats == 0 {
        return Err(Error::Argument("--repeats must be at least 1".into()));
    }
    let base = args.config.resolve()?;
    let variants = if args.leave_one_out {
        leave_one_out_variants(&base)
    } else {
        vec![("default".to_string(), base)]
    };

    let mut rows = Vec::new();
    let mut csv = String::from(BENCH_CSV_HEADER);
    csv.push('\n');
    for &n in &args.n {
        for &d in &args.d {
            let start = Instant::now();
            let ds = generate_synthetic(n, d, args.seed, 0.0, 1.0)?;
            let ingest_s = start.elapsed().as_secs_f64();
            let epsilon = args
                .epsilon
                .unwrap_or_else(|| args.radius_scale * (d as f32 / 6.0).sqrt());
            let hash = ds.content_hash();
            for (name, cfg) in &variants {
                for _ in 0..args.repeats {
                    let run = run_mixed(&ds, epsilon, cfg)?;
                    let timings = PhaseTimings {
                        ingest_s,
                        ..run.timings
                    };
                    let row = BenchRow {
                        manifest: RunManifest {
                            command: "bench".into(),
                            tool_version: env!("CARGO_PKG_VERSION").into(),
                            source: SourceDesc::Synthetic {
                                n,
                                d,
                                seed: args.seed,
                                lo: 0.0,
                                hi: 1.0,
                            },
                            n,
                            d,
                            dataset_hash: hash.clone(),
                            epsilon: epsilon as f64,
                            target_selectivity: None,
                            calibration: None,
                            config: *cfg,
                            variant: Some(name.clone()),
                            pairs: run.results.len(),
                            pairs_file: None,
                            timings,
                        },
                        n_padded: run.n_padded,
                        d_padded: run.d_padded,
                    };
                    csv.push_str(&row.csv_line());
                    csv.push('\n');
                    rows.push(row);
                }
            }
        }
    }
    match &args.csv {
        Some(path) => write_file(path, &csv)?,
        None => out
            .write_all(csv.as_bytes())
            .map_err(|e| Error::io("<stdout>", e))?,
    }
    if let Some(path) = &args.manifest {
        let manifests: Vec<&RunManifest> = rows.iter().map(|r| &r.manifest).collect();
        write_file(path, serde_json::to_string_pretty(&manifests).expect("manifests serialize"))?;
    }
    Ok(rows)
}

/// Runs a parsed command line.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Join(a) => cmd_join(a, out).map(drop),
        Command::Accuracy(a) => cmd_accuracy(a, out).map(drop),
        Command::Bench(a) => cmd_bench(a, out).map(drop),
        Command::Calibrate(a) => cmd_calibrate(a, out).map(drop),
        Command::VerifyLayout => cmd_verify_layout(out).map(drop),
        Command::Reuse(a) => cmd_reuse(a, out).map(drop),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("halfjoin").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn synthetic_spec_parsing() {
        assert_eq!("1000x64".parse::<SyntheticSpec>().unwrap(), SyntheticSpec { n: 1000, d: 64 });
        assert!("1000".parse::<SyntheticSpec>().is_err());
        assert!("ax3".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn config_flags_resolve() {
        let Command::Join(a) = parse(&["join", "--synthetic", "4x4", "--epsilon", "1", "--no-raster-order", "--no-prefetch", "--warp-side", "32"]).command else {
            unreachable!()
        };
        let cfg = a.config.resolve().unwrap();
        assert_eq!((cfg.dispatch_square, cfg.prefetch_depth, cfg.warp_side), (1, 1, 32));
        let bad = ConfigArgs { warp_side: Some(24), ..Default::default() };
        assert!(matches!(bad.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn source_is_required_and_exclusive() {
        assert!(Cli::try_parse_from(["halfjoin", "join", "--epsilon", "1"]).is_err());
        assert!(Cli::try_parse_from([
            "halfjoin", "join", "--synthetic", "4x4", "--fvecs", "x", "--epsilon", "1"
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "halfjoin", "join", "--synthetic", "4x4", "--epsilon", "1", "--target-selectivity", "3"
        ])
        .is_err());
    }

    #[test]
    fn negative_epsilon_is_an_argument_error() {
        let Command::Join(a) = parse(&["join", "--fvecs", "/nonexistent/never-read.fvecs", "--epsilon", "-1"]).command else {
            unreachable!()
        };
        let err = cmd_join(&a, &mut Vec::new()).unwrap_err();
        // rejected before the (missing) file is touched
        assert!(matches!(err, Error::Argument(_)), "{err}");
    }

    #[test]
    fn reuse_reports_a100_requirements() {
        let Command::Reuse(a) = parse(&["reuse"]).command else { unreachable!() };
        let mut buf = Vec::new();
        let r = cmd_reuse(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("required_global_reuse=98\n"), "{text}");
        assert!(text.contains("required_shared_reuse=35\n"));
        assert!(text.contains("block_reuse=128\n"));
        assert!(text.contains("global=pass\n"));
        assert!(r.global_ok);

        let Command::Reuse(a) = parse(&["reuse", "--smem-bw", "1e9"]).command else { unreachable!() };
        let r = cmd_reuse(&a, &mut Vec::new()).unwrap();
        assert_eq!(r.required.shared, 0);
        assert!(r.shared_ok);
    }

    #[test]
    fn verify_layout_summary_line() {
        let mut buf = Vec::new();
        assert!(cmd_verify_layout(&mut buf).unwrap());
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("swizzled: 1 1 1 1; row-major: 8 8 8 8"), "{text}");
    }

    #[test]
    fn leave_one_out_variants_are_distinct() {
        let v = leave_one_out_variants(&TileConfig::default());
        let names: Vec<_> = v.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["default", "no-raster-order", "no-prefetch", "no-block-sharing", "warp-side-32"]);
        for (i, a) in v.iter().enumerate() {
            a.1.validate().unwrap();
            for b in &v[i + 1..] {
                assert_ne!(a.1, b.1);
            }
        }
    }
}
