//! Point datasets: fvecs ingestion, synthetic generation, FP16 conversion
//! with zero padding, and round-toward-zero squared norms.

use std::fs;
use std::path::Path;

use half::f16;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mma::rz_add;

/// Default point padding granularity (one block tile edge).
pub const DEFAULT_BLOCK_SIDE: usize = 128;
/// Default dimension padding granularity (one MMA k-slice).
pub const DEFAULT_KSLICE: usize = 16;

/// Row-major `n x d` matrix of FP32 coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl Dataset {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Argument(format!(
                "dataset must have at least one point and one dimension (n={n}, d={d})"
            )));
        }
        if values.len() != n * d {
            return Err(Error::Argument(format!(
                "expected {} coordinates for {n}x{d}, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "coordinate {} of point {} is not finite",
                pos % d,
                pos / d
            )));
        }
        Ok(Self { n, d, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// SHA-256 over the shape and the coordinate bit patterns, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.n as u64).to_le_bytes());
        hasher.update((self.d as u64).to_le_bytes());
        for v in &self.values {
            hasher.update(v.to_bits().to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::Argument(format!(
                    "row {i} out of range for {} points",
                    self.n
                )));
            }
            values.extend_from_slice(self.row(i));
        }
        Dataset::new(indices.len(), self.d, values)
    }
}

/// Decodes an fvecs byte stream: per record a little-endian `u32` dimension
/// followed by that many little-endian `f32` values.
pub fn parse_fvecs(bytes: &[u8]) -> Result<Dataset> {
    let mut offset = 0usize;
    let mut d: Option<usize> = None;
    let mut values = Vec::new();
    let mut n = 0usize;
    while offset < bytes.len() {
        let header = bytes
            .get(offset..offset + 4)
            .ok_or_else(|| Error::format(offset as u64, "truncated dimension header"))?;
        let dim = u32::from_le_bytes(header.try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(Error::format(offset as u64, "record dimension is zero"));
        }
        match d {
            None => d = Some(dim),
            Some(expected) if expected != dim => {
                return Err(Error::format(
                    offset as u64,
                    format!("record {n} has dimension {dim}, expected {expected}"),
                ));
            }
            Some(_) => {}
        }
        let body_start = offset + 4;
        let body = bytes
            .get(body_start..body_start + 4 * dim)
            .ok_or_else(|| {
                Error::format(
                    body_start as u64,
                    format!(
                        "record {n} truncated: needs {} bytes, {} remain",
                        4 * dim,
                        bytes.len() - body_start
                    ),
                )
            })?;
        for (k, chunk) in body.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::format(
                    (body_start + 4 * k) as u64,
                    format!("non-finite coordinate {v}"),
                ));
            }
            values.push(v);
        }
        offset = body_start + 4 * dim;
        n += 1;
    }
    let Some(d) = d else {
        return Err(Error::format(0, "file contains no records"));
    };
    Dataset::new(n, d, values)
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_fvecs(&bytes)
}

pub fn encode_fvecs(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.n * (4 + 4 * ds.d));
    for i in 0..ds.n {
        out.extend_from_slice(&(ds.d as u32).to_le_bytes());
        for v in ds.row(i) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_fvecs(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fvecs(ds)).map_err(|e| Error::io(path, e))
}

/// I.i.d. uniform coordinates on `[lo, hi)` from a ChaCha8 stream seeded by
/// `seed`. Used as the stand-in for the synthetic benchmark datasets.
pub fn generate_synthetic(n: usize, d: usize, seed: u64, lo: f32, hi: f32) -> Result<Dataset> {
    if !(lo < hi) || !(hi - lo).is_finite() {
        return Err(Error::Argument(format!(
            "synthetic range requires finite lo < hi, got [{lo}, {hi})"
        )));
    }
    if n == 0 || d == 0 {
        return Err(Error::Argument(format!(
            "synthetic dataset needs n >= 1 and d >= 1 (n={n}, d={d})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = Uniform::new(lo, hi);
    let values: Vec<f32> = dist.sample_iter(&mut rng).take(n * d).collect();
    Dataset::new(n, d, values)
}

/// FP16 copy of a dataset, padded with zero rows and zero dimensions, plus
/// the squared norm of every (padded) point.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfDataset {
    pub(crate) n_logical: usize,
    pub(crate) d_logical: usize,
    pub(crate) n_padded: usize,
    pub(crate) d_padded: usize,
    pub(crate) values: Vec<f16>,
    pub(crate) norms: Vec<f32>,
}

fn round_up(x: usize, multiple: usize) -> usize {
    x.div_ceil(multiple) * multiple
}

impl HalfDataset {
    pub fn n_logical(&self) -> usize {
        self.n_logical
    }

    pub fn d_logical(&self) -> usize {
        self.d_logical
    }

    pub fn n_padded(&self) -> usize {
        self.n_padded
    }

    pub fn d_padded(&self) -> usize {
        self.d_padded
    }

    pub fn values(&self) -> &[f16] {
        &self.values
    }

    pub fn norms(&self) -> &[f32] {
        &self.norms
    }

    pub fn row(&self, i: usize) -> &[f16] {
        &self.values[i * self.d_padded..(i + 1) * self.d_padded]
    }

    /// Widens the logical part back to FP32 (exact).
    pub fn to_f32_dataset(&self) -> Dataset {
        let mut values = Vec::with_capacity(self.n_logical * self.d_logical);
        for i in 0..self.n_logical {
            values.extend(self.row(i)[..self.d_logical].iter().map(|v| v.to_f32()));
        }
        Dataset {
            n: self.n_logical,
            d: self.d_logical,
            values,
        }
    }
}

/// Converts to FP16 (round to nearest even), pads points to a multiple of
/// `block_side` and dimensions to a multiple of `kslice`, and precomputes
/// norms.
pub fn to_half(ds: &Dataset, block_side: usize, kslice: usize) -> Result<HalfDataset> {
    if block_side == 0 || kslice == 0 {
        return Err(Error::Argument(format!(
            "padding granularity must be positive (block_side={block_side}, kslice={kslice})"
        )));
    }
    let n_padded = round_up(ds.n, block_side);
    let d_padded = round_up(ds.d, kslice);
    let mut values = vec![f16::ZERO; n_padded * d_padded];
    for i in 0..ds.n {
        let dst = &mut values[i * d_padded..i * d_padded + ds.d];
        for (slot, &v) in dst.iter_mut().zip(ds.row(i)) {
            let h = f16::from_f32(v);
            if h.is_infinite() {
                return Err(Error::Range { point: i, value: v });
            }
            *slot = h;
        }
    }
    let mut hd = HalfDataset {
        n_logical: ds.n,
        d_logical: ds.d,
        n_padded,
        d_padded,
        values,
        norms: Vec::new(),
    };
    hd.norms = compute_squared_norms(&hd);
    Ok(hd)
}

/// Sequential ascending-k sum of exact FP32 squares, each addition rounded
/// toward zero.
pub fn compute_squared_norms(hd: &HalfDataset) -> Vec<f32> {
    (0..hd.n_padded)
        .map(|i| {
            hd.row(i).iter().fold(0.0f32, |acc, &h| {
                let w = h.to_f32();
                rz_add(acc, w * w)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(d: u32, vals: &[f32]) -> Vec<u8> {
        let mut out = d.to_le_bytes().to_vec();
        for v in vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes an FP16 bit pattern arithmetically, without the `half` crate.
    fn decode_f16(bits: u16) -> f64 {
        let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
        let exp = ((bits >> 10) & 0x1f) as i32;
        let man = (bits & 0x3ff) as f64;
        if exp == 0 {
            sign * man * 2f64.powi(-24)
        } else {
            sign * (1.0 + man / 1024.0) * 2f64.powi(exp - 15)
        }
    }

    /// Nearest finite FP16 value by enumeration of every bit pattern, ties
    /// to the even significand.
    fn nearest_f16_by_enumeration(x: f64) -> f64 {
        let mut best: Option<(f64, u16)> = None;
        for bits in 0u16..=0xffff {
            if (bits >> 10) & 0x1f == 0x1f {
                continue;
            }
            let v = decode_f16(bits);
            let better = match best {
                None => true,
                Some((b, bb)) => {
                    let (dv, db) = ((v - x).abs(), (b - x).abs());
                    dv < db || (dv == db && bits & 1 == 0 && bb & 1 == 1)
                }
            };
            if better {
                best = Some((v, bits));
            }
        }
        best.unwrap().0
    }

    /// Truncating FP32 sum through exact f64 arithmetic.
    fn rz_sum_oracle(terms: &[f64]) -> f32 {
        let mut acc = 0.0f64;
        for &t in terms {
            let exact = acc + t;
            acc = f64::from_bits(exact.to_bits() & !((1u64 << 29) - 1));
        }
        acc as f32
    }

    #[test]
    fn fvecs_two_records() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(2, &[3.0, 4.0]));
        let ds = parse_fvecs(&bytes).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.values(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn fvecs_empty_is_rejected() {
        assert!(matches!(parse_fvecs(&[]), Err(Error::Format { .. })));
    }

    #[test]
    fn fvecs_inconsistent_dimension() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(3, &[3.0, 4.0, 5.0]));
        match parse_fvecs(&bytes) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 12);
                assert!(message.contains("dimension 3"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fvecs_truncated_record_names_offset() {
        let mut bytes = record(2, &[1.0, 2.0]);
        bytes.extend(record(2, &[3.0]));
        match parse_fvecs(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 16),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_fvecs(&[1, 0]), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn fvecs_zero_dimension() {
        assert!(matches!(
            parse_fvecs(&record(0, &[])),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn fvecs_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pts.fvecs");
        let ds = generate_synthetic(7, 3, 5, -1.0, 1.0).unwrap();
        write_fvecs(&path, &ds).unwrap();
        assert_eq!(load_fvecs(&path).unwrap(), ds);
        assert!(matches!(
            load_fvecs(dir.path().join("missing.fvecs")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn synthetic_is_deterministic_and_in_range() {
        let a = generate_synthetic(4, 8, 7, 0.0, 1.0).unwrap();
        let b = generate_synthetic(4, 8, 7, 0.0, 1.0).unwrap();
        let bits = |ds: &Dataset| ds.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, generate_synthetic(4, 8, 8, 0.0, 1.0).unwrap());

        let one = generate_synthetic(1, 1, 0, 0.0, 1.0).unwrap();
        assert!((0.0..1.0).contains(&one.values()[0]));
    }

    #[test]
    fn synthetic_mean_is_near_half() {
        let ds = generate_synthetic(1000, 64, 1, 0.0, 1.0).unwrap();
        let mean = ds.values().iter().map(|&v| v as f64).sum::<f64>() / ds.values().len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn synthetic_rejects_bad_range() {
        assert!(matches!(
            generate_synthetic(1, 1, 0, 1.0, 1.0),
            Err(Error::Argument(_))
        ));
        assert!(generate_synthetic(1, 1, 0, -f32::MAX, f32::MAX).is_err());
        assert!(generate_synthetic(0, 1, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn to_half_padding_shape() {
        let ds = generate_synthetic(3, 5, 0, 0.0, 1.0).unwrap();
        let hd = to_half(&ds, 128, 16).unwrap();
        assert_eq!((hd.n_padded(), hd.d_padded()), (128, 16));
        for i in 0..128 {
            let row = hd.row(i);
            if i < 3 {
                assert!(row[5..].iter().all(|v| v.to_bits() == 0));
            } else {
                assert!(row.iter().all(|v| v.to_bits() == 0));
                assert_eq!(hd.norms()[i], 0.0);
            }
        }
    }

    #[test]
    fn to_half_rounds_to_nearest_even() {
        let expected = nearest_f16_by_enumeration(0.1f32 as f64);
        assert_eq!(expected, 0.0999755859375);
        let ds = Dataset::new(1, 1, vec![0.1]).unwrap();
        let hd = to_half(&ds, 128, 16).unwrap();
        assert_eq!(hd.row(0)[0].to_f64(), expected);

        // tie cases: exactly half-way between neighbours
        for x in [1.0 + 2f32.powi(-11), 1.0 + 3.0 * 2f32.powi(-11), 2049.0, 2051.0] {
            let ds = Dataset::new(1, 1, vec![x]).unwrap();
            let got = to_half(&ds, 1, 1).unwrap().row(0)[0].to_f64();
            assert_eq!(got, nearest_f16_by_enumeration(x as f64), "{x}");
        }
    }

    #[test]
    fn to_half_range_error() {
        let ds = Dataset::new(2, 2, vec![1.0, 2.0, 3.0, 70000.0]).unwrap();
        match to_half(&ds, 128, 16) {
            Err(Error::Range { point, value }) => {
                assert_eq!(point, 1);
                assert_eq!(value, 70000.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // 65519 still rounds down to 65504
        let ds = Dataset::new(1, 1, vec![65519.0]).unwrap();
        assert_eq!(to_half(&ds, 1, 1).unwrap().row(0)[0].to_f32(), 65504.0);
    }

    #[test]
    fn norms_examples() {
        let mut values = vec![0.0f32; 3 * 16];
        values[16] = 1.0;
        values[32..48].fill(0.1);
        let ds = Dataset::new(3, 16, values).unwrap();
        let hd = to_half(&ds, 128, 16).unwrap();
        assert_eq!(hd.norms()[0], 0.0);
        assert_eq!(hd.norms()[1], 1.0);

        let h = nearest_f16_by_enumeration(0.1f32 as f64);
        let expected = rz_sum_oracle(&[h * h; 16]);
        assert_eq!(hd.norms()[2].to_bits(), expected.to_bits());
        // truncation loses a little against the nearest-rounded sum
        assert!(hd.norms()[2] <= (16.0 * h * h) as f32);
    }

    #[test]
    fn padding_dimensions_do_not_change_norms() {
        let ds = generate_synthetic(20, 13, 4, -2.0, 2.0).unwrap();
        let narrow = to_half(&ds, 32, 16).unwrap();
        let wide = to_half(&ds, 32, 64).unwrap();
        assert_eq!(narrow.norms(), wide.norms());
    }

    proptest! {
        #[test]
        fn exactly_representable_values_round_trip(bits in proptest::collection::vec(0u16..0x7c00, 1..40)) {
            let values: Vec<f32> = bits.iter().map(|&b| f16::from_bits(b).to_f32()).collect();
            let ds = Dataset::new(values.len(), 1, values).unwrap();
            let back = to_half(&ds, 16, 16).unwrap().to_f32_dataset();
            prop_assert_eq!(
                back.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                ds.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }
}
