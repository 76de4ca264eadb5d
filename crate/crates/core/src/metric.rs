//! Integer vectors, `ℓp` norms and coordinate-wise medians.
//!
//! Every point handled by the sketches lives on the integer grid
//! `{-Δ, …, Δ}^d`. Real-valued input enters through [`discretize`], which
//! snaps coordinates to a grid fine enough that `ℓp` distances move by at
//! most `εr`.

use std::fmt;
use std::io::{BufRead, Write};
use std::ops::{Index, Sub};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::randomness::SharedSeed;

/// A point of the integer grid.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IntVector(Vec<i64>);

impl IntVector {
    pub fn new(coords: Vec<i64>) -> Self {
        IntVector(coords)
    }

    pub fn zeros(dim: usize) -> Self {
        IntVector(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i64> {
        self.0
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> i64 {
        self.0.iter().map(|v| v.abs()).max().unwrap_or(0)
    }

    /// `self - other`, checking dimensions.
    pub fn checked_sub(&self, other: &IntVector) -> Result<IntVector> {
        check_dims(self.dim(), other.dim())?;
        Ok(IntVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }
}

impl fmt::Debug for IntVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.0).finish()
    }
}

impl From<Vec<i64>> for IntVector {
    fn from(v: Vec<i64>) -> Self {
        IntVector(v)
    }
}

impl Index<usize> for IntVector {
    type Output = i64;
    fn index(&self, i: usize) -> &i64 {
        &self.0[i]
    }
}

impl Sub for &IntVector {
    type Output = IntVector;

    /// Panics on dimension mismatch; use [`IntVector::checked_sub`] otherwise.
    fn sub(self, rhs: &IntVector) -> IntVector {
        self.checked_sub(rhs).expect("dimension mismatch")
    }
}

pub(crate) fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A finite multiset of grid points sharing one dimension and range.
///
/// Used both as the preprocessed point set of the near-neighbor index and as
/// the empirical distribution `μ` the sketches are tuned to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    points: Vec<IntVector>,
    dim: usize,
    range: i64,
}

impl Dataset {
    /// Builds a dataset with an explicit range `Δ`.
    pub fn new(points: Vec<IntVector>, range: i64) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyDataset)?;
        let dim = first.dim();
        if range < 0 {
            return param("range must be nonnegative");
        }
        for p in &points {
            check_dims(dim, p.dim())?;
            if p.max_abs() > range {
                return param(format!(
                    "coordinate {} outside the declared range {range}",
                    p.max_abs()
                ));
            }
        }
        Ok(Dataset { points, dim, range })
    }

    /// Builds a dataset whose range is the largest absolute coordinate.
    pub fn from_points(points: Vec<IntVector>) -> Result<Self> {
        let range = points.iter().map(IntVector::max_abs).max().unwrap_or(0);
        Dataset::new(points, range)
    }

    pub fn points(&self) -> &[IntVector] {
        &self.points
    }

    pub fn point(&self, id: usize) -> &IntVector {
        &self.points[id]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self) -> i64 {
        self.range
    }

    /// Reads the CSV vector format: one vector per line, comma-separated
    /// integers, optional `# d=<d> delta=<Δ>` header. Blank lines are skipped.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut header_dim = None;
        let mut header_range = None;
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                for field in rest.split_whitespace() {
                    let parse = |v: &str| {
                        v.parse::<i64>().map_err(|e| Error::Malformed {
                            line: lineno,
                            message: format!("bad header value {v:?}: {e}"),
                        })
                    };
                    if let Some(v) = field.strip_prefix("d=") {
                        header_dim = Some(parse(v)? as usize);
                    } else if let Some(v) = field.strip_prefix("delta=") {
                        header_range = Some(parse(v)?);
                    }
                }
                continue;
            }
            let coords = trimmed
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<i64>().map_err(|e| Error::Malformed {
                        line: lineno,
                        message: format!("bad coordinate {:?}: {e}", tok.trim()),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let expected = header_dim.or_else(|| points.first().map(IntVector::dim));
            if let Some(d) = expected {
                if coords.len() != d {
                    return Err(Error::Malformed {
                        line: lineno,
                        message: format!("expected {d} coordinates, found {}", coords.len()),
                    });
                }
            }
            points.push(IntVector(coords));
        }
        if points.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match header_range {
            Some(range) => Dataset::new(points, range),
            None => Dataset::from_points(points),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Dataset::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# d={} delta={}", self.dim, self.range)?;
        for p in &self.points {
            let mut first = true;
            for v in p.coords() {
                if !first {
                    out.write_all(b",")?;
                }
                write!(out, "{v}")?;
                first = false;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return param(format!("p must be a finite real >= 1, got {p}"));
    }
    Ok(())
}

/// `(Σ|v_i|^p)^{1/p}` without validating `p`.
pub(crate) fn norm_of(coords: &[i64], p: f64) -> f64 {
    let sum: f64 = if p == p.trunc() && p <= 64.0 {
        let e = p as i32;
        coords.iter().map(|&v| (v.abs() as f64).powi(e)).sum()
    } else {
        coords.iter().map(|&v| (v.abs() as f64).powf(p)).sum()
    };
    sum.powf(1.0 / p)
}

pub(crate) fn distance_of(x: &[i64], y: &[i64], p: f64) -> f64 {
    let sum: f64 = if p == p.trunc() && p <= 64.0 {
        let e = p as i32;
        x.iter()
            .zip(y)
            .map(|(&a, &b)| ((a - b).abs() as f64).powi(e))
            .sum()
    } else {
        x.iter()
            .zip(y)
            .map(|(&a, &b)| ((a - b).abs() as f64).powf(p))
            .sum()
    };
    sum.powf(1.0 / p)
}

/// The `ℓp` norm of `v`, for `p >= 1`.
///
/// ```
/// use avgsketch::metric::{lp_norm, IntVector};
/// let v = IntVector::new(vec![3, 4]);
/// assert!((lp_norm(&v, 2.0).unwrap() - 5.0).abs() < 1e-12);
/// ```
pub fn lp_norm(v: &IntVector, p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(norm_of(v.coords(), p))
}

/// The `ℓp` distance between two points of equal dimension.
pub fn lp_distance(x: &IntVector, y: &IntVector, p: f64) -> Result<f64> {
    check_p(p)?;
    check_dims(x.dim(), y.dim())?;
    Ok(distance_of(x.coords(), y.coords(), p))
}

fn lower_median_in_place(values: &mut [i64]) -> i64 {
    let mid = (values.len() - 1) / 2;
    *values.select_nth_unstable(mid).1
}

/// Coordinate-wise lower median of the given points (by id).
pub(crate) fn median_of_ids(data: &Dataset, ids: &[usize]) -> IntVector {
    let mut column = vec![0i64; ids.len()];
    let coords = (0..data.dim())
        .map(|i| {
            for (slot, &id) in column.iter_mut().zip(ids) {
                *slot = data.point(id)[i];
            }
            lower_median_in_place(&mut column)
        })
        .collect();
    IntVector(coords)
}

/// Exact coordinate-wise median. Even-sized marginals resolve to the lower
/// of the two middle order statistics.
pub fn coordinate_median(data: &Dataset) -> Result<IntVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ids: Vec<usize> = (0..data.len()).collect();
    Ok(median_of_ids(data, &ids))
}

/// Default sample size for the sampled median: `⌈8·log2 d⌉`, at least one.
pub fn default_median_samples(dim: usize) -> usize {
    ((8.0 * (dim.max(1) as f64).log2()).ceil() as usize).max(1)
}

/// Approximate coordinate-wise median from `sample_count` points drawn
/// uniformly with replacement. `None` uses [`default_median_samples`].
pub fn sampled_coordinate_median(
    data: &Dataset,
    sample_count: Option<usize>,
    seed: &SharedSeed,
) -> Result<IntVector> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let count = sample_count.unwrap_or_else(|| default_median_samples(data.dim()));
    if count == 0 {
        return param("sample_count must be at least 1");
    }
    let mut rng = seed.rng("median-sample");
    let ids: Vec<usize> = (0..count).map(|_| rng.gen_range(0..data.len())).collect();
    Ok(median_of_ids(data, &ids))
}

/// Grid unit `εr/d` used by [`discretize`].
pub fn grid_unit(r: f64, eps: f64, dim: usize) -> Result<f64> {
    if !(r > 0.0) || !(eps > 0.0) {
        return param("r and eps must be positive");
    }
    if dim == 0 {
        return param("cannot discretize a zero-dimensional vector");
    }
    Ok(eps * r / dim as f64)
}

/// Rounds each coordinate to the nearest multiple of `εr/d`, expresses it in
/// grid units, and clamps to `[-Δ, Δ]`.
///
/// ```
/// use avgsketch::metric::discretize;
/// let v = discretize(&[1.0, 2.0], 1.0, 0.5, 100).unwrap();
/// assert_eq!(v.coords(), &[4, 8]);
/// ```
pub fn discretize(v: &[f64], r: f64, eps: f64, range: i64) -> Result<IntVector> {
    let unit = grid_unit(r, eps, v.len())?;
    Ok(IntVector(
        v.iter()
            .map(|&x| ((x / unit).round() as i64).clamp(-range, range))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ds(rows: &[&[i64]]) -> Dataset {
        Dataset::from_points(rows.iter().map(|r| IntVector::new(r.to_vec())).collect()).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(lp_norm(&IntVector::zeros(3), 4.0).unwrap(), 0.0);
        assert!((lp_norm(&IntVector::new(vec![3, 4]), 2.0).unwrap() - 5.0).abs() < 1e-12);
        // value multiset {4,3,2,2,1,1,1,1,0×8}: 256 + 81 + 16 + 16 + 4 = 373
        let hard = IntVector::new(vec![4, 3, 2, 2, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0]);
        let n = lp_norm(&hard, 4.0).unwrap();
        assert!((n - 373f64.powf(0.25)).abs() < 1e-12);
        assert!((n - 4.394680).abs() < 1e-6);
    }

    #[test]
    fn norm_rejects_small_p() {
        assert!(matches!(
            lp_norm(&IntVector::zeros(1), 0.5),
            Err(Error::Parameter(_))
        ));
        assert!(lp_norm(&IntVector::zeros(1), f64::NAN).is_err());
    }

    #[test]
    fn distance_examples() {
        let x = IntVector::new(vec![5, -2]);
        assert_eq!(lp_distance(&x, &x, 3.0).unwrap(), 0.0);
        let o = IntVector::zeros(2);
        let one = IntVector::new(vec![1, 1]);
        assert!((lp_distance(&o, &one, 1.0).unwrap() - 2.0).abs() < 1e-12);
        assert!((lp_distance(&o, &one, 4.0).unwrap() - 1.189207115).abs() < 1e-8);
        assert!(matches!(
            lp_distance(&o, &IntVector::zeros(3), 2.0),
            Err(Error::DimensionMismatch {
                expected: 2,
                found: 3
            })
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(coordinate_median(&ds(&[&[7, -3]])).unwrap().coords(), &[7, -3]);
        assert_eq!(
            coordinate_median(&ds(&[&[0], &[0], &[2]])).unwrap().coords(),
            &[0]
        );
        assert_eq!(
            coordinate_median(&ds(&[&[1], &[2], &[3], &[4]]))
                .unwrap()
                .coords(),
            &[2]
        );
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(matches!(Dataset::from_points(vec![]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn sampled_median_defaults() {
        assert_eq!(default_median_samples(64), 48);
        assert_eq!(default_median_samples(1), 1);
        let data = ds(&[&[1, 1], &[1, 1], &[1, 1]]);
        let seed = SharedSeed::from_u64(3);
        let m = sampled_coordinate_median(&data, None, &seed).unwrap();
        assert_eq!(m.coords(), &[1, 1]);
        assert!(sampled_coordinate_median(&data, Some(0), &seed).is_err());
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(
            discretize(&[0.0, 0.0, 0.0], 1.0, 0.1, 10).unwrap().coords(),
            &[0, 0, 0]
        );
        assert_eq!(discretize(&[1.0, 2.0], 1.0, 0.5, 100).unwrap().coords(), &[4, 8]);
        assert_eq!(discretize(&[0.13], 1.0, 1.0, 100).unwrap().coords(), &[0]);
        assert_eq!(discretize(&[1e9, -1e9], 1.0, 1.0, 5).unwrap().coords(), &[5, -5]);
        assert!(discretize(&[1.0], 0.0, 1.0, 5).is_err());
        assert!(discretize(&[1.0], 1.0, -1.0, 5).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let data = ds(&[&[1, -2, 3], &[0, 0, -7]]);
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let back = Dataset::read_csv(&buf[..]).unwrap();
        assert_eq!(back, data);

        let bad = b"1,2\n3,x\n";
        match Dataset::read_csv(&bad[..]) {
            Err(Error::Malformed { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let ragged = b"1,2\n3\n";
        assert!(matches!(
            Dataset::read_csv(&ragged[..]),
            Err(Error::Malformed { line: 2, .. })
        ));
        assert!(matches!(Dataset::read_csv(&b""[..]), Err(Error::EmptyDataset)));
        assert!(matches!(
            Dataset::read_csv(&b"# d=2\n"[..]),
            Err(Error::EmptyDataset)
        ));
    }

    proptest! {
        #[test]
        fn triangle_inequality(
            a in proptest::collection::vec(-50i64..50, 6),
            b in proptest::collection::vec(-50i64..50, 6),
            c in proptest::collection::vec(-50i64..50, 6),
            p in 1.0f64..9.0,
        ) {
            let (a, b, c) = (IntVector::new(a), IntVector::new(b), IntVector::new(c));
            let ab = lp_distance(&a, &b, p).unwrap();
            let bc = lp_distance(&b, &c, p).unwrap();
            let ac = lp_distance(&a, &c, p).unwrap();
            prop_assert!(ac <= (ab + bc) * (1.0 + 1e-9) + 1e-12);
            prop_assert!((ab - lp_distance(&b, &a, p).unwrap()).abs() <= 1e-12 * ab.max(1.0));
        }

        #[test]
        fn median_has_half_mass_on_each_side(
            rows in proptest::collection::vec(proptest::collection::vec(-20i64..20, 3), 1..30)
        ) {
            let data = Dataset::from_points(rows.into_iter().map(IntVector::new).collect()).unwrap();
            let m = coordinate_median(&data).unwrap();
            let n = data.len();
            for i in 0..3 {
                let le = data.points().iter().filter(|p| p[i] <= m[i]).count();
                let ge = data.points().iter().filter(|p| p[i] >= m[i]).count();
                prop_assert!(2 * le >= n && 2 * ge >= n);
            }
        }

        #[test]
        fn discretize_reconstructs_within_half_unit(
            v in proptest::collection::vec(-3.0f64..3.0, 1..8),
            r in 0.1f64..4.0,
            eps in 0.05f64..1.0,
        ) {
            let unit = grid_unit(r, eps, v.len()).unwrap();
            let range = 1_000_000;
            let g = discretize(&v, r, eps, range).unwrap();
            for (x, &k) in v.iter().zip(g.coords()) {
                prop_assert!((k as f64 * unit - x).abs() <= unit / 2.0 + 1e-9);
            }
        }
    }
}
