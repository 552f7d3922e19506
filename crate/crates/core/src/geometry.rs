//! Exact plane geometry over the input sample: rational coordinates parsed
//! from decimal strings, the sample container, the three-point-array
//! detector, and the dyadic continuity radius used by the lattice builder.
//!
//! All coordinate comparisons in this module are exact; floating point is
//! used only for the sampled `f` values.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{Integer, One, Signed, ToPrimitive, Zero};

use crate::{Error, Result};

/// Smallest admissible continuity radius is 2^-MAX_DELTA_EXPONENT.
pub const MAX_DELTA_EXPONENT: u32 = 60;

/// An exact coordinate: an arbitrary-precision rational parsed from a
/// decimal string. Parsing never rounds, so equality of coordinates in the
/// input is preserved exactly.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ExactCoord(BigRational);

impl ExactCoord {
    pub fn zero() -> Self {
        ExactCoord(BigRational::zero())
    }

    pub fn from_integer(v: i64) -> Self {
        ExactCoord(BigRational::from_integer(BigInt::from(v)))
    }

    /// The dyadic rational `numer / 2^level`.
    pub fn from_dyadic(numer: i64, level: u32) -> Self {
        ExactCoord(BigRational::new(BigInt::from(numer), BigInt::one() << level))
    }

    /// Parses a plain decimal string: optional sign, digits, optional
    /// fractional part. No exponent notation; the value is exact.
    pub fn parse(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        let (neg, body) = match t.as_bytes().first() {
            Some(b'-') => (true, &t[1..]),
            Some(b'+') => (false, &t[1..]),
            _ => (false, t),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(format!("`{s}` is not a decimal number"));
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit())
            || !frac_part.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(format!("`{s}` is not a decimal number"));
        }
        let mut numer: BigInt = if int_part.is_empty() {
            BigInt::zero()
        } else {
            int_part.parse().expect("digits")
        };
        let mut denom = BigInt::one();
        for b in frac_part.bytes() {
            numer = numer * 10 + (b - b'0');
            denom *= 10;
        }
        if neg {
            numer = -numer;
        }
        Ok(ExactCoord(BigRational::new(numer, denom)))
    }

    /// Index of the level-`n` cell containing this coordinate:
    /// `floor(x * 2^n)`, computed exactly.
    pub fn cell_index(&self, level: u32) -> i64 {
        let scaled = (self.0.numer() << level).div_floor(self.0.denom());
        scaled
            .to_i64()
            .expect("cell index exceeds i64; coordinates this large are rejected at parse time")
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().expect("finite rational")
    }

    pub fn abs_diff(&self, other: &ExactCoord) -> ExactCoord {
        ExactCoord((&self.0 - &other.0).abs())
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub(crate) fn as_ratio(&self) -> &BigRational {
        &self.0
    }

    pub(crate) fn from_ratio(r: BigRational) -> Self {
        ExactCoord(r)
    }
}

impl fmt::Display for ExactCoord {
    /// Exact decimal rendering. Every coordinate this crate produces has a
    /// denominator of the form 2^a·5^b (decimal inputs and dyadic lattice
    /// coordinates), so the expansion terminates.
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        let numer = self.0.numer();
        let denom = self.0.denom();
        let mut twos = 0u32;
        let mut fives = 0u32;
        let mut rest = denom.clone();
        while rest.is_even() {
            rest /= 2;
            twos += 1;
        }
        while (&rest % 5).is_zero() {
            rest /= 5;
            fives += 1;
        }
        if !rest.is_one() {
            // Unreachable for crate-produced values; still render something sane.
            return write!(out, "{}/{}", numer, denom);
        }
        let places = twos.max(fives);
        let scale = BigInt::from(2).pow(places - twos) * BigInt::from(5).pow(places - fives);
        let digits = (numer * scale).abs().to_string();
        let sign = if numer.is_negative() { "-" } else { "" };
        if places == 0 {
            return write!(out, "{sign}{digits}");
        }
        let places = places as usize;
        let padded = format!("{digits:0>width$}", width = places + 1);
        let (int_part, frac_part) = padded.split_at(padded.len() - places);
        let frac_part = frac_part.trim_end_matches('0');
        if frac_part.is_empty() {
            write!(out, "{sign}{int_part}")
        } else {
            write!(out, "{sign}{int_part}.{frac_part}")
        }
    }
}

impl fmt::Debug for ExactCoord {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, out)
    }
}

/// A power of two `2^exponent` with `exponent <= 0`: the continuity radius
/// δ is restricted to this grid so that it interacts exactly with lattice
/// cell widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dyadic {
    exponent: i32,
}

impl Dyadic {
    pub fn new(exponent: i32) -> Self {
        assert!((-(MAX_DELTA_EXPONENT as i32)..=0).contains(&exponent));
        Dyadic { exponent }
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    pub fn value(&self) -> f64 {
        (self.exponent as f64).exp2()
    }

    pub fn as_coord(&self) -> ExactCoord {
        ExactCoord(BigRational::new(
            BigInt::one(),
            BigInt::one() << (-self.exponent) as u32,
        ))
    }

    /// Smallest lattice level whose cell width 1/2^n is at most δ/2.
    pub fn min_level(&self) -> u32 {
        (1 - self.exponent) as u32
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(out, "{}", self.as_coord())
    }
}

/// One sample record: an exact position and the observed value there.
#[derive(Clone, Debug)]
pub struct SamplePoint {
    pub x: ExactCoord,
    pub y: ExactCoord,
    pub f: f64,
}

/// A finite plane sample. Nonempty; positions are pairwise distinct; the
/// record order of the input is preserved and is the index order used
/// everywhere else.
#[derive(Clone, Debug)]
pub struct PlaneSample {
    points: Vec<SamplePoint>,
}

impl PlaneSample {
    pub fn new(points: Vec<SamplePoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::parse(0, "sample is empty"));
        }
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&a, &b| {
            points[a]
                .x
                .cmp(&points[b].x)
                .then_with(|| points[a].y.cmp(&points[b].y))
        });
        for w in order.windows(2) {
            let (a, b) = (&points[w[0]], &points[w[1]]);
            if a.x == b.x && a.y == b.y {
                return Err(Error::parse(
                    0,
                    format!(
                        "duplicate point ({}, {}) at records {} and {}",
                        a.x,
                        a.y,
                        w[0].min(w[1]) + 1,
                        w[0].max(w[1]) + 1
                    ),
                ));
            }
        }
        Ok(PlaneSample { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[SamplePoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &SamplePoint {
        &self.points[i]
    }

    /// Same positions, new values (used by the solver to iterate on the
    /// residual).
    pub fn with_values(&self, values: &[f64]) -> PlaneSample {
        assert_eq!(values.len(), self.points.len());
        let points = self
            .points
            .iter()
            .zip(values)
            .map(|(p, &f)| SamplePoint { x: p.x.clone(), y: p.y.clone(), f })
            .collect();
        PlaneSample { points }
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.f).collect()
    }

    /// Bounding box as ((xmin, xmax), (ymin, ymax)).
    pub fn bounding_box(&self) -> ((ExactCoord, ExactCoord), (ExactCoord, ExactCoord)) {
        let mut xmin = self.points[0].x.clone();
        let mut xmax = xmin.clone();
        let mut ymin = self.points[0].y.clone();
        let mut ymax = ymin.clone();
        for p in &self.points[1..] {
            if p.x < xmin {
                xmin = p.x.clone();
            }
            if p.x > xmax {
                xmax = p.x.clone();
            }
            if p.y < ymin {
                ymin = p.y.clone();
            }
            if p.y > ymax {
                ymax = p.y.clone();
            }
        }
        ((xmin, xmax), (ymin, ymax))
    }

    /// Reads `x,y,f` records. `#` lines and blank lines are ignored; record
    /// order becomes index order.
    pub fn from_csv_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(
                    lineno,
                    format!("expected 3 fields `x,y,f`, got {}", fields.len()),
                ));
            }
            let x = ExactCoord::parse(fields[0]).map_err(|e| Error::parse(lineno, e))?;
            let y = ExactCoord::parse(fields[1]).map_err(|e| Error::parse(lineno, e))?;
            let f: f64 = fields[2]
                .parse()
                .map_err(|_| Error::parse(lineno, format!("`{}` is not a number", fields[2])))?;
            if !f.is_finite() {
                return Err(Error::parse(lineno, "f must be finite"));
            }
            // Reject coordinates that cannot index a level-40 lattice cell.
            if x.abs_diff(&ExactCoord::zero()) > ExactCoord::from_integer(1 << 22)
                || y.abs_diff(&ExactCoord::zero()) > ExactCoord::from_integer(1 << 22)
            {
                return Err(Error::parse(lineno, "coordinate magnitude exceeds 2^22"));
            }
            points.push(SamplePoint { x, y, f });
        }
        PlaneSample::new(points)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(file))
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# x,y,f")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.x, p.y, p.f)?;
        }
        Ok(())
    }
}

/// Indices of a three-point axis-parallel array `a1 – a2 – a3`: `a2` shares
/// its x-coordinate with `a1` and its y-coordinate with `a3`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayWitness {
    pub a1: usize,
    pub a2: usize,
    pub a3: usize,
    pub points: [(String, String); 3],
}

impl fmt::Display for ArrayWitness {
    fn fmt(&self, out: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            out,
            "{},{} {},{} {},{}",
            self.points[0].0,
            self.points[0].1,
            self.points[1].0,
            self.points[1].1,
            self.points[2].0,
            self.points[2].1
        )
    }
}

/// Finds a three-point axis-parallel array if one exists: some point that
/// shares its x-coordinate with one other point and its y-coordinate with
/// another. Returns the lexicographically smallest witness by
/// `(a2, a1, a3)`.
pub fn detect_three_array(sample: &PlaneSample) -> Option<ArrayWitness> {
    let mut by_x: HashMap<&ExactCoord, Vec<usize>> = HashMap::new();
    let mut by_y: HashMap<&ExactCoord, Vec<usize>> = HashMap::new();
    for (i, p) in sample.points().iter().enumerate() {
        by_x.entry(&p.x).or_default().push(i);
        by_y.entry(&p.y).or_default().push(i);
    }
    // Group vectors hold ascending indices, so `first other member` is the
    // smallest admissible partner.
    for (a2, p) in sample.points().iter().enumerate() {
        let x_group = &by_x[&p.x];
        let y_group = &by_y[&p.y];
        if x_group.len() < 2 || y_group.len() < 2 {
            continue;
        }
        let a1 = *x_group.iter().find(|&&i| i != a2).unwrap();
        let a3 = *y_group.iter().find(|&&i| i != a2).unwrap();
        let fmt_pt = |i: usize| {
            let q = sample.point(i);
            (q.x.to_string(), q.y.to_string())
        };
        return Some(ArrayWitness {
            a1,
            a2,
            a3,
            points: [fmt_pt(a1), fmt_pt(a2), fmt_pt(a3)],
        });
    }
    None
}

/// Sup-norm of the sampled values.
pub fn sup_norm(sample: &PlaneSample) -> f64 {
    sample.points().iter().map(|p| p.f.abs()).fold(0.0, f64::max)
}

/// Max-metric distance between two sample positions, exact.
pub fn linf_distance(a: &SamplePoint, b: &SamplePoint) -> ExactCoord {
    let dx = a.x.abs_diff(&b.x);
    let dy = a.y.abs_diff(&b.y);
    if dx >= dy {
        dx
    } else {
        dy
    }
}

/// Largest dyadic δ = 2^-k (k ≤ 60) such that every pair of sample points
/// at max-metric distance strictly below 2δ has |Δf| strictly below `eps`.
///
/// Errors with `NoModulus` when even 2^-60 fails, i.e. the values jump by
/// at least `eps` across a vanishing gap.
pub fn modulus_delta(sample: &PlaneSample, eps: f64) -> Result<Dyadic> {
    assert!(eps > 0.0, "eps must be positive");
    let pts = sample.points();
    // Only the closest violating pair matters: the required exponent grows
    // as the distance shrinks. Approximate distances prune the quadratic
    // scan; any candidate within a safety margin of the running minimum is
    // re-compared exactly, so rounding in the approximation cannot change
    // the result.
    let xs: Vec<f64> = pts.iter().map(|p| p.x.to_f64()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.y.to_f64()).collect();
    let mut min_exact: Option<ExactCoord> = None;
    let mut min_approx = f64::INFINITY;
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if (pts[i].f - pts[j].f).abs() < eps {
                continue;
            }
            let approx = (xs[i] - xs[j]).abs().max((ys[i] - ys[j]).abs());
            if approx > min_approx * (1.0 + 1e-9) {
                continue;
            }
            let dist = linf_distance(&pts[i], &pts[j]);
            if min_exact.as_ref().map_or(true, |m| dist < *m) {
                min_approx = min_approx.min(approx);
                min_exact = Some(dist);
            }
        }
    }
    let Some(dist) = min_exact else {
        return Ok(Dyadic::new(0));
    };
    // Smallest k with 2^(1-k) <= dist; the closest pair rules out every
    // coarser δ.
    let k = smallest_exponent_at_most(&dist);
    if k > MAX_DELTA_EXPONENT as i64 {
        return Err(Error::NoModulus { eps, max_exponent: MAX_DELTA_EXPONENT });
    }
    Ok(Dyadic::new(-(k as i32)))
}

/// Smallest integer k >= 0 with 2^(1-k) <= dist (dist > 0). May exceed the
/// admissible range; callers bound it.
fn smallest_exponent_at_most(dist: &ExactCoord) -> i64 {
    debug_assert!(*dist > ExactCoord::zero());
    let (mut lo, mut hi) = (0i64, MAX_DELTA_EXPONENT as i64 + 1);
    // Invariant: every k >= hi satisfies the inequality or hi is the
    // out-of-range sentinel; no k < lo does.
    if pow2_le(1, dist) {
        return 0;
    }
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if pow2_le(1 - mid, dist) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Exact comparison 2^e <= value.
fn pow2_le(e: i64, value: &ExactCoord) -> bool {
    let r = value.as_ratio();
    let cmp = if e >= 0 {
        (r.denom() << e as u32).cmp(r.numer())
    } else {
        r.denom().cmp(&(r.numer() << (-e) as u32))
    };
    cmp != Ordering::Greater
}
