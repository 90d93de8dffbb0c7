//! Factorization orders: canonical scan orders over a grid, uniformly random
//! orders, and the randomness-annealing schedule that mixes the two.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bijection on `0..T`. `order[t]` is the source index visited at step `t`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &i in &order {
            if i >= n || seen[i] {
                return Err(Error::NotPermutation(n));
            }
            seen[i] = true;
        }
        Ok(Permutation(order))
    }

    pub fn identity(len: usize) -> Self {
        Permutation((0..len).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(t, &i)| t == i)
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    /// `q` with `q[p[t]] = t`.
    pub fn invert(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (t, &i) in self.0.iter().enumerate() {
            inv[i] = t;
        }
        Permutation(inv)
    }
}

impl std::ops::Index<usize> for Permutation {
    type Output = usize;
    fn index(&self, t: usize) -> &usize {
        &self.0[t]
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Permutation::new(v)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.0
    }
}

pub fn invert(p: &Permutation) -> Permutation {
    p.invert()
}

/// `out[t] = seq[p[t]]`.
pub fn apply_permutation<T: Clone>(seq: &[T], p: &Permutation) -> Result<Vec<T>> {
    if seq.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: seq.len(),
        });
    }
    Ok(p.order().iter().map(|&i| seq[i].clone()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanKind {
    RowMajor,
    SpiralIn,
    SpiralOut,
    ZCurve,
    Subsample,
    Alternate,
}

impl ScanKind {
    pub const ALL: [ScanKind; 6] = [
        ScanKind::RowMajor,
        ScanKind::SpiralIn,
        ScanKind::SpiralOut,
        ScanKind::ZCurve,
        ScanKind::Subsample,
        ScanKind::Alternate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScanKind::RowMajor => "row_major",
            ScanKind::SpiralIn => "spiral_in",
            ScanKind::SpiralOut => "spiral_out",
            ScanKind::ZCurve => "z_curve",
            ScanKind::Subsample => "subsample",
            ScanKind::Alternate => "alternate",
        }
    }

    /// Whether the kind is defined for an `height x width` grid.
    pub fn supports(self, height: usize, width: usize) -> bool {
        if height == 0 || width == 0 {
            return false;
        }
        match self {
            ScanKind::ZCurve | ScanKind::Subsample => height == width && height.is_power_of_two(),
            _ => true,
        }
    }
}

impl fmt::Display for ScanKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScanKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_").to_ascii_lowercase();
        ScanKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "raster" && *k == ScanKind::RowMajor))
            .ok_or_else(|| Error::config(format!("unknown scan kind {s:?}")))
    }
}

/// The unique order of `kind` over an `height x width` raster-indexed grid.
pub fn canonical_scan(kind: ScanKind, height: usize, width: usize) -> Result<Permutation> {
    if height == 0 || width == 0 {
        return Err(Error::ScanShape {
            kind: kind.name(),
            requirement: "height >= 1 and width >= 1",
            height,
            width,
        });
    }
    if !kind.supports(height, width) {
        return Err(Error::ScanShape {
            kind: kind.name(),
            requirement: "a square grid with power-of-two side",
            height,
            width,
        });
    }
    let order = match kind {
        ScanKind::RowMajor => (0..height * width).collect(),
        ScanKind::SpiralIn => spiral_in(height, width),
        ScanKind::SpiralOut => {
            let mut o = spiral_in(height, width);
            o.reverse();
            o
        }
        ScanKind::ZCurve => (0..height * width)
            .map(|code| {
                let (row, col) = morton_decode(code as u64);
                row as usize * width + col as usize
            })
            .collect(),
        ScanKind::Subsample => {
            let mut out = Vec::with_capacity(height * width);
            let rows: Vec<usize> = (0..height).collect();
            let cols: Vec<usize> = (0..width).collect();
            decimate(&rows, &cols, width, &mut out);
            out
        }
        ScanKind::Alternate => (0..height)
            .flat_map(|r| {
                (0..width).map(move |c| {
                    let c = if r % 2 == 0 { c } else { width - 1 - c };
                    r * width + c
                })
            })
            .collect(),
    };
    Ok(Permutation(order))
}

// Clockwise from the top-left corner, peeling one ring at a time.
fn spiral_in(height: usize, width: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(height * width);
    let (mut top, mut left) = (0isize, 0isize);
    let (mut bottom, mut right) = (height as isize - 1, width as isize - 1);
    let w = width as isize;
    while top <= bottom && left <= right {
        for c in left..=right {
            out.push((top * w + c) as usize);
        }
        for r in top + 1..=bottom {
            out.push((r * w + right) as usize);
        }
        if top < bottom {
            for c in (left..right).rev() {
                out.push((bottom * w + c) as usize);
            }
        }
        if left < right {
            for r in (top + 1..bottom).rev() {
                out.push((r * w + left) as usize);
            }
        }
        top += 1;
        left += 1;
        bottom -= 1;
        right -= 1;
    }
    out
}

// Even bits of the code are the column, odd bits the row.
fn morton_decode(code: u64) -> (u64, u64) {
    fn compact(mut x: u64) -> u64 {
        x &= 0x5555_5555_5555_5555;
        x = (x | (x >> 1)) & 0x3333_3333_3333_3333;
        x = (x | (x >> 2)) & 0x0f0f_0f0f_0f0f_0f0f;
        x = (x | (x >> 4)) & 0x00ff_00ff_00ff_00ff;
        x = (x | (x >> 8)) & 0x0000_ffff_0000_ffff;
        x = (x | (x >> 16)) & 0x0000_0000_ffff_ffff;
        x
    }
    (compact(code >> 1), compact(code))
}

// Visit the (even, even), (even, odd), (odd, even), (odd, odd) sublattices in
// turn, recursing inside each.
fn decimate(rows: &[usize], cols: &[usize], width: usize, out: &mut Vec<usize>) {
    if rows.len() == 1 && cols.len() == 1 {
        out.push(rows[0] * width + cols[0]);
        return;
    }
    let pick = |v: &[usize], parity: usize| -> Vec<usize> {
        v.iter().skip(parity).step_by(2).copied().collect()
    };
    for (rp, cp) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        decimate(&pick(rows, rp), &pick(cols, cp), width, out);
    }
}

/// Epoch window over which the random-order probability decays from 1 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnealSchedule {
    pub start_epoch: usize,
    pub end_epoch: usize,
    pub total_epochs: usize,
}

impl AnnealSchedule {
    pub fn new(start_epoch: usize, end_epoch: usize, total_epochs: usize) -> Result<Self> {
        let s = AnnealSchedule {
            start_epoch,
            end_epoch,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start_epoch <= self.end_epoch && self.end_epoch <= self.total_epochs {
            Ok(())
        } else {
            Err(Error::InvalidSchedule {
                start: self.start_epoch,
                end: self.end_epoch,
                total: self.total_epochs,
            })
        }
    }

    /// Plain raster-order training: the random branch is never taken.
    pub fn raster(total_epochs: usize) -> Self {
        AnnealSchedule {
            start_epoch: 0,
            end_epoch: 0,
            total_epochs,
        }
    }

    /// Random orders for the whole run.
    pub fn random(total_epochs: usize) -> Self {
        AnnealSchedule {
            start_epoch: total_epochs,
            end_epoch: total_epochs,
            total_epochs,
        }
    }
}

/// Probability of training on a random order at `epoch`.
///
/// 1 before `start`, 0 after `end`, linear in between. When `start == end`
/// the window is empty and the value drops straight to 0 at `start`.
/// `epoch` is real-valued so the schedule can be evaluated per step.
pub fn anneal_probability(epoch: f64, schedule: &AnnealSchedule) -> Result<f64> {
    schedule.validate()?;
    if !(epoch >= 0.0 && epoch <= schedule.total_epochs as f64) {
        return Err(Error::EpochOutOfRange {
            epoch,
            total: schedule.total_epochs,
        });
    }
    let start = schedule.start_epoch as f64;
    let end = schedule.end_epoch as f64;
    Ok(if epoch < start {
        1.0
    } else if epoch > end || schedule.start_epoch == schedule.end_epoch {
        0.0
    } else {
        1.0 - (epoch - start) / (end - start)
    })
}

/// Fisher–Yates over `0..len` drawn from `rng`.
pub fn random_permutation<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Permutation {
    let mut order: Vec<usize> = (0..len).collect();
    for i in (1..len).rev() {
        let j = rng.gen_range(0..=i as u64) as usize;
        order.swap(i, j);
    }
    Permutation(order)
}

/// Outcome of one order draw. `random_branch` records which branch was taken,
/// even when the shuffle happens to reproduce the canonical order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderDraw {
    pub order: Permutation,
    pub random_branch: bool,
}

/// With probability `r` a uniform random order, otherwise `canonical`.
///
/// The branch variable is always drawn from `branch_rng`; shuffles come from
/// `shuffle_rng` and are only consumed on the random branch.
pub fn sample_order_split<R1, R2>(
    branch_rng: &mut R1,
    shuffle_rng: &mut R2,
    r: f64,
    canonical: &Permutation,
) -> OrderDraw
where
    R1: Rng + ?Sized,
    R2: Rng + ?Sized,
{
    let u: f64 = branch_rng.gen();
    if u < r {
        OrderDraw {
            order: random_permutation(shuffle_rng, canonical.len()),
            random_branch: true,
        }
    } else {
        OrderDraw {
            order: canonical.clone(),
            random_branch: false,
        }
    }
}

/// Single-stream variant of [`sample_order_split`].
pub fn sample_order<R: Rng + ?Sized>(rng: &mut R, r: f64, canonical: &Permutation) -> OrderDraw {
    let u: f64 = rng.gen();
    if u < r {
        OrderDraw {
            order: random_permutation(rng, canonical.len()),
            random_branch: true,
        }
    } else {
        OrderDraw {
            order: canonical.clone(),
            random_branch: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn is_bijection(p: &Permutation, n: usize) -> bool {
        let mut v = p.order().to_vec();
        v.sort_unstable();
        v == (0..n).collect::<Vec<_>>()
    }

    #[test]
    fn row_major_is_identity() {
        let p = canonical_scan(ScanKind::RowMajor, 2, 2).unwrap();
        assert_eq!(p.order(), &[0, 1, 2, 3]);
    }

    #[test]
    fn spiral_in_3x3() {
        let p = canonical_scan(ScanKind::SpiralIn, 3, 3).unwrap();
        assert_eq!(p.order(), &[0, 1, 2, 5, 8, 7, 6, 3, 4]);
    }

    #[test]
    fn spiral_handles_thin_grids() {
        assert_eq!(canonical_scan(ScanKind::SpiralIn, 1, 4).unwrap().order(), &[0, 1, 2, 3]);
        assert_eq!(canonical_scan(ScanKind::SpiralIn, 4, 1).unwrap().order(), &[0, 1, 2, 3]);
        assert_eq!(
            canonical_scan(ScanKind::SpiralIn, 2, 3).unwrap().order(),
            &[0, 1, 2, 5, 4, 3]
        );
    }

    #[test]
    fn z_curve_4x4() {
        let p = canonical_scan(ScanKind::ZCurve, 4, 4).unwrap();
        assert_eq!(
            p.order(),
            &[0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
        );
    }

    #[test]
    fn shape_errors_name_the_kind() {
        let err = canonical_scan(ScanKind::ZCurve, 3, 3).unwrap_err().to_string();
        assert!(err.contains("z_curve"), "{err}");
        let err = canonical_scan(ScanKind::Subsample, 4, 8).unwrap_err().to_string();
        assert!(err.contains("subsample"), "{err}");
        assert!(canonical_scan(ScanKind::RowMajor, 0, 3).is_err());
    }

    #[test]
    fn anneal_examples() {
        let s = AnnealSchedule::new(200, 300, 400).unwrap();
        assert_eq!(anneal_probability(100.0, &s).unwrap(), 1.0);
        assert_eq!(anneal_probability(350.0, &s).unwrap(), 0.0);
        assert_eq!(anneal_probability(250.0, &s).unwrap(), 0.5);
        assert_eq!(anneal_probability(200.0, &s).unwrap(), 1.0);
        assert_eq!(anneal_probability(300.0, &s).unwrap(), 0.0);
        assert!(anneal_probability(401.0, &s).is_err());
        assert!(anneal_probability(-1.0, &s).is_err());
    }

    #[test]
    fn degenerate_schedules() {
        let raster = AnnealSchedule::raster(60);
        let random = AnnealSchedule::random(60);
        for e in 0..60 {
            assert_eq!(anneal_probability(e as f64, &raster).unwrap(), 0.0);
            assert_eq!(anneal_probability(e as f64 + 0.5, &random).unwrap(), 1.0);
        }
        assert!(AnnealSchedule::new(5, 4, 10).is_err());
        assert!(AnnealSchedule::new(5, 11, 10).is_err());
    }

    #[test]
    fn r_zero_forces_canonical() {
        let canonical = Permutation::identity(4);
        let mut rng = seeded(3);
        for _ in 0..100 {
            let d = sample_order(&mut rng, 0.0, &canonical);
            assert_eq!(d.order, canonical);
            assert!(!d.random_branch);
        }
    }

    #[test]
    fn r_one_gives_bijections_deterministically() {
        let canonical = Permutation::identity(256);
        let a = sample_order(&mut seeded(11), 1.0, &canonical);
        let b = sample_order(&mut seeded(11), 1.0, &canonical);
        assert!(a.random_branch);
        assert_eq!(a, b);
        assert!(is_bijection(&a.order, 256));
        let small = sample_order(&mut seeded(1), 1.0, &Permutation::identity(4));
        assert!(is_bijection(&small.order, 4));
    }

    #[test]
    fn branch_frequency_at_half() {
        let canonical = Permutation::identity(9);
        let mut rng = seeded(2024);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_order(&mut rng, 0.5, &canonical).random_branch)
            .count();
        let frac = hits as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((frac - 0.5).abs() < 3.0 * se, "frac = {frac}");
    }

    #[test]
    fn apply_examples() {
        let p = Permutation::new(vec![2, 0, 1]).unwrap();
        assert_eq!(apply_permutation(&['a', 'b', 'c'], &p).unwrap(), vec!['c', 'a', 'b']);
        assert_eq!(p.invert().order(), &[1, 2, 0]);
        assert_eq!(Permutation::identity(3).invert(), Permutation::identity(3));
        assert!(apply_permutation(&[1, 2], &p).is_err());
        assert!(Permutation::new(vec![0, 0]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
    }

    #[test]
    fn thousand_random_involutions() {
        let mut rng = seeded(99);
        for n in 0..1000 {
            let p = random_permutation(&mut rng, 1 + n % 40);
            assert_eq!(p.invert().invert(), p);
        }
    }

    proptest! {
        #[test]
        fn scans_are_bijections(h in 1usize..=16, w in 1usize..=16) {
            for kind in ScanKind::ALL {
                if kind.supports(h, w) {
                    let p = canonical_scan(kind, h, w).unwrap();
                    prop_assert!(is_bijection(&p, h * w), "{kind} {h}x{w}");
                } else {
                    prop_assert!(canonical_scan(kind, h, w).is_err());
                }
            }
        }

        #[test]
        fn apply_then_invert_round_trips(seed in any::<u64>(), n in 1usize..64) {
            let p = random_permutation(&mut seeded(seed), n);
            let seq: Vec<usize> = (0..n).map(|i| i * 7 + 3).collect();
            let there = apply_permutation(&seq, &p).unwrap();
            prop_assert_eq!(apply_permutation(&there, &p.invert()).unwrap(), seq);
        }

        #[test]
        fn anneal_is_monotone(start in 0usize..50, len in 0usize..50, extra in 0usize..50, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let s = AnnealSchedule::new(start, start + len, start + len + extra).unwrap();
            let total = s.total_epochs as f64;
            let (lo, hi) = if a <= b { (a * total, b * total) } else { (b * total, a * total) };
            let rl = anneal_probability(lo, &s).unwrap();
            let rh = anneal_probability(hi, &s).unwrap();
            prop_assert!(rh <= rl);
            prop_assert!((0.0..=1.0).contains(&rl));
        }
    }
}
