use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::num::logsumexp;

use super::spec::{GridSpec, ORACLE_BITS_LIMIT};

fn check_tractable(spec: &GridSpec) -> Result<()> {
    if spec.is_enumerable() {
        Ok(())
    } else {
        Err(Error::Intractable {
            bits: spec.state_bits(),
            limit: ORACLE_BITS_LIMIT,
        })
    }
}

fn normalize_log(logits: &[f64]) -> Vec<f64> {
    let lse = logsumexp(logits);
    logits.iter().map(|&l| (l - lse).exp()).collect()
}

/// Exact `p(x_target | observed, class)` by summing the joint over every
/// completion of the unobserved cells.
pub fn exact_conditional(
    spec: &GridSpec,
    class: usize,
    observed: &BTreeMap<usize, usize>,
    target: usize,
) -> Result<Vec<f64>> {
    check_tractable(spec)?;
    spec.check_label(class)?;
    let n = spec.num_cells();
    let v = spec.vocab_size;
    if target >= n {
        return Err(Error::config(format!("target {target} outside grid of {n} cells")));
    }
    if observed.contains_key(&target) {
        return Err(Error::config(format!("target {target} is already observed")));
    }
    let mut tokens = vec![0usize; n];
    for (&pos, &tok) in observed {
        if pos >= n {
            return Err(Error::config(format!("observed position {pos} outside grid")));
        }
        if tok >= v {
            return Err(Error::TokenOutOfRange { token: tok, vocab: v });
        }
        tokens[pos] = tok;
    }
    let free: Vec<usize> = (0..n).filter(|p| !observed.contains_key(p)).collect();

    // Odometer over the free cells; scores bucketed by the target's value.
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); v];
    loop {
        buckets[tokens[target]].push(spec.score(class, &tokens));
        let mut k = 0;
        loop {
            if k == free.len() {
                let per_value: Vec<f64> = buckets.iter().map(|b| logsumexp(b)).collect();
                return Ok(normalize_log(&per_value));
            }
            let p = free[k];
            tokens[p] += 1;
            if tokens[p] < v {
                break;
            }
            tokens[p] = 0;
            k += 1;
        }
    }
}

/// Single-site conditional given all other cells, from the local energy only.
pub fn local_conditional(spec: &GridSpec, class: usize, tokens: &[usize], pos: usize) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let (r, c) = (pos / w, pos % w);
    let coupling = &spec.coupling[class];
    let logits: Vec<f64> = (0..spec.vocab_size)
        .map(|x| {
            let mut s = spec.field[class][x];
            if c > 0 {
                s += coupling[tokens[pos - 1]][x];
            }
            if c + 1 < w {
                s += coupling[x][tokens[pos + 1]];
            }
            if r > 0 {
                s += coupling[tokens[pos - w]][x];
            }
            if r + 1 < h {
                s += coupling[x][tokens[pos + w]];
            }
            s
        })
        .collect();
    normalize_log(&logits)
}

/// Fully enumerated joint for one class, stored as prefix masses so raster
/// conditionals are two table lookups.
#[derive(Debug, Clone)]
pub struct ExactJoint {
    vocab: usize,
    cells: usize,
    /// `prefix_mass[d][q]`: probability that the first `d` cells spell `q`.
    prefix_mass: Vec<Vec<f64>>,
    log_z: f64,
}

impl ExactJoint {
    pub fn new(spec: &GridSpec, class: usize) -> Result<Self> {
        check_tractable(spec)?;
        spec.check_label(class)?;
        let v = spec.vocab_size;
        let n = spec.num_cells();
        let states = v.pow(n as u32);
        let mut tokens = vec![0usize; n];
        let mut scores = Vec::with_capacity(states);
        for s in 0..states {
            let mut rem = s;
            for cell in (0..n).rev() {
                tokens[cell] = rem % v;
                rem /= v;
            }
            scores.push(spec.score(class, &tokens));
        }
        let log_z = logsumexp(&scores);
        let mut level: Vec<f64> = scores.iter().map(|&s| (s - log_z).exp()).collect();
        let mut prefix_mass = vec![Vec::new(); n + 1];
        for d in (0..=n).rev() {
            let next: Vec<f64> = if d > 0 {
                level.chunks(v).map(|c| c.iter().sum()).collect()
            } else {
                Vec::new()
            };
            prefix_mass[d] = std::mem::replace(&mut level, next);
        }
        Ok(ExactJoint {
            vocab: v,
            cells: n,
            prefix_mass,
            log_z,
        })
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    pub fn num_states(&self) -> usize {
        self.prefix_mass[self.cells].len()
    }

    /// Probability of the full raster-indexed grid.
    pub fn prob(&self, tokens: &[usize]) -> f64 {
        let idx = tokens.iter().fold(0, |acc, &t| acc * self.vocab + t);
        self.prefix_mass[self.cells][idx]
    }

    /// `p(x_d | x_0 .. x_{d-1})` for the raster prefix of length `d`.
    pub fn raster_conditional(&self, prefix: &[usize]) -> Vec<f64> {
        let d = prefix.len();
        let q = prefix.iter().fold(0, |acc, &t| acc * self.vocab + t);
        let denom = self.prefix_mass[d][q];
        (0..self.vocab)
            .map(|x| self.prefix_mass[d + 1][q * self.vocab + x] / denom)
            .collect()
    }
}

/// Exact raster conditionals for grids whose rows are narrow, by a backward
/// recursion over the last `W` cells (the frontier).
#[derive(Debug, Clone)]
pub struct FrontierChain {
    vocab: usize,
    width: usize,
    cells: usize,
    states: usize,
    exp_field: Vec<f64>,
    /// `exp_coupling[a * V + b]`
    exp_coupling: Vec<f64>,
    /// `beta[i][f]`, rescaled so each step's maximum is one.
    beta: Vec<Vec<f64>>,
    log_z: f64,
}

impl FrontierChain {
    pub const MAX_STATES: usize = 1 << 16;

    pub fn supports(spec: &GridSpec) -> bool {
        let v = spec.vocab_size as f64;
        let states = v.powi(spec.width as i32);
        states <= Self::MAX_STATES as f64 && states * spec.num_cells() as f64 <= (1u64 << 24) as f64
    }

    pub fn new(spec: &GridSpec, class: usize) -> Result<Self> {
        spec.check_label(class)?;
        if !Self::supports(spec) {
            return Err(Error::Intractable {
                bits: spec.width as f64 * (spec.vocab_size as f64).log2(),
                limit: 16,
            });
        }
        let v = spec.vocab_size;
        let w = spec.width;
        let n = spec.num_cells();
        let states = v.pow(w as u32);
        let exp_field: Vec<f64> = spec.field[class].iter().map(|x| x.exp()).collect();
        let exp_coupling: Vec<f64> = spec.coupling[class]
            .iter()
            .flat_map(|row| row.iter().map(|x| x.exp()))
            .collect();
        let mut chain = FrontierChain {
            vocab: v,
            width: w,
            cells: n,
            states,
            exp_field,
            exp_coupling,
            beta: vec![Vec::new(); n],
            log_z: 0.0,
        };
        let mut log_scale = 0.0;
        chain.beta[n - 1] = vec![1.0; states];
        for i in (1..n).rev() {
            let next = &chain.beta[i];
            let mut cur = vec![0.0; states];
            for (f, slot) in cur.iter_mut().enumerate() {
                let mut acc = 0.0;
                for x in 0..v {
                    acc += chain.local_weight(i, x, f) * next[chain.shift(f, x)];
                }
                *slot = acc;
            }
            let m = cur.iter().cloned().fold(0.0, f64::max);
            cur.iter_mut().for_each(|b| *b /= m);
            log_scale += m.ln();
            chain.beta[i - 1] = cur;
        }
        let z0: f64 = (0..v)
            .map(|x| chain.local_weight(0, x, 0) * chain.beta[0][chain.shift(0, x)])
            .sum();
        chain.log_z = z0.ln() + log_scale;
        Ok(chain)
    }

    #[inline]
    fn shift(&self, frontier: usize, x: usize) -> usize {
        (frontier % (self.states / self.vocab)) * self.vocab + x
    }

    // exp of every potential that cell `i` closes with its left and top neighbours.
    #[inline]
    fn local_weight(&self, i: usize, x: usize, frontier: usize) -> f64 {
        let mut wgt = self.exp_field[x];
        if i % self.width > 0 {
            wgt *= self.exp_coupling[(frontier % self.vocab) * self.vocab + x];
        }
        if i >= self.width {
            let top = frontier / (self.states / self.vocab);
            wgt *= self.exp_coupling[top * self.vocab + x];
        }
        wgt
    }

    fn frontier_of(&self, prefix: &[usize]) -> usize {
        let start = prefix.len().saturating_sub(self.width);
        prefix[start..].iter().fold(0, |acc, &t| acc * self.vocab + t)
    }

    pub fn log_partition(&self) -> f64 {
        self.log_z
    }

    /// `p(x_d | x_0 .. x_{d-1})` for the raster prefix of length `d`.
    pub fn raster_conditional(&self, prefix: &[usize]) -> Vec<f64> {
        let i = prefix.len();
        debug_assert!(i < self.cells);
        let f = self.frontier_of(prefix);
        let weights: Vec<f64> = (0..self.vocab)
            .map(|x| self.local_weight(i, x, f) * self.beta[i][self.shift(f, x)])
            .collect();
        let total: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / total).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_3x3() -> GridSpec {
        GridSpec::random_potts(3, 3, 2, 2, 1.0, 0.4, 17).unwrap()
    }

    #[test]
    fn zero_coupling_gives_softmax_field() {
        let field = vec![vec![0.3, -0.2, 1.1]];
        let spec = GridSpec::independent(2, 3, field.clone(), 0).unwrap();
        let want = normalize_log(&field[0]);
        let mut obs = BTreeMap::new();
        for target in 0..6 {
            let got = exact_conditional(&spec, 0, &obs, target).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
            obs.insert(target, target % 3);
        }
    }

    #[test]
    fn symmetric_2x2_is_fair() {
        let mut spec = GridSpec::independent(2, 2, vec![vec![0.0, 0.0]], 0).unwrap();
        spec.coupling[0] = vec![vec![1.0, 0.2], vec![0.2, 1.0]];
        for target in 0..4 {
            let p = exact_conditional(&spec, 0, &BTreeMap::new(), target).unwrap();
            assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        }
    }

    // Second, independent route: enumerate all 2^9 grids and marginalize by hand.
    #[test]
    fn matches_brute_enumeration_with_one_observed_neighbour() {
        let spec = spec_3x3();
        let class = 1;
        let (target, neighbour, value) = (4usize, 1usize, 1usize);
        let mut mass = [0.0f64; 2];
        for s in 0..512usize {
            let cells: Vec<usize> = (0..9).map(|k| (s >> (8 - k)) & 1).collect();
            if cells[neighbour] != value {
                continue;
            }
            let mut e = 0.0;
            for r in 0..3 {
                for c in 0..3 {
                    let x = cells[r * 3 + c];
                    e += spec.field[class][x];
                    if c < 2 {
                        e += spec.coupling[class][x][cells[r * 3 + c + 1]];
                    }
                    if r < 2 {
                        e += spec.coupling[class][x][cells[r * 3 + c + 3]];
                    }
                }
            }
            mass[cells[target]] += e.exp();
        }
        let want = [mass[0] / (mass[0] + mass[1]), mass[1] / (mass[0] + mass[1])];
        let obs = BTreeMap::from([(neighbour, value)]);
        let got = exact_conditional(&spec, class, &obs, target).unwrap();
        assert!((got[0] - want[0]).abs() < 1e-12, "{got:?} vs {want:?}");
    }

    #[test]
    fn guards() {
        let big = GridSpec::random_potts(5, 5, 2, 1, 1.0, 0.0, 1).unwrap();
        assert!(matches!(
            exact_conditional(&big, 0, &BTreeMap::new(), 0),
            Err(Error::Intractable { .. })
        ));
        let spec = spec_3x3();
        let obs = BTreeMap::from([(2, 1)]);
        assert!(exact_conditional(&spec, 0, &obs, 2).is_err());
        assert!(exact_conditional(&spec, 5, &BTreeMap::new(), 0).is_err());
    }

    #[test]
    fn frontier_matches_enumeration() {
        for (h, w, v) in [(3, 3, 2), (2, 4, 3), (4, 2, 2), (1, 5, 2), (5, 1, 2)] {
            let spec = GridSpec::random_potts(h, w, v, 1, 0.9, 0.5, 3).unwrap();
            let exact = ExactJoint::new(&spec, 0).unwrap();
            let chain = FrontierChain::new(&spec, 0).unwrap();
            assert!((exact.log_partition() - chain.log_partition()).abs() < 1e-10);
            let tokens: Vec<usize> = (0..h * w).map(|i| (i * 7 + 1) % v).collect();
            for d in 0..h * w {
                let a = exact.raster_conditional(&tokens[..d]);
                let b = chain.raster_conditional(&tokens[..d]);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-10, "{h}x{w} step {d}: {a:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn exact_joint_sums_to_one() {
        let spec = spec_3x3();
        let joint = ExactJoint::new(&spec, 0).unwrap();
        assert_eq!(joint.num_states(), 512);
        let total: f64 = (0..512usize)
            .map(|s| {
                let t: Vec<usize> = (0..9).map(|k| (s >> (8 - k)) & 1).collect();
                joint.prob(&t)
            })
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
