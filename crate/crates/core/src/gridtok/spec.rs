use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Exact enumeration is allowed up to `2^ORACLE_BITS_LIMIT` joint states.
pub const ORACLE_BITS_LIMIT: u32 = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub vocab_size: usize,
    pub num_classes: usize,
    /// `coupling[class][a][b]`, a log-potential added for every adjacent pair
    /// where `a` is the left/top token and `b` the right/bottom one.
    pub coupling: Vec<Vec<Vec<f64>>>,
    /// `field[class][v]`, a log-potential added for every cell holding `v`.
    pub field: Vec<Vec<f64>>,
    pub seed: u64,
}

impl GridSpec {
    /// Random ferromagnetic-leaning tables, one per class.
    ///
    /// Diagonal couplings are drawn from `coupling_strength * [0.5, 1.5)`,
    /// off-diagonal ones from `coupling_strength * [0, 0.3)`, fields from
    /// `field_strength * [-1, 1)`.
    pub fn random_potts(
        height: usize,
        width: usize,
        vocab_size: usize,
        num_classes: usize,
        coupling_strength: f64,
        field_strength: f64,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded(seed ^ 0x504f_5454_5331);
        let mut coupling = Vec::with_capacity(num_classes);
        let mut field = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let table = (0..vocab_size)
                .map(|a| {
                    (0..vocab_size)
                        .map(|b| {
                            let u: f64 = rng.gen();
                            if a == b {
                                coupling_strength * (0.5 + u)
                            } else {
                                coupling_strength * 0.3 * u
                            }
                        })
                        .collect()
                })
                .collect();
            coupling.push(table);
            field.push(
                (0..vocab_size)
                    .map(|_| field_strength * (2.0 * rng.gen::<f64>() - 1.0))
                    .collect(),
            );
        }
        let spec = GridSpec {
            height,
            width,
            vocab_size,
            num_classes,
            coupling,
            field,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero coupling and the given per-class field: cells are independent.
    pub fn independent(
        height: usize,
        width: usize,
        field: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let num_classes = field.len();
        let vocab_size = field.first().map_or(0, |f| f.len());
        let spec = GridSpec {
            height,
            width,
            vocab_size,
            num_classes,
            coupling: vec![vec![vec![0.0; vocab_size]; vocab_size]; num_classes],
            field,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::config("grid height and width must be positive"));
        }
        if self.vocab_size < 2 || self.vocab_size > u16::MAX as usize + 1 {
            return Err(Error::config("vocab_size must be in [2, 65536]"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be at least 1"));
        }
        if self.coupling.len() != self.num_classes || self.field.len() != self.num_classes {
            return Err(Error::config("coupling and field need one table per class"));
        }
        for (c, table) in self.coupling.iter().enumerate() {
            if table.len() != self.vocab_size
                || table.iter().any(|row| row.len() != self.vocab_size)
            {
                return Err(Error::config(format!("coupling[{c}] must be VxV")));
            }
            if table.iter().flatten().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::config(format!(
                    "coupling[{c}] entries must be finite and non-negative"
                )));
            }
        }
        for (c, f) in self.field.iter().enumerate() {
            if f.len() != self.vocab_size || f.iter().any(|w| !w.is_finite()) {
                return Err(Error::config(format!("field[{c}] must be V finite values")));
            }
        }
        Ok(())
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    /// `H * W * log2(V)`, the size of the joint state space in bits.
    pub fn state_bits(&self) -> f64 {
        self.num_cells() as f64 * (self.vocab_size as f64).log2()
    }

    pub fn is_enumerable(&self) -> bool {
        self.state_bits() <= ORACLE_BITS_LIMIT as f64 + 1e-9
    }

    /// Sorted-key JSON used for fingerprints and on-disk copies.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("GridSpec serializes");
        serde_json::to_string(&value).expect("JSON value serializes")
    }

    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.canonical_json().as_bytes())
    }

    /// Unnormalized log-probability of a raster-indexed token grid.
    pub fn score(&self, class: usize, tokens: &[usize]) -> f64 {
        let (h, w) = (self.height, self.width);
        let field = &self.field[class];
        let coupling = &self.coupling[class];
        let mut s = 0.0;
        for r in 0..h {
            for c in 0..w {
                let x = tokens[r * w + c];
                s += field[x];
                if c + 1 < w {
                    s += coupling[x][tokens[r * w + c + 1]];
                }
                if r + 1 < h {
                    s += coupling[x][tokens[(r + 1) * w + c]];
                }
            }
        }
        s
    }

    pub fn check_label(&self, class: usize) -> Result<()> {
        if class < self.num_classes {
            Ok(())
        } else {
            Err(Error::LabelOutOfRange {
                label: class,
                classes: self.num_classes,
            })
        }
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// An `H x W` grid of tokens, raster indexed, with its class label.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    pub height: usize,
    pub width: usize,
    pub tokens: Vec<usize>,
    pub class_label: usize,
}

impl TokenGrid {
    pub fn new(height: usize, width: usize, tokens: Vec<usize>, class_label: usize) -> Result<Self> {
        if tokens.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: tokens.len(),
            });
        }
        Ok(TokenGrid {
            height,
            width,
            tokens,
            class_label,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> usize {
        self.tokens[row * self.width + col]
    }

    /// Mixed-radix index of the grid with cell 0 most significant.
    pub fn state_index(&self, vocab: usize) -> usize {
        self.tokens.iter().fold(0, |acc, &t| acc * vocab + t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let spec = GridSpec::random_potts(2, 2, 2, 1, 1.0, 0.2, 5).unwrap();
        let json = spec.canonical_json();
        let keys = ["coupling", "field", "height", "num_classes", "seed", "vocab_size", "width"];
        let pos: Vec<usize> = keys.iter().map(|k| json.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{json}");
        let back: GridSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.fingerprint(), spec.fingerprint());
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let mut spec = GridSpec::random_potts(2, 2, 2, 1, 1.0, 0.2, 5).unwrap();
        spec.coupling[0][0][1] = -0.5;
        assert!(spec.validate().is_err());
        spec.coupling[0][0][1] = f64::NAN;
        assert!(spec.validate().is_err());
        let spec = GridSpec::independent(2, 2, vec![vec![0.0; 2]], 0).unwrap();
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn score_counts_each_bond_once() {
        let mut spec = GridSpec::independent(2, 2, vec![vec![0.0, 0.0]], 0).unwrap();
        spec.coupling[0][1][1] = 1.0;
        assert_eq!(spec.score(0, &[1, 1, 1, 1]), 4.0);
        assert_eq!(spec.score(0, &[1, 1, 0, 0]), 1.0);
        assert_eq!(spec.score(0, &[1, 0, 1, 0]), 1.0);
    }
}
