use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::oracle::{local_conditional, ExactJoint, FrontierChain};
use super::spec::{GridSpec, TokenGrid};

/// How grids are drawn for a given spec.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    /// Raster ancestral sampling from the enumerated joint.
    Enumerated,
    /// Raster ancestral sampling from the frontier recursion. Also exact.
    Frontier,
    /// Independent field draws followed by one raster Gibbs sweep. Approximate.
    GibbsSweep,
}

impl SamplerMode {
    pub fn for_spec(spec: &GridSpec) -> Self {
        if spec.is_enumerable() {
            SamplerMode::Enumerated
        } else if FrontierChain::supports(spec) {
            SamplerMode::Frontier
        } else {
            SamplerMode::GibbsSweep
        }
    }

    pub fn is_exact(self) -> bool {
        self != SamplerMode::GibbsSweep
    }
}

#[derive(Debug, Clone)]
enum ClassTables {
    Enumerated(Vec<ExactJoint>),
    Frontier(Vec<FrontierChain>),
    Gibbs,
}

/// Per-class sampling tables for one spec, built once and reused.
#[derive(Debug, Clone)]
pub struct GridSampler {
    spec: GridSpec,
    tables: ClassTables,
}

fn draw<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

impl GridSampler {
    pub fn new(spec: &GridSpec) -> Result<Self> {
        spec.validate()?;
        let classes = 0..spec.num_classes;
        let tables = match SamplerMode::for_spec(spec) {
            SamplerMode::Enumerated => ClassTables::Enumerated(
                classes.map(|c| ExactJoint::new(spec, c)).collect::<Result<_>>()?,
            ),
            SamplerMode::Frontier => ClassTables::Frontier(
                classes.map(|c| FrontierChain::new(spec, c)).collect::<Result<_>>()?,
            ),
            SamplerMode::GibbsSweep => ClassTables::Gibbs,
        };
        Ok(GridSampler {
            spec: spec.clone(),
            tables,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn mode(&self) -> SamplerMode {
        match self.tables {
            ClassTables::Enumerated(_) => SamplerMode::Enumerated,
            ClassTables::Frontier(_) => SamplerMode::Frontier,
            ClassTables::Gibbs => SamplerMode::GibbsSweep,
        }
    }

    /// Exact `log p(grid | class)` when the mode is exact.
    pub fn log_prob(&self, grid: &TokenGrid) -> Option<f64> {
        let score = self.spec.score(grid.class_label, &grid.tokens);
        match &self.tables {
            ClassTables::Enumerated(j) => Some(score - j[grid.class_label].log_partition()),
            ClassTables::Frontier(f) => Some(score - f[grid.class_label].log_partition()),
            ClassTables::Gibbs => None,
        }
    }

    /// Exact raster conditional of the next cell given a prefix.
    pub fn raster_conditional(&self, class: usize, prefix: &[usize]) -> Option<Vec<f64>> {
        match &self.tables {
            ClassTables::Enumerated(j) => Some(j[class].raster_conditional(prefix)),
            ClassTables::Frontier(f) => Some(f[class].raster_conditional(prefix)),
            ClassTables::Gibbs => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, class: usize, rng: &mut R) -> Result<TokenGrid> {
        self.spec.check_label(class)?;
        let n = self.spec.num_cells();
        let mut tokens = Vec::with_capacity(n);
        match &self.tables {
            ClassTables::Enumerated(j) => {
                for _ in 0..n {
                    let p = j[class].raster_conditional(&tokens);
                    tokens.push(draw(rng, &p));
                }
            }
            ClassTables::Frontier(f) => {
                for _ in 0..n {
                    let p = f[class].raster_conditional(&tokens);
                    tokens.push(draw(rng, &p));
                }
            }
            ClassTables::Gibbs => {
                let field = &self.spec.field[class];
                let m = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = field.iter().map(|f| (f - m).exp()).sum();
                let p: Vec<f64> = field.iter().map(|f| (f - m).exp() / z).collect();
                tokens.extend((0..n).map(|_| draw(rng, &p)));
                for pos in 0..n {
                    let p = local_conditional(&self.spec, class, &tokens, pos);
                    tokens[pos] = draw(rng, &p);
                }
            }
        }
        TokenGrid::new(self.spec.height, self.spec.width, tokens, class)
    }
}

/// Draw one grid. Builds the sampling tables on every call; use
/// [`GridSampler`] for more than a handful of grids.
pub fn sample_grid<R: Rng + ?Sized>(spec: &GridSpec, class: usize, rng: &mut R) -> Result<TokenGrid> {
    GridSampler::new(spec)?.sample(class, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_coupling_is_fair_coin() {
        let spec = GridSpec::independent(10, 10, vec![vec![0.0, 0.0]], 0).unwrap();
        assert_eq!(SamplerMode::for_spec(&spec), SamplerMode::Frontier);
        let sampler = GridSampler::new(&spec).unwrap();
        let mut rng = seeded(8);
        let zeros: usize = (0..100)
            .map(|_| sampler.sample(0, &mut rng).unwrap().tokens.iter().filter(|&&t| t == 0).count())
            .sum();
        let frac = zeros as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 3.0 * 0.005, "{frac}");
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let spec = GridSpec::random_potts(3, 3, 2, 2, 1.0, 0.3, 1).unwrap();
        let a = sample_grid(&spec, 1, &mut seeded(5)).unwrap();
        let b = sample_grid(&spec, 1, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(sample_grid(&spec, 2, &mut seeded(5)).is_err());
    }

    #[test]
    fn modes_by_size() {
        let small = GridSpec::random_potts(3, 3, 2, 1, 1.0, 0.0, 1).unwrap();
        let mid = GridSpec::random_potts(6, 6, 4, 1, 1.0, 0.0, 1).unwrap();
        let wide = GridSpec::random_potts(4, 40, 4, 1, 1.0, 0.0, 1).unwrap();
        assert_eq!(SamplerMode::for_spec(&small), SamplerMode::Enumerated);
        assert_eq!(SamplerMode::for_spec(&mid), SamplerMode::Frontier);
        assert_eq!(SamplerMode::for_spec(&wide), SamplerMode::GibbsSweep);
        let g = GridSampler::new(&wide).unwrap().sample(0, &mut seeded(2)).unwrap();
        assert!(g.tokens.iter().all(|&t| t < 4));
    }
}
