//! Draw a dataset from a random Potts spec and compare exact conditionals
//! under two factorization orders.

use std::collections::BTreeMap;

use rar::eval::{nll_under_order, ExactScorer};
use rar::gridtok::{exact_conditional, make_dataset, GridSpec};
use rar::permute::{canonical_scan, ScanKind};

fn main() -> rar::Result<()> {
    let spec = GridSpec::random_potts(3, 3, 2, 2, 1.0, 0.3, 11)?;
    let data = make_dataset(&spec, 8, 4, 0)?;
    println!("fingerprint {:016x}, exact sampler: {}", spec.fingerprint(), data.meta.exact);

    let observed = BTreeMap::from([(0, 1), (2, 1)]);
    let p = exact_conditional(&spec, 0, &observed, 1)?;
    println!("p(x1 | x0=1, x2=1, class 0) = {p:.4?}");

    let oracle = ExactScorer { spec: &spec };
    let grid = &data.train[0];
    for kind in [ScanKind::RowMajor, ScanKind::SpiralIn] {
        let nll = nll_under_order(&oracle, grid, &canonical_scan(kind, 3, 3)?)?;
        let steps: Vec<String> = nll.steps.iter().map(|s| format!("{s:.3}")).collect();
        println!("{:<10} total {:.6}  steps [{}]", kind.name(), nll.total(), steps.join(" "));
    }
    Ok(())
}
