//! Finite-difference gradient check of the micro model in f64.

use rar::eval::grad_check;
use rar::model::ModelConfig;

fn main() -> rar::Result<()> {
    let report = grad_check(&ModelConfig::micro(5, 8, 2), 0, 1e-5, 1e-3)?;
    for (name, err) in &report.per_tensor {
        println!("{name:<28} {err:.2e}");
    }
    println!("worst {} {:.2e}, passed: {}", report.worst_tensor, report.max_rel_error, report.passed);
    Ok(())
}
