//! Two orders that share a prefix and differ only in which cell comes next.
//! Without the target-aware table the model cannot tell them apart.

use rar::eval::{disambiguation_probe, ProbeConfig};

fn main() -> rar::Result<()> {
    let r = disambiguation_probe(&ProbeConfig::default())?;
    println!("loss at step {} (ln 2 = {:.4}):", r.ambiguous_step, std::f64::consts::LN_2);
    println!("  learned table    {:.4}", r.with_tape);
    println!("  no table         {:.4}", r.without_tape);
    println!("  table, equal rows {:.4}", r.equal_rows);
    Ok(())
}
