//! Print every canonical scan order on a grid and write a heat map of each.
//!
//! cargo run --release --example scan_orders -- 4 4

use rar::permute::{canonical_scan, ScanKind};
use rar::ppm;

fn main() -> rar::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (h, w) = (args.first().copied().unwrap_or(4), args.get(1).copied().unwrap_or(4));
    let out = std::env::temp_dir().join("rar_scans");
    std::fs::create_dir_all(&out)?;
    for kind in ScanKind::ALL {
        match canonical_scan(kind, h, w) {
            Ok(order) => {
                println!("{:<10} {:?}", kind.name(), order.order());
                let visit = order.invert();
                ppm::write(out.join(format!("{kind}.ppm")), &ppm::render_visit_order(h, w, visit.order(), 24))?;
            }
            Err(e) => println!("{:<10} {e}", kind.name()),
        }
    }
    println!("heat maps in {}", out.display());
    Ok(())
}
