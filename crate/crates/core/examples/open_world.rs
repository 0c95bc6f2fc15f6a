//! Open-world link prediction: entities withheld from training are seen
//! only through simulated images and must be linked into the graph.
//!
//! `cargo run --release --example open_world`

use kgrec::eval::EvalMode;
use kgrec::simulate::{run_open_world, OpenWorldConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let outcome = run_open_world(&OpenWorldConfig::default())?;
    println!("holdout: {}", outcome.holdout.join(", "));
    println!("{} image queries", outcome.query_count);
    println!("{:<6} {:<8} {:<10} {:>7} {:>7} {:>7}", "model", "context", "mode", "mu_r", "t@3", "f@3");
    for row in &outcome.rows {
        let s = &row.summary;
        let mode = match s.mode {
            EvalMode::PerImage => "per-image",
            EvalMode::PerClass => "per-class",
        };
        println!(
            "{:<6} {:<8} {:<10} {:>7.4} {:>7.3} {:>7.3}",
            row.variant.as_str(),
            if row.context { "yes" } else { "no" },
            mode,
            s.mu_r,
            s.t_at_n,
            s.f_at_n
        );
    }
    Ok(())
}
