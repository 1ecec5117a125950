//! Scores a hand-made set of predictions and prints the table, text and
//! JSON forms of the report.
//!
//!     cargo run --release --example metrics_report

use ericnn::metrics::compute_metrics;

fn main() -> ericnn::Result<()> {
    let predictions = [0.93, 0.81, 0.40, 0.66, 0.12, 0.55, 0.08, 0.30, 0.97, 0.49];
    let labels = [1, 1, 1, 0, 0, 0, 0, 0, 1, 1];
    let report = compute_metrics(&predictions, &labels, 0.5)?;
    print!("{}", report.table());
    println!();
    print!("{}", report.to_text());
    println!();
    println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("report serializes"));
    Ok(())
}
