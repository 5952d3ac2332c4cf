//! Results files: CSV with one `metric,value,split,seed` record per line.

use std::fmt::Write as _;
use std::path::Path;

use sit_core::train::Metrics;

use crate::error::{write, Result};

pub const HEADER: &str = "metric,value,split,seed";

pub fn metrics_csv(metrics: &Metrics, split: &str, seed: u64) -> String {
    let mut s = format!("{HEADER}\n");
    writeln!(s, "count,{},{split},{seed}", metrics.count).unwrap();
    for (name, value) in metrics.records() {
        writeln!(s, "{name},{value},{split},{seed}").unwrap();
    }
    s
}

pub fn write_metrics(path: &Path, metrics: &Metrics, split: &str, seed: u64) -> Result<()> {
    write(path, metrics_csv(metrics, split, seed))
}

/// Loss history, one `iteration,loss` line per step.
pub fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("iteration,loss\n");
    for (i, l) in history.iter().enumerate() {
        writeln!(s, "{},{}", i + 1, l).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_in_order() {
        let m = Metrics { count: 3, mae: Some(0.5), pearson: Some(f64::NAN), ..Metrics::default() };
        assert_eq!(metrics_csv(&m, "test", 7), "metric,value,split,seed\ncount,3,test,7\nmae,0.5,test,7\npearson,NaN,test,7\n");
    }
}
