//! Variant comparison tables.

use opcrecipe::metrics::{ratio, suite_totals, MetricsRow, Ratio};
use serde::{Deserialize, Serialize};

use crate::config::Variant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub metric: String,
    /// Per variant, in column order.
    pub values: Vec<f64>,
    /// Each value over the first column's.
    pub ratios: Vec<Ratio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub headings: Vec<String>,
    pub lines: Vec<MetricLine>,
    /// Total runtime in seconds per column, when recorded.
    pub runtime_s: Option<Vec<f64>>,
}

/// Builds the table from per-column metric values; the first column is the baseline.
pub fn comparison(headings: &[&str], columns: &[Vec<(String, f64)>]) -> ComparisonTable {
    let metrics: Vec<String> = columns.first().map(|c| c.iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default();
    let lines = metrics
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let values: Vec<f64> = columns.iter().map(|c| c[i].1).collect();
            let ratios = values.iter().map(|v| ratio(values[0], *v)).collect();
            MetricLine { metric: m.clone(), values, ratios }
        })
        .collect();
    ComparisonTable { headings: headings.iter().map(|s| s.to_string()).collect(), lines, runtime_s: None }
}

/// Per-clip means of PVBand, EPE N and EPE D for each variant's metrics.
pub fn suite_comparison(variants: &[(Variant, Vec<MetricsRow>)], record_runtime: bool) -> ComparisonTable {
    let headings: Vec<&str> = variants.iter().map(|(v, _)| v.heading()).collect();
    let columns: Vec<Vec<(String, f64)>> = variants
        .iter()
        .map(|(_, rows)| {
            let n = rows.len().max(1) as f64;
            suite_totals(rows).into_iter().map(|(k, v)| (k, v / n)).collect()
        })
        .collect();
    let mut t = comparison(&headings, &columns);
    if record_runtime {
        t.runtime_s = Some(variants.iter().map(|(_, rows)| rows.iter().map(|r| r.runtime_ms).sum::<u64>() as f64 / 1000.0).collect());
    }
    t
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut s = format!("metric,{}\n", self.headings.join(","));
        for l in &self.lines {
            let vals: Vec<String> = l.values.iter().map(|v| format!("{v:.2}")).collect();
            let rats: Vec<String> = l.ratios.iter().map(Ratio::to_string).collect();
            s.push_str(&format!("{},{}\n", l.metric, vals.join(",")));
            s.push_str(&format!("ratio,{}\n", rats.join(",")));
        }
        if let Some(rt) = &self.runtime_s {
            let vals: Vec<String> = rt.iter().map(|v| format!("{v:.3}")).collect();
            s.push_str(&format!("Runtime (s),{}\n", vals.join(",")));
        }
        s
    }

    /// `"1.00 / 0.96 / 0.94"` for a metric.
    pub fn ratio_row(&self, metric: &str) -> Option<String> {
        self.lines
            .iter()
            .find(|l| l.metric == metric)
            .map(|l| l.ratios.iter().map(Ratio::to_string).collect::<Vec<_>>().join(" / "))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{:<10}{}\n", "", self.headings.iter().map(|h| format!("{h:>12}")).collect::<String>());
        for l in &self.lines {
            s.push_str(&format!("{:<10}{}\n", l.metric, l.values.iter().map(|v| format!("{v:>12.2}")).collect::<String>()));
            s.push_str(&format!("{:<10}{}\n", "  ratio", l.ratios.iter().map(|r| format!("{:>12}", r.to_string())).collect::<String>()));
        }
        if let Some(rt) = &self.runtime_s {
            s.push_str(&format!("{:<10}{}\n", "Runtime", rt.iter().map(|v| format!("{:>11.2}s", v)).collect::<String>()));
        }
        s
    }
}
