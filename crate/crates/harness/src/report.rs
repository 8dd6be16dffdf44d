//! Schema-stable experiment reports.
//!
//! Every report CSV has the columns `method,region,N,lambda,metric,value`
//! preceded by comment lines embedding the full resolved configuration, so a
//! report is a self-contained record of the run that produced it. Threshold
//! checks are evaluated in memory and printed one per line; they never enter
//! the CSV.

use std::fs;
use std::path::Path;

use crate::HarnessError;

/// One metric observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: String,
    pub region: String,
    pub n: u64,
    pub lambda: f64,
    pub metric: String,
    pub value: f64,
}

/// One pass/fail threshold evaluation.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Metric rows, threshold checks, and the embedded configuration of one
/// experiment run.
#[derive(Debug, Clone, Default)]
pub struct MetricsReport {
    pub config_lines: Vec<(String, String)>,
    pub rows: Vec<Row>,
    pub checks: Vec<Check>,
}

impl MetricsReport {
    pub fn push_row(
        &mut self,
        method: &str,
        region: &str,
        n: u64,
        lambda: f64,
        metric: &str,
        value: f64,
    ) {
        self.rows.push(Row {
            method: method.to_string(),
            region: region.to_string(),
            n,
            lambda,
            metric: metric.to_string(),
            value,
        });
    }

    pub fn push_check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.to_string(), passed, detail });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Looks up a row value by method and metric (first match).
    pub fn value(&self, method: &str, metric: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric).map(|r| r.value)
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("# pipe-report v1\n");
        for (key, value) in &self.config_lines {
            out.push_str(&format!("# cfg {key} = {value}\n"));
        }
        out.push_str("method,region,N,lambda,metric,value\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.9e}\n",
                row.method, row.region, row.n, row.lambda, row.metric, row.value
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), HarnessError> {
        fs::write(path, self.render_csv())?;
        Ok(())
    }

    /// One line per check, `[PASS]`/`[FAIL]` prefixed.
    pub fn render_checks(&self) -> String {
        let mut out = String::new();
        for check in &self.checks {
            out.push_str(&format!(
                "[{}] {}: {}\n",
                if check.passed { "PASS" } else { "FAIL" },
                check.name,
                check.detail
            ));
        }
        out
    }
}

/// Long-format figure data (`series,x,y,value`) for external plotting.
pub fn write_plot_csv(
    path: &Path,
    header: &str,
    rows: impl Iterator<Item = (String, f64, f64, f64)>,
) -> Result<(), HarnessError> {
    let mut out = format!("# pipe-plot v1\n{header}\n");
    for (series, x, y, value) in rows {
        out.push_str(&format!("{series},{x:.9e},{y:.9e},{value:.9e}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}
