use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::mean_stderr;
use crate::error::{Error, Result};
use crate::uda::{Method, RunMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: usize,
    pub source_mean: f64,
    pub source_stderr: f64,
    pub target_mean: f64,
    pub target_stderr: f64,
    /// Relative change against No DA in percent; `None` on the No DA row.
    pub source_improvement_pct: Option<f64>,
    pub target_improvement_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seeds: usize,
    pub rows: Vec<MethodSummary>,
}

fn relative(x: f64, base: f64) -> f64 {
    (x - base) / base * 100.0
}

/// Aggregates per-seed runs into one row per method. Every method must have
/// exactly `seeds` runs and the baseline must be present.
pub fn build_report(runs: &[RunMetrics], seeds: usize) -> Result<MetricsReport> {
    let mut by: BTreeMap<Method, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in runs {
        let (Some(s), Some(t)) = (r.source_test_auc, r.target_test_auc) else {
            return Err(Error::UndefinedMetric(format!("{} seed {} has no test AUC", r.method, r.seed)));
        };
        let e = by.entry(r.method).or_default();
        e.0.push(s);
        e.1.push(t);
    }
    let Some((bs, bt)) = by.get(&Method::Baseline) else {
        return Err(Error::Data("report needs baseline runs".into()));
    };
    let (base_s, _) = mean_stderr(bs)?;
    let (base_t, _) = mean_stderr(bt)?;
    let mut rows = Vec::new();
    for (&method, (s, t)) in &by {
        if s.len() != seeds {
            return Err(Error::Data(format!("{method} has {} runs, expected {seeds}", s.len())));
        }
        let (sm, se) = mean_stderr(s)?;
        let (tm, te) = mean_stderr(t)?;
        let base = method == Method::Baseline;
        rows.push(MethodSummary {
            method,
            seeds,
            source_mean: sm,
            source_stderr: se,
            target_mean: tm,
            target_stderr: te,
            source_improvement_pct: (!base).then(|| relative(sm, base_s)),
            target_improvement_pct: (!base).then(|| relative(tm, base_t)),
        });
    }
    Ok(MetricsReport { seeds, rows })
}

impl MetricsReport {
    pub fn row(&self, method: Method) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Markdown table: AUCs in percent as mean ± standard error.
    /// Markdown table with every column padded to a common width, so the
    /// text also reads as an aligned plain table.
    pub fn to_markdown(&self) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:+.2}%"));
        let header = ["Method", "Source test AUC", "Improvement", "Target test AUC", "Improvement"].map(String::from);
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.display_name().to_string(),
                    format!("{:.2} ± {:.2}", 100.0 * r.source_mean, 100.0 * r.source_stderr),
                    pct(r.source_improvement_pct),
                    format!("{:.2} ± {:.2}", 100.0 * r.target_mean, 100.0 * r.target_stderr),
                    pct(r.target_improvement_pct),
                ]
            })
            .collect();
        let width: Vec<usize> =
            (0..5).map(|j| body.iter().chain([&header]).map(|row| row[j].chars().count()).max().unwrap_or(0)).collect();
        let line = |cells: &[String; 5]| -> String {
            let padded: Vec<String> = cells.iter().zip(&width).map(|(c, &w)| format!("{c:<w$}")).collect();
            format!("| {} |\n", padded.join(" | "))
        };
        let mut s = line(&header);
        let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(s, "|-{}-|", rule.join("-|-"));
        for row in &body {
            s.push_str(&line(row));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from(
            "method,seeds,source_auc_mean,source_auc_se,source_improvement_pct,target_auc_mean,target_auc_se,target_improvement_pct\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6},{},{:.6},{:.6},{}",
                r.method,
                r.seeds,
                r.source_mean,
                r.source_stderr,
                f(r.source_improvement_pct),
                r.target_mean,
                r.target_stderr,
                f(r.target_improvement_pct),
            );
        }
        s
    }
}
