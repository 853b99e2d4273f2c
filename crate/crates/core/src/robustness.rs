//! Relative performance under corruption (rPC): the mean of a metric over a
//! complete corruption × severity grid divided by its clean value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::pdq::EvalReport;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RpcError {
    #[error("metric {metric}: clean value {clean} must be positive")]
    NonPositiveClean { metric: String, clean: f64 },
    #[error("metric {metric}: grid has no cells")]
    EmptyGrid { metric: String },
    #[error("metric {metric}: missing cells {}", format_cells(.missing))]
    MissingCells {
        metric: String,
        missing: Vec<(String, u32)>,
    },
    #[error("report for {corruption}/{severity} has metrics {found:?}, expected {expected:?}")]
    InconsistentMetrics {
        corruption: String,
        severity: u32,
        expected: Vec<Metric>,
        found: Vec<Metric>,
    },
}

fn format_cells(cells: &[(String, u32)]) -> String {
    cells
        .iter()
        .map(|(c, s)| format!("{c}/{s}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Metric values over (corruption, severity) cells plus the clean value.
#[derive(Debug, Clone, PartialEq)]
pub struct PerformanceGrid {
    pub metric_name: String,
    pub clean: f64,
    cells: BTreeMap<(String, u32), f64>,
}

impl PerformanceGrid {
    pub fn new(metric_name: impl Into<String>, clean: f64) -> Self {
        Self {
            metric_name: metric_name.into(),
            clean,
            cells: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, corruption: impl Into<String>, severity: u32, value: f64) {
        self.cells.insert((corruption.into(), severity), value);
    }

    pub fn with(mut self, corruption: impl Into<String>, severity: u32, value: f64) -> Self {
        self.insert(corruption, severity, value);
        self
    }

    pub fn get(&self, corruption: &str, severity: u32) -> Option<f64> {
        self.cells.get(&(corruption.to_owned(), severity)).copied()
    }

    pub fn corruptions(&self) -> BTreeSet<&str> {
        self.cells.keys().map(|(c, _)| c.as_str()).collect()
    }

    pub fn severities(&self) -> BTreeSet<u32> {
        self.cells.keys().map(|(_, s)| *s).collect()
    }

    /// Cells absent from the corruption × severity product.
    pub fn missing_cells(&self) -> Vec<(String, u32)> {
        let severities = self.severities();
        self.corruptions()
            .into_iter()
            .flat_map(|c| severities.iter().map(move |&s| (c.to_owned(), s)))
            .filter(|key| !self.cells.contains_key(key))
            .collect()
    }

    pub fn validate(&self) -> Result<(), RpcError> {
        if self.cells.is_empty() {
            return Err(RpcError::EmptyGrid {
                metric: self.metric_name.clone(),
            });
        }
        let missing = self.missing_cells();
        if !missing.is_empty() {
            return Err(RpcError::MissingCells {
                metric: self.metric_name.clone(),
                missing,
            });
        }
        if self.clean.is_nan() || self.clean <= 0.0 {
            return Err(RpcError::NonPositiveClean {
                metric: self.metric_name.clone(),
                clean: self.clean,
            });
        }
        Ok(())
    }
}

/// `[(1/Nc) Σ_c (1/Ns) Σ_s P(c,s)] / P_clean`.
pub fn rpc(grid: &PerformanceGrid) -> Result<f64, RpcError> {
    grid.validate()?;
    let severities = grid.severities();
    let corruptions = grid.corruptions();
    let mut outer = 0.0;
    for c in &corruptions {
        let inner: f64 = severities
            .iter()
            .map(|&s| grid.get(c, s).expect("validated complete grid"))
            .sum();
        outer += inner / severities.len() as f64;
    }
    Ok(outer / corruptions.len() as f64 / grid.clean)
}

/// Metrics reported per evaluation and aggregated into rPC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Map,
    Pdq,
    Label,
    Spatial,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Map, Metric::Pdq, Metric::Label, Metric::Spatial];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Map => "mAP",
            Metric::Pdq => "PDQ",
            Metric::Label => "Lbl",
            Metric::Spatial => "Sp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Metric values carried by a report; mAP only when it was computed.
pub fn report_metrics(report: &EvalReport) -> Vec<(Metric, f64)> {
    let mut out = Vec::with_capacity(4);
    if let Some(m) = report.map {
        out.push((Metric::Map, m.value));
    }
    out.push((Metric::Pdq, report.pdq));
    out.push((Metric::Label, report.avg_label_q));
    out.push((Metric::Spatial, report.avg_spatial_q));
    out
}

/// A metric with its rPC, or the reason it is undefined.
pub type MetricRpc = (Metric, Result<f64, RpcError>);

/// One rPC per metric. A metric whose own grid is unusable (e.g. clean
/// value 0) yields an error in its slot without affecting the others.
pub fn rpc_suite(
    reports: &BTreeMap<(String, u32), EvalReport>,
    clean: &EvalReport,
) -> Result<Vec<MetricRpc>, RpcError> {
    let clean_metrics = report_metrics(clean);
    let expected: Vec<Metric> = clean_metrics.iter().map(|(m, _)| *m).collect();
    let mut grids: Vec<PerformanceGrid> = clean_metrics
        .iter()
        .map(|(m, v)| PerformanceGrid::new(m.name(), *v))
        .collect();
    for ((corruption, severity), report) in reports {
        let values = report_metrics(report);
        let found: Vec<Metric> = values.iter().map(|(m, _)| *m).collect();
        if found != expected {
            return Err(RpcError::InconsistentMetrics {
                corruption: corruption.clone(),
                severity: *severity,
                expected,
                found,
            });
        }
        for (grid, (_, v)) in grids.iter_mut().zip(values) {
            grid.insert(corruption.clone(), *severity, v);
        }
    }
    Ok(expected.into_iter().zip(grids.iter().map(rpc)).collect())
}
