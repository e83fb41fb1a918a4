//! One-line summaries of finished models.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use anyhow::Result;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    /// Percentage of misclassified test points.
    pub test_error_pct: f64,
    pub misclassified: usize,
    pub test_points: usize,
    /// Nodes in the final structure (summed over a forest); absent for the
    /// plain classifier.
    pub nodes: Option<usize>,
    pub trees: Option<usize>,
    pub epochs: usize,
    pub train_secs: f64,
    pub finalize_secs: f64,
}

impl ReportRow {
    pub const CSV_HEADER: &'static str =
        "model,dataset,test_error_pct,misclassified,test_points,nodes,trees,epochs,train_secs,finalize_secs";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |n| n.to_string());
        format!(
            "{},{},{:.4},{},{},{},{},{},{:.3},{:.3}",
            self.model,
            self.dataset,
            self.test_error_pct,
            self.misclassified,
            self.test_points,
            opt(self.nodes),
            opt(self.trees),
            self.epochs,
            self.train_secs,
            self.finalize_secs
        )
    }

    /// Appends to `path`, writing the header first if the file is new.
    pub fn append_to(&self, path: &Path) -> Result<()> {
        let fresh = !path.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(f, "{}", Self::CSV_HEADER)?;
        }
        writeln!(f, "{}", self.to_csv())?;
        Ok(())
    }
}
