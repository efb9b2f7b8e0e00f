//! Evaluation reports: JSON-lines records plus a CSV summary row laid
//! out like the white-box tables (clean first, then the attack columns).

use crate::attacks::ThreatModel;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackRecord {
    pub attack: String,
    pub threat: Option<ThreatModel>,
    pub n_samples: usize,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fooling_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_l2: Option<f64>,
    pub wall_time_s: f64,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset: String,
    pub suite: String,
    pub seed: u64,
    pub records: Vec<AttackRecord>,
}

impl EvalReport {
    pub fn new(model_id: &str, dataset: &str, suite: &str, seed: u64) -> Self {
        EvalReport {
            model_id: model_id.to_string(),
            dataset: dataset.to_string(),
            suite: suite.to_string(),
            seed,
            records: Vec::new(),
        }
    }

    pub fn record(&self, attack: &str) -> Option<&AttackRecord> {
        self.records.iter().find(|r| r.attack == attack)
    }

    pub fn accuracy_of(&self, attack: &str) -> Option<f64> {
        self.record(attack).map(|r| r.accuracy)
    }

    /// One JSON object per line: a header line, then one line per record.
    pub fn write_jsonl(&self, path: &Path) -> crate::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header = serde_json::json!({
            "model_id": self.model_id,
            "dataset": self.dataset,
            "suite": self.suite,
            "seed": self.seed,
        });
        writeln!(f, "{header}")?;
        for r in &self.records {
            writeln!(f, "{}", serde_json::to_string(r).expect("serializable record"))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> crate::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header: serde_json::Value = serde_json::from_str(lines.next().unwrap_or("{}"))
            .map_err(|e| crate::Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut report = EvalReport::new(
            header["model_id"].as_str().unwrap_or("?"),
            header["dataset"].as_str().unwrap_or("?"),
            header["suite"].as_str().unwrap_or("?"),
            header["seed"].as_u64().unwrap_or(0),
        );
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            report.records.push(
                serde_json::from_str(line)
                    .map_err(|e| crate::Error::InvalidConfig(format!("{}: {e}", path.display())))?,
            );
        }
        Ok(report)
    }

    /// CSV with one column per attack (accuracy in percent), one row for
    /// this model. Attack order follows the records.
    pub fn write_summary_csv(&self, path: &Path) -> crate::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["model".to_string()];
        header.extend(self.records.iter().map(|r| r.attack.clone()));
        w.write_record(&header).map_err(csv_err)?;
        let mut row = vec![self.model_id.clone()];
        row.extend(self.records.iter().map(|r| format!("{:.2}", r.accuracy * 100.0)));
        w.write_record(&row).map_err(csv_err)?;
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> crate::Error {
    crate::Error::Io(std::io::Error::other(e))
}
