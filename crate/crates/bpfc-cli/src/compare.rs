//! Side-by-side comparison of runs: training methods as rows, attacks as
//! columns, cells in percent. Missing attacks show as `-`.

use anyhow::{bail, Result};
use bpfc::eval::EvalReport;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

pub fn cmd_compare(manifests: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut reports: Vec<EvalReport> = Vec::new();
    for m in manifests {
        let manifest = crate::manifest::RunManifest::load(m)?;
        for r in &manifest.reports {
            if r.extension().is_some_and(|e| e == "jsonl")
                && r.file_name().is_some_and(|n| {
                    let n = n.to_string_lossy();
                    n.starts_with("whitebox") || n.starts_with("blackbox")
                })
            {
                reports.push(EvalReport::read_jsonl(r)?);
            }
        }
    }
    if reports.is_empty() {
        bail!("no evaluation reports found in the given manifests");
    }
    let datasets: BTreeSet<&str> = reports.iter().map(|r| r.dataset.as_str()).collect();
    if datasets.len() > 1 {
        bail!("manifests mix datasets: {datasets:?}");
    }

    // Union of attack columns, in first-seen order.
    let mut columns: Vec<String> = Vec::new();
    for r in &reports {
        for rec in &r.records {
            if !columns.contains(&rec.attack) {
                columns.push(rec.attack.clone());
            }
        }
    }

    let mut table = String::new();
    table.push_str("model");
    for c in &columns {
        table.push(',');
        table.push_str(c);
    }
    table.push('\n');
    for r in &reports {
        table.push_str(&r.model_id);
        for c in &columns {
            table.push(',');
            match r.accuracy_of(c) {
                Some(a) if a.is_finite() => table.push_str(&format!("{:.2}", a * 100.0)),
                _ => table.push('-'),
            }
        }
        table.push('\n');
    }

    match out {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, &table)?;
            println!("wrote {}", p.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}
