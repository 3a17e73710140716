use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

use super::runner::ExperimentOutcome;

pub const TABLE_FILE: &str = "table1.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const FOLDS_DIR: &str = "folds";

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes `table1.csv`, `predictions.csv`, `folds/*.json` and `experiment.json` into `dir`.
pub fn write_results(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join(FOLDS_DIR)).map_err(|e| Error::io(dir, e))?;

    let table_path = dir.join(TABLE_FILE);
    let mut w = csv::Writer::from_path(&table_path)?;
    let mut header = vec!["metric".to_string()];
    header.extend(outcome.results.iter().map(|r| r.method.to_string()));
    w.write_record(&header)?;
    let rows: [(&str, fn(&MetricsReport) -> Option<f64>); 4] =
        [("PLE", |r| Some(r.ple_percent)), ("R", |r| r.pearson_r), ("Dice", |r| r.dice), ("HD", |r| r.hausdorff_mm)];
    for (name, get) in rows {
        let mut rec = vec![name.to_string()];
        rec.extend(outcome.results.iter().map(|r| cell(r.report.as_ref().and_then(get))));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(&table_path, e))?;

    let pred_path = dir.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&pred_path)?;
    w.write_record(["case_id", "method", "pred_mm", "gt_mm"])?;
    for r in &outcome.results {
        for p in &r.predictions {
            w.write_record([
                p.case_id.to_string(),
                r.method.to_string(),
                format!("{:.6}", p.pred_mm),
                format!("{:.6}", p.gt_mm),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&pred_path, e))?;

    for r in &outcome.results {
        for log in &r.folds {
            let path = dir.join(FOLDS_DIR).join(format!("{}_fold{}.json", r.method, log.fold));
            fs::write(&path, serde_json::to_string_pretty(log)?).map_err(|e| Error::io(&path, e))?;
        }
    }
    let summary = serde_json::json!({
        "config": outcome.config,
        "plan": outcome.plan,
        "audit": outcome.audit,
        "methods": outcome.results.iter().map(|r| serde_json::json!({
            "method": r.method,
            "chosen_decay": r.chosen_decay,
            "report": r.report,
            "partial": r.is_partial(),
            "error": r.error,
        })).collect::<Vec<_>>(),
    });
    let path = dir.join("experiment.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(())
}
