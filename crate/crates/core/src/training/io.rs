use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// `epoch,loss` rows, epochs counted from 1.
pub fn write_loss_curve(path: &Path, curve: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_curve(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            rec.get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("{}: bad loss row", path.display())))
        })
        .collect()
}

/// Pretty-printed JSON next to an output, recording how it was produced.
pub fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
