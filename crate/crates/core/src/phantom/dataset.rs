use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Spacing;
use crate::preprocess::io::{read_image, read_mask, write_image, write_mask, BitDepth};

use super::Sample;

pub const MANIFEST_FILE: &str = "manifest.csv";
const ANNOTATION_DIR: &str = "annotations";

/// One line of `manifest.csv`. Paths are relative to the dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub case_id: u64,
    pub patient_id: u64,
    pub image_path: String,
    pub mask_path: String,
    pub sy_mm: f64,
    pub sx_mm: f64,
    pub length_mm: f64,
    pub length_px: f64,
}

fn case_name(case_id: u64) -> String {
    format!("case_{case_id:04}.png")
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Write images (16-bit PNG), masks (8-bit PNG), optional caliper masks and
/// the manifest. The seed, when given, goes into a header comment.
pub fn write_dataset(samples: &[Sample], dir: &Path, seed: Option<u64>) -> Result<()> {
    for sub in ["images", "masks"] {
        mkdir(&dir.join(sub))?;
    }
    let mut rows = Vec::with_capacity(samples.len());
    for s in samples {
        let name = case_name(s.case_id);
        let image_path = format!("images/{name}");
        let mask_path = format!("masks/{name}");
        write_image(&s.image, &dir.join(&image_path), BitDepth::Sixteen)?;
        write_mask(&s.mask, &dir.join(&mask_path))?;
        if let Some(a) = &s.annotations {
            mkdir(&dir.join(ANNOTATION_DIR))?;
            write_mask(a, &dir.join(ANNOTATION_DIR).join(&name))?;
        }
        let sp = s.image.spacing();
        rows.push(ManifestRow {
            case_id: s.case_id,
            patient_id: s.patient_id,
            image_path,
            mask_path,
            sy_mm: sp.sy,
            sx_mm: sp.sx,
            length_mm: s.length_mm,
            length_px: s.length_px,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    if let Some(seed) = seed {
        writeln!(file, "# seed={seed}").map_err(|e| Error::io(&path, e))?;
    }
    let mut w = csv::Writer::from_writer(file);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Manifest rows plus the seed from the header comment, if any.
pub fn read_manifest(dir: &Path) -> Result<(Option<u64>, Vec<ManifestRow>)> {
    let path = dir.join(MANIFEST_FILE);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut seed = None;
    if let Some(Ok(first)) = BufReader::new(&file).lines().next() {
        if let Some(v) = first.strip_prefix("# seed=") {
            seed = v.trim().parse().ok();
        }
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(&path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
    Ok((seed, rows))
}

fn in_case<T>(case_id: u64, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Case { case_id, message: e.to_string() })
}

/// Load every case listed in the manifest. Failures name the offending case.
pub fn read_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let (_, rows) = read_manifest(dir)?;
    rows.into_iter()
        .map(|row| {
            let id = row.case_id;
            let spacing = in_case(id, Spacing::new(row.sy_mm, row.sx_mm))?;
            let image = in_case(id, read_image(&dir.join(&row.image_path), spacing))?;
            let mask = in_case(id, read_mask(&dir.join(&row.mask_path), spacing))?;
            if (mask.height(), mask.width()) != (image.height(), image.width()) {
                return Err(Error::Case {
                    case_id: id,
                    message: format!(
                        "mask is {}x{} but image is {}x{}",
                        mask.height(),
                        mask.width(),
                        image.height(),
                        image.width()
                    ),
                });
            }
            let ann: PathBuf = dir.join(ANNOTATION_DIR).join(case_name(id));
            let annotations = if ann.exists() { Some(in_case(id, read_mask(&ann, spacing))?) } else { None };
            Ok(Sample {
                case_id: id,
                patient_id: row.patient_id,
                image,
                mask,
                length_mm: row.length_mm,
                length_px: row.length_px,
                annotations,
            })
        })
        .collect()
}
