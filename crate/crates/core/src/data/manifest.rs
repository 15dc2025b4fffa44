use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One slide: `patient_id,wsi_id,bag_path,raw_score,label`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub patient_id: String,
    pub wsi_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub bag_path: String,
    pub raw_score: Option<i64>,
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            rows,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::Reader::from_reader(file);
        let headers = reader.headers()?.clone();
        let expected = ["patient_id", "wsi_id", "bag_path", "raw_score", "label"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(
                path,
                format!("manifest header must be {}", expected.join(",")),
            ));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(rows, base)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        if self.rows.is_empty() {
            w.write_record(["patient_id", "wsi_id", "bag_path", "raw_score", "label"])?;
        }
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert((&row.patient_id, &row.wsi_id)) {
                return Err(Error::invalid(format!(
                    "duplicate manifest entry ({}, {})",
                    row.patient_id, row.wsi_id
                )));
            }
            if let Some(l) = row.label {
                if l > 1 {
                    return Err(Error::invalid(format!(
                        "label {l} for {} is not binary",
                        row.wsi_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.bag_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Row indices grouped by patient, in patient-id order.
    pub fn patients(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.entry(row.patient_id.as_str()).or_default().push(i);
        }
        out
    }

    /// The patient's label; all of its slides must agree.
    pub fn patient_label(&self, patient_id: &str) -> Result<Option<u8>> {
        self.patient_field(patient_id, "label", |r| r.label)
    }

    pub fn patient_score(&self, patient_id: &str) -> Result<Option<i64>> {
        self.patient_field(patient_id, "raw_score", |r| r.raw_score)
    }

    fn patient_field<T: PartialEq + Copy>(
        &self,
        patient_id: &str,
        what: &str,
        get: impl Fn(&ManifestRow) -> Option<T>,
    ) -> Result<Option<T>> {
        let mut value = None;
        let mut first = true;
        for row in self.rows.iter().filter(|r| r.patient_id == patient_id) {
            let v = get(row);
            if first {
                value = v;
                first = false;
            } else if v != value {
                return Err(Error::invalid(format!(
                    "patient {patient_id} has slides with conflicting {what}"
                )));
            }
        }
        if first {
            return Err(Error::invalid(format!("unknown patient {patient_id}")));
        }
        Ok(value)
    }
}
