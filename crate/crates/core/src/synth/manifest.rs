use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Healthy,
    Injury,
}

impl Label {
    /// Class index; injury is the positive class.
    pub fn index(self) -> usize {
        match self {
            Label::Healthy => 0,
            Label::Injury => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub patient_id: String,
    pub label: Label,
    pub domain: String,
    pub split: Split,
}

pub const MANIFEST_COLUMNS: [&str; 5] = ["path", "patient_id", "label", "domain", "split"];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
}

impl CorpusManifest {
    pub fn select<'a>(
        &'a self,
        domain: &'a str,
        split: Split,
    ) -> impl Iterator<Item = &'a ManifestRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.domain == domain && r.split == split)
    }

    /// Patients appearing in more than one split.
    pub fn leaking_patients(&self) -> Vec<String> {
        let mut seen: BTreeMap<&str, BTreeSet<Split>> = BTreeMap::new();
        for r in &self.rows {
            seen.entry(&r.patient_id).or_default().insert(r.split);
        }
        seen.into_iter()
            .filter(|(_, s)| s.len() > 1)
            .map(|(p, _)| p.to_string())
            .collect()
    }

    /// Injury fraction per (domain, split).
    pub fn class_balance(&self) -> BTreeMap<(String, Split), f64> {
        let mut counts: BTreeMap<(String, Split), (usize, usize)> = BTreeMap::new();
        for r in &self.rows {
            let c = counts.entry((r.domain.clone(), r.split)).or_default();
            c.0 += 1;
            c.1 += usize::from(r.label == Label::Injury);
        }
        counts
            .into_iter()
            .map(|(k, (n, pos))| (k, pos as f64 / n as f64))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        for r in &self.rows {
            w.serialize(r).map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        Ok(CorpusManifest {
            rows: read_rows(r, &MANIFEST_COLUMNS)?,
        })
    }
}

/// Noise-only recordings kept for target noise injection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub path: String,
    pub domain: String,
}

pub const NOISE_COLUMNS: [&str; 2] = ["path", "domain"];

pub fn write_noise_manifest(rows: &[NoiseRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_noise_manifest(path: &Path) -> Result<Vec<NoiseRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_rows(file, &NOISE_COLUMNS)
}

fn read_rows<T: serde::de::DeserializeOwned>(
    r: impl std::io::Read,
    columns: &[&str],
) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?
        .clone();
    if let Some(missing) = columns.iter().find(|c| !headers.iter().any(|h| h == **c)) {
        return Err(Error::MissingColumn(missing.to_string()));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        rows.push(
            rec.deserialize(Some(&headers))
                .map_err(|e| Error::Parse { line, message: e.to_string() })?,
        );
    }
    Ok(rows)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}
