use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::Modality;

/// Directory convention of a dataset root.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// One subdirectory per subject holding numbered images (`s1/1.pgm`).
    Orl,
    /// Files named `subject_sample.pgm` directly under the root.
    Flat,
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "orl" => Ok(Layout::Orl),
            "flat" => Ok(Layout::Flat),
            other => Err(Error::Config(format!(
                "unknown layout {other:?} (expected orl or flat)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSamples {
    pub id: String,
    pub samples: Vec<PathBuf>,
}

/// Subjects of one modality with their ordered sample paths.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub modality: Modality,
    pub subjects: Vec<SubjectSamples>,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<&str> = self.subjects.iter().map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Ingest {
                reason: format!("duplicate subject id {:?}", w[0]),
                paths: vec![],
            });
        }
        if let Some(s) = self.subjects.iter().find(|s| s.samples.is_empty()) {
            return Err(Error::Ingest {
                reason: format!("subject {:?} has no samples", s.id),
                paths: vec![],
            });
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        self.subjects.iter().map(|s| s.samples.len()).sum()
    }
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("pnm"))
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if name.to_string_lossy().starts_with('.') {
            continue;
        }
        entries.push(entry.path());
    }
    entries.sort();
    Ok(entries)
}

/// Orders ids so that embedded numbers compare numerically (`s2 < s10`).
pub(crate) fn natural_cmp(a: &str, b: &str) -> Ordering {
    fn chunks(s: &str) -> Vec<(bool, &str)> {
        let mut out = Vec::new();
        let mut start = 0;
        let bytes = s.as_bytes();
        for i in 1..=bytes.len() {
            if i == bytes.len() || bytes[i].is_ascii_digit() != bytes[start].is_ascii_digit() {
                out.push((bytes[start].is_ascii_digit(), &s[start..i]));
                start = i;
            }
        }
        out
    }
    let (ca, cb) = (chunks(a), chunks(b));
    for ((da, sa), (db, sb)) in ca.iter().zip(cb.iter()) {
        let ord = if *da && *db {
            let (ta, tb) = (sa.trim_start_matches('0'), sb.trim_start_matches('0'));
            ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb))
        } else {
            sa.cmp(sb)
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ca.len().cmp(&cb.len()).then_with(|| a.cmp(b))
}

fn sample_number(stem: &str) -> Option<u64> {
    if stem.is_empty() || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

/// Walks a dataset root and builds its manifest, sorted by subject id then
/// sample number.
pub fn ingest(root: impl AsRef<Path>, layout: Layout, modality: Modality) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Ingest {
            reason: "dataset root is not a directory".into(),
            paths: vec![root.to_path_buf()],
        });
    }
    let mut subjects: Vec<(String, Vec<(u64, PathBuf)>)> = Vec::new();
    let mut bad = Vec::new();
    match layout {
        Layout::Orl => {
            for dir in read_dir_sorted(root)?.into_iter().filter(|p| p.is_dir()) {
                let id = dir.file_name().unwrap().to_string_lossy().into_owned();
                let mut samples = Vec::new();
                for file in read_dir_sorted(&dir)?.into_iter().filter(|p| is_image(p)) {
                    let stem = file.file_stem().unwrap().to_string_lossy();
                    match sample_number(&stem) {
                        Some(n) => samples.push((n, file)),
                        None => bad.push(file),
                    }
                }
                if !samples.is_empty() {
                    subjects.push((id, samples));
                }
            }
        }
        Layout::Flat => {
            for file in read_dir_sorted(root)?.into_iter().filter(|p| p.is_file() && is_image(p)) {
                let stem = file.file_stem().unwrap().to_string_lossy().into_owned();
                let parsed = stem
                    .rsplit_once('_')
                    .filter(|(id, _)| !id.is_empty())
                    .and_then(|(id, n)| sample_number(n).map(|n| (id.to_string(), n)));
                match parsed {
                    Some((id, n)) => match subjects.iter_mut().find(|(s, _)| *s == id) {
                        Some((_, v)) => v.push((n, file)),
                        None => subjects.push((id, vec![(n, file)])),
                    },
                    None => bad.push(file),
                }
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Ingest {
            reason: "unparsable sample filenames".into(),
            paths: bad,
        });
    }
    if subjects.is_empty() {
        return Err(Error::Ingest {
            reason: "no subjects found".into(),
            paths: vec![root.to_path_buf()],
        });
    }
    subjects.sort_by(|a, b| natural_cmp(&a.0, &b.0));
    let subjects = subjects
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            SubjectSamples {
                id,
                samples: samples.into_iter().map(|(_, p)| p).collect(),
            }
        })
        .collect();
    let manifest = DatasetManifest { modality, subjects };
    manifest.validate()?;
    Ok(manifest)
}
