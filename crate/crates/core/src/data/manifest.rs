//! JSON-Lines dataset manifests: one `{"path", "label", "domain"}` object
//! per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::protocol::Domain;
use crate::error::{Error, Result};
use crate::label::Label;

/// Environment variable naming the root that relative image paths resolve
/// against. Defaults to the manifest's directory.
pub const DATA_ROOT_ENV: &str = "FOUNDPAD_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Label,
    pub domain: Domain,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    path: PathBuf,
    label: String,
    domain: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sample counts per `(domain, label)` stratum.
    pub fn counts(&self) -> BTreeMap<(Domain, Label), usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry((e.domain.clone(), e.label)).or_insert(0) += 1;
        }
        out
    }

    pub fn domains(&self) -> Vec<Domain> {
        let mut out: Vec<Domain> = self.entries.iter().map(|e| e.domain.clone()).collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn has_both_classes(&self) -> bool {
        let attack = self.entries.iter().any(|e| e.label == Label::Attack);
        let bona = self.entries.iter().any(|e| e.label == Label::BonaFide);
        attack && bona
    }

    pub fn filter_domains(&self, domains: &[Domain]) -> DatasetManifest {
        DatasetManifest::new(self.entries.iter().filter(|e| domains.contains(&e.domain)).cloned().collect())
    }

    pub fn merge(manifests: impl IntoIterator<Item = DatasetManifest>) -> DatasetManifest {
        DatasetManifest::new(manifests.into_iter().flat_map(|m| m.entries).collect())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Parses manifest text without touching the file system.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(line).map_err(|e| Error::Manifest {
                line: line_no,
                message: e.to_string(),
            })?;
            let label = raw.label.parse::<Label>().map_err(|message| Error::Manifest { line: line_no, message })?;
            let domain = Domain::new(raw.domain).map_err(|e| Error::Manifest {
                line: line_no,
                message: e.to_string(),
            })?;
            entries.push(ManifestEntry {
                path: raw.path,
                label,
                domain,
            });
        }
        if entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        Ok(Self { entries })
    }
}

/// Loads and validates a manifest; relative paths resolve against
/// `$FOUNDPAD_DATA_ROOT` when set, otherwise the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
    load_manifest_with_root(path, root.as_deref())
}

pub fn load_manifest_with_root(path: &Path, root: Option<&Path>) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest = DatasetManifest::parse(&text)?;
    let base = root
        .map(Path::to_path_buf)
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    for (i, entry) in manifest.entries.iter_mut().enumerate() {
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        if !entry.path.exists() {
            return Err(Error::Manifest {
                line: i + 1,
                message: format!("image {} does not exist", entry.path.display()),
            });
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_manifest_is_an_error() {
        assert!(matches!(DatasetManifest::parse(""), Err(Error::EmptyManifest)));
        assert!(matches!(DatasetManifest::parse("\n  \n"), Err(Error::EmptyManifest)));
    }

    #[test]
    fn parses_valid_lines() {
        let text = r#"{"path":"a.png","label":"attack","domain":"M"}
{"path":"b.png","label":"bona-fide","domain":"M"}
{"path":"c.png","label":"attack","domain":"C"}
"#;
        let m = DatasetManifest::parse(text).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m.counts().len(), 3);
        assert!(m.has_both_classes());
        assert_eq!(m.domains().len(), 2);
    }

    #[test]
    fn unknown_label_names_the_string() {
        let text = "{\"path\":\"a.png\",\"label\":\"attack\",\"domain\":\"M\"}\n{\"path\":\"b.png\",\"label\":\"genuine\",\"domain\":\"M\"}";
        match DatasetManifest::parse(text) {
            Err(Error::Manifest { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("genuine"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"path\":\"a.png\",\"label\":\"attack\",\"domain\":\"M\"}\nnot json";
        assert!(matches!(DatasetManifest::parse(text), Err(Error::Manifest { line: 2, .. })));
    }

    #[test]
    fn missing_image_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "{\"path\":\"nope.png\",\"label\":\"attack\",\"domain\":\"M\"}\n").unwrap();
        assert!(matches!(load_manifest_with_root(&path, None), Err(Error::Manifest { line: 1, .. })));
    }

    #[test]
    fn write_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let mut entries = Vec::new();
        for (i, (label, domain)) in [(Label::Attack, "M"), (Label::BonaFide, "CA"), (Label::BonaFide, "SYN")].into_iter().enumerate() {
            let p = dir.path().join(format!("{i}.png"));
            fs::write(&p, b"x").unwrap();
            entries.push(ManifestEntry {
                path: p,
                label,
                domain: Domain::new(domain).unwrap(),
            });
        }
        let m = DatasetManifest::new(entries);
        let path = dir.path().join("m.jsonl");
        m.write(&path).unwrap();
        assert_eq!(load_manifest_with_root(&path, None).unwrap(), m);
    }
}
