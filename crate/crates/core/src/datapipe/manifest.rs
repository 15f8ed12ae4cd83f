use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attributes::AttributeVector;
use crate::error::{Error, Result};

/// One image-caption pair. `image` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: String,
    pub caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<AttributeVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
}

impl ManifestRecord {
    /// Person id, falling back to the image path.
    pub fn person(&self) -> &str {
        self.person_id.as_deref().unwrap_or(&self.image)
    }
}

/// Records plus the directory their image paths are relative to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(root: impl Into<PathBuf>, records: Vec<ManifestRecord>) -> Self {
        Self {
            root: root.into(),
            records,
        }
    }

    /// Reads line-delimited JSON; every referenced image must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file = fs::File::open(path)?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {message}", i + 1),
            };
            let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
            if let Some(a) = &rec.attributes {
                a.validate().map_err(|e| parse_err(e.to_string()))?;
            }
            if !root.join(&rec.image).is_file() {
                return Err(parse_err(format!("image '{}' not found", rec.image)));
            }
            records.push(rec);
        }
        Ok(Self { root, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for rec in &self.records {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn image_path(&self, record: &ManifestRecord) -> PathBuf {
        self.root.join(&record.image)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_missing_image() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        let mut attrs = AttributeVector::unknown();
        attrs.set(0, Some(1));
        let m = Manifest::new(
            dir.path(),
            vec![ManifestRecord {
                image: "a.png".into(),
                caption: "a man".into(),
                person_id: Some("7".into()),
                attributes: Some(attrs),
                provenance: None,
            }],
        );
        let path = dir.path().join("m.jsonl");
        m.save(&path).unwrap();
        assert_eq!(Manifest::load(&path).unwrap(), m);

        fs::write(&path, "{\"image\":\"b.png\",\"caption\":\"x\"}\n").unwrap();
        let err = Manifest::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("b.png"), "{err}");
    }

    #[test]
    fn partial_attribute_columns_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.png"), b"x").unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "{\"image\":\"a.png\",\"caption\":\"x\",\"attributes\":[0,1]}\n").unwrap();
        assert!(Manifest::load(&path).is_err());
    }
}
