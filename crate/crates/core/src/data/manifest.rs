//! Dataset manifests: one `path<TAB>label` record per line.

use std::fs;
use std::path::{Path, PathBuf};

use super::format::{read_tensor, write_atomic, write_tensor};
use super::synthetic::Sample;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let p = e.path.to_string_lossy();
        if p.contains(['\t', '\n']) {
            return Err(Error::Input(format!("path {p:?} cannot be stored in a manifest")));
        }
        text.push_str(&format!("{p}\t{}\n", e.label));
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let record = line.trim_end_matches(['\n', '\r']);
        if !record.is_empty() {
            let (p, label) = record.split_once('\t').ok_or_else(|| Error::Format {
                offset,
                msg: "record lacks a tab separator".into(),
            })?;
            let label = label.parse().map_err(|_| Error::Format {
                offset: offset + p.len() + 1,
                msg: format!("bad label {label:?}"),
            })?;
            out.push(ManifestEntry {
                path: PathBuf::from(p),
                label,
            });
        }
        offset += line.len();
    }
    Ok(out)
}

/// Writes every sample as `NNNNN.bin` under `dir` plus `dir/manifest.tsv`.
pub fn save_dataset<T: Scalar>(dir: &Path, samples: &[Sample<T>]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let name = PathBuf::from(format!("{i:05}.bin"));
        write_tensor(&dir.join(&name), &s.video)?;
        entries.push(ManifestEntry {
            path: name,
            label: s.label,
        });
    }
    let manifest = dir.join("manifest.tsv");
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}

/// Reads a manifest and every tensor it lists; relative paths are resolved
/// against the manifest's directory.
pub fn load_dataset<T: Scalar>(manifest: &Path) -> Result<Vec<Sample<T>>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let p = if e.path.is_absolute() {
                e.path
            } else {
                base.join(e.path)
            };
            Ok(Sample {
                video: read_tensor(&p)?,
                label: e.label,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            Sample {
                video: Tensor::<f64>::full(&[2, 3, 2, 2], 0.5),
                label: 1,
            },
            Sample {
                video: Tensor::<f64>::full(&[2, 3, 2, 2], 0.25),
                label: 0,
            },
        ];
        let manifest = save_dataset(dir.path(), &samples).unwrap();
        let text = fs::read_to_string(&manifest).unwrap();
        assert_eq!(text, "00000.bin\t1\n00001.bin\t0\n");
        let back: Vec<Sample<f64>> = load_dataset(&manifest).unwrap();
        assert_eq!(back, samples);
    }

    #[test]
    fn malformed_record_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        fs::write(&p, "a.bin\t0\nb.bin 1\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format { offset: 8, .. })));
        fs::write(&p, "a.bin\tx\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(Error::Format { offset: 6, .. })));
    }
}
