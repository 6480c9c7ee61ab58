//! Dataset manifest: `manifest.tsv` listing one utterance per line.
//!
//! ```text
//! # id  label  audio  text  visual    (tab-separated)
//! u00000  2  features/u00000.audio.wftf  features/u00000.text.wftf  -
//! ```
//!
//! Paths are relative to the manifest's directory; `-` marks an absent
//! modality. Blank lines and `#` comments are ignored.

use std::collections::HashSet;
use std::path::Path;

use super::{feature_file, UtteranceSample};
use crate::error::{Error, Result};
use crate::fusion::Modality;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub label: usize,
    /// Relative feature paths in audio, text, visual order.
    pub paths: [Option<String>; 3],
}

impl ManifestRecord {
    pub fn path(&self, m: Modality) -> Option<&str> {
        self.paths[m as usize].as_deref()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(Error::format(
                    at,
                    format!("expected 5 tab-separated fields, got {}", fields.len()),
                ));
            }
            let id = fields[0];
            if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == '/' || c == '\\') {
                return Err(Error::format(at, format!("invalid utterance id {id:?}")));
            }
            if !seen.insert(id.to_string()) {
                return Err(Error::format(at, format!("duplicate utterance id {id:?}")));
            }
            let label = fields[1]
                .parse()
                .map_err(|_| Error::format(at, format!("bad label {:?}", fields[1])))?;
            let path = |f: &str| (f != "-" && !f.is_empty()).then(|| f.to_string());
            let paths = [path(fields[2]), path(fields[3]), path(fields[4])];
            if paths.iter().all(Option::is_none) {
                return Err(Error::format(at, format!("utterance {id:?} lists no modalities")));
            }
            records.push(ManifestRecord {
                id: id.to_string(),
                label,
                paths,
            });
        }
        Ok(Manifest { records })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# id\tlabel\taudio\ttext\tvisual\n");
        for r in &self.records {
            let p = |i: usize| r.paths[i].as_deref().unwrap_or("-");
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.id, r.label, p(0), p(1), p(2)));
        }
        out
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text).map_err(|e| e.in_file(&path))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_NAME);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))
    }

    /// Checks label ranges and that every referenced file exists.
    pub fn validate(&self, dir: &Path, classes: usize) -> Result<()> {
        for r in &self.records {
            if r.label >= classes {
                return Err(Error::Data(format!(
                    "utterance {}: label {} out of range for {classes} classes",
                    r.id, r.label
                )));
            }
            for p in r.paths.iter().flatten() {
                if !dir.join(p).is_file() {
                    return Err(Error::Data(format!("utterance {}: missing feature file {p}", r.id)));
                }
            }
        }
        Ok(())
    }

    /// Reads every utterance, checking that each modality has one feature
    /// dimension across the dataset.
    pub fn load(&self, dir: &Path, classes: usize) -> Result<Vec<UtteranceSample>> {
        self.validate(dir, classes)?;
        let mut dims: [Option<usize>; 3] = [None; 3];
        let mut samples = Vec::with_capacity(self.records.len());
        for r in &self.records {
            let mut seqs = [None, None, None];
            for m in Modality::ALL {
                if let Some(p) = r.path(m) {
                    let seq = feature_file::read(&dir.join(p))?;
                    match dims[m as usize] {
                        Some(d) if d != seq.dim() => {
                            return Err(Error::Data(format!(
                                "utterance {}: {} dim {} differs from {d} elsewhere",
                                r.id,
                                m.name(),
                                seq.dim()
                            )))
                        }
                        _ => dims[m as usize] = Some(seq.dim()),
                    }
                    seqs[m as usize] = Some(seq);
                }
            }
            let [audio, text, visual] = seqs;
            samples.push(UtteranceSample {
                id: r.id.clone(),
                label: r.label,
                audio,
                text,
                visual,
            });
        }
        Ok(samples)
    }
}

/// Relative path of one utterance's feature file.
pub fn feature_path(id: &str, m: Modality) -> String {
    format!("features/{id}.{}.wftf", m.name())
}

/// Writes `samples` as `manifest.tsv` plus one feature file per modality.
pub fn write_dataset(dir: &Path, samples: &[UtteranceSample]) -> Result<Manifest> {
    let features = dir.join("features");
    std::fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
    let mut manifest = Manifest::default();
    for s in samples {
        let mut paths = [None, None, None];
        for m in Modality::ALL {
            if let Some(seq) = s.get(m) {
                let rel = feature_path(&s.id, m);
                feature_file::write(&dir.join(&rel), seq)?;
                paths[m as usize] = Some(rel);
            }
        }
        manifest.records.push(ManifestRecord {
            id: s.id.clone(),
            label: s.label,
            paths,
        });
    }
    manifest.write(dir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSequence;

    const SAMPLE: &str = "# id\tlabel\taudio\ttext\tvisual\nu1\t0\ta.wftf\t-\tv.wftf\r\n\nu2\t3\t-\tt.wftf\t-\n";

    #[test]
    fn parse_and_render() {
        let m = Manifest::parse(SAMPLE).unwrap();
        assert_eq!(m.records.len(), 2);
        assert_eq!(m.records[0].path(Modality::Visual), Some("v.wftf"));
        assert_eq!(m.records[0].path(Modality::Text), None);
        assert_eq!(m.records[1].label, 3);
        assert_eq!(Manifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn errors_are_positioned() {
        let cases = [
            ("u1\t0\ta\t-\n", 0),
            ("u1\t0\ta\t-\t-\nu1\t1\ta\t-\t-\n", 11),
            ("u1\tx\ta\t-\t-\n", 0),
            ("u 1\t0\ta\t-\t-\n", 0),
            ("../u\t0\ta\t-\t-\n", 0),
            ("u1\t0\t-\t-\t-\n", 0),
        ];
        for (text, want) in cases {
            match Manifest::parse(text) {
                Err(Error::Format { offset, .. }) => assert_eq!(offset, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn validate_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let seq = |d| FeatureSequence::new(2, d, vec![0.5; 2 * d]).unwrap();
        let samples = vec![
            UtteranceSample {
                id: "a".into(),
                label: 1,
                audio: Some(seq(3)),
                text: None,
                visual: Some(seq(2)),
            },
            UtteranceSample {
                id: "b".into(),
                label: 0,
                audio: Some(seq(3)),
                text: Some(seq(4)),
                visual: None,
            },
        ];
        let m = write_dataset(dir.path(), &samples).unwrap();
        assert_eq!(Manifest::read(dir.path()).unwrap(), m);
        assert_eq!(m.load(dir.path(), 2).unwrap(), samples);
        assert!(matches!(m.validate(dir.path(), 1), Err(Error::Data(_))));

        std::fs::remove_file(dir.path().join(feature_path("b", Modality::Text))).unwrap();
        assert!(m.validate(dir.path(), 2).unwrap_err().to_string().contains("b.text"));
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let one = |id: &str, d| UtteranceSample {
            id: id.into(),
            label: 0,
            audio: Some(FeatureSequence::new(1, d, vec![1.0; d]).unwrap()),
            text: None,
            visual: None,
        };
        let m = write_dataset(dir.path(), &[one("a", 2), one("b", 3)]).unwrap();
        assert!(matches!(m.load(dir.path(), 1), Err(Error::Data(_))));
    }
}
