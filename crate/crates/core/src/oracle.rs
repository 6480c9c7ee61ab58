//! Second, independent implementation of the margin loss, used to check the
//! graph-based one.
//!
//! Margin batch files are UTF-8 text, one embedding per line:
//!
//! ```text
//! # modality <TAB> label <TAB> space-separated components
//! audio<TAB>0<TAB>0.5 -1.25 3
//! t<TAB>0<TAB>0.4 -1.0 2.5
//! ```
//!
//! Blank lines and lines starting with `#` are skipped.

use crate::error::{Error, Result};
use crate::fusion::Modality;
use crate::losses::{build_triplets, margin_loss, LossConfig};
use crate::rng::PortableRng;
use crate::tensor::{Graph, Precision, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MarginBatch {
    pub entries: Vec<(Modality, usize)>,
    pub embeddings: Vec<Vec<f64>>,
}

impl MarginBatch {
    pub fn parse(text: &str) -> Result<Self> {
        let mut batch = MarginBatch {
            entries: Vec::new(),
            embeddings: Vec::new(),
        };
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let at = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(m), Some(label), Some(values), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::format(at, "expected 3 tab-separated fields"));
            };
            let modality: Modality = m
                .trim()
                .parse()
                .map_err(|_| Error::format(at, format!("unknown modality {m:?}")))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::format(at, format!("bad label {label:?}")))?;
            let row = values
                .split_whitespace()
                .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::format(at, "embedding components must be finite numbers"))?;
            if row.is_empty() {
                return Err(Error::format(at, "empty embedding"));
            }
            if let Some(first) = batch.embeddings.first() {
                if first.len() != row.len() {
                    return Err(Error::format(
                        at,
                        format!("embedding has {} components, expected {}", row.len(), first.len()),
                    ));
                }
            }
            batch.entries.push((modality, label));
            batch.embeddings.push(row);
        }
        Ok(batch)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for ((m, label), row) in self.entries.iter().zip(&self.embeddings) {
            let values: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&format!("{}\t{label}\t{}\n", m.name(), values.join(" ")));
        }
        out
    }

    /// Batch of `samples` utterances, each with one embedding per modality,
    /// labels in `0..classes`, components uniform in `(−1, 1)`.
    pub fn random(rng: &mut PortableRng, samples: usize, classes: usize, dim: usize) -> Self {
        let mut batch = MarginBatch {
            entries: Vec::new(),
            embeddings: Vec::new(),
        };
        for _ in 0..samples {
            let label = rng.below(classes as u64) as usize;
            for m in Modality::ALL {
                batch.entries.push((m, label));
                batch
                    .embeddings
                    .push((0..dim).map(|_| rng.uniform_in(-1.0, 1.0)).collect());
            }
        }
        batch
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        dot / (aa.sqrt() * bb.sqrt())
    }
}

/// Exhaustive triple loop with its own cosine; no graph, no triplet list.
pub fn brute_force_margin_loss(batch: &MarginBatch, margin: f64) -> f64 {
    let n = batch.entries.len();
    let mut sum = 0.0;
    let mut count = 0u64;
    for i in 0..n {
        let (mi, ci) = batch.entries[i];
        for j in 0..n {
            let (mj, cj) = batch.entries[j];
            if mj == mi || cj != ci {
                continue;
            }
            let pos = cosine(&batch.embeddings[i], &batch.embeddings[j]);
            for k in 0..n {
                let (mk, ck) = batch.entries[k];
                if mk == mi && ck != ci {
                    let neg = cosine(&batch.embeddings[i], &batch.embeddings[k]);
                    sum += (margin - pos + neg).max(0.0);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarginComparison {
    pub triplets: usize,
    pub production: f64,
    pub reference: f64,
}

impl MarginComparison {
    pub fn difference(&self) -> f64 {
        (self.production - self.reference).abs()
    }
}

pub fn compare(batch: &MarginBatch, margin: f64) -> Result<MarginComparison> {
    let triplets = build_triplets(&batch.entries);
    let production = if batch.embeddings.is_empty() {
        0.0
    } else {
        let x = Tensor::from_rows(&batch.embeddings)?;
        let mut g = Graph::inference(Precision::F64);
        let v = g.constant(x);
        let config = LossConfig {
            margin,
            ..LossConfig::default()
        };
        let loss = margin_loss(&mut g, v, &triplets, &config)?;
        g.value(loss).item()
    };
    Ok(MarginComparison {
        triplets: triplets.len(),
        production,
        reference: brute_force_margin_loss(batch, margin),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_render() {
        let text = "# header\naudio\t0\t1 2 3\n\nt\t1\t-0.5 0 1e-3\r\n";
        let b = MarginBatch::parse(text).unwrap();
        assert_eq!(b.entries, vec![(Modality::Audio, 0), (Modality::Text, 1)]);
        assert_eq!(b.embeddings[1], vec![-0.5, 0.0, 1e-3]);
        assert_eq!(MarginBatch::parse(&b.to_text()).unwrap(), b);
    }

    #[test]
    fn parse_errors_carry_line_offsets() {
        let cases = [
            ("a\t0\t1\nx\t0\t1\n", 6),
            ("a\t0\t1\na\t0\t1 2\n", 6),
            ("a\t0\n", 0),
            ("a\t-1\t1\n", 0),
            ("a\t0\tNaN\n", 0),
            ("a\t0\t \n", 0),
            ("a\t0\t1\textra\n", 0),
        ];
        for (text, want) in cases {
            match MarginBatch::parse(text) {
                Err(Error::Format { offset, .. }) => assert_eq!(offset, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn identical_embeddings_report_margin() {
        let mut r = PortableRng::new(1);
        let mut b = MarginBatch::random(&mut r, 4, 2, 5);
        let first = b.embeddings[0].clone();
        b.embeddings.iter_mut().for_each(|e| *e = first.clone());
        b.entries[0].1 = 0;
        b.entries[3].1 = 1;
        let c = compare(&b, 0.5).unwrap();
        assert!(c.triplets > 0);
        assert!((c.production - 0.5).abs() < 1e-12);
        assert!((c.reference - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_triplet_set_reports_zero() {
        for text in ["", "audio\t0\t1 2\naudio\t1\t2 1\n"] {
            let c = compare(&MarginBatch::parse(text).unwrap(), 0.5).unwrap();
            assert_eq!((c.triplets, c.production, c.reference), (0, 0.0, 0.0));
        }
    }

    #[test]
    fn random_batches_agree() {
        let mut r = PortableRng::new(7);
        for _ in 0..25 {
            let b = MarginBatch::random(&mut r, 6, 3, 8);
            assert!(compare(&b, 0.5).unwrap().difference() < 1e-10);
        }
    }
}
