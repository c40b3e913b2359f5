use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledImpression, ReportRecord, SentenceEncoder};
use crate::error::{Error, Result};
use crate::phantom::{Label, Manifest};
use crate::util::{read_jsonl, write_jsonl};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelPrediction {
    pub label: Label,
    /// `cos(query, c_label) − cos(query, c_other)`; zero on a tie.
    pub confidence: f64,
    /// Set when the two cosines tie and class 0 was chosen by convention.
    pub low_confidence: bool,
}

/// Unit-length class centroids of the reference encodings.
#[derive(Clone, Debug)]
pub struct CentroidClassifier {
    centroids: [Vec<f64>; 2],
}

impl CentroidClassifier {
    /// References are summed in `(id, text)` order, so the result does not
    /// depend on the order they are given in.
    pub fn fit<E: SentenceEncoder + ?Sized>(encoder: &E, refs: &[LabeledImpression]) -> Result<Self> {
        let mut sorted: Vec<&LabeledImpression> = refs.iter().collect();
        sorted.sort_by(|a, b| (&a.id, &a.text).cmp(&(&b.id, &b.text)));
        let mut sums = [vec![0.0; encoder.dim()], vec![0.0; encoder.dim()]];
        let mut counts = [0usize; 2];
        for r in sorted {
            let e = encoder.encode(&r.text)?;
            let class = r.label.as_index();
            counts[class] += 1;
            sums[class].iter_mut().zip(&e).for_each(|(s, v)| *s += v);
        }
        for (class, &n) in counts.iter().enumerate() {
            if n == 0 {
                return Err(Error::invalid(format!("no reference impressions of class {class}")));
            }
        }
        let centroids = sums.map(|mut c| {
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                c.iter_mut().for_each(|v| *v /= norm);
            }
            c
        });
        Ok(Self { centroids })
    }

    pub fn from_centroids(c0: Vec<f64>, c1: Vec<f64>) -> Self {
        Self { centroids: [c0, c1] }
    }

    pub fn classify_embedding(&self, e: &[f64]) -> LabelPrediction {
        let cos = |c: &[f64]| c.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
        let (c0, c1) = (cos(&self.centroids[0]), cos(&self.centroids[1]));
        if c1 > c0 {
            LabelPrediction { label: Label::Tumor, confidence: c1 - c0, low_confidence: false }
        } else {
            LabelPrediction { label: Label::Normal, confidence: c0 - c1, low_confidence: c0 == c1 }
        }
    }

    pub fn classify<E: SentenceEncoder + ?Sized>(&self, encoder: &E, text: &str) -> Result<LabelPrediction> {
        Ok(self.classify_embedding(&encoder.encode(text)?))
    }
}

/// Nearest-centroid label for `query`.
pub fn predict_label<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    refs: &[LabeledImpression],
    query: &str,
) -> Result<LabelPrediction> {
    CentroidClassifier::fit(encoder, refs)?.classify(encoder, query)
}

/// One line of a label map file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: Label,
    pub confidence: f64,
}

/// Labels every report; each report id must name a manifest volume.
pub fn label_manifest<E: SentenceEncoder + ?Sized>(
    encoder: &E,
    refs: &[LabeledImpression],
    reports: &[ReportRecord],
    manifest: &Manifest,
) -> Result<Vec<LabelRecord>> {
    let ids: HashSet<&str> = manifest.entries.iter().map(|e| e.id.as_str()).collect();
    let orphans: Vec<&str> = reports.iter().map(|r| r.id.as_str()).filter(|id| !ids.contains(id)).collect();
    if !orphans.is_empty() {
        return Err(Error::Lookup(format!("reports without a manifest volume: {}", orphans.join(", "))));
    }
    let classifier = CentroidClassifier::fit(encoder, refs)?;
    reports
        .iter()
        .map(|r| {
            let p = classifier.classify(encoder, &r.impression)?;
            Ok(LabelRecord { id: r.id.clone(), label: p.label, confidence: p.confidence })
        })
        .collect()
}

pub fn write_label_map(path: &Path, records: &[LabelRecord]) -> Result<()> {
    write_jsonl(path, records)
}

/// Reads a label map into the form [`crate::phantom::Dataset::relabel`] takes.
pub fn read_label_map(path: &Path) -> Result<HashMap<String, Label>> {
    let records: Vec<LabelRecord> = read_jsonl(path)?;
    let mut map = HashMap::with_capacity(records.len());
    for r in records {
        if map.insert(r.id.clone(), r.label).is_some() {
            return Err(Error::invalid(format!("label map lists {:?} twice", r.id)));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{ManifestEntry, Split};

    /// Looks texts up in a fixed table.
    struct TableEncoder(HashMap<&'static str, Vec<f64>>);

    impl SentenceEncoder for TableEncoder {
        fn dim(&self) -> usize {
            2
        }

        fn encode(&self, text: &str) -> Result<Vec<f64>> {
            self.0.get(text).cloned().ok_or_else(|| Error::Lookup(text.into()))
        }
    }

    fn table() -> TableEncoder {
        let s = 0.5f64.sqrt();
        TableEncoder(HashMap::from([
            ("n", vec![1.0, 0.0]),
            ("n2", vec![s, -s]),
            ("t", vec![0.0, 1.0]),
            ("mid", vec![s, s]),
        ]))
    }

    fn refs() -> Vec<LabeledImpression> {
        vec![
            LabeledImpression::new("a", "n", Label::Normal).unwrap(),
            LabeledImpression::new("b", "t", Label::Tumor).unwrap(),
        ]
    }

    #[test]
    fn centroid_geometry() {
        let c = CentroidClassifier::from_centroids(vec![1.0, 0.0], vec![0.0, 1.0]);
        let q = [0.9, 0.1];
        let n = (0.82f64).sqrt();
        let p = c.classify_embedding(&[q[0] / n, q[1] / n]);
        assert_eq!(p.label, Label::Normal);
        assert!((p.confidence - 0.8 / n).abs() < 1e-12);
        assert!(!p.low_confidence);

        let enc = table();
        let tie = predict_label(&enc, &refs(), "mid").unwrap();
        assert_eq!((tie.label, tie.confidence, tie.low_confidence), (Label::Normal, 0.0, true));
        assert_eq!(predict_label(&enc, &refs(), "n").unwrap().label, Label::Normal);
        assert_eq!(predict_label(&enc, &refs(), "t").unwrap().label, Label::Tumor);
        assert!(predict_label(&enc, &refs()[..1], "t").is_err());
    }

    #[test]
    fn reference_order_does_not_matter() {
        let enc = table();
        let mut r = refs();
        r.push(LabeledImpression::new("c", "n2", Label::Normal).unwrap());
        let a = predict_label(&enc, &r, "mid").unwrap();
        r.reverse();
        assert_eq!(predict_label(&enc, &r, "mid").unwrap(), a);
    }

    #[test]
    fn manifest_labelling() {
        let enc = table();
        let entry = |id: &str| ManifestEntry {
            id: id.into(),
            path: Manifest::volume_path(id),
            label: Label::Normal,
            split: Split::Train,
        };
        let manifest = Manifest { entries: vec![entry("v1"), entry("v2")] };
        let report = |id: &str, text: &str| ReportRecord { id: id.into(), impression: text.into(), label: None };
        let out = label_manifest(&enc, &refs(), &[report("v1", "t"), report("v2", "n")], &manifest).unwrap();
        assert_eq!(out.iter().map(|r| r.label).collect::<Vec<_>>(), [Label::Tumor, Label::Normal]);

        let err = label_manifest(&enc, &refs(), &[report("v1", "t"), report("ghost", "n")], &manifest).unwrap_err();
        assert!(err.to_string().contains("ghost"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        write_label_map(&path, &out).unwrap();
        let map = read_label_map(&path).unwrap();
        assert_eq!(map["v1"], Label::Tumor);
        assert_eq!(map.len(), 2);
    }
}
