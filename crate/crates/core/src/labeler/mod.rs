//! Report-impression labelling: all-pairs supervision, a trainable
//! sentence encoder and nearest-centroid inference.

mod corpus;
mod encoder;
mod infer;
mod pairs;

pub use corpus::{synthetic_corpus, synthetic_reports};
pub use encoder::{
    contrastive_loss, tokenize, train_encoder, EncoderTrainConfig, HashingEncoder, SentenceEncoder, ENCODER_DIM,
    HASH_BUCKETS,
};
pub use infer::{label_manifest, predict_label, read_label_map, write_label_map, CentroidClassifier, LabelPrediction, LabelRecord};
pub use pairs::{generate_pairs, ImpressionPair};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Label;
use crate::util::{read_jsonl, write_jsonl};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImpression {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl LabeledImpression {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("impression text is empty"));
        }
        Ok(Self { id: id.into(), text, label })
    }
}

/// One line of a reports corpus; `label` is absent for unlabelled reports.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub id: String,
    pub impression: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

pub fn read_reports(path: &Path) -> Result<Vec<ReportRecord>> {
    read_jsonl(path)
}

pub fn write_reports(path: &Path, reports: &[ReportRecord]) -> Result<()> {
    write_jsonl(path, reports)
}

/// The labelled subset of `reports` as impressions; empty texts are rejected.
pub fn labeled_impressions(reports: &[ReportRecord]) -> Result<Vec<LabeledImpression>> {
    reports
        .iter()
        .filter_map(|r| r.label.map(|l| LabeledImpression::new(r.id.clone(), r.impression.clone(), l)))
        .collect()
}
