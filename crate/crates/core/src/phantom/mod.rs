//! Synthetic labelled volumes, preprocessing, persistence and manifests.

mod generate;
mod manifest;
mod volume;

use serde::{Deserialize, Serialize};

pub use generate::{generate_phantom, generate_with_lesions, Lesion, PhantomConfig};
pub use manifest::{build_manifest, generate_dataset, write_dataset, Dataset, Manifest, ManifestEntry, SplitCounts};
pub use volume::{volume_roundtrip, Volume, VOLUME_MAGIC};

use crate::error::Error;

/// Binary class of a volume or report: normal (0) or tumor-containing (1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Normal = 0,
    Tumor = 1,
}

impl Label {
    pub fn as_index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Normal),
            1 => Some(Label::Tumor),
            _ => None,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self, Error> {
        Label::from_index(v as usize).ok_or_else(|| Error::invalid(format!("label {v} is not 0 or 1")))
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledVolume {
    pub id: String,
    pub volume: Volume,
    pub label: Label,
    pub split: Split,
}
