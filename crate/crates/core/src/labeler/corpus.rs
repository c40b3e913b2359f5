//! Templated impressions standing in for radiology report text.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LabeledImpression, ReportRecord};
use crate::error::Result;
use crate::phantom::Label;
use crate::util::derive_seed;

// The two classes' key phrases share no tokens.
const NORMAL_KEYS: &[&str] = &[
    "No intracranial metastasis.",
    "No evidence of intracranial metastatic disease.",
    "No abnormal enhancement identified.",
    "Negative for intracranial metastases.",
    "No acute intracranial abnormality.",
    "Unremarkable examination without abnormal enhancement.",
];

const TUMOR_KEYS: &[&str] = &[
    "New enhancing lesion in the {loc} measuring {mm} mm.",
    "{count} enhancing nodules within the {loc} representing secondary deposits.",
    "Ring enhancing mass in the {loc} with surrounding vasogenic edema.",
    "Interval enlargement, known {loc} lesion.",
    "Multiple enhancing foci, suspicious, largest in the {loc}.",
];

const LOCATIONS: &[&str] = &[
    "left frontal lobe",
    "right frontal lobe",
    "left parietal lobe",
    "right temporal lobe",
    "left occipital lobe",
    "right cerebellar hemisphere",
];

const COUNTS: &[&str] = &["Two", "Three", "Several"];

const FILLER: &[&str] = &[
    "Stable postoperative changes.",
    "Mild chronic small vessel ischemic change.",
    "Paranasal sinuses are clear.",
    "Comparison made with prior study.",
    "Ventricles are normal size.",
];

fn impression(label: Label, rng: &mut ChaCha8Rng) -> String {
    let keys = if label == Label::Tumor { TUMOR_KEYS } else { NORMAL_KEYS };
    let key = keys
        .choose(rng)
        .expect("non-empty")
        .replace("{loc}", LOCATIONS.choose(rng).expect("non-empty"))
        .replace("{count}", COUNTS.choose(rng).expect("non-empty"))
        .replace("{mm}", &rng.random_range(3..=18).to_string());
    let mut sentences = vec![key];
    for _ in 0..rng.random_range(0..=2) {
        let f = FILLER.choose(rng).expect("non-empty").to_string();
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, f);
    }
    sentences.join(" ")
}

fn impression_for(id: &str, label: Label, seed: u64) -> String {
    impression(label, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("report/{id}"))))
}

/// `n_per_class` labelled impressions of each class with ids
/// `{prefix}-000`, ..., classes alternating.
pub fn synthetic_corpus(n_per_class: usize, seed: u64, prefix: &str) -> Result<Vec<LabeledImpression>> {
    (0..2 * n_per_class)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Tumor };
            let id = format!("{prefix}-{i:03}");
            let text = impression_for(&id, label, seed);
            LabeledImpression::new(id, text, label)
        })
        .collect()
}

/// One unlabelled report per `(id, label)`, worded for that label.
pub fn synthetic_reports(volumes: &[(String, Label)], seed: u64) -> Vec<ReportRecord> {
    volumes
        .iter()
        .map(|(id, label)| ReportRecord { id: id.clone(), impression: impression_for(id, *label, seed), label: None })
        .collect()
}
