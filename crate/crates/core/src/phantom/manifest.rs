use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::generate::{generate_phantom, PhantomConfig};
use super::{Label, LabeledVolume, Split, Volume};
use crate::error::{Error, Result};
use crate::util::{derive_seed, read_jsonl, write_jsonl};

/// One manifest line. `path` is relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

/// Per-split, per-class volume counts, indexed by label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: [usize; 2],
    pub test: [usize; 2],
}

impl SplitCounts {
    /// 40 normal + 50 tumor for training, 40 normal + 21 tumor for testing.
    pub fn paper() -> Self {
        Self { train: [40, 50], test: [40, 21] }
    }

    pub fn per_class(&self) -> [usize; 2] {
        [self.train[0] + self.test[0], self.train[1] + self.test[1]]
    }

    pub fn total(&self) -> usize {
        self.per_class().iter().sum()
    }
}

impl Manifest {
    /// Conventional location of a volume file relative to the manifest.
    pub fn volume_path(id: &str) -> String {
        format!("volumes/{id}.volb")
    }

    pub fn read(path: &Path) -> Result<Manifest> {
        let entries: Vec<ManifestEntry> = read_jsonl(path)?;
        let manifest = Manifest { entries };
        manifest.check_unique()?;
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::invalid(format!("duplicate manifest id {:?}", e.id)));
            }
        }
        Ok(())
    }
}

/// Assigns splits to `volumes` per `counts` and returns the manifest.
///
/// Within each class, volumes are taken in the given order: the first
/// `counts.train[class]` go to training, the next `counts.test[class]` to
/// testing. Surplus volumes are left out of the manifest.
pub fn build_manifest(volumes: &mut [LabeledVolume], counts: &SplitCounts) -> Result<Manifest> {
    let mut available = [0usize; 2];
    for v in volumes.iter() {
        available[v.label.as_index()] += 1;
    }
    let needed = counts.per_class();
    if available[0] < needed[0] || available[1] < needed[1] {
        return Err(Error::invalid(format!(
            "not enough volumes: need {} normal / {} tumor, have {} / {} (short by {} / {})",
            needed[0],
            needed[1],
            available[0],
            available[1],
            needed[0].saturating_sub(available[0]),
            needed[1].saturating_sub(available[1]),
        )));
    }
    let mut taken = [0usize; 2];
    let mut entries = Vec::with_capacity(counts.total());
    for v in volumes.iter_mut() {
        let class = v.label.as_index();
        let k = taken[class];
        let split = if k < counts.train[class] {
            Split::Train
        } else if k < needed[class] {
            Split::Test
        } else {
            continue;
        };
        taken[class] += 1;
        v.split = split;
        entries.push(ManifestEntry { id: v.id.clone(), path: Manifest::volume_path(&v.id), label: v.label, split });
    }
    let manifest = Manifest { entries };
    manifest.check_unique()?;
    Ok(manifest)
}

/// Generates exactly enough phantoms for `counts` and assigns their splits.
///
/// Ids are `img-000`, `img-001`, ...; classes are shuffled over the ids
/// so an id says nothing about its label.
pub fn generate_dataset(config: &PhantomConfig, counts: &SplitCounts) -> Result<(Vec<LabeledVolume>, Manifest)> {
    config.validate()?;
    let [n0, n1] = counts.per_class();
    let mut labels: Vec<Label> =
        std::iter::repeat_n(Label::Normal, n0).chain(std::iter::repeat_n(Label::Tumor, n1)).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.rng_seed, "class-order")));
    let mut volumes = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| generate_phantom(config, label, &format!("img-{i:03}")))
        .collect::<Result<Vec<_>>>()?;
    let manifest = build_manifest(&mut volumes, counts)?;
    Ok((volumes, manifest))
}

/// Writes every manifest volume under `dir` plus `dir/manifest.jsonl`.
pub fn write_dataset(dir: &Path, volumes: &[LabeledVolume], manifest: &Manifest) -> Result<PathBuf> {
    let by_id: HashMap<&str, &LabeledVolume> = volumes.iter().map(|v| (v.id.as_str(), v)).collect();
    for e in &manifest.entries {
        let v = by_id
            .get(e.id.as_str())
            .ok_or_else(|| Error::Lookup(format!("manifest id {:?} has no volume", e.id)))?;
        v.volume.save(&dir.join(&e.path))?;
    }
    let path = dir.join("manifest.jsonl");
    manifest.write(&path)?;
    Ok(path)
}

/// Volumes of a manifest loaded into memory, split into train and test.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<LabeledVolume>,
    pub test: Vec<LabeledVolume>,
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Dataset> {
        let manifest = Manifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
        let mut ds = Dataset::default();
        for e in manifest.entries {
            let volume = Volume::load(&base.join(&e.path))?;
            let lv = LabeledVolume { id: e.id, volume, label: e.label, split: e.split };
            match lv.split {
                Split::Train => ds.train.push(lv),
                Split::Test => ds.test.push(lv),
            }
        }
        Ok(ds)
    }

    pub fn from_volumes(volumes: Vec<LabeledVolume>) -> Dataset {
        let (train, test) = volumes.into_iter().partition(|v| v.split == Split::Train);
        Dataset { train, test }
    }

    /// Replaces labels with externally supplied ones (e.g. extracted from
    /// reports). Every volume must have an entry.
    pub fn relabel(&mut self, labels: &HashMap<String, Label>) -> Result<()> {
        let missing: Vec<&str> = self
            .train
            .iter()
            .chain(&self.test)
            .filter(|v| !labels.contains_key(&v.id))
            .map(|v| v.id.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Lookup(format!("no label for volumes: {}", missing.join(", "))));
        }
        for v in self.train.iter_mut().chain(self.test.iter_mut()) {
            v.label = labels[&v.id];
        }
        Ok(())
    }

    pub fn dims(&self) -> Option<[usize; 3]> {
        self.train.first().or(self.test.first()).map(|v| v.volume.dims())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(normal: usize, tumor: usize) -> Vec<LabeledVolume> {
        let mk = |i: usize, label| LabeledVolume {
            id: format!("v{i:03}"),
            volume: Volume::zeros([2, 2, 2]),
            label,
            split: Split::Train,
        };
        (0..normal)
            .map(|i| mk(i, Label::Normal))
            .chain((normal..normal + tumor).map(|i| mk(i, Label::Tumor)))
            .collect()
    }

    #[test]
    fn paper_split_counts() {
        let mut vols = pool(80, 71);
        let m = build_manifest(&mut vols, &SplitCounts::paper()).unwrap();
        let train: Vec<_> = m.split(Split::Train).collect();
        let test: Vec<_> = m.split(Split::Test).collect();
        assert_eq!(train.len(), 90);
        assert_eq!(test.len(), 61);
        assert_eq!(train.iter().filter(|e| e.label == Label::Normal).count(), 40);
        assert_eq!(train.iter().filter(|e| e.label == Label::Tumor).count(), 50);
        assert_eq!(test.iter().filter(|e| e.label == Label::Tumor).count(), 21);
    }

    #[test]
    fn zero_counts_give_empty_manifest() {
        let mut vols = pool(3, 3);
        let m = build_manifest(&mut vols, &SplitCounts { train: [0, 0], test: [0, 0] }).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn shortfall_is_reported() {
        let mut vols = pool(10, 71);
        let err = build_manifest(&mut vols, &SplitCounts::paper()).unwrap_err().to_string();
        assert!(err.contains("short by 70 / 0"), "{err}");
    }

    #[test]
    fn manifest_line_format() {
        let e = ManifestEntry { id: "a".into(), path: "volumes/a.volb".into(), label: Label::Tumor, split: Split::Test };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"id":"a","path":"volumes/a.volb","label":1,"split":"test"}"#
        );
        assert!(serde_json::from_str::<ManifestEntry>(r#"{"id":"a","path":"p","label":2,"split":"test"}"#).is_err());
    }

    #[test]
    fn dataset_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let mut vols = pool(3, 3);
        let m = build_manifest(&mut vols, &SplitCounts { train: [2, 2], test: [1, 1] }).unwrap();
        let path = write_dataset(dir.path(), &vols, &m).unwrap();
        let ds = Dataset::load(&path).unwrap();
        assert_eq!(ds.train.len(), 4);
        assert_eq!(ds.test.len(), 2);
        let mut labels: HashMap<String, Label> = HashMap::new();
        for v in ds.train.iter().chain(&ds.test) {
            labels.insert(v.id.clone(), Label::Normal);
        }
        let mut ds2 = ds.clone();
        ds2.relabel(&labels).unwrap();
        assert!(ds2.train.iter().all(|v| v.label == Label::Normal));
        labels.remove("v000");
        assert!(ds2.relabel(&labels).is_err());
    }
}
