use std::collections::HashSet;

use super::LabeledImpression;
use crate::error::{Error, Result};

/// Unordered pair of distinct impressions; `id_a < id_b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImpressionPair {
    pub id_a: String,
    pub id_b: String,
    pub same_class: bool,
}

/// Every unordered pair, `N(N−1)/2` of them, sorted by `(id_a, id_b)`.
pub fn generate_pairs(impressions: &[LabeledImpression]) -> Result<Vec<ImpressionPair>> {
    let mut seen = HashSet::new();
    for imp in impressions {
        if !seen.insert(imp.id.as_str()) {
            return Err(Error::invalid(format!("duplicate impression id {:?}", imp.id)));
        }
    }
    let mut sorted: Vec<&LabeledImpression> = impressions.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let n = sorted.len();
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            pairs.push(ImpressionPair { id_a: a.id.clone(), id_b: b.id.clone(), same_class: a.label == b.label });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::Label;
    use proptest::prelude::*;

    fn corpus(labels: &[Label]) -> Vec<LabeledImpression> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| LabeledImpression::new(format!("r{i:03}"), "text", l).unwrap())
            .rev()
            .collect()
    }

    #[test]
    fn counts() {
        let c = corpus(&[Label::Normal; 4]);
        assert_eq!(generate_pairs(&c).unwrap().len(), 6);
        assert!(generate_pairs(&c[..1]).unwrap().is_empty());
        assert!(generate_pairs(&[]).unwrap().is_empty());

        let mut labels = vec![Label::Normal; 45];
        labels.extend([Label::Tumor; 45]);
        let pairs = generate_pairs(&corpus(&labels)).unwrap();
        assert_eq!(pairs.len(), 4005);
        assert_eq!(pairs.iter().filter(|p| p.same_class).count(), 1980);
    }

    #[test]
    fn canonical_order_and_duplicates() {
        let pairs = generate_pairs(&corpus(&[Label::Normal, Label::Tumor, Label::Normal])).unwrap();
        let ids: Vec<(&str, &str)> = pairs.iter().map(|p| (p.id_a.as_str(), p.id_b.as_str())).collect();
        assert_eq!(ids, [("r000", "r001"), ("r000", "r002"), ("r001", "r002")]);
        assert_eq!(pairs.iter().map(|p| p.same_class).collect::<Vec<_>>(), [false, true, false]);

        let mut dup = corpus(&[Label::Normal, Label::Tumor]);
        dup[1].id = dup[0].id.clone();
        assert!(generate_pairs(&dup).is_err());
    }

    proptest! {
        #[test]
        fn all_unordered_pairs_once(labels in proptest::collection::vec(any::<bool>(), 0..40)) {
            let labels: Vec<Label> = labels.into_iter().map(|b| if b { Label::Tumor } else { Label::Normal }).collect();
            let pairs = generate_pairs(&corpus(&labels)).unwrap();
            let n = labels.len();
            prop_assert_eq!(pairs.len(), n * n.saturating_sub(1) / 2);
            let mut keys = HashSet::new();
            for p in &pairs {
                prop_assert!(p.id_a < p.id_b);
                prop_assert!(keys.insert((p.id_a.clone(), p.id_b.clone())));
            }
            let k = labels.iter().filter(|&&l| l == Label::Tumor).count();
            let same = pairs.iter().filter(|p| p.same_class).count();
            prop_assert_eq!(same, k * k.saturating_sub(1) / 2 + (n - k) * (n - k).saturating_sub(1) / 2);
        }
    }
}
