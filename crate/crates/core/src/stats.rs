//! Accuracy, confusion matrices and McNemar's test for paired classifiers.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::Label;
use crate::util::{read_jsonl, write_jsonl};

/// One classified image; a predictions file is JSON lines of these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: Label,
    pub prediction: Label,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub accuracy: f64,
}

impl Evaluation {
    pub fn new(predictions: Vec<Prediction>) -> Self {
        let correct = predictions.iter().filter(|p| p.label == p.prediction).count();
        let accuracy = if predictions.is_empty() { 0.0 } else { correct as f64 / predictions.len() as f64 };
        Self { predictions, accuracy }
    }
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_jsonl(path, predictions)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

/// `counts[truth][prediction]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }
}

pub fn accuracy_confusion(preds: &[Label], truths: &[Label]) -> Result<(f64, Confusion)> {
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", preds.len(), truths.len())));
    }
    if preds.is_empty() {
        return Err(Error::invalid("no predictions"));
    }
    let mut c = Confusion::default();
    for (&p, &t) in preds.iter().zip(truths) {
        c.counts[t.as_index()][p.as_index()] += 1;
    }
    Ok((c.correct() as f64 / c.total() as f64, c))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedPrediction {
    pub truth: Label,
    pub a: Label,
    pub b: Label,
}

/// Predictions of two classifiers on the same images.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairedPredictions {
    pub items: Vec<PairedPrediction>,
}

impl PairedPredictions {
    pub fn new(truths: &[Label], a: &[Label], b: &[Label]) -> Result<Self> {
        if truths.len() != a.len() || truths.len() != b.len() {
            return Err(Error::invalid(format!(
                "paired predictions need equal lengths, got {} / {} / {}",
                truths.len(),
                a.len(),
                b.len()
            )));
        }
        let items = truths.iter().zip(a).zip(b).map(|((&truth, &a), &b)| PairedPrediction { truth, a, b }).collect();
        Ok(Self { items })
    }

    /// Discordant counts `(b, c)`: A right and B wrong, A wrong and B right.
    pub fn discordant(&self) -> (u64, u64) {
        self.items.iter().fold((0, 0), |(b, c), p| {
            let (ra, rb) = (p.a == p.truth, p.b == p.truth);
            (b + (ra && !rb) as u64, c + (!ra && rb) as u64)
        })
    }

    pub fn accuracies(&self) -> (f64, f64) {
        let n = self.items.len().max(1) as f64;
        let ra = self.items.iter().filter(|p| p.a == p.truth).count() as f64;
        let rb = self.items.iter().filter(|p| p.b == p.truth).count() as f64;
        (ra / n, rb / n)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McNemarMethod {
    #[default]
    Exact,
    Chi2Corrected,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

/// McNemar's test from the discordant counts.
///
/// Exact: two-sided binomial, `2·P(X ≤ min(b,c))` for `X ~ Bin(b+c, ½)`,
/// capped at 1; the statistic is `min(b, c)`. Corrected: `(|b−c|−1)²/(b+c)`
/// with the chi-square(1) tail `erfc(√(x/2))`. `b = c = 0` gives p = 1.
pub fn mcnemar_counts(b: u64, c: u64, method: McNemarMethod) -> McNemarResult {
    let n = b + c;
    let (statistic, p_value) = match method {
        McNemarMethod::Exact => {
            let k = b.min(c);
            (k as f64, (2.0 * binomial_cdf_half(n, k)).min(1.0))
        }
        McNemarMethod::Chi2Corrected if n == 0 => (0.0, 1.0),
        McNemarMethod::Chi2Corrected => {
            // |b−c| ≥ 1 unless b = c, where the correction would overshoot
            let d = (b.abs_diff(c) as f64 - 1.0).max(0.0);
            let x = d * d / n as f64;
            (x, libm::erfc((x / 2.0).sqrt()).min(1.0))
        }
    };
    McNemarResult { b, c, statistic, p_value, method }
}

pub fn mcnemar(paired: &PairedPredictions, method: McNemarMethod) -> Result<McNemarResult> {
    if paired.items.is_empty() {
        return Err(Error::invalid("McNemar's test needs at least one paired prediction"));
    }
    let (b, c) = paired.discordant();
    Ok(mcnemar_counts(b, c, method))
}

/// `P(X ≤ k)` for `X ~ Bin(n, ½)`. Direct up to n = 1000 (C(1000, 500) is
/// still finite), in log space beyond.
fn binomial_cdf_half(n: u64, k: u64) -> f64 {
    let k = k.min(n);
    if n <= 1000 {
        let mut coef = 1.0;
        let mut total = 1.0;
        for i in 1..=k {
            coef = coef * (n - i + 1) as f64 / i as f64;
            total += coef;
        }
        return total * 0.5f64.powi(n as i32);
    }
    let ln_half_n = n as f64 * std::f64::consts::LN_2;
    let mut ln_c = 0.0;
    let mut total = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_c += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        total += (ln_c - ln_half_n).exp();
    }
    total
}

/// Joins two prediction sets on image id. Ids must match exactly and the
/// true labels must agree.
pub fn pair_predictions(a: &[Prediction], b: &[Prediction]) -> Result<PairedPredictions> {
    let index = |preds: &[Prediction], which: &str| -> Result<BTreeMap<String, (Label, Label)>> {
        let mut map = BTreeMap::new();
        for p in preds {
            if map.insert(p.id.clone(), (p.label, p.prediction)).is_some() {
                return Err(Error::invalid(format!("duplicate id {:?} in predictions {which}", p.id)));
            }
        }
        Ok(map)
    };
    let (ma, mb) = (index(a, "A")?, index(b, "B")?);
    let only_a: Vec<&str> = ma.keys().filter(|k| !mb.contains_key(*k)).map(String::as_str).collect();
    let only_b: Vec<&str> = mb.keys().filter(|k| !ma.contains_key(*k)).map(String::as_str).collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::invalid(format!(
            "prediction ids differ: only in A [{}], only in B [{}]",
            only_a.join(", "),
            only_b.join(", ")
        )));
    }
    let mut items = Vec::with_capacity(ma.len());
    for (id, (truth, pa)) in &ma {
        let (truth_b, pb) = mb[id];
        if truth_b != *truth {
            return Err(Error::invalid(format!("true label of {id:?} differs between prediction files")));
        }
        items.push(PairedPrediction { truth: *truth, a: *pa, b: pb });
    }
    Ok(PairedPredictions { items })
}

/// Comparison report written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub b: u64,
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub method: McNemarMethod,
}

pub fn compare(paired: &PairedPredictions, method: McNemarMethod) -> Result<ComparisonReport> {
    let r = mcnemar(paired, method)?;
    let (accuracy_a, accuracy_b) = paired.accuracies();
    Ok(ComparisonReport { accuracy_a, accuracy_b, b: r.b, c: r.c, statistic: r.statistic, p_value: r.p_value, method })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Normal as N, Tumor as T};

    #[test]
    fn accuracy_examples() {
        let truths: Vec<Label> = (0..61).map(|i| if i < 40 { N } else { T }).collect();
        let (acc, c) = accuracy_confusion(&[N; 61], &truths).unwrap();
        assert!((acc - 40.0 / 61.0).abs() < 1e-12);
        assert_eq!(c.counts, [[40, 0], [21, 0]]);

        let (acc, c) = accuracy_confusion(&truths, &truths).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!((c.counts[0][1], c.counts[1][0]), (0, 0));

        let inverted = [T, T, N, N];
        let (acc, _) = accuracy_confusion(&inverted, &[N, N, T, T]).unwrap();
        assert_eq!(acc, 0.0);

        assert!(accuracy_confusion(&[N], &[N, T]).is_err());
        assert!(accuracy_confusion(&[], &[]).is_err());
    }

    #[test]
    fn mcnemar_examples() {
        let r = mcnemar_counts(10, 0, McNemarMethod::Exact);
        assert_eq!(r.p_value, 0.001953125);
        let r = mcnemar_counts(10, 0, McNemarMethod::Chi2Corrected);
        assert!((r.statistic - 8.1).abs() < 1e-12);
        // scipy.stats.chi2.sf(8.1, 1)
        assert!((r.p_value - 0.004426525857919834).abs() < 1e-14);
        for k in 0..30 {
            assert_eq!(mcnemar_counts(k, k, McNemarMethod::Exact).p_value, 1.0);
        }
        for m in [McNemarMethod::Exact, McNemarMethod::Chi2Corrected] {
            let r = mcnemar_counts(0, 0, m);
            assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        }
    }

    #[test]
    fn binomial_tail_both_regimes() {
        // exact rationals via Python's math.comb
        assert!((binomial_cdf_half(1000, 450) - 0.0008652680424881588).abs() < 1e-15);
        assert!((binomial_cdf_half(2000, 1000) - 0.5089195055729272).abs() < 1e-10);
        assert_eq!(binomial_cdf_half(5, 9), 1.0);
    }

    fn pred(id: &str, label: Label, prediction: Label) -> Prediction {
        Prediction { id: id.into(), label, prediction }
    }

    #[test]
    fn pairing_by_id() {
        let a = vec![pred("x", N, N), pred("y", T, N)];
        let b = vec![pred("y", T, T), pred("x", N, N)];
        let p = pair_predictions(&a, &b).unwrap();
        assert_eq!(p.discordant(), (0, 1));

        let err = pair_predictions(&a, &[pred("x", N, N), pred("z", T, T)]).unwrap_err().to_string();
        assert!(err.contains("only in A [y]") && err.contains("only in B [z]"), "{err}");
        assert!(pair_predictions(&a, &[pred("x", T, N), pred("y", T, T)]).is_err());
        assert!(pair_predictions(&[pred("x", N, N), pred("x", N, N)], &a).is_err());
    }

    #[test]
    fn predictions_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        let preds = vec![pred("img-001", T, N), pred("img-002", N, N)];
        write_predictions(&path, &preds).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"id":"img-001","label":1,"prediction":0}"#), "{text}");
        assert_eq!(read_predictions(&path).unwrap(), preds);
        assert_eq!(Evaluation::new(preds).accuracy, 0.5);
    }

    #[test]
    fn paired_counts() {
        let truths = [N, N, T, T, N];
        let a = [N, T, T, T, N];
        let b = [N, N, N, T, T];
        let p = PairedPredictions::new(&truths, &a, &b).unwrap();
        assert_eq!(p.discordant(), (2, 1));
        assert_eq!(p.accuracies(), (0.8, 0.6));
        assert!(PairedPredictions::new(&truths, &a, &b[..2]).is_err());
        assert!(mcnemar(&PairedPredictions::default(), McNemarMethod::Exact).is_err());

        let same = PairedPredictions::new(&truths, &a, &a).unwrap();
        let r = compare(&same, McNemarMethod::Exact).unwrap();
        assert_eq!((r.b, r.c, r.p_value), (0, 0, 1.0));
        let json = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = json.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 7);
        assert_eq!(json["method"], "exact");
    }
}
