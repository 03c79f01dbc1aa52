//! Cosine matching, threshold selection and verification metrics.
//!
//! Scores are similarities: a pair is declared kin when `score >= threshold`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Relation};
use crate::error::{Error, Result};

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::UndefinedSimilarity);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub parent_id: String,
    pub child_id: String,
    pub score: f64,
    pub label: Label,
    pub relation: Relation,
    pub fold: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairScoreSet {
    pub entries: Vec<ScoredPair>,
}

impl PairScoreSet {
    pub fn new(entries: Vec<ScoredPair>) -> Self {
        Self { entries }
    }

    pub fn from_scores(scores: &[f64], labels: &[Label]) -> Self {
        let entries = scores
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (&score, &label))| ScoredPair {
                parent_id: format!("p{i}"),
                child_id: format!("c{i}"),
                score,
                label,
                relation: Relation::PC,
                fold: 0,
                subset: None,
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn filter(&self, keep: impl Fn(&ScoredPair) -> bool) -> PairScoreSet {
        PairScoreSet {
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    fn class_counts(&self) -> (usize, usize) {
        let kin = self.entries.iter().filter(|e| e.label.is_kin()).count();
        (kin, self.entries.len() - kin)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::dataset::write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::dataset::read_json(path)
    }
}

/// Fraction of pairs classified correctly at `threshold`.
pub fn accuracy_at(scores: &PairScoreSet, threshold: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let correct = scores
        .entries
        .iter()
        .filter(|e| (e.score >= threshold) == e.label.is_kin())
        .count();
    correct as f64 / scores.len() as f64
}

/// Candidate thresholds: `−∞`, midpoints of adjacent distinct sorted scores,
/// `+∞` (ascending).
pub fn candidate_thresholds(scores: &PairScoreSet) -> Vec<f64> {
    let mut distinct: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut out = Vec::with_capacity(distinct.len() + 1);
    out.push(f64::NEG_INFINITY);
    out.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(f64::INFINITY);
    out
}

/// Threshold maximizing accuracy on `train`; ties go to the smallest.
pub fn select_threshold(train: &PairScoreSet) -> Result<f64> {
    let (kin, non) = train.class_counts();
    if kin == 0 || non == 0 {
        return Err(Error::Protocol(
            "threshold selection needs both kin and non-kin scores".into(),
        ));
    }
    let mut sorted: Vec<(f64, bool)> = train.entries.iter().map(|e| (e.score, e.label.is_kin())).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep ascending: at −∞ everything is called kin.
    let mut correct = kin;
    let mut best = (correct, f64::NEG_INFINITY);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            correct = if sorted[i].1 { correct - 1 } else { correct + 1 };
            i += 1;
        }
        let threshold = if i < sorted.len() {
            0.5 * (value + sorted[i].0)
        } else {
            f64::INFINITY
        };
        if correct > best.0 {
            best = (correct, threshold);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub threshold: f64,
    pub auc: f64,
    pub eer: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
}

/// ROC obtained by lowering the threshold from `+∞` through every distinct
/// score.
pub fn roc_curve(scores: &PairScoreSet) -> Result<Vec<RocPoint>> {
    let (kin, non) = scores.class_counts();
    if kin == 0 || non == 0 {
        return Err(Error::Protocol("ROC needs both kin and non-kin scores".into()));
    }
    let mut sorted: Vec<(f64, bool)> = scores.entries.iter().map(|e| (e.score, e.label.is_kin())).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut roc = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint {
            threshold: value,
            fpr: fp as f64 / non as f64,
            tpr: tp as f64 / kin as f64,
        });
    }
    Ok(roc)
}

/// Trapezoidal area under the ROC.
pub fn auc(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum()
}

/// Equal error rate, interpolated on the segment where `fpr` first reaches
/// `1 − tpr`.
pub fn eer(roc: &[RocPoint]) -> f64 {
    let gap = |p: &RocPoint| p.fpr - (1.0 - p.tpr);
    for w in roc.windows(2) {
        let (g0, g1) = (gap(&w[0]), gap(&w[1]));
        if g1 >= 0.0 {
            if g0 >= 0.0 {
                return w[0].fpr;
            }
            let t = g0 / (g0 - g1);
            return (w[0].fpr + t * (w[1].fpr - w[0].fpr)).clamp(0.0, 1.0);
        }
    }
    roc.last().map(|p| p.fpr).unwrap_or(0.5)
}

pub fn evaluate(test: &PairScoreSet, threshold: f64) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::Protocol("cannot evaluate an empty score set".into()));
    }
    let roc = roc_curve(test)?;
    Ok(Metrics {
        accuracy: accuracy_at(test, threshold),
        threshold,
        auc: auc(&roc),
        eer: eer(&roc),
        roc,
    })
}

/// Writes `threshold,fpr,tpr` rows with 9 significant digits.
pub fn export_roc(metrics: &Metrics, path: &Path) -> Result<()> {
    let mut out = String::from("threshold,fpr,tpr\n");
    for p in &metrics.roc {
        out.push_str(&format!("{},{},{}\n", sig9(p.threshold), sig9(p.fpr), sig9(p.tpr)));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

fn sig9(v: f64) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{v:.8e}")
}

/// Parses a CSV written by [`export_roc`].
pub fn read_roc_csv(path: &Path) -> Result<Vec<RocPoint>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("threshold,fpr,tpr") {
        return Err(Error::InvalidArgument(format!("{}: missing ROC header", path.display())));
    }
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad ROC value {s:?}")))
            };
            match fields.as_slice() {
                [t, f, p] => Ok(RocPoint {
                    threshold: parse(t)?,
                    fpr: parse(f)?,
                    tpr: parse(p)?,
                }),
                _ => Err(Error::InvalidArgument(format!("bad ROC line {line:?}"))),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Kin, NonKin};

    #[test]
    fn cosine_cases() {
        let u = [1.0, 2.0, -3.0];
        assert!((cosine_similarity(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 5.0]).unwrap(), 0.0);
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        assert!((cosine_similarity(&u, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedSimilarity)));
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn threshold_for_separated_scores() {
        let s = PairScoreSet::from_scores(&[0.9, 0.8, 0.1, 0.2], &[Kin, Kin, NonKin, NonKin]);
        assert_eq!(select_threshold(&s).unwrap(), 0.5);
    }

    /// Exhaustive scan over the candidate set with the accuracy definition.
    fn brute_threshold(s: &PairScoreSet) -> (f64, f64) {
        let mut best = (f64::NEG_INFINITY, -1.0);
        for t in candidate_thresholds(s) {
            let acc = accuracy_at(s, t);
            if acc > best.1 {
                best = (t, acc);
            }
        }
        best
    }

    #[test]
    fn threshold_for_interleaved_scores() {
        let s = PairScoreSet::from_scores(&[0.1, 0.2, 0.3, 0.4], &[Kin, NonKin, Kin, NonKin]);
        let (t, acc) = brute_threshold(&s);
        assert_eq!(acc, 0.5);
        assert_eq!(select_threshold(&s).unwrap(), t);
        assert_eq!(t, f64::NEG_INFINITY);
    }

    #[test]
    fn threshold_matches_brute_force_with_ties() {
        let scores = [0.3, 0.3, 0.5, 0.1, 0.5, 0.7, 0.2, 0.3, 0.9, 0.1];
        let labels = [Kin, NonKin, Kin, NonKin, NonKin, Kin, NonKin, Kin, Kin, NonKin];
        let s = PairScoreSet::from_scores(&scores, &labels);
        assert_eq!(select_threshold(&s).unwrap(), brute_threshold(&s).0);
    }

    #[test]
    fn threshold_needs_both_classes() {
        let s = PairScoreSet::from_scores(&[0.1, 0.2], &[Kin, Kin]);
        assert!(matches!(select_threshold(&s), Err(Error::Protocol(_))));
    }

    #[test]
    fn perfect_metrics() {
        let s = PairScoreSet::from_scores(&[0.9, 0.8, 0.1, 0.2], &[Kin, Kin, NonKin, NonKin]);
        let m = evaluate(&s, 0.5).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.eer, 0.0);
    }

    #[test]
    fn tied_scores_metrics() {
        let s = PairScoreSet::from_scores(&[0.4; 5], &[Kin, Kin, Kin, NonKin, NonKin]);
        let t = select_threshold(&s).unwrap();
        let m = evaluate(&s, t).unwrap();
        assert_eq!(m.accuracy, 0.6);
        assert_eq!(m.auc, 0.5);
        assert_eq!(m.roc.len(), 2);
        assert_eq!(m.eer, 0.5);
    }

    #[test]
    fn empty_evaluate() {
        assert!(evaluate(&PairScoreSet::default(), 0.0).is_err());
    }

    #[test]
    fn eer_interpolates() {
        // fpr − fnr changes sign between (0, .5) and (.5, 1): −0.5 → 0.5.
        let roc = [
            RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 },
            RocPoint { threshold: 0.9, fpr: 0.0, tpr: 0.5 },
            RocPoint { threshold: 0.5, fpr: 0.5, tpr: 1.0 },
            RocPoint { threshold: 0.1, fpr: 1.0, tpr: 1.0 },
        ];
        assert!((eer(&roc) - 0.25).abs() < 1e-15);
    }
}
