//! Fold-level train / score / evaluate on in-memory feature blocks.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{assemble_tensor, DatasetManifest, FeatureBlock, Label, PairEntry, PairList, Relation};
use crate::error::{Error, Result};
use crate::fusion::{fit_logistic, fuse, LrModel, LrOptions};
use crate::scoring::{accuracy_at, cosine_similarity, evaluate, select_threshold, Metrics, PairScoreSet, ScoredPair};
use crate::subspace::{project, train_txqda, ProjectionModel, TxqdaParams};

pub type FeatureMap = BTreeMap<String, FeatureBlock>;

/// Indexes blocks by sample id, rejecting duplicates.
pub fn feature_map(blocks: Vec<FeatureBlock>) -> Result<FeatureMap> {
    let mut map = FeatureMap::new();
    for b in blocks {
        let id = b.sample_id.clone();
        if map.insert(id.clone(), b).is_some() {
            return Err(Error::FeatureFile(format!("duplicate sample id {id:?}")));
        }
    }
    Ok(map)
}

/// Checks that every id is present and all blocks share one layout.
pub fn feature_layout<'a>(features: &FeatureMap, ids: impl IntoIterator<Item = &'a str>) -> Result<(usize, usize)> {
    let mut layout = None;
    for id in ids {
        let b = features
            .get(id)
            .ok_or_else(|| Error::FeatureFile(format!("no features for sample {id:?}")))?;
        let l = (b.mode1(), b.mode2());
        match layout {
            None => layout = Some(l),
            Some(prev) if prev != l => {
                return Err(Error::DimensionMismatch(format!(
                    "sample {id:?} has layout {}x{}, expected {}x{}",
                    l.0, l.1, prev.0, prev.1
                )))
            }
            _ => {}
        }
    }
    layout.ok_or_else(|| Error::Protocol("no samples".into()))
}

fn family_index(manifest: &DatasetManifest) -> BTreeMap<String, usize> {
    manifest.families().into_iter().enumerate().map(|(i, f)| (f, i)).collect()
}

/// Trains the projection for held-out fold `fold` on the parents and
/// children of the kin pairs in every other fold.
pub fn train_fold(
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
    fold: usize,
    params: &TxqdaParams,
) -> Result<ProjectionModel> {
    train_excluding(features, manifest, pairs, &[fold], params)
}

/// Trains on the kin pairs whose fold is not in `exclude`.
pub fn train_excluding(
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
    exclude: &[usize],
    params: &TxqdaParams,
) -> Result<ProjectionModel> {
    let mut parents = BTreeSet::new();
    let mut children = BTreeSet::new();
    for p in pairs.entries.iter().filter(|p| !exclude.contains(&p.fold) && p.label == Label::Kin) {
        parents.insert(p.parent_id.as_str());
        children.insert(p.child_id.as_str());
    }
    if parents.is_empty() {
        return Err(Error::Protocol(format!("no training pairs outside folds {exclude:?}")));
    }
    let layout = feature_layout(features, parents.iter().chain(&children).copied())?;
    let index = family_index(manifest);
    let fam = |id: &str| {
        manifest
            .family_of(id)
            .map(|f| index[f])
            .ok_or_else(|| Error::Manifest(format!("unknown image id {id:?}")))
    };
    let view = |ids: &BTreeSet<&str>| -> Result<_> {
        let blocks: Vec<&FeatureBlock> = ids.iter().map(|id| &features[*id]).collect();
        let labels = ids.iter().map(|id| fam(id)).collect::<Result<Vec<_>>>()?;
        Ok((assemble_tensor(&blocks, layout)?, labels))
    };
    let (x, fx) = view(&parents)?;
    let (z, fz) = view(&children)?;
    log::info!(
        "excluding folds {exclude:?}: training on {} parent and {} child samples ({}x{})",
        fx.len(),
        fz.len(),
        layout.0,
        layout.1
    );
    train_txqda(&x, &z, &fx, &fz, params)
}

/// Scores every pair in the list with one model; zero-norm projections
/// score 0.
pub fn score_pairs(
    model: &ProjectionModel,
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
) -> Result<PairScoreSet> {
    score_selected(model, features, manifest, pairs, |_| true)
}

/// [`score_pairs`] restricted to the pairs whose fold satisfies `keep`.
pub fn score_selected(
    model: &ProjectionModel,
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
    keep: impl Fn(usize) -> bool,
) -> Result<PairScoreSet> {
    let selected: Vec<&PairEntry> = pairs.entries.iter().filter(|p| keep(p.fold)).collect();
    let ids: BTreeSet<&str> = selected
        .iter()
        .flat_map(|p| [p.parent_id.as_str(), p.child_id.as_str()])
        .collect();
    let ids: Vec<&str> = ids.into_iter().collect();
    let projected: Vec<DVector<f64>> = ids
        .par_iter()
        .map(|id| {
            let block = features
                .get(*id)
                .ok_or_else(|| Error::FeatureFile(format!("no features for sample {id:?}")))?;
            project(&block.to_matrix(), model)
        })
        .collect::<Result<_>>()?;
    let lookup: BTreeMap<&str, &DVector<f64>> = ids.iter().copied().zip(&projected).collect();
    let subset_of = |id: &str| manifest.image(id).and_then(|m| m.subset.clone());
    let entries = selected
        .iter()
        .map(|p| {
            let (u, v) = (lookup[p.parent_id.as_str()], lookup[p.child_id.as_str()]);
            let score = match cosine_similarity(u.as_slice(), v.as_slice()) {
                Ok(s) => s,
                Err(Error::UndefinedSimilarity) => {
                    log::warn!("zero-norm projection for pair ({}, {}); scoring 0", p.parent_id, p.child_id);
                    0.0
                }
                Err(e) => return Err(e),
            };
            Ok(ScoredPair {
                parent_id: p.parent_id.clone(),
                child_id: p.child_id.clone(),
                score,
                label: p.label,
                relation: p.relation,
                fold: p.fold,
                subset: subset_of(&p.parent_id).or_else(|| subset_of(&p.child_id)),
            })
        })
        .collect::<Result<_>>()?;
    Ok(PairScoreSet::new(entries))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub accuracy: f64,
    pub threshold: f64,
    pub auc: f64,
    pub eer: f64,
    pub n_train: usize,
    pub n_test: usize,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub relations: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub subsets: BTreeMap<String, f64>,
}

/// Threshold from the pairs outside `fold`, metrics on the pairs inside it.
pub fn evaluate_fold(scores: &PairScoreSet, fold: usize) -> Result<(FoldReport, Metrics)> {
    let train = scores.filter(|p| p.fold != fold);
    let test = scores.filter(|p| p.fold == fold);
    if test.is_empty() {
        return Err(Error::Protocol(format!("fold {fold} has no test pairs")));
    }
    let threshold = select_threshold(&train)?;
    let metrics = evaluate(&test, threshold)?;
    let mut relations = BTreeMap::new();
    let rels: BTreeSet<Relation> = test.entries.iter().map(|p| p.relation).filter(|r| *r != Relation::PC).collect();
    for r in rels {
        relations.insert(r.as_str().to_owned(), accuracy_at(&test.filter(|p| p.relation == r), threshold));
    }
    let mut subsets = BTreeMap::new();
    let names: BTreeSet<&str> = test.entries.iter().filter_map(|p| p.subset.as_deref()).collect();
    for s in names {
        subsets.insert(s.to_owned(), accuracy_at(&test.filter(|p| p.subset.as_deref() == Some(s)), threshold));
    }
    let report = FoldReport {
        fold,
        accuracy: metrics.accuracy,
        threshold,
        auc: metrics.auc,
        eer: metrics.eer,
        n_train: train.len(),
        n_test: test.len(),
        relations,
        subsets,
    };
    Ok((report, metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityReport {
    pub name: String,
    pub folds: Vec<FoldReport>,
    pub mean_accuracy: f64,
    pub mean_auc: f64,
    pub mean_eer: f64,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub relations: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub subsets: BTreeMap<String, f64>,
}

fn group_means(maps: impl Iterator<Item = BTreeMap<String, f64>>) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for m in maps {
        for (k, v) in m {
            let e = acc.entry(k).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

impl ModalityReport {
    pub fn from_folds(name: impl Into<String>, folds: Vec<FoldReport>) -> Self {
        let n = folds.len().max(1) as f64;
        let mean = |f: fn(&FoldReport) -> f64| folds.iter().map(f).sum::<f64>() / n;
        Self {
            name: name.into(),
            mean_accuracy: mean(|f| f.accuracy),
            mean_auc: mean(|f| f.auc),
            mean_eer: mean(|f| f.eer),
            relations: group_means(folds.iter().map(|f| f.relations.clone())),
            subsets: group_means(folds.iter().map(|f| f.subsets.clone())),
            folds,
        }
    }
}

/// Where the scores used to pick a fold's threshold (and fit fusion) come
/// from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainScores {
    /// Each training fold `j` is scored by a model trained without both the
    /// held-out fold and `j`.
    #[default]
    CrossFit,
    /// Training pairs are scored by the held-out fold's own model.
    InSample,
}

/// Per-fold outputs of a cross-validation run. `scores` holds the train-side
/// pairs (fold ≠ held-out) and the test pairs.
#[derive(Debug, Clone)]
pub struct FoldRun {
    pub model: ProjectionModel,
    pub scores: PairScoreSet,
    pub metrics: Metrics,
}

/// Score set for held-out `fold` under the given train-side policy.
pub fn fold_scores(
    model: &ProjectionModel,
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
    fold: usize,
    k: usize,
    policy: TrainScores,
    params: &TxqdaParams,
) -> Result<PairScoreSet> {
    if policy == TrainScores::InSample || k < 3 {
        return score_pairs(model, features, manifest, pairs);
    }
    let mut entries = Vec::with_capacity(pairs.entries.len());
    for inner in (0..k).filter(|&j| j != fold) {
        if !pairs.entries.iter().any(|p| p.fold == inner) {
            continue;
        }
        let m = train_excluding(features, manifest, pairs, &[fold, inner], params)?;
        entries.extend(score_selected(&m, features, manifest, pairs, |f| f == inner)?.entries);
    }
    entries.extend(score_selected(model, features, manifest, pairs, |f| f == fold)?.entries);
    Ok(PairScoreSet::new(entries))
}

/// Runs every fold in `0..k` with freshly trained models.
pub fn cross_validate(
    name: &str,
    features: &FeatureMap,
    manifest: &DatasetManifest,
    pairs: &PairList,
    k: usize,
    params: &TxqdaParams,
    policy: TrainScores,
) -> Result<(ModalityReport, Vec<FoldRun>)> {
    let mut reports = Vec::with_capacity(k);
    let mut runs = Vec::with_capacity(k);
    for fold in 0..k {
        let model = train_fold(features, manifest, pairs, fold, params)?;
        let scores = fold_scores(&model, features, manifest, pairs, fold, k, policy, params)?;
        let (report, metrics) = evaluate_fold(&scores, fold)?;
        reports.push(report);
        runs.push(FoldRun { model, scores, metrics });
    }
    Ok((ModalityReport::from_folds(name, reports), runs))
}

/// Fits the fusion model on the pairs outside `fold` and returns it with the
/// fused scores of all pairs. The score sets must list the same pairs in the
/// same order.
pub fn fuse_fold(modalities: &[&PairScoreSet], fold: usize, opts: LrOptions) -> Result<(LrModel, PairScoreSet)> {
    let first = modalities
        .first()
        .ok_or_else(|| Error::InvalidArgument("fusion needs at least one modality".into()))?;
    for m in &modalities[1..] {
        let aligned = m.len() == first.len()
            && m.entries
                .iter()
                .zip(&first.entries)
                .all(|(a, b)| a.parent_id == b.parent_id && a.child_id == b.child_id && a.fold == b.fold);
        if !aligned {
            return Err(Error::DimensionMismatch("score sets list different pairs".into()));
        }
    }
    let tuple = |i: usize| modalities.iter().map(|m| m.entries[i].score).collect::<Vec<f64>>();
    let train: Vec<usize> = (0..first.len()).filter(|&i| first.entries[i].fold != fold).collect();
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| tuple(i)).collect();
    let ys: Vec<bool> = train.iter().map(|&i| first.entries[i].label.is_kin()).collect();
    let model = fit_logistic(&xs, &ys, opts)?;
    let entries = (0..first.len())
        .map(|i| {
            Ok(ScoredPair {
                score: fuse(&model, &tuple(i))?,
                ..first.entries[i].clone()
            })
        })
        .collect::<Result<_>>()?;
    Ok((model, PairScoreSet::new(entries)))
}
