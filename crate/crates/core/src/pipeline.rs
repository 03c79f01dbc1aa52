//! End-to-end experiment runner with on-disk caching of every stage.
//!
//! Output layout under `out/`:
//!
//! ```text
//! folds.json, pairs.json
//! enhanced-<hash>/<id>.png         MSR output (8-bit)
//! features/<kind>-<hash>.kfv       feature blocks
//! models/<kind>-<hash>/fold<k>.kfm (and fold<k>-inner<j>.kfm when cross-fitting)
//! scores/<name>-fold<k>.json
//! roc/<name>-fold<k>.csv
//! fusion/fold<k>.json              logistic fusion weights
//! report.json
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    baseline_features, generate_folds, make_pair_list, parse_manifest, read_feature_file, write_feature_file,
    BaselineMode, DatasetManifest, FeatureBlock, PairList,
};
use crate::error::{Error, Result};
use crate::fusion::{LrModel, LrOptions};
use crate::imaging::{load_image, luminance, msr_enhance, resize_bilinear, save_png, Image, MsrParams};
use crate::lpq::{lpq_multiscale, BlockGrid, LpqParams};
use crate::protocol::{
    evaluate_fold, feature_layout, feature_map, fuse_fold, score_selected, train_excluding, FeatureMap,
    ModalityReport, TrainScores,
};
use crate::scoring::{export_roc, PairScoreSet};
use crate::subspace::{load_model, save_model, ProjectionModel, TxqdaParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Dataset,
    Enhance,
    Features,
    Train,
    Score,
    Evaluate,
    Fusion,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::Enhance => "enhance",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Score => "score",
            Stage::Evaluate => "evaluate",
            Stage::Fusion => "fusion",
            Stage::Report => "report",
        }
    }

    /// Process exit code for a failure in this stage.
    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 10,
            Stage::Dataset => 11,
            Stage::Enhance => 12,
            Stage::Features => 13,
            Stage::Train => 14,
            Stage::Score => 15,
            Stage::Evaluate => 16,
            Stage::Fusion => 17,
            Stage::Report => 18,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Raw,
    Histogram,
    Lpq,
    Deep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpqSettings {
    pub scales: Vec<usize>,
    pub grid: BlockGrid,
    pub size: usize,
    pub decorrelate: bool,
    pub rho: f64,
    /// Frequency `a`; `1/R` per window when absent.
    pub freq: Option<f64>,
}

impl Default for LpqSettings {
    fn default() -> Self {
        Self {
            scales: vec![3],
            grid: BlockGrid::default(),
            size: 128,
            decorrelate: true,
            rho: 0.9,
            freq: None,
        }
    }
}

impl LpqSettings {
    pub fn params(&self, window: usize) -> Result<LpqParams> {
        let mut p = LpqParams::new(window)?.with_decorrelation(self.decorrelate).with_rho(self.rho)?;
        if let Some(a) = self.freq {
            p = p.with_freq(a)?;
        }
        Ok(p)
    }
}

/// Overrides for [`TxqdaParams::for_dims`]; unset fields keep the defaults.
/// `out1`/`out2` act as upper bounds, clipped to each modality's layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceSettings {
    pub out1: Option<usize>,
    pub out2: Option<usize>,
    pub iters: Option<usize>,
    pub reg_eps: Option<f64>,
    pub wccn_eps: Option<f64>,
    pub extra_ratio: Option<usize>,
    pub tol: Option<f64>,
}

impl SubspaceSettings {
    pub fn resolve(&self, i1: usize, i2: usize, seed: u64) -> TxqdaParams {
        let mut p = TxqdaParams::for_dims(i1, i2);
        p.out1 = self.out1.map_or(p.out1, |o| o.min(i1));
        p.out2 = self.out2.map_or(p.out2, |o| o.min(i2));
        p.iters = self.iters.unwrap_or(p.iters);
        p.reg_eps = self.reg_eps.unwrap_or(p.reg_eps);
        p.wccn_eps = self.wccn_eps.unwrap_or(p.wccn_eps);
        p.extra_ratio = self.extra_ratio.unwrap_or(p.extra_ratio);
        p.tol = self.tol.or(p.tol);
        p.seed = seed;
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub folds: usize,
    pub msr: bool,
    pub msr_params: MsrParams,
    pub features: Vec<FeatureKind>,
    pub lpq: LpqSettings,
    /// KFV1 file with externally extracted features for the `deep` kind.
    pub deep_features: Option<PathBuf>,
    pub txqda: SubspaceSettings,
    pub train_scores: TrainScores,
    pub fusion: bool,
    pub lr_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            out: PathBuf::from("out"),
            seed: 0,
            folds: 5,
            msr: false,
            msr_params: MsrParams::default(),
            features: vec![FeatureKind::Lpq],
            lpq: LpqSettings::default(),
            deep_features: None,
            txqda: SubspaceSettings::default(),
            train_scores: TrainScores::default(),
            fusion: false,
            lr_lambda: LrOptions::default().l2_lambda,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        crate::dataset::read_json(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.manifest.as_os_str().is_empty() {
            return Err(Error::InvalidArgument("config has no manifest path".into()));
        }
        if self.features.is_empty() {
            return Err(Error::InvalidArgument("at least one feature kind is required".into()));
        }
        let distinct: BTreeSet<_> = self.features.iter().collect();
        if distinct.len() != self.features.len() {
            return Err(Error::InvalidArgument("feature kinds must be distinct".into()));
        }
        if self.fusion && self.features.len() < 2 {
            return Err(Error::InvalidArgument("fusion needs at least two feature kinds".into()));
        }
        if self.features.contains(&FeatureKind::Deep) && self.deep_features.is_none() {
            return Err(Error::InvalidArgument("deep kind requires deep_features".into()));
        }
        if self.lpq.scales.is_empty() || self.lpq.size < 16 {
            return Err(Error::InvalidArgument("lpq needs >= 1 scale and size >= 16".into()));
        }
        for &r in &self.lpq.scales {
            self.lpq.params(r)?;
        }
        let m = &self.msr_params;
        MsrParams::new(m.scales().to_vec(), m.weights().to_vec(), m.epsilon_log(), m.clip())?;
        if !(self.lr_lambda >= 0.0) {
            return Err(Error::InvalidArgument("lr_lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub seed: u64,
    pub folds: usize,
    pub msr: bool,
    pub train_scores: TrainScores,
    pub modalities: Vec<ModalityReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fusion: Option<ModalityReport>,
}

/// 64-bit FNV-1a, used to give cached artifacts content-describing names.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

fn tag_of(value: &impl Serialize) -> Result<String> {
    Ok(format!("{:016x}", fnv1a(serde_json::to_string(value)?.as_bytes())))
}

fn safe_name(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Loads the images listed in `ids`, optionally MSR-enhanced and quantized to
/// 8 bits. With `cache`, enhanced images are read from / written to it.
pub fn prepare_images(
    manifest: &DatasetManifest,
    ids: &[&str],
    msr: Option<&MsrParams>,
    cache: Option<&Path>,
) -> Result<Vec<Image>> {
    if let Some(dir) = cache {
        create_dir(dir)?;
    }
    ids.par_iter()
        .map(|id| {
            let entry = manifest
                .image(id)
                .ok_or_else(|| Error::Manifest(format!("unknown image id {id:?}")))?;
            let Some(params) = msr else {
                return load_image(&manifest.image_path(entry));
            };
            let cached = cache.map(|d| d.join(format!("{}.png", safe_name(id))));
            if let Some(path) = cached.as_deref().filter(|p| p.is_file()) {
                return load_image(path);
            }
            let enhanced = msr_enhance(&load_image(&manifest.image_path(entry))?, params)?.quantized();
            if let Some(path) = &cached {
                save_png(&enhanced, path)?;
            }
            Ok(enhanced)
        })
        .collect()
}

/// Multi-scale LPQ of one image after resizing to `size×size` grayscale.
pub fn lpq_features(img: &Image, id: &str, settings: &LpqSettings) -> Result<FeatureBlock> {
    let gray = luminance(&resize_bilinear(img, settings.size, settings.size)?);
    lpq_multiscale(&gray, &settings.scales, settings.grid, id, |r| settings.params(r))
}

fn extract(kind: FeatureKind, images: &[Image], ids: &[&str], lpq: &LpqSettings) -> Result<Vec<FeatureBlock>> {
    images
        .par_iter()
        .zip(ids.par_iter())
        .map(|(img, id)| match kind {
            FeatureKind::Lpq => lpq_features(img, id, lpq),
            FeatureKind::Raw => baseline_features(img, BaselineMode::Raw, id),
            FeatureKind::Histogram => baseline_features(img, BaselineMode::Histogram, id),
            FeatureKind::Deep => unreachable!("deep features are read from file"),
        })
        .collect()
}

/// Tensor layout a feature kind is arranged in for the projection.
pub fn layout_for(kind: FeatureKind, block: (usize, usize), lpq: &LpqSettings) -> (usize, usize) {
    match kind {
        FeatureKind::Raw => (crate::dataset::BASELINE_SIZE, crate::dataset::BASELINE_SIZE),
        FeatureKind::Lpq if lpq.scales.len() == 1 => (crate::lpq::BINS, lpq.grid.blocks()),
        _ => block,
    }
}

fn modality_name(kind: FeatureKind, lpq: &LpqSettings) -> String {
    match kind {
        FeatureKind::Lpq => {
            let scales: Vec<String> = lpq.scales.iter().map(ToString::to_string).collect();
            format!("lpq-r{}", scales.join("_"))
        }
        FeatureKind::Raw => "raw".into(),
        FeatureKind::Histogram => "histogram".into(),
        FeatureKind::Deep => "deep".into(),
    }
}

fn cached_blocks(path: &Path, ids: &[&str]) -> Option<FeatureMap> {
    let map = feature_map(read_feature_file(path).ok()?).ok()?;
    ids.iter().all(|id| map.contains_key(*id)).then_some(map)
}

/// Cache-aware model training excluding the given folds.
struct Trainer<'a> {
    features: &'a FeatureMap,
    manifest: &'a DatasetManifest,
    pairs: &'a PairList,
    params: &'a TxqdaParams,
    dir: PathBuf,
}

impl Trainer<'_> {
    fn model(&self, fold: usize, inner: Option<usize>) -> Result<ProjectionModel> {
        let file = match inner {
            None => format!("fold{fold}.kfm"),
            Some(j) => format!("fold{fold}-inner{j}.kfm"),
        };
        let path = self.dir.join(file);
        if path.is_file() {
            if let Ok(m) = load_model(&path) {
                if &m.params == self.params {
                    return Ok(m);
                }
            }
        }
        let exclude: Vec<usize> = std::iter::once(fold).chain(inner).collect();
        let model = train_excluding(self.features, self.manifest, self.pairs, &exclude, self.params)?;
        save_model(&model, &path)?;
        Ok(model)
    }
}

/// Runs the configured experiment and writes `report.json` under
/// `config.out`.
pub fn run_pipeline(config: &RunConfig) -> std::result::Result<RunReport, StageError> {
    config.validate().at(Stage::Config)?;
    let out = &config.out;
    create_dir(out).at(Stage::Config)?;

    let manifest = parse_manifest(&config.manifest).at(Stage::Dataset)?;
    let folds = generate_folds(&manifest, config.folds, config.seed).at(Stage::Dataset)?;
    let pairs = make_pair_list(&manifest, &folds, config.seed).at(Stage::Dataset)?;
    folds.save(&out.join("folds.json")).at(Stage::Dataset)?;
    pairs.save(&out.join("pairs.json")).at(Stage::Dataset)?;
    let pair_tag = tag_of(&pairs).at(Stage::Dataset)?;
    let ids: Vec<&str> = {
        let set: BTreeSet<&str> = pairs
            .entries
            .iter()
            .flat_map(|p| [p.parent_id.as_str(), p.child_id.as_str()])
            .collect();
        set.into_iter().collect()
    };
    log::info!(
        "{}: {} images, {} pairs, {} folds",
        manifest.name,
        ids.len(),
        pairs.entries.len(),
        folds.k
    );

    let msr = config.msr.then_some(&config.msr_params);
    let needs_images = config.features.iter().any(|k| *k != FeatureKind::Deep);
    let mut images = None;
    let image_tag = tag_of(&(msr, &pair_tag)).at(Stage::Enhance)?;

    let feature_dir = out.join("features");
    create_dir(&feature_dir).at(Stage::Features)?;
    let mut modalities = Vec::new();
    let mut score_sets: Vec<Vec<PairScoreSet>> = Vec::new();
    for &kind in &config.features {
        let name = modality_name(kind, &config.lpq);
        let features = if kind == FeatureKind::Deep {
            let path = config.deep_features.as_ref().expect("validated");
            let map = feature_map(read_feature_file(path).at(Stage::Features)?).at(Stage::Features)?;
            feature_layout(&map, ids.iter().copied()).at(Stage::Features)?;
            map
        } else {
            let kind_settings = match kind {
                FeatureKind::Lpq => Some(&config.lpq),
                _ => None,
            };
            let tag = tag_of(&(kind, kind_settings, msr)).at(Stage::Features)?;
            let path = feature_dir.join(format!("{name}-{tag}.kfv"));
            match cached_blocks(&path, &ids) {
                Some(map) => map,
                None => {
                    if images.is_none() && needs_images {
                        let cache = msr.map(|_| out.join(format!("enhanced-{image_tag}")));
                        images = Some(prepare_images(&manifest, &ids, msr, cache.as_deref()).at(Stage::Enhance)?);
                    }
                    let blocks = extract(kind, images.as_deref().unwrap(), &ids, &config.lpq).at(Stage::Features)?;
                    write_feature_file(&blocks, &path).at(Stage::Features)?;
                    feature_map(blocks).at(Stage::Features)?
                }
            }
        };
        let block = feature_layout(&features, ids.iter().copied()).at(Stage::Features)?;
        let layout = layout_for(kind, block, &config.lpq);
        let features: FeatureMap = features
            .into_iter()
            .map(|(id, b)| Ok((id, if (b.mode1(), b.mode2()) == layout { b } else { b.reshaped(layout.0, layout.1)? })))
            .collect::<Result<_>>()
            .at(Stage::Features)?;

        let params = config.txqda.resolve(layout.0, layout.1, config.seed);
        let feature_tag = tag_of(&(&name, kind, &config.lpq, msr, &config.deep_features)).at(Stage::Train)?;
        let model_tag = tag_of(&(&feature_tag, &params, &pair_tag)).at(Stage::Train)?;
        let trainer = Trainer {
            features: &features,
            manifest: &manifest,
            pairs: &pairs,
            params: &params,
            dir: out.join("models").join(format!("{name}-{model_tag}")),
        };
        create_dir(&trainer.dir).at(Stage::Train)?;

        let mut fold_reports = Vec::new();
        let mut sets = Vec::new();
        for fold in 0..folds.k {
            let model = trainer.model(fold, None).at(Stage::Train)?;
            let scores = if config.train_scores == TrainScores::InSample || folds.k < 3 {
                score_selected(&model, &features, &manifest, &pairs, |_| true).at(Stage::Score)?
            } else {
                let mut entries = Vec::new();
                for inner in (0..folds.k).filter(|&j| j != fold) {
                    let m = trainer.model(fold, Some(inner)).at(Stage::Train)?;
                    entries.extend(
                        score_selected(&m, &features, &manifest, &pairs, |f| f == inner)
                            .at(Stage::Score)?
                            .entries,
                    );
                }
                entries.extend(
                    score_selected(&model, &features, &manifest, &pairs, |f| f == fold)
                        .at(Stage::Score)?
                        .entries,
                );
                PairScoreSet::new(entries)
            };
            fold_reports.push(record_fold(out, &name, fold, &scores)?);
            sets.push(scores);
        }
        let report = ModalityReport::from_folds(name.clone(), fold_reports);
        log::info!("{name}: mean accuracy {:.4}", report.mean_accuracy);
        modalities.push(report);
        score_sets.push(sets);
    }

    let fusion = if config.fusion {
        let name = format!("fusion({})", modalities.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join("+"));
        let dir = out.join("fusion");
        create_dir(&dir).at(Stage::Fusion)?;
        let opts = LrOptions {
            l2_lambda: config.lr_lambda,
            ..Default::default()
        };
        let mut fold_reports = Vec::new();
        for fold in 0..folds.k {
            let per_modality: Vec<&PairScoreSet> = score_sets.iter().map(|s| &s[fold]).collect();
            let (model, fused): (LrModel, PairScoreSet) = fuse_fold(&per_modality, fold, opts).at(Stage::Fusion)?;
            model.save(&dir.join(format!("fold{fold}.json"))).at(Stage::Fusion)?;
            fold_reports.push(record_fold(out, "fusion", fold, &fused)?);
        }
        let report = ModalityReport::from_folds(name, fold_reports);
        log::info!("{}: mean accuracy {:.4}", report.name, report.mean_accuracy);
        Some(report)
    } else {
        None
    };

    let report = RunReport {
        dataset: manifest.name.clone(),
        seed: config.seed,
        folds: folds.k,
        msr: config.msr,
        train_scores: config.train_scores,
        modalities,
        fusion,
    };
    crate::dataset::write_json(&report, &out.join("report.json")).at(Stage::Report)?;
    Ok(report)
}

fn record_fold(
    out: &Path,
    name: &str,
    fold: usize,
    scores: &PairScoreSet,
) -> std::result::Result<crate::protocol::FoldReport, StageError> {
    let score_dir = out.join("scores");
    let roc_dir = out.join("roc");
    create_dir(&score_dir).at(Stage::Score)?;
    create_dir(&roc_dir).at(Stage::Evaluate)?;
    scores
        .save(&score_dir.join(format!("{name}-fold{fold}.json")))
        .at(Stage::Score)?;
    let (report, metrics) = evaluate_fold(scores, fold).at(Stage::Evaluate)?;
    export_roc(&metrics, &roc_dir.join(format!("{name}-fold{fold}.csv"))).at(Stage::Evaluate)?;
    Ok(report)
}
