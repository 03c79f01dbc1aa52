use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kinship_core::dataset::{
    generate_folds, make_pair_list, parse_manifest, read_feature_file, write_feature_file, write_manifest,
    BaselineMode, DatasetManifest, FoldAssignment, PairList,
};
use kinship_core::fusion::LrOptions;
use kinship_core::imaging::save_png;
use kinship_core::pipeline::{
    lpq_features, prepare_images, run_pipeline, AtStage, LpqSettings, RunConfig, Stage, StageError,
    SubspaceSettings,
};
use kinship_core::protocol::{evaluate_fold, feature_map, fuse_fold, score_selected, train_excluding, FeatureMap};
use kinship_core::scoring::{export_roc, PairScoreSet};
use kinship_core::subspace::{load_model, save_model};
use kinship_core::{BlockGrid, Error, MsrParams};

#[derive(Parser, Debug)]
#[command(name = "kinship", version, about = "Kinship verification from face images")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Multiscale retinex enhancement of every manifest image
    Enhance(EnhanceArgs),
    /// Multi-scale LPQ histograms into a KFV1 feature file
    ExtractLpq(ExtractLpqArgs),
    /// Raw-pixel or intensity-histogram baseline features
    Baseline(BaselineArgs),
    /// Assign families to folds
    MakeFolds(MakeFoldsArgs),
    /// Kin pairs plus balanced non-kin pairs per fold
    MakePairs(MakePairsArgs),
    /// Train a projection model with some folds held out
    Train(TrainArgs),
    /// Cosine scores for the pair list
    Score(ScoreArgs),
    /// Threshold on the training folds, metrics on the held-out fold
    Evaluate(EvaluateArgs),
    /// Logistic-regression fusion of several score files
    Fuse(FuseArgs),
    /// Whole experiment from a JSON config
    Run(RunArgs),
    /// Write a small synthetic face dataset
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct ManifestArg {
    #[arg(long)]
    manifest: PathBuf,
    /// Resolve image paths against this directory instead of the manifest's
    #[arg(long)]
    images: Option<PathBuf>,
}

impl ManifestArg {
    fn load(&self) -> Result<DatasetManifest, StageError> {
        let mut m = parse_manifest(&self.manifest).at(Stage::Dataset)?;
        if let Some(dir) = &self.images {
            m.base_dir = dir.clone();
        }
        Ok(m)
    }
}

#[derive(Args, Debug)]
struct MsrArgs {
    #[arg(long, value_delimiter = ',', default_value = "15,80,250")]
    msr_scales: Vec<f64>,
    /// Defaults to equal weights
    #[arg(long, value_delimiter = ',')]
    msr_weights: Option<Vec<f64>>,
    /// Percentile clip `low,high`
    #[arg(long, value_delimiter = ',', default_value = "1,99", num_args = 2)]
    msr_clip: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    msr_eps: f64,
}

impl MsrArgs {
    fn params(&self) -> Result<MsrParams, StageError> {
        let weights = self
            .msr_weights
            .clone()
            .unwrap_or_else(|| vec![1.0; self.msr_scales.len()]);
        MsrParams::new(
            self.msr_scales.clone(),
            weights,
            self.msr_eps,
            (self.msr_clip[0], self.msr_clip[1]),
        )
        .at(Stage::Config)
    }
}

#[derive(Args, Debug)]
struct EnhanceArgs {
    #[command(flatten)]
    manifest: ManifestArg,
    #[command(flatten)]
    msr: MsrArgs,
    /// Output directory; receives `<id>.png` and a rewritten manifest
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractLpqArgs {
    #[command(flatten)]
    manifest: ManifestArg,
    #[arg(long, value_delimiter = ',', default_value = "3,4,5,6,7,8,9")]
    scales: Vec<usize>,
    #[arg(long, default_value = "4x3")]
    grid: BlockGrid,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long)]
    no_decorrelate: bool,
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    #[arg(long)]
    freq: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineKind {
    Raw,
    Histogram,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[command(flatten)]
    manifest: ManifestArg,
    #[arg(long, value_enum)]
    mode: BaselineKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakeFoldsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MakePairsArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    folds: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    /// Rearrange each feature block to `ROWSxCOLS` before use
    #[arg(long)]
    layout: Option<String>,
}

impl FeatureArgs {
    fn load(&self) -> Result<(DatasetManifest, FeatureMap, PairList), StageError> {
        let manifest = parse_manifest(&self.manifest).at(Stage::Dataset)?;
        let pairs = PairList::load(&self.pairs).at(Stage::Dataset)?;
        let mut blocks = read_feature_file(&self.features).at(Stage::Features)?;
        if let Some(layout) = &self.layout {
            let grid: BlockGrid = layout.parse().at(Stage::Config)?;
            blocks = blocks
                .iter()
                .map(|b| b.reshaped(grid.rows, grid.cols))
                .collect::<Result<_, _>>()
                .at(Stage::Features)?;
        }
        let features = feature_map(blocks).at(Stage::Features)?;
        Ok((manifest, features, pairs))
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: FeatureArgs,
    /// Held-out fold
    #[arg(long)]
    fold: usize,
    /// Additional folds to leave out (for cross-fitted training scores)
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<usize>,
    #[arg(long)]
    out1: Option<usize>,
    #[arg(long)]
    out2: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    reg_eps: Option<f64>,
    #[arg(long)]
    wccn_eps: Option<f64>,
    #[arg(long)]
    extra_ratio: Option<usize>,
    /// Stop early once successive factor matrices are this close
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    #[command(flatten)]
    data: FeatureArgs,
    #[arg(long)]
    model: PathBuf,
    /// Only score pairs from these folds
    #[arg(long, value_delimiter = ',')]
    only_folds: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Score files; entries are concatenated
    #[arg(long, required = true)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    fold: usize,
    #[arg(long)]
    roc: Option<PathBuf>,
    /// Write the metrics JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FuseArgs {
    /// One score file per modality, listing the same pairs
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    #[arg(long)]
    fold: usize,
    #[arg(long, default_value_t = LrOptions::default().l2_lambda)]
    lambda: f64,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 12)]
    families: usize,
    #[arg(long, default_value_t = 96)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn write_pretty(value: &kinship_core::protocol::FoldReport, path: Option<&Path>) -> Result<(), StageError> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from).at(Stage::Report)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")
            .map_err(|e| Error::Io {
                path: p.to_owned(),
                source: e,
            })
            .at(Stage::Report),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn load_scores(paths: &[PathBuf]) -> Result<Vec<PairScoreSet>, StageError> {
    paths.iter().map(|p| PairScoreSet::load(p).at(Stage::Score)).collect()
}

fn execute(command: Command) -> Result<(), StageError> {
    match command {
        Command::Enhance(a) => {
            let mut manifest = a.manifest.load()?;
            let params = a.msr.params()?;
            let ids: Vec<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
            let images = prepare_images(&manifest, &ids, Some(&params), None).at(Stage::Enhance)?;
            std::fs::create_dir_all(&a.out)
                .map_err(|e| Error::Io {
                    path: a.out.clone(),
                    source: e,
                })
                .at(Stage::Enhance)?;
            let names: Vec<String> = ids.iter().map(|id| format!("{}.png", id.replace(['/', '\\'], "_"))).collect();
            for (img, name) in images.iter().zip(&names) {
                save_png(img, &a.out.join(name)).at(Stage::Enhance)?;
            }
            for (entry, name) in manifest.images.iter_mut().zip(names) {
                entry.path = name;
            }
            write_manifest(&manifest, &a.out.join("manifest.json")).at(Stage::Enhance)
        }
        Command::ExtractLpq(a) => {
            let manifest = a.manifest.load()?;
            let settings = LpqSettings {
                scales: a.scales,
                grid: a.grid,
                size: a.size,
                decorrelate: !a.no_decorrelate,
                rho: a.rho,
                freq: a.freq,
            };
            let ids: Vec<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
            let images = prepare_images(&manifest, &ids, None, None).at(Stage::Enhance)?;
            let blocks = images
                .iter()
                .zip(&ids)
                .map(|(img, id)| lpq_features(img, id, &settings))
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Features)?;
            write_feature_file(&blocks, &a.out).at(Stage::Features)
        }
        Command::Baseline(a) => {
            let manifest = a.manifest.load()?;
            let mode = match a.mode {
                BaselineKind::Raw => BaselineMode::Raw,
                BaselineKind::Histogram => BaselineMode::Histogram,
            };
            let ids: Vec<&str> = manifest.images.iter().map(|i| i.id.as_str()).collect();
            let images = prepare_images(&manifest, &ids, None, None).at(Stage::Enhance)?;
            let blocks = images
                .iter()
                .zip(&ids)
                .map(|(img, id)| kinship_core::dataset::baseline_features(img, mode, id))
                .collect::<Result<Vec<_>, _>>()
                .at(Stage::Features)?;
            write_feature_file(&blocks, &a.out).at(Stage::Features)
        }
        Command::MakeFolds(a) => {
            let manifest = parse_manifest(&a.manifest).at(Stage::Dataset)?;
            generate_folds(&manifest, a.k, a.seed)
                .and_then(|f| f.save(&a.out))
                .at(Stage::Dataset)
        }
        Command::MakePairs(a) => {
            let manifest = parse_manifest(&a.manifest).at(Stage::Dataset)?;
            let folds = FoldAssignment::load(&a.folds).at(Stage::Dataset)?;
            make_pair_list(&manifest, &folds, a.seed)
                .and_then(|p| p.save(&a.out))
                .at(Stage::Dataset)
        }
        Command::Train(a) => {
            let (manifest, features, pairs) = a.data.load()?;
            let layout = kinship_core::protocol::feature_layout(&features, features.keys().map(String::as_str))
                .at(Stage::Features)?;
            let settings = SubspaceSettings {
                out1: a.out1,
                out2: a.out2,
                iters: a.iters,
                reg_eps: a.reg_eps,
                wccn_eps: a.wccn_eps,
                extra_ratio: a.extra_ratio,
                tol: a.tol,
            };
            let params = settings.resolve(layout.0, layout.1, a.seed);
            let exclude: Vec<usize> = std::iter::once(a.fold).chain(a.exclude).collect();
            let model = train_excluding(&features, &manifest, &pairs, &exclude, &params).at(Stage::Train)?;
            save_model(&model, &a.out).at(Stage::Train)
        }
        Command::Score(a) => {
            let (manifest, features, pairs) = a.data.load()?;
            let model = load_model(&a.model).at(Stage::Train)?;
            let only = a.only_folds;
            score_selected(&model, &features, &manifest, &pairs, |f| only.is_empty() || only.contains(&f))
                .and_then(|s| s.save(&a.out))
                .at(Stage::Score)
        }
        Command::Evaluate(a) => {
            let entries = load_scores(&a.scores)?.into_iter().flat_map(|s| s.entries).collect();
            let (report, metrics) = evaluate_fold(&PairScoreSet::new(entries), a.fold).at(Stage::Evaluate)?;
            if let Some(path) = &a.roc {
                export_roc(&metrics, path).at(Stage::Evaluate)?;
            }
            write_pretty(&report, a.out.as_deref())
        }
        Command::Fuse(a) => {
            let sets = load_scores(&a.scores)?;
            let refs: Vec<&PairScoreSet> = sets.iter().collect();
            let opts = LrOptions {
                l2_lambda: a.lambda,
                ..Default::default()
            };
            let (model, fused) = fuse_fold(&refs, a.fold, opts).at(Stage::Fusion)?;
            if let Some(path) = &a.model {
                model.save(path).at(Stage::Fusion)?;
            }
            fused.save(&a.out).at(Stage::Fusion)
        }
        Command::Run(a) => {
            let mut config = RunConfig::load(&a.config).at(Stage::Config)?;
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            if let Some(out) = a.out {
                config.out = out;
            }
            let report = run_pipeline(&config)?;
            for m in report.modalities.iter().chain(&report.fusion) {
                println!("{:<32} mean accuracy {:.4}  auc {:.4}  eer {:.4}", m.name, m.mean_accuracy, m.mean_auc, m.mean_eer);
            }
            Ok(())
        }
        Command::Synth(a) => kinship_core::synth::write_synthetic_faces(&a.out, a.families, a.size, a.seed)
            .map(drop)
            .at(Stage::Dataset),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.stage.exit_code() as u8)
        }
    }
}
