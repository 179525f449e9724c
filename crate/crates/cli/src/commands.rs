use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rumour_stance::corpus::{load_rumoureval_dir, to_canonical_jsonl};
use rumour_stance::encoder::EmbeddingCache;
use rumour_stance::eval::{select_best_seed, SeedRun};
use rumour_stance::feature_model::{train_mlp, vectorize_pairs, TrainTrace};
use rumour_stance::features::{fit_pca_sparse, fit_tfidf, PcaOptions, TfidfModel};
use rumour_stance::fusion::{train_ensemble, FeatureSource, FeatureSourceKind, FusionManifest, SubModels};
use rumour_stance::{EnsembleHyperparams, EvalReport, FusionModel, MlpHyperparams, MlpModel, SequencePair, Split};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{read_json_artifact, read_artifact, StageWriter};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::pipeline::*;

pub fn convert(raw: &Path, out: &Path, split: Split, overwrite: bool) -> Result<(), CliError> {
    if out.exists() && !overwrite {
        return Err(CliError::WouldOverwrite(out.to_path_buf()));
    }
    let corpus = load_rumoureval_dir(raw, split).map_err(CliError::input)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(file);
    to_canonical_jsonl(&corpus, &mut w).map_err(|e| CliError::io(out, e))?;
    w.flush().map_err(|e| CliError::io(out, e))?;
    println!("wrote {} posts in {} threads to {}", corpus.num_posts(), corpus.threads.len(), out.display());
    Ok(())
}

fn fit_features(cfg: &ExperimentConfig, train: &[SequencePair]) -> Result<TfidfModel, CliError> {
    let docs: Vec<String> = train.iter().map(|p| cfg.features.text.text_of(p)).collect();
    fit_tfidf(&docs, &tfidf_config(cfg)).map_err(CliError::input)
}

fn mlp_hp(cfg: &ExperimentConfig, weights: rumour_stance::CostWeights) -> MlpHyperparams {
    MlpHyperparams {
        learning_rate: cfg.mlp.learning_rate,
        epochs: cfg.mlp.epochs,
        hidden_units: cfg.mlp.hidden_units,
        batch_size: cfg.mlp.batch_size,
        seed: cfg.mlp.seed,
        cost_weights: weights,
        ..Default::default()
    }
}

fn write_report(w: &mut StageWriter, stem: &str, report: &EvalReport) -> Result<(), CliError> {
    w.write_json(&format!("{stem}.json"), report)?;
    w.write_bytes(&format!("{stem}.txt"), report.to_table().as_bytes())?;
    Ok(())
}

pub fn train_mlp_cmd(cfg: &ExperimentConfig, overwrite: bool) -> Result<(), CliError> {
    let mut w = StageWriter::begin(&cfg.output_dir, "mlp", overwrite)?;
    let train_corpus = load_split(cfg, Split::Train)?;
    let dev_corpus = match cfg.data.dev {
        Some(_) => Some(load_split(cfg, Split::Dev)?),
        None => None,
    };
    let weights = cost_weights(cfg, &train_corpus)?;
    let train_pairs = pairs_of(&train_corpus);
    let tfidf = fit_features(cfg, &train_pairs)?;
    let text = cfg.features.text;
    let train = vectorize_pairs(&tfidf, text, &train_pairs);
    let dev = dev_corpus.as_ref().map(|c| vectorize_pairs(&tfidf, text, &pairs_of(c))).unwrap_or_default();
    let hp = mlp_hp(cfg, weights);
    let (model, trace) = train_mlp(&train, &dev, tfidf, text, &hp).map_err(CliError::input)?;

    w.write_json("tfidf.json", &model.tfidf)?;
    w.write_json("mlp.json", &model)?;
    w.write_json("trace.json", &trace)?;
    w.write_json("cost_weights.json", &weights)?;
    let mut notes = BTreeMap::new();
    notes.insert("vocabulary".into(), json!(model.tfidf.dim()));
    if let Some(dc) = &dev_corpus {
        let pairs = pairs_of(dc);
        let probs = mlp_probs(&model, &pairs)?;
        let report = report_from(dc, &predictions(&pairs, &probs), cfg.exhibits_per_cell);
        write_report(&mut w, "dev_report", &report)?;
        println!("mlp dev macro-F1 {:.4} accuracy {:.4}", report.macro_f1, report.accuracy);
        notes.insert("dev_macro_f1".into(), json!(report.macro_f1));
    }
    println!("vocabulary {} terms, {} epochs, artifacts in {}", model.tfidf.dim(), trace.len(), w.dir().display());
    w.commit("train-mlp", cfg, notes)
}

fn mlp_probs(model: &MlpModel, pairs: &[SequencePair]) -> Result<Vec<[f64; 4]>, CliError> {
    pairs
        .iter()
        .map(|p| model.forward(&model.vectorize(p)).map(|o| o.probs).map_err(CliError::input))
        .collect()
}

/// Chosen-seed summary written next to the per-seed runs.
#[derive(Debug, Serialize, Deserialize)]
pub struct Selection {
    pub metric: rumour_stance::eval::SelectionMetric,
    pub chosen_seed: u64,
    pub runs: Vec<SeedScore>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub dev_macro_f1: f64,
    pub dev_accuracy: f64,
}

fn mlp_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("mlp").join("mlp.json")
}

/// Sub-models shared by every seed. The joint source gets its MLP per seed.
fn shared_submodels(cfg: &ExperimentConfig, train: &[SequencePair]) -> Result<SubModels, CliError> {
    let kind = cfg.features.source;
    let mut subs = SubModels::default();
    if matches!(kind, FeatureSourceKind::FrozenMlpHidden | FeatureSourceKind::FrozenMlpOutput) {
        let p = mlp_path(cfg);
        if p.is_file() {
            subs.mlp = Some(read_json_artifact(&cfg.output_dir, &p)?);
        }
    }
    if matches!(kind, FeatureSourceKind::RawTfidf | FeatureSourceKind::PcaTfidf | FeatureSourceKind::JointMlpOutput) {
        let tfidf = fit_features(cfg, train)?;
        if kind == FeatureSourceKind::PcaTfidf {
            let rows: Vec<_> = train.iter().map(|p| tfidf.transform(&cfg.features.text.text_of(p))).collect();
            let opts = PcaOptions { seed: cfg.mlp.seed, ..Default::default() };
            let pca = fit_pca_sparse(&rows, tfidf.dim(), cfg.features.pca_components, &opts)
                .map_err(|e| CliError::Config(format!("features.pca_components: {e}")))?;
            subs.pca = Some(pca);
        }
        subs.tfidf = Some((tfidf, cfg.features.text));
    }
    Ok(subs)
}

struct SeedOutput {
    model: FusionModel,
    trace: TrainTrace,
}

#[allow(clippy::too_many_arguments)]
fn run_seed(
    cfg: &ExperimentConfig,
    seed: u64,
    subs: &SubModels,
    weights: rumour_stance::CostWeights,
    train: &[SequencePair],
    dev_corpus: &rumour_stance::Corpus,
    dev: &[SequencePair],
    cache: Option<&Arc<EmbeddingCache>>,
) -> Result<SeedRun<SeedOutput>, CliError> {
    let kind = cfg.features.source;
    let mut subs = subs.clone();
    if kind == FeatureSourceKind::JointMlpOutput {
        let (tfidf, text) = subs.tfidf.clone().expect("fitted above");
        let hp = MlpHyperparams { seed, ..mlp_hp(cfg, weights) };
        subs.mlp = Some(MlpModel::init_seeded(tfidf, text, &hp));
    }
    let source = FeatureSource::build(kind, subs).map_err(fusion_err)?;
    let encoder = build_encoder(cfg, cache)?;
    let hp = EnsembleHyperparams {
        epochs: cfg.ensemble.epochs,
        learning_rate: cfg.ensemble.learning_rate,
        batch_size: cfg.ensemble.batch_size,
        seed,
        cost_weights: weights,
        freeze_mlp: cfg.ensemble.freeze_mlp,
        weight_decay: cfg.ensemble.weight_decay,
    };
    let cache_ref = cache.map(|c| &**c);
    let (model, trace) = train_ensemble(train, dev, encoder, source, &hp, cache_ref).map_err(fusion_err)?;
    let probs = model.forward_all(dev, cache_ref).map_err(fusion_err)?;
    let dev_report = report_from(dev_corpus, &predictions(dev, &probs), cfg.exhibits_per_cell);
    log::info!("seed {seed}: dev macro-F1 {:.4}", dev_report.macro_f1);
    Ok(SeedRun { seed, model: SeedOutput { model, trace }, dev_report })
}

fn write_model(w: &mut StageWriter, dir: &str, model: &FusionModel) -> Result<(), CliError> {
    w.write_bytes(&format!("{dir}/model.json"), format!("{}\n", model.to_json()).as_bytes())?;
    w.write_json(&format!("{dir}/fusion_manifest.json"), &model.manifest())?;
    Ok(())
}

pub fn train_ensemble_cmd(cfg: &ExperimentConfig, overwrite: bool, jobs: usize) -> Result<(), CliError> {
    let mut w = StageWriter::begin(&cfg.output_dir, "ensemble", overwrite)?;
    let train_corpus = load_split(cfg, Split::Train)?;
    let dev_corpus = load_split(cfg, Split::Dev)?;
    let weights = cost_weights(cfg, &train_corpus)?;
    let train = pairs_of(&train_corpus);
    let dev = pairs_of(&dev_corpus);
    let subs = shared_submodels(cfg, &train)?;
    let cache = open_cache(cfg)?;
    ensure_cached(&build_encoder(cfg, cache.as_ref())?, cache.as_ref(), &[&train, &dev])?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    let runs: Vec<SeedRun<SeedOutput>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| run_seed(cfg, seed, &subs, weights, &train, &dev_corpus, &dev, cache.as_ref()))
            .collect::<Result<_, _>>()
    })?;

    let mut scores = Vec::new();
    for run in &runs {
        let dir = format!("seed-{}", run.seed);
        write_model(&mut w, &dir, &run.model.model)?;
        w.write_json(&format!("{dir}/trace.json"), &run.model.trace)?;
        write_report(&mut w, &format!("{dir}/dev_report"), &run.dev_report)?;
        scores.push(SeedScore { seed: run.seed, dev_macro_f1: run.dev_report.macro_f1, dev_accuracy: run.dev_report.accuracy });
        println!("seed {}: dev macro-F1 {:.4} accuracy {:.4}", run.seed, run.dev_report.macro_f1, run.dev_report.accuracy);
    }
    let best = select_best_seed(runs, cfg.selection_metric).map_err(CliError::input)?;
    write_model(&mut w, "chosen", &best.model.model)?;
    write_report(&mut w, "chosen/dev_report", &best.dev_report)?;
    w.write_json("selection.json", &Selection { metric: cfg.selection_metric, chosen_seed: best.seed, runs: scores })?;
    if let Some(c) = &cache {
        c.flush().map_err(|e| CliError::io(c.path().unwrap_or(Path::new("")), e))?;
    }
    println!("chosen seed {} (dev macro-F1 {:.4})", best.seed, best.dev_report.macro_f1);
    let notes = BTreeMap::from([("chosen_seed".to_string(), json!(best.seed))]);
    w.commit("train-ensemble", cfg, notes)
}

pub fn default_fusion_model(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("ensemble").join("chosen").join("model.json")
}

fn load_fusion(cfg: &ExperimentConfig, path: &Path, cache: Option<&Arc<EmbeddingCache>>) -> Result<FusionModel, CliError> {
    let text = read_artifact(&cfg.output_dir, path)?;
    let manifest_path = path.with_file_name("fusion_manifest.json");
    let manifest: FusionManifest = read_json_artifact(&cfg.output_dir, &manifest_path)?;
    let mut model = FusionModel::from_json(&text, &manifest).map_err(fusion_err)?;
    attach_cache(&mut model.encoder, cfg, cache)?;
    Ok(model)
}

fn report_dir(split: Split, mlp: bool) -> String {
    if mlp {
        format!("reports/mlp-{split}")
    } else {
        format!("reports/{split}")
    }
}

pub fn evaluate(cfg: &ExperimentConfig, split: Split, model: Option<&Path>, mlp: bool, overwrite: bool) -> Result<(), CliError> {
    let model_path = match (model, mlp) {
        (Some(p), _) => p.to_path_buf(),
        (None, true) => mlp_path(cfg),
        (None, false) => default_fusion_model(cfg),
    };
    if !model_path.is_file() {
        return Err(CliError::Config(format!("model {} does not exist", model_path.display())));
    }
    let corpus = load_split(cfg, split)?;
    let pairs = pairs_of(&corpus);
    let mut w = StageWriter::begin(&cfg.output_dir, &report_dir(split, mlp), overwrite)?;
    let probs = if mlp {
        let model: MlpModel = read_json_artifact(&cfg.output_dir, &model_path)?;
        mlp_probs(&model, &pairs)?
    } else {
        let cache = open_cache(cfg)?;
        let model = load_fusion(cfg, &model_path, cache.as_ref())?;
        ensure_cached(&model.encoder, cache.as_ref(), &[&pairs])?;
        model.forward_all(&pairs, cache.as_deref()).map_err(fusion_err)?
    };
    let preds = predictions(&pairs, &probs);
    w.write_bytes("predictions.jsonl", predictions_jsonl(&preds).as_bytes())?;
    let mut notes = BTreeMap::from([("model".to_string(), json!(model_path.display().to_string()))]);
    if is_labeled(&corpus) {
        let report = report_from(&corpus, &preds, cfg.exhibits_per_cell);
        write_report(&mut w, "report", &report)?;
        println!("{split}: macro-F1 {:.4} accuracy {:.4}", report.macro_f1, report.accuracy);
        notes.insert("macro_f1".into(), json!(report.macro_f1));
    } else {
        println!("{split}: {} predictions written (split is unlabeled, no metrics)", preds.len());
    }
    w.commit(&format!("evaluate-{}", report_dir(split, mlp).trim_start_matches("reports/")), cfg, notes)
}

pub fn report(cfg: &ExperimentConfig, split: Split, mlp: bool, as_json: bool) -> Result<(), CliError> {
    let path = cfg.output_dir.join(report_dir(split, mlp)).join("report.json");
    if !path.is_file() {
        return Err(CliError::Config(format!("{} does not exist; run `stance evaluate --split {split}` first", path.display())));
    }
    let report: EvalReport = read_json_artifact(&cfg.output_dir, &path)?;
    if as_json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}
