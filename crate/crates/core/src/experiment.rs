//! End-to-end experiment orchestration: multi-seed sweeps over model
//! variants on an ingested dataset, shared persisted evaluation sets,
//! per-iteration AUC curves, metric files and the model comparison table.
//!
//! Reruns with identical inputs produce byte-identical outputs: all maps are
//! ordered, every random draw is seeded, and reports carry content hashes
//! instead of timestamps.

use crate::constraint::InteractionTensor;
use crate::data::{load_dataset, tensor_from_raw, DatasetDir};
use crate::error::{Error, Result};
use crate::eval::{
    eval_items_from_clicks, eval_items_from_targets, make_test_negatives_timebucket,
    read_eval_items, sliced_auc, write_eval_items, AucResult, EvalItem, ScoredPair, SeedSummary,
};
use crate::model::{Model, ModelKind, SideData};
use crate::train::{train, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Foursquare,
    Movielens,
    Synthetic,
}

/// Evaluation slice definitions. Hour slices match pairs whose window center
/// falls in the given hour of day; bit-count slices target the brand regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SliceSpec {
    Global,
    HourWindow {
        name: String,
        hour: usize,
        rare: bool,
    },
    MultiBit {
        name: String,
        min_bits: usize,
    },
    SingleBit {
        name: String,
    },
}

impl SliceSpec {
    pub fn name(&self) -> &str {
        match self {
            SliceSpec::Global => "global",
            SliceSpec::HourWindow { name, .. } => name,
            SliceSpec::MultiBit { name, .. } => name,
            SliceSpec::SingleBit { name } => name,
        }
    }

    fn matches(&self, pair: &ScoredPair) -> bool {
        match self {
            SliceSpec::Global => true,
            SliceSpec::HourWindow { hour, .. } => {
                let scheme = crate::data::foursquare::TimeBucketScheme::default();
                pair.tag_bucket
                    .map(|b| scheme.hour_buckets(*hour).contains(&b))
                    .unwrap_or(false)
            }
            SliceSpec::MultiBit { min_bits, .. } => pair.constraint.active().len() >= *min_bits,
            SliceSpec::SingleBit { .. } => pair.constraint.active().len() == 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Test negatives per positive where negatives are synthesized.
    pub negative_ratio: f64,
    pub slices: Vec<SliceSpec>,
    /// Evaluate after every training iteration (curves) or only at the end.
    pub per_iteration: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            negative_ratio: 1.0,
            slices: vec![SliceSpec::Global],
            per_iteration: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    #[serde(default)]
    pub config: TrainConfig,
}

/// A full experiment: dataset directory, model variants with their training
/// configs, seeds, and the evaluation protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub dataset: DatasetKind,
    pub data_dir: PathBuf,
    pub models: Vec<ModelSpec>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<ExperimentSpec> {
        let spec: ExperimentSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::InvalidConfig("spec lists no models".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("spec lists no seeds".into()));
        }
        for ms in &self.models {
            if ms.model.is_neural()
                && ms.config.context_bits.is_none()
                && self.dataset == DatasetKind::Movielens
            {
                return Err(Error::InvalidConfig(format!(
                    "{} on movielens needs context_bits (the context feature config)",
                    ms.model
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub slice: String,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub dataset: String,
    pub model: String,
    pub seed: u64,
    pub iteration: usize,
    pub slice: String,
    pub auc: f64,
}

/// Per-model, per-slice summaries plus everything needed to reproduce the
/// run: the spec echo and the input content hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub spec: ExperimentSpec,
    pub data_hash: String,
    /// Hash over the data hash and the spec: changes iff any input changes.
    pub input_hash: String,
    pub summaries: BTreeMap<String, BTreeMap<String, SeedSummary>>,
    pub metrics: Vec<MetricRow>,
    /// (model, seed, error) triples for runs that failed; the report is
    /// partial when nonempty.
    pub failures: Vec<(String, u64, String)>,
}

impl ExperimentReport {
    pub fn summary(&self, model: ModelKind, slice: &str) -> Option<&SeedSummary> {
        self.summaries.get(model.as_str())?.get(slice)
    }
}

/// Named evaluation sets for one seed. Plain datasets expose a single
/// `test` set; the folding regime exposes `horror` and `thriller`.
type EvalSets = BTreeMap<String, Vec<EvalItem>>;

fn full_observation_tensor(data: &DatasetDir) -> Result<InteractionTensor> {
    let mut all = Vec::new();
    for records in data.splits.values() {
        for rec in records {
            if rec.reward >= 0.0 {
                all.push(rec.clone());
            }
        }
    }
    tensor_from_raw(data.manifest.m, data.manifest.n, data.manifest.d, &all)
}

/// Build (or reload, when already persisted) the evaluation sets for one
/// seed. Sets are persisted so every model scores identical pairs.
pub fn build_eval_sets(
    kind: DatasetKind,
    data: &DatasetDir,
    seed: u64,
    ratio: f64,
    out_dir: &Path,
) -> Result<EvalSets> {
    let dir = out_dir.join("evalsets");
    std::fs::create_dir_all(&dir)?;
    let mut sets = EvalSets::new();
    let set_names: Vec<&str> = match kind {
        DatasetKind::Movielens => vec!["horror", "thriller"],
        _ => vec!["test"],
    };
    for name in set_names {
        let path = dir.join(format!("{name}_seed{seed}.jsonl"));
        if path.exists() {
            sets.insert(name.to_string(), read_eval_items(&path)?);
            continue;
        }
        let items = match (kind, name) {
            (DatasetKind::Foursquare, _) => {
                let obs = full_observation_tensor(data)?;
                make_test_negatives_timebucket(
                    data.split("test")?,
                    &obs,
                    &data.features,
                    ratio,
                    seed,
                )?
            }
            (DatasetKind::Synthetic, _) => eval_items_from_clicks(data.split("test")?),
            (DatasetKind::Movielens, "horror") => {
                eval_items_from_targets(data.split("horror_test")?)
            }
            (DatasetKind::Movielens, _) => eval_items_from_targets(data.split("thriller_test")?),
            #[allow(unreachable_patterns)]
            _ => unreachable!(),
        };
        write_eval_items(&path, &items)?;
        sets.insert(name.to_string(), items);
    }
    Ok(sets)
}

/// Score persisted evaluation items with a model.
pub fn score_items(
    model: &Model,
    items: &[EvalItem],
    d: usize,
    side: &SideData,
) -> Result<Vec<ScoredPair>> {
    items
        .iter()
        .map(|it| {
            let c = it.constraint(d)?;
            let score = model.score(it.user, it.item, &c, side)?;
            Ok(ScoredPair {
                score,
                label: it.label,
                user: it.user,
                item: it.item,
                constraint: c,
                tag_bucket: it.tag_bucket,
            })
        })
        .collect()
}

fn slice_aucs(
    pairs_by_set: &BTreeMap<String, Vec<ScoredPair>>,
    slices: &[SliceSpec],
) -> Vec<(String, AucResult)> {
    let mut out = Vec::new();
    for (set, pairs) in pairs_by_set {
        for slice in slices {
            let label = format!("{set}/{}", slice.name());
            if let Ok(res) = sliced_auc(pairs, &label, |p| slice.matches(p)) {
                out.push((label, res));
            }
        }
    }
    out
}

struct SeedRun {
    seed: u64,
    finals: Vec<(String, AucResult)>,
    curves: Vec<(usize, String, f64)>,
    error: Option<String>,
}

/// Run the full sweep: for every model and seed, train with the configured
/// warm start, evaluate on the seed's persisted pair sets (after every
/// iteration when configured), and persist models, traces, metrics, curves
/// and the report. Seed failures are recorded and do not stop the sweep;
/// slices that come out empty or single-class for a seed are omitted from
/// its metric rows, and a seed errors only when no slice is evaluable.
pub fn run_experiment(spec: &ExperimentSpec, out_dir: &Path) -> Result<ExperimentReport> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let data = load_dataset(&spec.data_dir)?;
    let train_tensor = data.train_tensor()?;

    // Shared evaluation sets, one bundle per seed.
    let mut eval_sets: BTreeMap<u64, EvalSets> = BTreeMap::new();
    for &seed in &spec.seeds {
        eval_sets.insert(
            seed,
            build_eval_sets(spec.dataset, &data, seed, spec.eval.negative_ratio, out_dir)?,
        );
    }

    std::fs::create_dir_all(out_dir.join("models"))?;
    std::fs::create_dir_all(out_dir.join("traces"))?;

    let dataset_name = format!("{:?}", spec.dataset).to_lowercase();
    let mut metrics: Vec<MetricRow> = Vec::new();
    let mut curves: Vec<CurveRow> = Vec::new();
    let mut failures: Vec<(String, u64, String)> = Vec::new();
    let mut summaries: BTreeMap<String, BTreeMap<String, SeedSummary>> = BTreeMap::new();

    for ms in &spec.models {
        let model_name = ms.model.as_str().to_string();
        let runs: Vec<SeedRun> = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                run_one_seed(
                    ms,
                    seed,
                    spec,
                    &data,
                    &train_tensor,
                    &eval_sets[&seed],
                    out_dir,
                )
            })
            .collect();

        let mut per_slice: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for run in &runs {
            if let Some(err) = &run.error {
                failures.push((model_name.clone(), run.seed, err.clone()));
                continue;
            }
            for (slice, res) in &run.finals {
                metrics.push(MetricRow {
                    dataset: dataset_name.clone(),
                    model: model_name.clone(),
                    seed: run.seed,
                    slice: slice.clone(),
                    auc: res.value,
                    n_pos: res.n_pos,
                    n_neg: res.n_neg,
                });
                per_slice.entry(slice.clone()).or_default().push(res.value);
            }
            for (iteration, slice, value) in &run.curves {
                curves.push(CurveRow {
                    dataset: dataset_name.clone(),
                    model: model_name.clone(),
                    seed: run.seed,
                    iteration: *iteration,
                    slice: slice.clone(),
                    auc: *value,
                });
            }
        }
        let model_summaries: BTreeMap<String, SeedSummary> = per_slice
            .into_iter()
            .map(|(slice, vals)| (slice, SeedSummary::from_aucs(&vals)))
            .collect();
        summaries.insert(model_name, model_summaries);
    }

    write_metrics_csv(&out_dir.join("metrics.csv"), &metrics)?;
    write_curves_csv(&out_dir.join("curves.csv"), &curves)?;
    let data_hash = format!("{:016x}", data.content_hash());
    let input_hash = {
        let mut bytes = data_hash.as_bytes().to_vec();
        bytes.extend_from_slice(serde_json::to_string(spec)?.as_bytes());
        format!("{:016x}", crate::fnv1a64(&bytes))
    };
    let report = ExperimentReport {
        spec: spec.clone(),
        data_hash,
        input_hash,
        summaries,
        metrics,
        failures,
    };
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

fn run_one_seed(
    ms: &ModelSpec,
    seed: u64,
    spec: &ExperimentSpec,
    data: &DatasetDir,
    train_tensor: &InteractionTensor,
    sets: &EvalSets,
    out_dir: &Path,
) -> SeedRun {
    let mut cfg = ms.config.clone();
    cfg.seed = seed;
    let mut curves: Vec<(usize, String, f64)> = Vec::new();
    let d = data.manifest.d;
    let side = &data.side;
    let result = train(
        ms.model,
        train_tensor,
        &data.features,
        side,
        &cfg,
        |iteration, model| {
            if !spec.eval.per_iteration {
                return;
            }
            let mut pairs_by_set = BTreeMap::new();
            for (name, items) in sets {
                if let Ok(pairs) = score_items(model, items, d, side) {
                    pairs_by_set.insert(name.clone(), pairs);
                }
            }
            for (slice, res) in slice_aucs(&pairs_by_set, &spec.eval.slices) {
                curves.push((iteration, slice, res.value));
            }
        },
    );
    match result {
        Err(e) => SeedRun {
            seed,
            finals: Vec::new(),
            curves,
            error: Some(e.to_string()),
        },
        Ok((model, trace)) => {
            let stem = format!("{}_seed{}", ms.model.as_str(), seed);
            let mut error = None;
            if let Err(e) = model.save(&out_dir.join("models").join(format!("{stem}.json"))) {
                error = Some(e.to_string());
            }
            if let Err(e) = trace.write_csv(&out_dir.join("traces").join(format!("{stem}.csv"))) {
                error = error.or(Some(e.to_string()));
            }
            let mut pairs_by_set = BTreeMap::new();
            let mut finals = Vec::new();
            for (name, items) in sets {
                match score_items(&model, items, d, side) {
                    Ok(pairs) => {
                        pairs_by_set.insert(name.clone(), pairs);
                    }
                    Err(e) => error = error.or(Some(e.to_string())),
                }
            }
            if error.is_none() {
                finals = slice_aucs(&pairs_by_set, &spec.eval.slices);
                if finals.is_empty() {
                    error = Some("no evaluable slice produced an AUC".into());
                }
            }
            SeedRun {
                seed,
                finals,
                curves,
                error,
            }
        }
    }
}

fn format_float(v: f64) -> String {
    // Shortest round-trip form keeps CSV output byte-stable.
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "dataset,model,seed,slice,auc,n_pos,n_neg")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.seed,
            r.slice,
            format_float(r.auc),
            r.n_pos,
            r.n_neg
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_curves_csv(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "dataset,model,seed,iteration,slice,auc")?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{}",
            r.dataset,
            r.model,
            r.seed,
            r.iteration,
            r.slice,
            format_float(r.auc)
        )?;
    }
    f.flush()?;
    Ok(())
}

/// Train every (model, seed) pair of the spec and persist models and traces
/// without running evaluation.
pub fn run_training(spec: &ExperimentSpec, out_dir: &Path) -> Result<()> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir.join("models"))?;
    std::fs::create_dir_all(out_dir.join("traces"))?;
    let data = load_dataset(&spec.data_dir)?;
    let train_tensor = data.train_tensor()?;
    for ms in &spec.models {
        let outcomes: Vec<Result<()>> = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let mut cfg = ms.config.clone();
                cfg.seed = seed;
                let (model, trace) = train(
                    ms.model,
                    &train_tensor,
                    &data.features,
                    &data.side,
                    &cfg,
                    |_, _| {},
                )?;
                let stem = format!("{}_seed{}", ms.model.as_str(), seed);
                model.save(&out_dir.join("models").join(format!("{stem}.json")))?;
                trace.write_csv(&out_dir.join("traces").join(format!("{stem}.csv")))?;
                Ok(())
            })
            .collect();
        for outcome in outcomes {
            outcome?;
        }
    }
    Ok(())
}

/// Settings for evaluating one persisted model on an ingested dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluateConfig {
    pub dataset: DatasetKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eval: EvalConfig,
}

/// Score a persisted model on the dataset's evaluation sets and write the
/// metric rows as CSV.
pub fn evaluate_model(
    model_path: &Path,
    data_dir: &Path,
    cfg: &EvaluateConfig,
    out_csv: &Path,
) -> Result<Vec<MetricRow>> {
    let model = Model::load(model_path)?;
    let data = load_dataset(data_dir)?;
    let eval_dir = out_csv
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| PathBuf::from("."));
    let sets = build_eval_sets(
        cfg.dataset,
        &data,
        cfg.seed,
        cfg.eval.negative_ratio,
        &eval_dir,
    )?;
    let mut pairs_by_set = BTreeMap::new();
    for (name, items) in &sets {
        pairs_by_set.insert(
            name.clone(),
            score_items(&model, items, data.manifest.d, &data.side)?,
        );
    }
    let dataset_name = format!("{:?}", cfg.dataset).to_lowercase();
    let rows: Vec<MetricRow> = slice_aucs(&pairs_by_set, &cfg.eval.slices)
        .into_iter()
        .map(|(slice, res)| MetricRow {
            dataset: dataset_name.clone(),
            model: model.kind().as_str().to_string(),
            seed: cfg.seed,
            slice,
            auc: res.value,
            n_pos: res.n_pos,
            n_neg: res.n_neg,
        })
        .collect();
    if rows.is_empty() {
        return Err(Error::UndefinedMetric(
            "no slice produced an AUC for this model".into(),
        ));
    }
    write_metrics_csv(out_csv, &rows)?;
    Ok(rows)
}

/// One row of the model comparison: per-slice mean and spread, plus the
/// rare-vs-popular delta when hour slices carry rarity flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub global_mean: f64,
    pub global_std: f64,
    pub per_slice: BTreeMap<String, (f64, f64)>,
    pub rare_minus_popular: Option<f64>,
    /// True when the next row's lead metric is identical.
    pub tied_with_next: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Slice used for the ordering.
    pub ordered_by: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut slices: Vec<String> = Vec::new();
        for row in &self.rows {
            for s in row.per_slice.keys() {
                if !slices.contains(s) {
                    slices.push(s.clone());
                }
            }
        }
        slices.sort();
        let mut out = String::from("model,global_mean,global_std,rare_minus_popular");
        for s in &slices {
            out.push_str(&format!(",{s}_mean,{s}_std"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}",
                row.model,
                format_float(row.global_mean),
                format_float(row.global_std),
                row.rare_minus_popular.map(format_float).unwrap_or_default()
            ));
            for s in &slices {
                match row.per_slice.get(s) {
                    Some((m, sd)) => {
                        out.push_str(&format!(",{},{}", format_float(*m), format_float(*sd)))
                    }
                    None => out.push_str(",,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Deterministic ordering table over the report's models: sorted by mean
/// AUC on the lead slice (descending), ties kept adjacent and flagged.
pub fn compare_models(report: &ExperimentReport) -> Result<ComparisonTable> {
    if report.summaries.len() < 2 {
        return Err(Error::InvalidConfig(
            "model comparison needs at least two models".into(),
        ));
    }
    let lead_slice = {
        let mut candidates: Vec<&String> =
            report.summaries.values().flat_map(|m| m.keys()).collect();
        candidates.sort();
        candidates.dedup();
        let preferred = candidates
            .iter()
            .find(|s| s.ends_with("/global"))
            .cloned()
            .or_else(|| candidates.first().cloned());
        preferred
            .ok_or_else(|| Error::InvalidConfig("report holds no slices".into()))?
            .clone()
    };

    let rare_slices: Vec<String> = report
        .spec
        .eval
        .slices
        .iter()
        .filter_map(|s| match s {
            SliceSpec::HourWindow {
                name, rare: true, ..
            } => Some(name.clone()),
            _ => None,
        })
        .collect();
    let popular_slices: Vec<String> = report
        .spec
        .eval
        .slices
        .iter()
        .filter_map(|s| match s {
            SliceSpec::HourWindow {
                name, rare: false, ..
            } => Some(name.clone()),
            _ => None,
        })
        .collect();

    let mut rows: Vec<ComparisonRow> = report
        .summaries
        .iter()
        .map(|(model, slices)| {
            let (global_mean, global_std) = slices
                .get(&lead_slice)
                .map(|s| (s.mean, s.std))
                .unwrap_or((f64::NAN, f64::NAN));
            let per_slice: BTreeMap<String, (f64, f64)> = slices
                .iter()
                .map(|(k, v)| (k.clone(), (v.mean, v.std)))
                .collect();
            let slice_mean = |names: &[String]| -> Option<f64> {
                let vals: Vec<f64> = slices
                    .iter()
                    .filter(|(k, _)| names.iter().any(|n| k.ends_with(&format!("/{n}"))))
                    .map(|(_, v)| v.mean)
                    .collect();
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            let rare_minus_popular = match (slice_mean(&rare_slices), slice_mean(&popular_slices)) {
                (Some(r), Some(p)) => Some(r - p),
                _ => None,
            };
            ComparisonRow {
                model: model.clone(),
                global_mean,
                global_std,
                per_slice,
                rare_minus_popular,
                tied_with_next: false,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        b.global_mean
            .partial_cmp(&a.global_mean)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.model.cmp(&b.model))
    });
    for i in 0..rows.len().saturating_sub(1) {
        if rows[i].global_mean == rows[i + 1].global_mean {
            rows[i].tied_with_next = true;
        }
    }
    Ok(ComparisonTable {
        ordered_by: lead_slice,
        rows,
    })
}
