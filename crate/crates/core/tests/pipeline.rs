//! Pipeline integration beyond the acceptance criteria: the two-tower
//! variants through the full MovieLens flow, and spec files loaded from
//! disk the way the CLI does it.

use ctxmf::data::ingest_movielens;
use ctxmf::data::movielens::{FoldingConfig, HORROR_GENRE, THRILLER_GENRE};
use ctxmf::experiment::{
    compare_models, run_experiment, DatasetKind, EvalConfig, ExperimentSpec, ModelSpec, SliceSpec,
};
use ctxmf::fixtures::{write_movielens_fixture, MlFixtureConfig};
use ctxmf::model::ModelKind;
use ctxmf::train::TrainConfig;
use std::path::PathBuf;

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ctxmf_pipeline_{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn tower_variants_run_through_the_movielens_pipeline() {
    let dir = workdir("towers");
    let src = dir.join("ml_src");
    write_movielens_fixture(&MlFixtureConfig::new(23, 80, 90), &src).unwrap();
    let data_dir = dir.join("data");
    ingest_movielens(&src, &FoldingConfig::default(), &data_dir).unwrap();

    let tower_cfg = TrainConfig {
        k: 6,
        lambda: 0.0,
        iterations: 8,
        learning_rate: 0.05,
        batch_size: 32,
        hidden_dims: vec![8],
        context_bits: Some(vec![THRILLER_GENRE, HORROR_GENRE]),
        context_user_extras: true,
        ..TrainConfig::default()
    };
    let spec = ExperimentSpec {
        name: "towers".into(),
        dataset: DatasetKind::Movielens,
        data_dir,
        models: vec![
            ModelSpec {
                model: ModelKind::NnMf,
                config: tower_cfg.clone(),
            },
            ModelSpec {
                model: ModelKind::NcNnMf,
                config: tower_cfg,
            },
        ],
        seeds: vec![1, 2],
        eval: EvalConfig {
            negative_ratio: 1.0,
            slices: vec![SliceSpec::Global],
            per_iteration: false,
        },
    };
    let out = dir.join("out");
    let report = run_experiment(&spec, &out).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    for model in [ModelKind::NnMf, ModelKind::NcNnMf] {
        for set in ["horror/global", "thriller/global"] {
            let summary = report
                .summary(model, set)
                .unwrap_or_else(|| panic!("{model} missing {set}"));
            assert_eq!(summary.per_seed.len(), 2);
            for auc in &summary.per_seed {
                assert!((0.0..=1.0).contains(auc));
            }
        }
        assert!(out
            .join(format!("models/{}_seed1.json", model.as_str()))
            .exists());
    }
    // Persisted tower models reload and score.
    let model =
        ctxmf::model::Model::load(&out.join("models/nn_mf_seed1.json")).unwrap();
    assert_eq!(model.kind(), ModelKind::NnMf);

    let table = compare_models(&report).unwrap();
    assert_eq!(table.rows.len(), 2);
}

#[test]
fn spec_round_trips_through_json_files() {
    let dir = workdir("specfile");
    let spec = ExperimentSpec {
        name: "file".into(),
        dataset: DatasetKind::Synthetic,
        data_dir: dir.join("data"),
        models: vec![ModelSpec {
            model: ModelKind::WcMf,
            config: TrainConfig {
                k: 5,
                ..TrainConfig::default()
            },
        }],
        seeds: vec![9],
        eval: EvalConfig::default(),
    };
    let path = dir.join("spec.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec).unwrap()).unwrap();
    let loaded = ExperimentSpec::load(&path).unwrap();
    assert_eq!(loaded, spec);

    // Minimal hand-written spec relies on config defaults.
    let minimal = dir.join("minimal.json");
    std::fs::write(
        &minimal,
        serde_json::json!({
            "name": "minimal",
            "dataset": "synthetic",
            "data_dir": dir.join("data"),
            "models": [{"model": "dc_mf"}],
            "seeds": [1]
        })
        .to_string(),
    )
    .unwrap();
    let loaded = ExperimentSpec::load(&minimal).unwrap();
    assert_eq!(loaded.models[0].config.k, 100);
    assert_eq!(loaded.eval.negative_ratio, 1.0);
}
