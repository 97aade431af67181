//! Command line interface: ingest datasets, train model sweeps, evaluate
//! persisted models, run full experiments, and render reports.
//!
//! All state flows through flags and files. Exit code 0 on success; on
//! failure a machine-readable error JSON goes to stderr and the exit code is
//! nonzero.

use ctxmf::data::foursquare::FoursquareSubset;
use ctxmf::data::movielens::FoldingConfig;
use ctxmf::data::synthetic::SynthConfig;
use ctxmf::data::{ingest_foursquare, ingest_movielens, ingest_synthetic};
use ctxmf::experiment::{
    compare_models, evaluate_model, run_experiment, run_training, EvaluateConfig, ExperimentReport,
    ExperimentSpec,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const USAGE: &str = "\
ctxmf <command> [flags]

commands:
  ingest      --dataset <foursquare|movielens|synthetic> --input <path> --out <dir> [--subset <cfg.json>]
  train       --spec <spec.json> --out <dir>
  evaluate    --model <model.json> --data <dir> --slices <cfg.json> --out <csv>
  experiment  --spec <spec.json> --out <dir>
  report      --in <dir> --format <csv|json>
";

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => {}
        Err(err) => {
            let payload = serde_json::json!({
                "error": err.to_string(),
                "usage": "run without arguments for command help",
            });
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}

fn run(args: &[String]) -> Result<(), Box<dyn std::error::Error>> {
    let Some(command) = args.first() else {
        print!("{USAGE}");
        return Err("missing command".into());
    };
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "ingest" => cmd_ingest(&flags),
        "train" => cmd_train(&flags),
        "evaluate" => cmd_evaluate(&flags),
        "experiment" => cmd_experiment(&flags),
        "report" => cmd_report(&flags),
        other => {
            print!("{USAGE}");
            Err(format!("unknown command '{other}'").into())
        }
    }
}

fn parse_flags(args: &[String]) -> Result<BTreeMap<String, String>, Box<dyn std::error::Error>> {
    let mut flags = BTreeMap::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(name) = arg.strip_prefix("--") else {
            return Err(format!("expected a --flag, found '{arg}'").into());
        };
        let value = it
            .next()
            .ok_or_else(|| format!("flag --{name} needs a value"))?;
        flags.insert(name.to_string(), value.clone());
    }
    Ok(flags)
}

fn require<'a>(
    flags: &'a BTreeMap<String, String>,
    name: &str,
) -> Result<&'a str, Box<dyn std::error::Error>> {
    flags
        .get(name)
        .map(|s| s.as_str())
        .ok_or_else(|| format!("missing required flag --{name}").into())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", path.display()))?)
}

fn cmd_ingest(flags: &BTreeMap<String, String>) -> Result<(), Box<dyn std::error::Error>> {
    let dataset = require(flags, "dataset")?;
    let input = PathBuf::from(require(flags, "input")?);
    let out = PathBuf::from(require(flags, "out")?);
    let subset = flags.get("subset").map(PathBuf::from);
    let manifest = match dataset {
        "foursquare" => {
            let cfg: FoursquareSubset = match &subset {
                Some(p) => read_json(p)?,
                None => FoursquareSubset::default(),
            };
            ingest_foursquare(&input, &cfg, &out)?
        }
        "movielens" => {
            let cfg: FoldingConfig = match &subset {
                Some(p) => read_json(p)?,
                None => FoldingConfig::default(),
            };
            ingest_movielens(&input, &cfg, &out)?
        }
        "synthetic" => {
            let cfg: SynthConfig = read_json(&input)?;
            ingest_synthetic(&cfg, &out)?
        }
        other => return Err(format!("unknown dataset '{other}'").into()),
    };
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "m": manifest.m,
            "n": manifest.n,
            "d": manifest.d,
            "splits": manifest.splits,
        })
    );
    Ok(())
}

fn cmd_train(flags: &BTreeMap<String, String>) -> Result<(), Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::load(Path::new(require(flags, "spec")?))?;
    let out = PathBuf::from(require(flags, "out")?);
    run_training(&spec, &out)?;
    println!(
        "{}",
        serde_json::json!({"out": out, "models": spec.models.len(), "seeds": spec.seeds.len()})
    );
    Ok(())
}

fn cmd_evaluate(flags: &BTreeMap<String, String>) -> Result<(), Box<dyn std::error::Error>> {
    let model = PathBuf::from(require(flags, "model")?);
    let data = PathBuf::from(require(flags, "data")?);
    let slices = PathBuf::from(require(flags, "slices")?);
    let out = PathBuf::from(require(flags, "out")?);
    let cfg: EvaluateConfig = read_json(&slices)?;
    let rows = evaluate_model(&model, &data, &cfg, &out)?;
    println!("{}", serde_json::json!({"out": out, "rows": rows.len()}));
    Ok(())
}

fn cmd_experiment(flags: &BTreeMap<String, String>) -> Result<(), Box<dyn std::error::Error>> {
    let spec = ExperimentSpec::load(Path::new(require(flags, "spec")?))?;
    let out = PathBuf::from(require(flags, "out")?);
    let report = run_experiment(&spec, &out)?;
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "models": report.summaries.len(),
            "failures": report.failures.len(),
            "data_hash": report.data_hash,
        })
    );
    Ok(())
}

fn cmd_report(flags: &BTreeMap<String, String>) -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(require(flags, "in")?);
    let format = require(flags, "format")?;
    let report: ExperimentReport = read_json(&dir.join("report.json"))?;
    match format {
        "json" => {
            let table = compare_models(&report)?;
            println!("{}", serde_json::to_string_pretty(&table)?);
        }
        "csv" => {
            let table = compare_models(&report)?;
            print!("{}", table.to_csv());
        }
        other => return Err(format!("unknown format '{other}' (csv|json)").into()),
    }
    Ok(())
}
