//! Dataset ingestion: loaders for the supported sources, the canonical
//! JSON-lines record format, and the dataset directory layout shared by the
//! CLI and the experiment runner.
//!
//! An ingested dataset directory contains:
//!
//! - `manifest.json` — sizes, id remapping tables, split counts, provenance
//! - `features.json` — the item feature map
//! - `<split>.jsonl` — one record per line per split
//! - `side.json` — optional per-user/item continuous descriptors
//! - `truth.json` — ground-truth factors (synthetic data only)

pub mod foursquare;
pub mod movielens;
pub mod synthetic;

use crate::constraint::{ConstraintVector, FeatureMap, Interaction, InteractionTensor};
use crate::error::{Error, Result};
use crate::model::SideData;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

/// One line of the canonical JSON-lines format. `reward` is in `[0, 1]` for
/// training splits; evaluation-only splits may carry a `-1` target to mark
/// an explicit negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub user: usize,
    pub item: usize,
    /// Sorted active indices of the constraint.
    pub constraint_bits: Vec<usize>,
    pub reward: f64,
    pub weight: f64,
}

impl RawRecord {
    pub fn constraint(&self, d: usize) -> Result<ConstraintVector> {
        ConstraintVector::new(d, self.constraint_bits.iter().copied())
    }
}

pub fn write_jsonl(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for rec in records {
        serde_json::to_writer(&mut f, rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::DataFormat {
            line: lineno + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Build a validated training tensor from raw records.
pub fn tensor_from_raw(
    m: usize,
    n: usize,
    d: usize,
    raw: &[RawRecord],
) -> Result<InteractionTensor> {
    let records = raw
        .iter()
        .map(|r| {
            Ok(Interaction {
                user: r.user,
                item: r.item,
                constraint: r.constraint(d)?,
                reward: r.reward,
                weight: r.weight,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    InteractionTensor::new(m, n, d, records)
}

pub fn raw_from_tensor(data: &InteractionTensor) -> Vec<RawRecord> {
    data.records()
        .iter()
        .map(|rec| RawRecord {
            user: rec.user,
            item: rec.item,
            constraint_bits: rec.constraint.active().to_vec(),
            reward: rec.reward,
            weight: rec.weight,
        })
        .collect()
}

/// Sizes, id remappings and provenance for an ingested dataset. The
/// remapping tables are bijections onto contiguous ids: position in the
/// vector is the internal id.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// Records per split.
    pub splits: BTreeMap<String, usize>,
    pub provenance: Vec<String>,
}

impl DatasetManifest {
    pub fn original_user(&self, u: usize) -> Option<&str> {
        self.user_ids.get(u).map(|s| s.as_str())
    }

    pub fn internal_user(&self, original: &str) -> Option<usize> {
        self.user_ids.iter().position(|s| s == original)
    }

    /// Hash over the manifest content; changes iff any field changes.
    pub fn hash(&self) -> u64 {
        crate::fnv1a64(
            serde_json::to_string(self)
                .expect("manifest serializes")
                .as_bytes(),
        )
    }
}

/// An ingested dataset directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct DatasetDir {
    pub manifest: DatasetManifest,
    pub features: FeatureMap,
    pub splits: BTreeMap<String, Vec<RawRecord>>,
    pub side: SideData,
}

impl DatasetDir {
    pub fn split(&self, name: &str) -> Result<&[RawRecord]> {
        self.splits
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::Schema(format!("dataset has no '{name}' split")))
    }

    pub fn train_tensor(&self) -> Result<InteractionTensor> {
        tensor_from_raw(
            self.manifest.m,
            self.manifest.n,
            self.manifest.d,
            self.split("train")?,
        )
    }

    /// Hash over every input of the dataset: manifest, features, splits and
    /// side data.
    pub fn content_hash(&self) -> u64 {
        let mut acc = self.manifest.hash();
        let mut mix = |bytes: &[u8]| {
            acc ^= crate::fnv1a64(bytes);
            acc = acc.rotate_left(17);
        };
        mix(serde_json::to_string(&self.features)
            .expect("features serialize")
            .as_bytes());
        for (name, records) in &self.splits {
            mix(name.as_bytes());
            for rec in records {
                mix(serde_json::to_string(rec)
                    .expect("record serializes")
                    .as_bytes());
            }
        }
        mix(serde_json::to_string(&self.side)
            .expect("side serializes")
            .as_bytes());
        acc
    }
}

/// Write an ingested dataset to a directory in the canonical layout.
pub fn write_dataset(
    dir: &Path,
    manifest: &DatasetManifest,
    features: &FeatureMap,
    splits: &BTreeMap<String, Vec<RawRecord>>,
    side: &SideData,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(manifest)?,
    )?;
    std::fs::write(
        dir.join("features.json"),
        serde_json::to_string_pretty(features)?,
    )?;
    for (name, records) in splits {
        write_jsonl(&dir.join(format!("{name}.jsonl")), records)?;
    }
    std::fs::write(dir.join("side.json"), serde_json::to_string_pretty(side)?)?;
    Ok(())
}

/// Load a dataset directory written by `write_dataset`.
pub fn load_dataset(dir: &Path) -> Result<DatasetDir> {
    let manifest: DatasetManifest =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json"))?)?;
    let features: FeatureMap =
        serde_json::from_str(&std::fs::read_to_string(dir.join("features.json"))?)?;
    let mut splits = BTreeMap::new();
    for name in manifest.splits.keys() {
        let path = dir.join(format!("{name}.jsonl"));
        splits.insert(name.clone(), read_jsonl(&path)?);
    }
    let side_path = dir.join("side.json");
    let side = if side_path.exists() {
        serde_json::from_str(&std::fs::read_to_string(side_path)?)?
    } else {
        SideData::none()
    };
    Ok(DatasetDir {
        manifest,
        features,
        splits,
        side,
    })
}

/// Read a text file line by line, decoding non-UTF-8 bytes lossily. The
/// classic distribution files (movie titles, venue names) are latin-1.
pub(crate) fn read_lossy_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Schema(format!("cannot read {}: {e}", path.display()))
    })?;
    Ok(String::from_utf8_lossy(&bytes)
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Ingest a check-in file into a dataset directory.
pub fn ingest_foursquare(
    input: &Path,
    subset: &foursquare::FoursquareSubset,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let data = foursquare::load_foursquare(input, subset)?;
    write_dataset(
        out_dir,
        &data.manifest,
        &data.features,
        &data.splits,
        &SideData::none(),
    )?;
    Ok(data.manifest)
}

/// Ingest a MovieLens 100K directory, building the folding split. The
/// per-user age (divided by 100) is stored as the continuous descriptor.
pub fn ingest_movielens(
    input: &Path,
    folding: &movielens::FoldingConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let data = movielens::load_movielens(input)?;
    let split = movielens::build_folding_split(&data, folding)?;
    let mut manifest = data.manifest.clone();
    let mut splits = BTreeMap::new();
    manifest
        .splits
        .insert("train".to_string(), split.train.len());
    manifest
        .splits
        .insert("horror_test".to_string(), split.horror_test.len());
    manifest
        .splits
        .insert("thriller_test".to_string(), split.thriller_test.len());
    splits.insert("train".to_string(), split.train);
    splits.insert("horror_test".to_string(), split.horror_test);
    splits.insert("thriller_test".to_string(), split.thriller_test);
    let side = SideData {
        user_extras: Some(crate::linalg::Mat::from_fn(manifest.m, 1, |u, _| {
            data.ages[u] as f64 / 100.0
        })),
        item_extras: None,
    };
    write_dataset(out_dir, &manifest, &data.features, &splits, &side)?;
    Ok(manifest)
}

/// Generate and ingest a synthetic low-overlap dataset, persisting the
/// planted factors alongside the splits.
pub fn ingest_synthetic(cfg: &synthetic::SynthConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let data = synthetic::synth_low_overlap(cfg)?;
    write_dataset(
        out_dir,
        &data.manifest,
        &data.features,
        &data.splits,
        &SideData::none(),
    )?;
    std::fs::write(
        out_dir.join("truth.json"),
        serde_json::to_string_pretty(&data.truth)?,
    )?;
    Ok(data.manifest)
}

/// Deterministic train/test assignment: shuffles indices with the seed and
/// splits off the requested fraction as test.
pub fn split_indices(count: usize, test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut idx: Vec<usize> = (0..count).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_test = ((count as f64) * test_fraction).round() as usize;
    let test = idx[..n_test.min(count)].to_vec();
    let train = idx[n_test.min(count)..].to_vec();
    (train, test)
}
