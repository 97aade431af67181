//! Foursquare-style check-in ingestion.
//!
//! Check-ins are positives only: a visit is evidence the user liked the
//! venue at that time of day. Time is discretized into 12-minute buckets
//! (120 per day); a check-in's constraint activates the five buckets of the
//! hour window centered on it, and a venue's feature row accumulates every
//! bucket of its observed windows. Every record therefore overlaps its
//! venue's features in exactly five bits.

use crate::constraint::FeatureMap;
use crate::data::{split_indices, DatasetManifest, RawRecord};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// The day is cut into 12-minute buckets; a constraint window spans one hour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeBucketScheme {
    pub bucket_minutes: usize,
    pub buckets_per_window: usize,
}

impl Default for TimeBucketScheme {
    fn default() -> Self {
        TimeBucketScheme {
            bucket_minutes: 12,
            buckets_per_window: 5,
        }
    }
}

impl TimeBucketScheme {
    pub const BUCKETS_PER_DAY: usize = 120;

    pub fn bucket_of_minute(&self, minute_of_day: usize) -> usize {
        (minute_of_day / self.bucket_minutes) % Self::BUCKETS_PER_DAY
    }

    /// The five bucket ids of the hour window centered on `center`,
    /// wrapping around midnight.
    pub fn window_bits(&self, center: usize) -> Vec<usize> {
        let half = self.buckets_per_window / 2;
        (0..self.buckets_per_window)
            .map(|o| (center + Self::BUCKETS_PER_DAY - half + o) % Self::BUCKETS_PER_DAY)
            .collect()
    }

    /// Center buckets falling inside the given hour, e.g. hour 8 for the
    /// 8am-9am evaluation slice.
    pub fn hour_buckets(&self, hour: usize) -> Vec<usize> {
        let per_hour = 60 / self.bucket_minutes;
        (hour * per_hour..(hour + 1) * per_hour).collect()
    }
}

/// Recover the center bucket of a five-bucket window, handling windows that
/// wrap past midnight. Returns `None` for bit sets that are not a window.
pub fn window_center(bits: &[usize]) -> Option<usize> {
    let w = TimeBucketScheme::default().buckets_per_window;
    let day = TimeBucketScheme::BUCKETS_PER_DAY;
    if bits.len() != w {
        return None;
    }
    for &start in bits {
        if (0..w).all(|o| bits.contains(&((start + o) % day))) {
            return Some((start + w / 2) % day);
        }
    }
    None
}

/// Subset filtering and splitting options for check-in ingestion.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct FoursquareSubset {
    pub min_user_checkins: usize,
    pub min_venue_checkins: usize,
    pub max_users: Option<usize>,
    pub max_venues: Option<usize>,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for FoursquareSubset {
    fn default() -> Self {
        FoursquareSubset {
            min_user_checkins: 5,
            min_venue_checkins: 2,
            max_users: None,
            max_venues: None,
            test_fraction: 0.2,
            split_seed: 0,
        }
    }
}

pub struct FoursquareData {
    pub manifest: DatasetManifest,
    pub features: FeatureMap,
    pub splits: BTreeMap<String, Vec<RawRecord>>,
    pub scheme: TimeBucketScheme,
}

/// Parse a check-in timestamp like `Tue Apr 03 18:00:09 +0000 2012` into the
/// minute of day. Only the clock time matters for bucketing.
pub fn parse_checkin_minute(ts: &str) -> Option<usize> {
    let tokens: Vec<&str> = ts.split_whitespace().collect();
    let clock = match tokens.len() {
        6 => tokens[3],
        // Also accept a bare "HH:MM:SS" or "HH:MM".
        1 => tokens[0],
        _ => return None,
    };
    let parts: Vec<&str> = clock.split(':').collect();
    if parts.len() < 2 {
        return None;
    }
    let h: usize = parts[0].parse().ok()?;
    let m: usize = parts[1].parse().ok()?;
    if h >= 24 || m >= 60 {
        return None;
    }
    Some(h * 60 + m)
}

/// Load a tab-separated check-in file. Expected columns: user id, venue id,
/// category id, category name, latitude, longitude, timezone offset, utc
/// time; only columns 1, 2 and 8 are consumed. Malformed rows are skipped
/// and counted in the manifest provenance.
pub fn load_foursquare(path: &Path, subset: &FoursquareSubset) -> Result<FoursquareData> {
    let scheme = TimeBucketScheme::default();
    let mut rows: Vec<(String, String, usize)> = Vec::new();
    let mut skipped = 0usize;
    for line in crate::data::read_lossy_lines(path)? {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            skipped += 1;
            continue;
        }
        match parse_checkin_minute(cols[7]) {
            Some(minute) => rows.push((cols[0].to_string(), cols[1].to_string(), minute)),
            None => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::Schema("no parseable check-in rows".into()));
    }

    // Iterate minimum-count filtering until stable, then cap by activity.
    let mut keep = vec![true; rows.len()];
    loop {
        let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut venue_counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if keep[i] {
                *user_counts.entry(&row.0).or_default() += 1;
                *venue_counts.entry(&row.1).or_default() += 1;
            }
        }
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            if keep[i]
                && (user_counts[row.0.as_str()] < subset.min_user_checkins
                    || venue_counts[row.1.as_str()] < subset.min_venue_checkins)
            {
                keep[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    if let Some(cap) = subset.max_users {
        cap_by_activity(&rows, &mut keep, cap, |r| &r.0);
    }
    if let Some(cap) = subset.max_venues {
        cap_by_activity(&rows, &mut keep, cap, |r| &r.1);
    }

    // Contiguous ids in first-seen order over the surviving rows.
    let mut user_ids: Vec<String> = Vec::new();
    let mut item_ids: Vec<String> = Vec::new();
    let mut user_map: BTreeMap<String, usize> = BTreeMap::new();
    let mut item_map: BTreeMap<String, usize> = BTreeMap::new();
    let mut records: Vec<RawRecord> = Vec::new();
    for (i, (user, venue, minute)) in rows.iter().enumerate() {
        if !keep[i] {
            continue;
        }
        let u = *user_map.entry(user.clone()).or_insert_with(|| {
            user_ids.push(user.clone());
            user_ids.len() - 1
        });
        let v = *item_map.entry(venue.clone()).or_insert_with(|| {
            item_ids.push(venue.clone());
            item_ids.len() - 1
        });
        let center = scheme.bucket_of_minute(*minute);
        records.push(RawRecord {
            user: u,
            item: v,
            constraint_bits: {
                let mut bits = scheme.window_bits(center);
                bits.sort_unstable();
                bits
            },
            reward: 1.0,
            weight: 1.0,
        });
    }
    if records.is_empty() {
        return Err(Error::Schema(
            "subset filtering removed every check-in".into(),
        ));
    }

    let d = TimeBucketScheme::BUCKETS_PER_DAY;
    let mut feature_rows: Vec<Vec<usize>> = vec![Vec::new(); item_ids.len()];
    for rec in &records {
        feature_rows[rec.item].extend(rec.constraint_bits.iter().copied());
    }
    let features = FeatureMap::new(d, feature_rows)?;

    let mut observed_bits: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    for rec in &records {
        observed_bits.extend(rec.constraint_bits.iter().copied());
    }

    let (train_idx, test_idx) =
        split_indices(records.len(), subset.test_fraction, subset.split_seed);
    let train: Vec<RawRecord> = train_idx.iter().map(|&i| records[i].clone()).collect();
    let test: Vec<RawRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();

    let mut splits = BTreeMap::new();
    let mut split_counts = BTreeMap::new();
    split_counts.insert("train".to_string(), train.len());
    split_counts.insert("test".to_string(), test.len());
    splits.insert("train".to_string(), train);
    splits.insert("test".to_string(), test);

    let manifest = DatasetManifest {
        m: user_ids.len(),
        n: item_ids.len(),
        d,
        user_ids,
        item_ids,
        splits: split_counts,
        provenance: vec![
            format!("source: {}", path.display()),
            format!("rows parsed: {}, skipped: {skipped}", rows.len()),
            format!(
                "achieved subset: {} users, {} venues, {} observed time buckets",
                user_map.len(),
                item_map.len(),
                observed_bits.len()
            ),
        ],
    };
    Ok(FoursquareData {
        manifest,
        features,
        splits,
        scheme,
    })
}

fn cap_by_activity<F: Fn(&(String, String, usize)) -> &String>(
    rows: &[(String, String, usize)],
    keep: &mut [bool],
    cap: usize,
    key: F,
) {
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        if keep[i] {
            *counts.entry(key(row)).or_default() += 1;
        }
    }
    if counts.len() <= cap {
        return;
    }
    let mut ranked: Vec<(&String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let kept: std::collections::BTreeSet<&String> =
        ranked.iter().take(cap).map(|(id, _)| *id).collect();
    for (i, row) in rows.iter().enumerate() {
        if keep[i] && !kept.contains(key(row)) {
            keep[i] = false;
        }
    }
}
