//! Weekly snapshot files, week-over-week deltas, and external reference
//! series.
//!
//! A snapshot file is UTF-8 with one JSON record per line (see [`RawAd`] for
//! the exact field names); the file stem is the ISO week id, e.g.
//! `2016-W01.jsonl`. External series come as delimited text with a
//! `kind,period,zone_or_city,value1,value2` header.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::model::{validate_ad, Ad, AdId, LevelSchemes, RawAd};
use crate::time::Week;

/// All ads visible in one weekly snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub week: Week,
    pub ads: Vec<Ad>,
}

/// One row that failed to parse or validate, with its 1-based line number.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

/// Result of parsing a snapshot file: valid rows plus per-row errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotParse {
    pub snapshot: Snapshot,
    pub row_errors: Vec<RowError>,
}

/// Parses a snapshot file. The week id comes from the file stem.
pub fn parse_snapshot(path: &Path, schemes: &LevelSchemes) -> Result<SnapshotParse, IngestError> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| IngestError::WeekFromFilename(path.display().to_string()))?;
    let week: Week = stem
        .parse()
        .map_err(|_| IngestError::WeekFromFilename(path.display().to_string()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError::Io { path: path.display().to_string(), source: e })?;
    Ok(parse_snapshot_str(week, &text, schemes))
}

/// Parses snapshot content. Rows that fail to decode or validate are
/// reported in `row_errors` and skipped; an id repeated within the file is
/// an error on the later row.
pub fn parse_snapshot_str(week: Week, text: &str, schemes: &LevelSchemes) -> SnapshotParse {
    let mut ads = Vec::new();
    let mut row_errors = Vec::new();
    let mut seen: BTreeSet<AdId> = BTreeSet::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawAd = match serde_json::from_str(line) {
            Ok(raw) => raw,
            Err(e) => {
                row_errors.push(RowError { line: line_no, message: format!("malformed row: {e}") });
                continue;
            }
        };
        match validate_ad(&raw, schemes, week) {
            Ok(ad) => {
                if seen.insert(ad.id.clone()) {
                    ads.push(ad);
                } else {
                    row_errors.push(RowError {
                        line: line_no,
                        message: format!("duplicate id {} within file", ad.id),
                    });
                }
            }
            Err(e) => row_errors.push(RowError { line: line_no, message: e.to_string() }),
        }
    }
    SnapshotParse { snapshot: Snapshot { week, ads }, row_errors }
}

/// Serializes one ad as a snapshot row for `week` (its click count that
/// week). Inverse of `parse_snapshot_str` row handling.
pub fn ad_to_snapshot_row(ad: &Ad, week: Week) -> String {
    let clicks = ad.clicks_by_week.get(&week).copied();
    let c = &ad.chars;
    let value = json!({
        "id": ad.id,
        "agency_id": if ad.agency_id.is_empty() { serde_json::Value::Null } else { json!(ad.agency_id) },
        "zone_id": ad.zone_id,
        "lat": ad.location.lat,
        "lon": ad.location.lon,
        "price": ad.asking_price,
        "floor_area": c.floor_area,
        "floor": c.floor,
        "rooms": c.rooms,
        "bathrooms": c.bathrooms,
        "maintenance": c.maintenance,
        "energy_class": c.energy_class,
        "garage": c.garage,
        "garden": c.garden,
        "kitchen": c.kitchen,
        "elevator": c.elevator,
        "balcony": c.balcony,
        "terrace": c.terrace,
        "janitor": c.janitor,
        "utility_room": c.utility_room,
        "air_conditioning": c.air_conditioning,
        "basement": c.basement,
        "heating": c.heating,
        "property_type": c.property_type,
        "description": ad.description,
        "created_on": ad.created_on.to_string(),
        "clicks": clicks,
    });
    // Nulls dropped so that missing stays visibly missing, not "null".
    let mut map = serde_json::Map::new();
    if let serde_json::Value::Object(obj) = value {
        for (k, v) in obj {
            if !v.is_null() {
                map.insert(k, v);
            }
        }
    }
    serde_json::Value::Object(map).to_string()
}

/// Writes a whole snapshot in the file format, rows ordered by ad id.
pub fn write_snapshot(snapshot: &Snapshot) -> String {
    let mut rows: Vec<(&AdId, String)> = snapshot
        .ads
        .iter()
        .map(|ad| (&ad.id, ad_to_snapshot_row(ad, snapshot.week)))
        .collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = String::new();
    for (_, row) in rows {
        out.push_str(&row);
        out.push('\n');
    }
    out
}

/// Week-over-week changes between two snapshots.
#[derive(Debug, Clone, PartialEq)]
pub struct WeekDelta {
    pub week: Week,
    /// Ads present only in the later snapshot.
    pub new_ads: Vec<Ad>,
    /// Ads present in both with a changed price or characteristic
    /// (click-only changes do not count).
    pub updated_ads: Vec<Ad>,
    /// Ads present only in the earlier snapshot.
    pub removed_ad_ids: BTreeSet<AdId>,
    /// Click counts for every ad persisting into the later week.
    pub click_updates: BTreeMap<AdId, u64>,
}

impl WeekDelta {
    pub fn empty(week: Week) -> Self {
        WeekDelta {
            week,
            new_ads: Vec::new(),
            updated_ads: Vec::new(),
            removed_ad_ids: BTreeSet::new(),
            click_updates: BTreeMap::new(),
        }
    }
}

/// True when anything except clicks or lifecycle bookkeeping differs.
/// Comparison is over canonical encodings, so formatting noise in the raw
/// files cannot produce spurious updates.
pub fn ad_changed(prev: &Ad, next: &Ad) -> bool {
    prev.asking_price != next.asking_price
        || prev.location != next.location
        || prev.chars != next.chars
        || prev.description != next.description
        || prev.zone_id != next.zone_id
        || prev.agency_id != next.agency_id
}

/// Diffs two snapshots. A gap of more than one week (e.g. quarterly history)
/// is treated as a single delta.
pub fn diff_snapshots(prev: &Snapshot, next: &Snapshot) -> Result<WeekDelta, IngestError> {
    if prev.week >= next.week {
        return Err(IngestError::SnapshotOrder { prev: prev.week, next: next.week });
    }
    let prev_by_id: BTreeMap<&AdId, &Ad> = prev.ads.iter().map(|a| (&a.id, a)).collect();
    let next_by_id: BTreeMap<&AdId, &Ad> = next.ads.iter().map(|a| (&a.id, a)).collect();

    let mut delta = WeekDelta::empty(next.week);
    for (id, ad) in &next_by_id {
        match prev_by_id.get(*id) {
            None => delta.new_ads.push((*ad).clone()),
            Some(old) => {
                if let Some(c) = ad.clicks_by_week.get(&next.week) {
                    delta.click_updates.insert((*id).clone(), *c);
                }
                if ad_changed(old, ad) {
                    delta.updated_ads.push((*ad).clone());
                }
            }
        }
    }
    for id in prev_by_id.keys() {
        if !next_by_id.contains_key(*id) {
            delta.removed_ad_ids.insert((*id).clone());
        }
    }
    Ok(delta)
}

/// Folds a sequence of snapshots into each ad's final record: latest
/// characteristics, accumulated click history, and a removal date (Monday of
/// the first week the ad is no longer visible). Ads present in the last
/// snapshot stay live.
pub fn union_ads(snapshots: &[Snapshot]) -> Vec<Ad> {
    let mut merged: BTreeMap<AdId, Ad> = BTreeMap::new();
    let mut last_seen: BTreeMap<AdId, Week> = BTreeMap::new();
    for snapshot in snapshots {
        for ad in &snapshot.ads {
            last_seen.insert(ad.id.clone(), snapshot.week);
            match merged.get_mut(&ad.id) {
                None => {
                    merged.insert(ad.id.clone(), ad.clone());
                }
                Some(existing) => {
                    let mut clicks = existing.clicks_by_week.clone();
                    clicks.extend(ad.clicks_by_week.iter().map(|(w, c)| (*w, *c)));
                    *existing = ad.clone();
                    existing.clicks_by_week = clicks;
                }
            }
        }
    }
    if let Some(last_week) = snapshots.last().map(|s| s.week) {
        for (id, ad) in merged.iter_mut() {
            let seen = last_seen[id];
            if seen < last_week {
                ad.removed_on = Some(seen.next().monday());
            }
        }
    }
    merged.into_values().collect()
}

/// Average home value of a zone from its semiannual price bounds.
pub fn mean_zone_price(p_l: f64, p_h: f64) -> Result<f64, IngestError> {
    if !(p_l > 0.0) || p_l > p_h {
        return Err(IngestError::BadPriceBounds { low: p_l, high: p_h });
    }
    Ok((p_l + p_h) / 2.0)
}

/// Kinds of external reference series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    /// value1 = P_l, value2 = P_h (euro per square meter), keyed by zone.
    ZonePriceBounds,
    /// value1 = number of home sales, keyed by city, quarterly period.
    CitySales,
    /// value1 = average discount on asking prices (fraction), national.
    SurveyDiscount,
    /// value1 = average time on market in days, national.
    SurveyTom,
}

impl SeriesKind {
    pub fn parse(s: &str) -> Option<SeriesKind> {
        match s {
            "zone_price_bounds" => Some(SeriesKind::ZonePriceBounds),
            "city_sales" => Some(SeriesKind::CitySales),
            "survey_discount" => Some(SeriesKind::SurveyDiscount),
            "survey_tom" => Some(SeriesKind::SurveyTom),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SeriesKind::ZonePriceBounds => "zone_price_bounds",
            SeriesKind::CitySales => "city_sales",
            SeriesKind::SurveyDiscount => "survey_discount",
            SeriesKind::SurveyTom => "survey_tom",
        }
    }
}

/// One row of an external reference series.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSeries {
    pub kind: SeriesKind,
    pub period: String,
    /// Zone id or city name, depending on the kind.
    pub key: String,
    pub value1: f64,
    pub value2: Option<f64>,
}

pub const EXTERNAL_SERIES_HEADER: &str = "kind,period,zone_or_city,value1,value2";

/// Parses external series content (header line required).
pub fn parse_external_series(text: &str) -> Result<Vec<ExternalSeries>, IngestError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == EXTERNAL_SERIES_HEADER => {}
        _ => return Err(IngestError::SeriesHeader),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(IngestError::SeriesRow {
                line: line_no,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let kind = SeriesKind::parse(fields[0]).ok_or_else(|| IngestError::SeriesRow {
            line: line_no,
            message: format!("unknown series kind {:?}", fields[0]),
        })?;
        let value1: f64 = fields[3].parse().map_err(|_| IngestError::SeriesRow {
            line: line_no,
            message: format!("bad value1 {:?}", fields[3]),
        })?;
        let value2: Option<f64> = if fields[4].is_empty() {
            None
        } else {
            Some(fields[4].parse().map_err(|_| IngestError::SeriesRow {
                line: line_no,
                message: format!("bad value2 {:?}", fields[4]),
            })?)
        };
        if !value1.is_finite() || value2.is_some_and(|v| !v.is_finite()) {
            return Err(IngestError::SeriesRow { line: line_no, message: "non-finite value".into() });
        }
        match kind {
            SeriesKind::ZonePriceBounds => {
                let high = value2.ok_or_else(|| IngestError::SeriesRow {
                    line: line_no,
                    message: "zone_price_bounds needs value2 = P_h".into(),
                })?;
                if !(value1 > 0.0) || value1 > high {
                    return Err(IngestError::SeriesRow {
                        line: line_no,
                        message: format!("price bounds violated: P_l={value1}, P_h={high}"),
                    });
                }
            }
            SeriesKind::CitySales => {
                if value1 < 0.0 {
                    return Err(IngestError::SeriesRow {
                        line: line_no,
                        message: format!("negative count {value1}"),
                    });
                }
            }
            _ => {}
        }
        rows.push(ExternalSeries {
            kind,
            period: fields[1].to_string(),
            key: fields[2].to_string(),
            value1,
            value2,
        });
    }
    Ok(rows)
}

pub fn write_external_series(rows: &[ExternalSeries]) -> String {
    let mut out = String::from(EXTERNAL_SERIES_HEADER);
    out.push('\n');
    for r in rows {
        let value2 = r.value2.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.kind.as_str(), r.period, r.key, r.value1, value2));
    }
    out
}

/// One ad-week observation from the click/price history file
/// (`ad_id<TAB>week<TAB>clicks<TAB>price`).
#[derive(Debug, Clone, PartialEq)]
pub struct AdWeekRow {
    pub ad: AdId,
    pub week: Week,
    pub clicks: u64,
    pub price: f64,
}

pub fn parse_ad_weeks(text: &str) -> Result<Vec<AdWeekRow>, IngestError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(IngestError::SeriesRow {
                line: line_no,
                message: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let week: Week = fields[1].parse().map_err(|_| IngestError::SeriesRow {
            line: line_no,
            message: format!("bad week {:?}", fields[1]),
        })?;
        let clicks: u64 = fields[2].parse().map_err(|_| IngestError::SeriesRow {
            line: line_no,
            message: format!("bad clicks {:?}", fields[2]),
        })?;
        let price: f64 = fields[3].parse().map_err(|_| IngestError::SeriesRow {
            line: line_no,
            message: format!("bad price {:?}", fields[3]),
        })?;
        if !price.is_finite() || price <= 0.0 {
            return Err(IngestError::SeriesRow {
                line: line_no,
                message: format!("non-positive price {price}"),
            });
        }
        rows.push(AdWeekRow { ad: AdId::from(fields[0]), week, clicks, price });
    }
    Ok(rows)
}

pub fn write_ad_weeks(rows: &[AdWeekRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.ad, r.week, r.clicks, r.price));
    }
    out
}

/// Parses a ground-truth mapping file (`ad_id<TAB>unit_id`).
pub fn parse_truth(text: &str) -> Result<BTreeMap<AdId, crate::model::UnitId>, IngestError> {
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (ad, unit) = line.split_once('\t').ok_or_else(|| IngestError::SeriesRow {
            line: line_no,
            message: "expected ad_id<TAB>unit_id".into(),
        })?;
        if ad.is_empty() || unit.is_empty() {
            return Err(IngestError::SeriesRow { line: line_no, message: "empty id".into() });
        }
        map.insert(AdId::from(ad), crate::model::UnitId::from(unit));
    }
    Ok(map)
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot derive week id from filename {0:?} (expected e.g. 2016-W01.jsonl)")]
    WeekFromFilename(String),
    #[error("snapshots out of order: {prev} is not before {next}")]
    SnapshotOrder { prev: Week, next: Week },
    #[error("price bounds violated: low={low}, high={high}")]
    BadPriceBounds { low: f64, high: f64 },
    #[error("external series file must start with header {:?}", EXTERNAL_SERIES_HEADER)]
    SeriesHeader,
    #[error("line {line}: {message}")]
    SeriesRow { line: usize, message: String },
}
