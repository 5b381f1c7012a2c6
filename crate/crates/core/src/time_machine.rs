//! Incremental weekly orchestration of the dedup pipeline.
//!
//! Week one runs as a batch over all visible ads. Every later week only the
//! new and updated ads are matched, against each other and against the
//! housing units already identified (a unit enters blocking as a pseudo-ad
//! with its aggregated characteristics). Updated ads are first detached
//! from their unit, which is re-aggregated or deleted, then re-matched.
//!
//! One constraint is specific to incremental mode: an accepted cluster may
//! contain at most one pre-existing unit. Before the internal-similarity
//! test runs, components holding two or more units lose their lowest-
//! probability edges until every component holds at most one. Without this,
//! a new ad sitting between two previously separated units would glue them
//! together.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::Serialize;

use crate::blocking::{candidate_pairs, BlockEntity};
use crate::classifier::{classify, extract_features, PairFeatures, PairSide, TrainedModelPair};
use crate::cluster::{aggregate_unit, resolve_clusters, ClusterError, DuplicateGraph};
use crate::config::RunConfig;
use crate::indicators::regress::{fit_ols_fe, group_intercepts, RegressError};
use crate::ingest::{diff_snapshots, IngestError, Snapshot, WeekDelta};
use crate::model::{check_unit_partition, Ad, AdId, HousingUnit, UnitId};
use crate::normalize::{embed_description, EmbeddingVector};
use crate::time::Week;

/// A node of the incremental duplicate graph: a fresh ad or an existing
/// unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Ad(AdId),
    Unit(UnitId),
}

impl Node {
    pub fn label(&self) -> String {
        match self {
            Node::Ad(id) => format!("ad:{id}"),
            Node::Unit(id) => format!("unit:{id}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MergeRecord {
    pub week: Week,
    pub unit: UnitId,
    /// Pre-existing units in the accepted cluster (0 or 1 by construction).
    pub existing_units: usize,
    pub added_ads: Vec<AdId>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeRecord {
    pub week: Week,
    pub a: String,
    pub b: String,
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExitRecord {
    pub week: Week,
    pub unit: UnitId,
    pub exit_date: NaiveDate,
}

/// Trace of everything the pipeline decided, for audit and testing.
#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditLog {
    pub merges: Vec<MergeRecord>,
    /// Weakest-edge removals from the internal-similarity test.
    pub removed_edges: Vec<EdgeRecord>,
    /// Removals forced by the at-most-one-existing-unit constraint.
    pub constraint_removals: Vec<EdgeRecord>,
    pub exits: Vec<ExitRecord>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineState {
    pub week: Week,
    /// Every ad ever seen; `removed_on` is set once it disappears.
    pub ads: BTreeMap<AdId, Ad>,
    pub units: BTreeMap<UnitId, HousingUnit>,
    pub ad_to_unit: BTreeMap<AdId, UnitId>,
    pub audit: AuditLog,
    next_unit_seq: u64,
}

impl PipelineState {
    pub fn new(week_before_first: Week) -> Self {
        PipelineState {
            week: week_before_first,
            ads: BTreeMap::new(),
            units: BTreeMap::new(),
            ad_to_unit: BTreeMap::new(),
            audit: AuditLog::default(),
            next_unit_seq: 0,
        }
    }

    fn next_unit_id(&mut self) -> UnitId {
        let id = UnitId::from(format!("u{:06}", self.next_unit_seq).as_str());
        self.next_unit_seq += 1;
        id
    }

    pub fn live_ads(&self) -> impl Iterator<Item = &Ad> {
        self.ads.values().filter(|a| a.is_live())
    }

    /// Every live ad belongs to exactly one unit and no unit is empty.
    pub fn check_invariants(&self) -> Result<(), PipelineError> {
        check_unit_partition(self.units.values())
            .map_err(|e| PipelineError::Internal(e.to_string()))?;
        for ad in self.live_ads() {
            if !self.ad_to_unit.contains_key(&ad.id) {
                return Err(PipelineError::Internal(format!("live ad {} has no unit", ad.id)));
            }
        }
        for unit in self.units.values() {
            if unit.member_ad_ids.is_empty() {
                return Err(PipelineError::Internal(format!("unit {} is empty", unit.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("delta week {delta} is not after state week {state}")]
    WeekOrder { state: Week, delta: Week },
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("hedonic filter: {0}")]
    Hedonic(#[from] RegressError),
    #[error("hedonic filter: no city reaches the configured minimum of {0} units")]
    InsufficientHedonicData(usize),
    #[error("pipeline invariant violated: {0}")]
    Internal(String),
}

fn unit_agencies(state: &PipelineState, unit: &HousingUnit) -> BTreeSet<String> {
    unit.member_ad_ids
        .iter()
        .filter_map(|id| state.ads.get(id))
        .filter(|a| !a.agency_id.is_empty())
        .map(|a| a.agency_id.clone())
        .collect()
}

fn ad_entity(ad: &Ad) -> BlockEntity<Node> {
    let mut agencies = BTreeSet::new();
    if !ad.agency_id.is_empty() {
        agencies.insert(ad.agency_id.clone());
    }
    BlockEntity {
        id: Node::Ad(ad.id.clone()),
        location: ad.location,
        price: ad.asking_price,
        city: ad.city().unwrap_or("").to_string(),
        agencies,
    }
}

fn detach(state: &mut PipelineState, ad_id: &AdId) {
    let Some(unit_id) = state.ad_to_unit.remove(ad_id) else {
        return;
    };
    let Some(unit) = state.units.get_mut(&unit_id) else {
        return;
    };
    unit.member_ad_ids.remove(ad_id);
    if unit.member_ad_ids.is_empty() {
        state.units.remove(&unit_id);
    } else {
        reaggregate(state, &unit_id);
    }
}

/// Rebuilds a unit from its current members. Records a fresh exit.
fn reaggregate(state: &mut PipelineState, unit_id: &UnitId) {
    let Some(unit) = state.units.get(unit_id) else {
        return;
    };
    let was_exited = unit.exit_date.is_some();
    let members: Vec<&Ad> =
        unit.member_ad_ids.iter().filter_map(|id| state.ads.get(id)).collect();
    let rebuilt = aggregate_unit(unit_id.clone(), &members).expect("non-empty unit");
    let exit = rebuilt.exit_date;
    let week = state.week;
    state.units.insert(unit_id.clone(), rebuilt);
    if let (false, Some(date)) = (was_exited, exit) {
        state.audit.exits.push(ExitRecord { week, unit: unit_id.clone(), exit_date: date });
    }
}

/// Applies one week of changes and re-matches the new and updated ads.
pub fn process_week(
    state: &mut PipelineState,
    delta: &WeekDelta,
    model: &TrainedModelPair,
    config: &RunConfig,
) -> Result<(), PipelineError> {
    if delta.week <= state.week {
        return Err(PipelineError::WeekOrder { state: state.week, delta: delta.week });
    }
    state.week = delta.week;

    for (id, clicks) in &delta.click_updates {
        if let Some(ad) = state.ads.get_mut(id) {
            ad.clicks_by_week.insert(delta.week, *clicks);
        }
    }

    let mut matching: Vec<AdId> = Vec::new();
    for incoming in delta.updated_ads.iter().chain(&delta.new_ads) {
        let mut record = incoming.clone();
        if let Some(old) = state.ads.get(&incoming.id) {
            let mut clicks = old.clicks_by_week.clone();
            clicks.extend(incoming.clicks_by_week.iter().map(|(w, c)| (*w, *c)));
            record.clicks_by_week = clicks;
        }
        record.removed_on = None;
        detach(state, &record.id);
        state.ads.insert(record.id.clone(), record);
        matching.push(incoming.id.clone());
    }

    for id in &delta.removed_ad_ids {
        let Some(ad) = state.ads.get_mut(id) else { continue };
        if ad.removed_on.is_none() {
            ad.removed_on = Some(delta.week.monday());
        }
        if let Some(unit_id) = state.ad_to_unit.get(id).cloned() {
            reaggregate(state, &unit_id);
        }
    }

    run_matching(state, &matching, model, config)
}

fn run_matching(
    state: &mut PipelineState,
    matching: &[AdId],
    model: &TrainedModelPair,
    config: &RunConfig,
) -> Result<(), PipelineError> {
    if matching.is_empty() {
        return Ok(());
    }
    let week = state.week;

    let embeddings: BTreeMap<AdId, EmbeddingVector> = matching
        .par_iter()
        .filter_map(|id| {
            let ad = state.ads.get(id)?;
            let text = ad.description.as_deref()?;
            Some((id.clone(), embed_description(text, &config.embedding)))
        })
        .collect();

    let mut entities: Vec<BlockEntity<Node>> = Vec::with_capacity(matching.len() + state.units.len());
    for id in matching {
        entities.push(ad_entity(&state.ads[id]));
    }
    for unit in state.units.values() {
        entities.push(BlockEntity {
            id: Node::Unit(unit.id.clone()),
            location: unit.location,
            price: unit.asking_price,
            city: unit.zone_id.as_ref().map(|z| z.city()).unwrap_or("").to_string(),
            agencies: unit_agencies(state, unit),
        });
    }

    let pairs = candidate_pairs(&entities, &config.blocking);
    let relevant: Vec<_> = pairs
        .into_iter()
        .filter(|p| matches!(p.a, Node::Ad(_)) || matches!(p.b, Node::Ad(_)))
        .collect();

    let side = |node: &Node| -> PairSide<'_> {
        match node {
            Node::Ad(id) => PairSide::from_ad(&state.ads[id], embeddings.get(id)),
            Node::Unit(id) => PairSide::from_unit(&state.units[id]),
        }
    };
    let features: Vec<(Node, Node, PairFeatures)> = relevant
        .par_iter()
        .map(|p| {
            (p.a.clone(), p.b.clone(), extract_features(&side(&p.a), &side(&p.b), p.same_agency))
        })
        .collect();
    let scored = classify(model, &features);

    let mut graph: DuplicateGraph<Node> = DuplicateGraph::new();
    for id in matching {
        graph.add_node(Node::Ad(id.clone()));
    }
    for s in &scored {
        graph.add_edge(s.a.clone(), s.b.clone(), s.probability)?;
    }

    enforce_single_existing_unit(&mut graph, week, &mut state.audit);

    let resolution = resolve_clusters(&graph, &config.cluster);
    for e in &resolution.removed_edges {
        state.audit.removed_edges.push(EdgeRecord {
            week,
            a: e.a.label(),
            b: e.b.label(),
            weight: e.weight,
        });
    }

    for cluster in &resolution.clusters {
        let mut unit_ids: Vec<&UnitId> = Vec::new();
        let mut ad_ids: Vec<&AdId> = Vec::new();
        for node in cluster {
            match node {
                Node::Unit(u) => unit_ids.push(u),
                Node::Ad(a) => ad_ids.push(a),
            }
        }
        if ad_ids.is_empty() {
            continue; // an existing unit that attracted no ads
        }
        if unit_ids.len() > 1 {
            return Err(PipelineError::Internal(format!(
                "cluster with {} pre-existing units survived the constraint",
                unit_ids.len()
            )));
        }
        let (unit_id, mut members) = match unit_ids.first() {
            Some(&u) => (u.clone(), state.units[u].member_ad_ids.clone()),
            None => (state.next_unit_id(), BTreeSet::new()),
        };
        members.extend(ad_ids.iter().map(|a| (*a).clone()));
        let member_ads: Vec<&Ad> = members.iter().map(|id| &state.ads[id]).collect();
        let rebuilt = aggregate_unit(unit_id.clone(), &member_ads)?;
        let newly_exited = rebuilt.exit_date.is_some()
            && state.units.get(&unit_id).is_none_or(|u| u.exit_date.is_none());
        if let Some(date) = rebuilt.exit_date.filter(|_| newly_exited) {
            state.audit.exits.push(ExitRecord { week, unit: unit_id.clone(), exit_date: date });
        }
        state.units.insert(unit_id.clone(), rebuilt);
        for ad in &ad_ids {
            state.ad_to_unit.insert((*ad).clone(), unit_id.clone());
        }
        state.audit.merges.push(MergeRecord {
            week,
            unit: unit_id,
            existing_units: unit_ids.len(),
            added_ads: ad_ids.into_iter().cloned().collect(),
        });
    }
    Ok(())
}

/// Removes lowest-probability edges until no component contains two or more
/// pre-existing units.
fn enforce_single_existing_unit(
    graph: &mut DuplicateGraph<Node>,
    week: Week,
    audit: &mut AuditLog,
) {
    loop {
        let universe: BTreeSet<Node> = graph.nodes().cloned().collect();
        let mut acted = false;
        for comp in graph.components(&universe) {
            let unit_count = comp.iter().filter(|n| matches!(n, Node::Unit(_))).count();
            if unit_count < 2 {
                continue;
            }
            let weakest = graph
                .edges_within(&comp)
                .into_iter()
                .min_by(|x, y| x.2.total_cmp(&y.2).then_with(|| (&x.0, &x.1).cmp(&(&y.0, &y.1))))
                .expect("multi-unit component has edges");
            graph.remove_edge(&weakest.0, &weakest.1);
            audit.constraint_removals.push(EdgeRecord {
                week,
                a: weakest.0.label(),
                b: weakest.1.label(),
                weight: weakest.2,
            });
            acted = true;
        }
        if !acted {
            return;
        }
    }
}

/// One-shot batch deduplication: every ad matched against every other in a
/// single pass (the week-one path of the stream).
pub fn dedup_batch(
    ads: Vec<Ad>,
    model: &TrainedModelPair,
    config: &RunConfig,
) -> Result<PipelineState, PipelineError> {
    let week = ads
        .iter()
        .flat_map(|a| a.clicks_by_week.keys().copied())
        .max()
        .unwrap_or(Week { year: 2016, week: 1 });
    let before = Week::from_date(week.monday() - chrono::Duration::days(7));
    let mut state = PipelineState::new(before);
    let removals: Vec<(AdId, NaiveDate)> = ads
        .iter()
        .filter_map(|a| a.removed_on.map(|d| (a.id.clone(), d)))
        .collect();
    let delta = WeekDelta {
        week,
        new_ads: ads,
        updated_ads: Vec::new(),
        removed_ad_ids: BTreeSet::new(),
        click_updates: BTreeMap::new(),
    };
    process_week(&mut state, &delta, model, config)?;
    // Batch inputs may already carry removal dates.
    for (id, date) in removals {
        if let Some(ad) = state.ads.get_mut(&id) {
            ad.removed_on = Some(date);
        }
        if let Some(unit_id) = state.ad_to_unit.get(&id).cloned() {
            reaggregate(&mut state, &unit_id);
        }
    }
    Ok(state)
}

/// Outcome of a full incremental run.
#[derive(Debug)]
pub struct StreamOutcome {
    pub state: PipelineState,
    /// Units surviving the post-filters.
    pub units: Vec<HousingUnit>,
    pub dropped_short_duration: usize,
    pub dropped_hedonic: usize,
}

/// Processes all snapshots in order (week one as batch, the rest
/// incrementally) and applies the post-filters.
pub fn run_stream(
    snapshots: &[Snapshot],
    model: &TrainedModelPair,
    config: &RunConfig,
) -> Result<StreamOutcome, PipelineError> {
    let first = snapshots.first().ok_or_else(|| {
        PipelineError::Internal("run_stream needs at least one snapshot".into())
    })?;
    let before = Week::from_date(first.week.monday() - chrono::Duration::days(7));
    let mut state = PipelineState::new(before);
    let empty = Snapshot { week: before, ads: Vec::new() };
    let mut prev = &empty;
    for snapshot in snapshots {
        let delta = diff_snapshots(prev, snapshot)?;
        process_week(&mut state, &delta, model, config)?;
        prev = snapshot;
    }
    state.check_invariants()?;

    let all_units: Vec<HousingUnit> = state.units.values().cloned().collect();
    let kept = filter_min_duration(all_units, config.filters.min_duration_days);
    let dropped_short_duration = state.units.len() - kept.len();

    let (units, dropped_hedonic) = if config.filters.hedonic {
        match filter_hedonic_ratio(&kept, config) {
            Ok(outcome) => {
                let dropped = outcome.dropped.len();
                (outcome.kept, dropped)
            }
            Err(PipelineError::InsufficientHedonicData(min)) => {
                state
                    .audit
                    .notes
                    .push(format!("hedonic filter skipped: no city with {min} units"));
                (kept, 0)
            }
            Err(e) => return Err(e),
        }
    } else {
        (kept, 0)
    };

    Ok(StreamOutcome { state, units, dropped_short_duration, dropped_hedonic })
}

/// Drops exited units observed for less than `min_days` (exit minus entry).
/// Units still on the market are retained.
pub fn filter_min_duration(units: Vec<HousingUnit>, min_days: i64) -> Vec<HousingUnit> {
    units
        .into_iter()
        .filter(|u| u.time_on_market_days().is_none_or(|days| days >= min_days))
        .collect()
}

#[derive(Debug)]
pub struct HedonicFilterOutcome {
    pub kept: Vec<HousingUnit>,
    pub dropped: Vec<(UnitId, f64)>,
    pub fitted_cities: usize,
}

fn median(values: &mut Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[values.len() / 2])
}

/// Drops units whose asking price is implausible against a hedonic
/// prediction: log(price per square meter) regressed on a small set of
/// low-missingness characteristics plus zone intercepts, fitted per city.
/// Units in cities below the configured minimum, or without the fields
/// needed to evaluate the ratio, pass through unfiltered. Missing
/// regressors are imputed with per-zone medians (modes for flags).
pub fn filter_hedonic_ratio(
    units: &[HousingUnit],
    config: &RunConfig,
) -> Result<HedonicFilterOutcome, PipelineError> {
    let min_units = config.filters.hedonic_min_units_per_city;
    let (low, high) = (config.filters.hedonic_low, config.filters.hedonic_high);

    let mut by_city: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, unit) in units.iter().enumerate() {
        if let (Some(zone), Some(area)) = (&unit.zone_id, unit.chars.floor_area) {
            if area > 0.0 && unit.asking_price > 0.0 {
                by_city.entry(zone.city().to_string()).or_default().push(i);
            }
        }
    }

    let mut keep = vec![true; units.len()];
    let mut dropped = Vec::new();
    let mut fitted_cities = 0usize;
    for (_city, rows) in &by_city {
        if rows.len() < min_units {
            continue;
        }
        fitted_cities += 1;

        // Zone index within the city.
        let mut zones: Vec<&str> = rows
            .iter()
            .map(|&i| units[i].zone_id.as_ref().unwrap().as_str())
            .collect();
        zones.sort_unstable();
        zones.dedup();
        let zone_idx: BTreeMap<&str, usize> =
            zones.iter().enumerate().map(|(k, z)| (*z, k)).collect();
        let factor: Vec<usize> = rows
            .iter()
            .map(|&i| zone_idx[units[i].zone_id.as_ref().unwrap().as_str()])
            .collect();

        // Per-zone imputation values.
        let n_zones = zones.len();
        let impute = |get: &dyn Fn(&HousingUnit) -> Option<f64>| -> Vec<f64> {
            let mut per_zone: Vec<Vec<f64>> = vec![Vec::new(); n_zones];
            let mut all: Vec<f64> = Vec::new();
            for (k, &i) in rows.iter().enumerate() {
                if let Some(v) = get(&units[i]) {
                    per_zone[factor[k]].push(v);
                    all.push(v);
                }
            }
            let overall = median(&mut all.clone()).unwrap_or(0.0);
            let zone_medians: Vec<f64> = per_zone
                .iter_mut()
                .map(|vals| median(vals).unwrap_or(overall))
                .collect();
            rows.iter()
                .enumerate()
                .map(|(k, &i)| get(&units[i]).unwrap_or(zone_medians[factor[k]]))
                .collect()
        };

        let y: Vec<f64> = rows
            .iter()
            .map(|&i| (units[i].asking_price / units[i].chars.floor_area.unwrap()).ln())
            .collect();
        let x: Vec<Vec<f64>> = vec![
            impute(&|u| u.chars.floor_area),
            impute(&|u| u.chars.bathrooms.map(f64::from)),
            impute(&|u| u.chars.maintenance.map(f64::from)),
            impute(&|u| u.chars.elevator.map(f64::from)),
            impute(&|u| u.chars.floor.map(f64::from)),
        ];
        let names = ["floor_area", "bathrooms", "maintenance", "elevator", "floor"];
        let fit = fit_ols_fe(&y, &x, &names, &[factor.clone()])?;
        let intercepts = group_intercepts(&y, &x, &factor, &fit.coefficients);

        for (k, &i) in rows.iter().enumerate() {
            let mut predicted = intercepts[factor[k]];
            for (j, b) in fit.coefficients.iter().enumerate() {
                predicted += b * x[j][k];
            }
            let ratio = (y[k] - predicted).exp();
            if ratio < low || ratio > high {
                keep[i] = false;
                dropped.push((units[i].id.clone(), ratio));
            }
        }
    }

    if fitted_cities == 0 {
        return Err(PipelineError::InsufficientHedonicData(min_units));
    }

    let kept: Vec<HousingUnit> =
        units.iter().enumerate().filter(|(i, _)| keep[*i]).map(|(_, u)| u.clone()).collect();
    Ok(HedonicFilterOutcome { kept, dropped, fitted_cities })
}
