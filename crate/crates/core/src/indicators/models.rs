//! The regression specifications run on the panel: duplicate determinants,
//! time-on-market and price-revision models, demand lead regressions, and
//! supply-composition regressions.
//!
//! All of them are thin assemblies over [`super::regress`]: pick the
//! sample, build columns, absorb the fixed effects. Missing unit
//! characteristics are imputed with per-zone medians so rows are not thrown
//! away wholesale.

use std::collections::BTreeMap;

use super::panel::{Panel, PanelObservation, UnitOutcome, ZoneAggregate};
use super::regress::{fit_logit, fit_ols_fe, FeFactor, RegressError, RegressionResult};
use crate::model::{HousingUnit, UnitId, ZoneId};
use crate::time::Quarter;

/// Unit characteristics entering the models as controls, imputed per zone.
#[derive(Debug, Clone)]
pub struct ControlMatrix {
    pub names: Vec<&'static str>,
    /// Column-major, aligned with the unit list passed in.
    pub columns: Vec<Vec<f64>>,
    index: BTreeMap<UnitId, usize>,
}

impl ControlMatrix {
    pub fn row(&self, unit: &UnitId) -> Option<Vec<f64>> {
        let i = *self.index.get(unit)?;
        Some(self.columns.iter().map(|c| c[i]).collect())
    }
}

fn median_of(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values[values.len() / 2])
}

/// Builds the control matrix: floor area, detached-property dummy, floor,
/// bathrooms, maintenance level, balcony-or-terrace dummy, garage level,
/// elevator dummy. Missing values take the zone median (overall median as
/// fallback).
pub fn build_controls(units: &[HousingUnit]) -> ControlMatrix {
    let names = vec![
        "floor_area",
        "detached",
        "floor",
        "bathrooms",
        "maintenance",
        "balcony_or_terrace",
        "garage",
        "elevator",
    ];
    let raw: Vec<Box<dyn Fn(&HousingUnit) -> Option<f64>>> = vec![
        Box::new(|u| u.chars.floor_area),
        Box::new(|u| {
            u.chars.property_type.as_deref().map(|p| f64::from(p.eq_ignore_ascii_case("detached")))
        }),
        Box::new(|u| u.chars.floor.map(f64::from)),
        Box::new(|u| u.chars.bathrooms.map(f64::from)),
        Box::new(|u| u.chars.maintenance.map(f64::from)),
        Box::new(|u| match (u.chars.balcony, u.chars.terrace) {
            (None, None) => None,
            (b, t) => Some(f64::from(b == Some(true) || t == Some(true))),
        }),
        Box::new(|u| u.chars.garage.map(f64::from)),
        Box::new(|u| u.chars.elevator.map(f64::from)),
    ];

    let zone_of = |u: &HousingUnit| u.zone_id.as_ref().map(|z| z.to_string()).unwrap_or_default();
    let mut columns = Vec::with_capacity(raw.len());
    for get in &raw {
        let mut per_zone: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut all = Vec::new();
        for u in units {
            if let Some(v) = get(u) {
                per_zone.entry(zone_of(u)).or_default().push(v);
                all.push(v);
            }
        }
        let overall = median_of(all).unwrap_or(0.0);
        let zone_median: BTreeMap<String, f64> = per_zone
            .into_iter()
            .map(|(z, vals)| (z, median_of(vals).unwrap_or(overall)))
            .collect();
        columns.push(
            units
                .iter()
                .map(|u| get(u).unwrap_or_else(|| *zone_median.get(&zone_of(u)).unwrap_or(&overall)))
                .collect(),
        );
    }
    let index = units.iter().enumerate().map(|(i, u)| (u.id.clone(), i)).collect();
    ControlMatrix { names, columns, index }
}

/// Group index for zone-by-week dummies over a row subset.
fn zone_week_factor(rows: &[&PanelObservation]) -> FeFactor {
    let mut keys: Vec<(String, crate::time::Week)> = rows
        .iter()
        .map(|r| (r.zone.as_ref().map(|z| z.to_string()).unwrap_or_default(), r.week))
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    sorted.dedup();
    let index: BTreeMap<_, usize> = sorted.into_iter().enumerate().map(|(i, k)| (k, i)).collect();
    keys.drain(..).map(|k| index[&k]).collect()
}

fn push_controls(
    x: &mut Vec<Vec<f64>>,
    names: &mut Vec<String>,
    controls: &ControlMatrix,
    rows: &[&PanelObservation],
) {
    for (j, name) in controls.names.iter().enumerate() {
        names.push((*name).to_string());
        x.push(
            rows.iter()
                .map(|r| controls.columns[j][controls.index[&r.unit]])
                .collect(),
        );
    }
}

/// Duplicate-presence model: regresses the more-than-one-ad indicator on
/// contemporaneous clicks, price per square meter and the controls, with
/// zone-by-week effects absorbed.
pub fn model_eq1(panel: &Panel, controls: &ControlMatrix) -> Result<RegressionResult, RegressError> {
    let rows: Vec<&PanelObservation> =
        panel.rows.iter().filter(|r| r.price_sqm.is_some() && r.zone.is_some()).collect();
    let y: Vec<f64> = rows.iter().map(|r| f64::from(r.dupl)).collect();
    let mut x = vec![
        rows.iter().map(|r| r.clicks).collect::<Vec<f64>>(),
        rows.iter().map(|r| r.price_sqm.unwrap()).collect(),
    ];
    let mut names = vec!["clicks".to_string(), "price_sqm".to_string()];
    push_controls(&mut x, &mut names, controls, &rows);
    let fe = zone_week_factor(&rows);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    fit_ols_fe(&y, &x, &name_refs, &[fe])
}

type LaggedRow<'a> = (&'a PanelObservation, &'a PanelObservation);

/// Pairs each row with the previous week's row of the same unit.
fn with_lag(panel: &Panel) -> Vec<LaggedRow<'_>> {
    let mut by_key: BTreeMap<(&UnitId, crate::time::Week), &PanelObservation> = BTreeMap::new();
    for r in &panel.rows {
        by_key.insert((&r.unit, r.week), r);
    }
    panel
        .rows
        .iter()
        .filter_map(|r| {
            let prev_week = crate::time::Week::from_date(r.week.monday() - chrono::Duration::days(7));
            by_key.get(&(&r.unit, prev_week)).map(|prev| (r, *prev))
        })
        .collect()
}

/// New-duplicate model: the probability that an extra ad appears this week,
/// on last week's clicks and price, days listed, and the controls.
pub fn model_eq2(panel: &Panel, controls: &ControlMatrix) -> Result<RegressionResult, RegressError> {
    let lagged: Vec<LaggedRow> = with_lag(panel)
        .into_iter()
        .filter(|(r, prev)| r.zone.is_some() && prev.price_sqm.is_some())
        .collect();
    let rows: Vec<&PanelObservation> = lagged.iter().map(|(r, _)| *r).collect();
    let y: Vec<f64> = lagged.iter().map(|(r, _)| f64::from(r.newdupl)).collect();
    let mut x = vec![
        lagged.iter().map(|(_, p)| p.clicks).collect::<Vec<f64>>(),
        lagged.iter().map(|(_, p)| p.price_sqm.unwrap()).collect(),
        lagged.iter().map(|(r, _)| r.days_listed as f64).collect(),
    ];
    let mut names =
        vec!["clicks_lag1".to_string(), "price_sqm_lag1".to_string(), "days_listed".to_string()];
    push_controls(&mut x, &mut names, controls, &rows);
    let fe = zone_week_factor(&rows);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    fit_ols_fe(&y, &x, &name_refs, &[fe])
}

/// Lead-lag model: new-duplicate indicator on clicks at offsets -4..=+4
/// weeks (clicks_t0 is the publication week). Rows missing any offset are
/// dropped.
pub fn model_eq3(panel: &Panel, controls: &ControlMatrix) -> Result<RegressionResult, RegressError> {
    let mut by_key: BTreeMap<(&UnitId, crate::time::Week), &PanelObservation> = BTreeMap::new();
    for r in &panel.rows {
        by_key.insert((&r.unit, r.week), r);
    }
    let offsets: Vec<i64> = (-4..=4).collect();
    let mut rows: Vec<&PanelObservation> = Vec::new();
    let mut click_cols: Vec<Vec<f64>> = vec![Vec::new(); offsets.len()];
    let mut lag_price: Vec<f64> = Vec::new();
    let mut days: Vec<f64> = Vec::new();
    'row: for r in &panel.rows {
        if r.zone.is_none() {
            continue;
        }
        let mut clicks = Vec::with_capacity(offsets.len());
        for o in &offsets {
            let w = crate::time::Week::from_date(r.week.monday() + chrono::Duration::days(7 * o));
            match by_key.get(&(&r.unit, w)) {
                Some(obs) => clicks.push(obs.clicks),
                None => continue 'row,
            }
        }
        let prev = crate::time::Week::from_date(r.week.monday() - chrono::Duration::days(7));
        let Some(price) = by_key.get(&(&r.unit, prev)).and_then(|p| p.price_sqm) else {
            continue;
        };
        rows.push(r);
        for (k, c) in clicks.into_iter().enumerate() {
            click_cols[k].push(c);
        }
        lag_price.push(price);
        days.push(r.days_listed as f64);
    }

    let y: Vec<f64> = rows.iter().map(|r| f64::from(r.newdupl)).collect();
    let mut x = Vec::new();
    let mut names = Vec::new();
    for (k, o) in offsets.iter().enumerate() {
        let name = match o.cmp(&0) {
            std::cmp::Ordering::Less => format!("clicks_tm{}", -o),
            std::cmp::Ordering::Equal => "clicks_t0".to_string(),
            std::cmp::Ordering::Greater => format!("clicks_tp{o}"),
        };
        names.push(name);
        x.push(std::mem::take(&mut click_cols[k]));
    }
    names.push("price_sqm_lag1".to_string());
    x.push(lag_price);
    names.push("days_listed".to_string());
    x.push(days);
    push_controls(&mut x, &mut names, controls, &rows);
    let fe = zone_week_factor(&rows);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    fit_ols_fe(&y, &x, &name_refs, &[fe])
}

fn outcome_factors(outcomes: &[&UnitOutcome]) -> (FeFactor, FeFactor) {
    let mut zones: Vec<String> = outcomes
        .iter()
        .map(|o| o.zone.as_ref().map(|z| z.to_string()).unwrap_or_default())
        .collect();
    let mut zs = zones.clone();
    zs.sort();
    zs.dedup();
    let zindex: BTreeMap<_, usize> = zs.into_iter().enumerate().map(|(i, z)| (z, i)).collect();
    let zone_factor: FeFactor = zones.drain(..).map(|z| zindex[&z]).collect();

    let mut quarters: Vec<Quarter> = outcomes.iter().map(|o| o.exit_quarter.unwrap()).collect();
    let mut qs = quarters.clone();
    qs.sort();
    qs.dedup();
    let qindex: BTreeMap<_, usize> = qs.into_iter().enumerate().map(|(i, q)| (q, i)).collect();
    let quarter_factor: FeFactor = quarters.drain(..).map(|q| qindex[&q]).collect();
    (zone_factor, quarter_factor)
}

fn outcome_controls(
    controls: &ControlMatrix,
    outcomes: &[&UnitOutcome],
) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut x = Vec::new();
    let mut names = Vec::new();
    for (j, name) in controls.names.iter().enumerate() {
        names.push((*name).to_string());
        x.push(outcomes.iter().map(|o| controls.columns[j][controls.index[&o.unit]]).collect());
    }
    (x, names)
}

/// Time-on-market model: log days on market on log relative online
/// interest, relative price, and controls, with zone and exit-quarter
/// effects. Sample: exited single-ad units.
pub fn model_tom(panel: &Panel, controls: &ControlMatrix) -> Result<RegressionResult, RegressError> {
    let sample: Vec<&UnitOutcome> = panel
        .outcomes
        .iter()
        .filter(|o| {
            o.single_ad
                && o.exit_quarter.is_some()
                && o.tom_days.is_some_and(|d| d > 0)
                && o.onlint.is_some_and(|v| v > 0.0)
                && o.rel_price.is_some_and(|v| v > 0.0)
        })
        .collect();
    let y: Vec<f64> = sample.iter().map(|o| (o.tom_days.unwrap() as f64).ln()).collect();
    let mut x = vec![
        sample.iter().map(|o| o.onlint.unwrap().ln()).collect::<Vec<f64>>(),
        sample.iter().map(|o| o.rel_price.unwrap()).collect(),
    ];
    let mut names = vec!["log_onlint".to_string(), "rel_price".to_string()];
    let (cx, cn) = outcome_controls(controls, &sample);
    x.extend(cx);
    names.extend(cn);
    let (zf, qf) = outcome_factors(&sample);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    fit_ols_fe(&y, &x, &name_refs, &[zf, qf])
}

/// Downward-revision model: logistic regression of the revision indicator
/// on first-two-week relative interest, relative price and controls, with
/// zone and exit-quarter dummies. Sample: exited single-ad units. The
/// `onlint2` coefficient exponentiated is the odds ratio per unit of
/// relative interest.
pub fn model_priceref(
    panel: &Panel,
    controls: &ControlMatrix,
) -> Result<RegressionResult, RegressError> {
    let sample: Vec<&UnitOutcome> = panel
        .outcomes
        .iter()
        .filter(|o| {
            o.single_ad
                && o.exit_quarter.is_some()
                && o.onlint2.is_some()
                && o.rel_price.is_some()
        })
        .collect();
    let y: Vec<bool> = sample.iter().map(|o| o.priceref).collect();
    let mut x = vec![
        sample.iter().map(|o| o.onlint2.unwrap()).collect::<Vec<f64>>(),
        sample.iter().map(|o| o.rel_price.unwrap()).collect(),
    ];
    let mut names = vec!["onlint2".to_string(), "rel_price".to_string()];
    let (cx, cn) = outcome_controls(controls, &sample);
    x.extend(cx);
    names.extend(cn);
    let (zf, qf) = outcome_factors(&sample);
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    fit_logit(&y, &x, &name_refs, &[zf, qf])
}

/// Which aggregate the demand-lead model explains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandResponse {
    AvPrice,
    Liquidity,
}

/// Demand as a leading indicator: log response on one- and two-quarter
/// lagged log demand plus the lagged response, with city and period
/// effects.
pub fn model_demand_lead(
    aggregates: &[ZoneAggregate],
    response: DemandResponse,
) -> Result<RegressionResult, RegressError> {
    let value = |a: &ZoneAggregate| -> Option<f64> {
        match response {
            DemandResponse::AvPrice => a.avprice,
            DemandResponse::Liquidity => Some(a.liquidity),
        }
        .filter(|v| *v > 0.0)
    };
    let mut by_key: BTreeMap<(&ZoneId, Quarter), &ZoneAggregate> = BTreeMap::new();
    for a in aggregates {
        by_key.insert((&a.zone, a.period), a);
    }

    let mut y = Vec::new();
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    let mut ylag = Vec::new();
    let mut cities = Vec::new();
    let mut periods = Vec::new();
    for a in aggregates {
        let p1 = a.period.prev();
        let p2 = p1.prev();
        let (Some(l1), Some(l2)) = (by_key.get(&(&a.zone, p1)), by_key.get(&(&a.zone, p2))) else {
            continue;
        };
        let (Some(v), Some(v1)) = (value(a), value(l1)) else { continue };
        if l1.demand <= 0.0 || l2.demand <= 0.0 {
            continue;
        }
        y.push(v.ln());
        d1.push(l1.demand.ln());
        d2.push(l2.demand.ln());
        ylag.push(v1.ln());
        cities.push(a.city.clone());
        periods.push(a.period);
    }

    let mut cs = cities.clone();
    cs.sort();
    cs.dedup();
    let cindex: BTreeMap<_, usize> = cs.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let city_factor: FeFactor = cities.iter().map(|c| cindex[c]).collect();
    let mut ps = periods.clone();
    ps.sort();
    ps.dedup();
    let pindex: BTreeMap<_, usize> = ps.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
    let period_factor: FeFactor = periods.iter().map(|p| pindex[p]).collect();

    fit_ols_fe(
        &y,
        &[d1, d2, ylag],
        &["log_demand_lag1", "log_demand_lag2", "log_response_lag1"],
        &[city_factor, period_factor],
    )
}

/// Which supply-composition measure Eq-style regressions explain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupplyResponse {
    FloorArea,
    Bath,
    Garden,
    Terrace,
}

/// Supply-composition model: a quality measure on the log city hedonic
/// index, with city and quarter effects. Only zones with at least
/// `min_listings` in every quarter they appear are used.
pub fn model_supply(
    aggregates: &[ZoneAggregate],
    hedon: &BTreeMap<(String, Quarter), f64>,
    response: SupplyResponse,
    min_listings: u64,
) -> Result<RegressionResult, RegressError> {
    // Zones qualifying in every quarter.
    let mut ok: BTreeMap<&ZoneId, bool> = BTreeMap::new();
    for a in aggregates {
        let e = ok.entry(&a.zone).or_insert(true);
        *e &= a.listings >= min_listings;
    }

    let mut y = Vec::new();
    let mut h = Vec::new();
    let mut cities = Vec::new();
    let mut periods = Vec::new();
    for a in aggregates {
        if !ok.get(&a.zone).copied().unwrap_or(false) {
            continue;
        }
        let Some(&hed) = hedon.get(&(a.city.clone(), a.period)) else { continue };
        let value = match response {
            SupplyResponse::FloorArea => match a.floorarea {
                Some(v) => v,
                None => continue,
            },
            SupplyResponse::Bath => a.bath,
            SupplyResponse::Garden => a.garden,
            SupplyResponse::Terrace => a.terrace,
        };
        y.push(value);
        h.push(hed);
        cities.push(a.city.clone());
        periods.push(a.period);
    }

    let mut cs = cities.clone();
    cs.sort();
    cs.dedup();
    let cindex: BTreeMap<_, usize> = cs.into_iter().enumerate().map(|(i, c)| (c, i)).collect();
    let city_factor: FeFactor = cities.iter().map(|c| cindex[c]).collect();
    let mut ps = periods.clone();
    ps.sort();
    ps.dedup();
    let pindex: BTreeMap<_, usize> = ps.into_iter().enumerate().map(|(i, p)| (p, i)).collect();
    let period_factor: FeFactor = periods.iter().map(|p| pindex[p]).collect();

    fit_ols_fe(&y, &[h], &["hedon"], &[city_factor, period_factor])
}
