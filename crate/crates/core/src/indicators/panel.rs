//! Unit-week panel and zone-period aggregates built from deduplicated
//! units plus the per-ad click/price history.
//!
//! Ad liveness in a week is read off the history rows themselves (an ad has
//! a row exactly for the weeks it was visible), so the panel does not
//! depend on how removal dates were inferred.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ingest::AdWeekRow;
use crate::model::{AdId, HousingUnit, UnitId, ZoneId};
use crate::time::{Quarter, Week};

/// One unit-week observation.
#[derive(Debug, Clone, Serialize)]
pub struct PanelObservation {
    pub unit: UnitId,
    pub zone: Option<ZoneId>,
    pub week: Week,
    /// More than one ad visible this week.
    pub dupl: bool,
    /// The number of visible ads increased against the previous week.
    pub newdupl: bool,
    /// Mean over visible member ads of average daily clicks (weekly / 7).
    pub clicks: f64,
    /// Asking price per square meter (modal live-ad price over area).
    pub price_sqm: Option<f64>,
    /// Days the unit has been listed up to this week.
    pub days_listed: i64,
    pub live_ads: u32,
}

/// Unit-level outcomes, one row per unit.
#[derive(Debug, Clone, Serialize)]
pub struct UnitOutcome {
    pub unit: UnitId,
    pub zone: Option<ZoneId>,
    pub entry_week: Week,
    pub exit_week: Option<Week>,
    pub exit_quarter: Option<Quarter>,
    /// Days between first listing and delisting.
    pub tom_days: Option<i64>,
    /// Any member ad revised its price downward during the unit's life.
    pub priceref: bool,
    /// Lifetime clicks over the zone average for the same window.
    pub onlint: Option<f64>,
    /// First-two-weeks clicks over the zone average for the same window.
    pub onlint2: Option<f64>,
    /// Mean price per square meter over the zone average for the window.
    pub rel_price: Option<f64>,
    /// The unit never had more than one ad.
    pub single_ad: bool,
}

#[derive(Debug, Clone)]
pub struct Panel {
    pub rows: Vec<PanelObservation>,
    pub outcomes: Vec<UnitOutcome>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PanelError {
    #[error("unit {0} has no click history for any member ad")]
    NoHistory(UnitId),
}

struct UnitSeries<'a> {
    unit: &'a HousingUnit,
    /// week -> (visible ads, total clicks, live-ad prices with first-seen
    /// order for the modal tie-break).
    weeks: BTreeMap<Week, WeekCell>,
    priceref: bool,
}

#[derive(Default, Clone)]
struct WeekCell {
    ads: u32,
    clicks: u64,
    /// (first week the ad was seen, ad id, price) for modal price.
    prices: Vec<(Week, AdId, f64)>,
}

/// Builds the unit-week panel and the unit-level outcomes.
pub fn build_panel(units: &[HousingUnit], history: &[AdWeekRow]) -> Result<Panel, PanelError> {
    let mut ad_rows: BTreeMap<&AdId, Vec<&AdWeekRow>> = BTreeMap::new();
    for row in history {
        ad_rows.entry(&row.ad).or_default().push(row);
    }
    let first_seen: BTreeMap<&AdId, Week> = ad_rows
        .iter()
        .map(|(ad, rows)| (*ad, rows.iter().map(|r| r.week).min().unwrap()))
        .collect();

    // Per unit: weekly cells.
    let mut series: Vec<UnitSeries> = Vec::with_capacity(units.len());
    for unit in units {
        let mut weeks: BTreeMap<Week, WeekCell> = BTreeMap::new();
        let mut priceref = false;
        let mut any = false;
        for ad in &unit.member_ad_ids {
            let Some(rows) = ad_rows.get(ad) else { continue };
            any = true;
            let mut sorted: Vec<&&AdWeekRow> = rows.iter().collect();
            sorted.sort_by_key(|r| r.week);
            let mut prev_price: Option<f64> = None;
            for row in sorted {
                let cell = weeks.entry(row.week).or_default();
                cell.ads += 1;
                cell.clicks += row.clicks;
                cell.prices.push((first_seen[ad], ad.clone(), row.price));
                if let Some(p) = prev_price {
                    if row.price < p {
                        priceref = true;
                    }
                }
                prev_price = Some(row.price);
            }
        }
        if !any {
            return Err(PanelError::NoHistory(unit.id.clone()));
        }
        series.push(UnitSeries { unit, weeks, priceref });
    }

    // Zone baseline: mean unit clicks per zone-week, over units visible
    // that week.
    let mut zone_week: BTreeMap<(&ZoneId, Week), (f64, u32)> = BTreeMap::new();
    let mut zone_week_price: BTreeMap<(&ZoneId, Week), (f64, u32)> = BTreeMap::new();
    for s in &series {
        let Some(zone) = &s.unit.zone_id else { continue };
        for (week, cell) in &s.weeks {
            let e = zone_week.entry((zone, *week)).or_insert((0.0, 0));
            e.0 += cell.clicks as f64;
            e.1 += 1;
            if let Some(p) = price_sqm_of(cell, s.unit) {
                let e = zone_week_price.entry((zone, *week)).or_insert((0.0, 0));
                e.0 += p;
                e.1 += 1;
            }
        }
    }
    let zone_mean =
        |zone: &ZoneId, week: Week| zone_week.get(&(zone, week)).map(|(s, n)| s / f64::from(*n));
    let zone_mean_price = |zone: &ZoneId, week: Week| {
        zone_week_price.get(&(zone, week)).filter(|(_, n)| *n > 0).map(|(s, n)| s / f64::from(*n))
    };

    let mut rows = Vec::new();
    let mut outcomes = Vec::new();
    for s in &series {
        let unit = s.unit;
        let entry_week = Week::from_date(unit.entry_date);
        let mut prev_ads: Option<u32> = None;
        let mut total_clicks = 0u64;
        let mut first14_clicks = 0u64;
        let mut zone_total = 0.0;
        let mut zone_first14 = 0.0;
        let mut price_sum = 0.0;
        let mut zone_price_sum = 0.0;
        let mut price_n = 0u32;
        let mut max_ads = 0u32;

        for (week, cell) in &s.weeks {
            let price_sqm = price_sqm_of(cell, unit);
            rows.push(PanelObservation {
                unit: unit.id.clone(),
                zone: unit.zone_id.clone(),
                week: *week,
                dupl: cell.ads > 1,
                newdupl: prev_ads.is_some_and(|p| cell.ads > p),
                clicks: cell.clicks as f64 / cell.ads as f64 / 7.0,
                price_sqm,
                days_listed: (week.monday() - unit.entry_date).num_days(),
                live_ads: cell.ads,
            });
            prev_ads = Some(cell.ads);
            max_ads = max_ads.max(cell.ads);

            total_clicks += cell.clicks;
            let in_first_14 = (week.monday() - unit.entry_date).num_days() < 14;
            if in_first_14 {
                first14_clicks += cell.clicks;
            }
            if let Some(zone) = &unit.zone_id {
                if let Some(m) = zone_mean(zone, *week) {
                    zone_total += m;
                    if in_first_14 {
                        zone_first14 += m;
                    }
                }
                if let (Some(p), Some(zp)) = (price_sqm, zone_mean_price(zone, *week)) {
                    price_sum += p;
                    zone_price_sum += zp;
                    price_n += 1;
                }
            }
        }

        let exit_week = unit.exit_date.map(Week::from_date);
        outcomes.push(UnitOutcome {
            unit: unit.id.clone(),
            zone: unit.zone_id.clone(),
            entry_week,
            exit_week,
            exit_quarter: exit_week.map(|w| w.quarter()),
            tom_days: unit.time_on_market_days(),
            priceref: s.priceref,
            onlint: (zone_total > 0.0).then(|| total_clicks as f64 / zone_total),
            onlint2: (zone_first14 > 0.0).then(|| first14_clicks as f64 / zone_first14),
            rel_price: (price_n > 0 && zone_price_sum > 0.0).then(|| price_sum / zone_price_sum),
            single_ad: max_ads <= 1 && unit.member_ad_ids.len() <= 1,
        });
    }

    rows.sort_by(|a, b| (&a.unit, a.week).cmp(&(&b.unit, b.week)));
    Ok(Panel { rows, outcomes })
}

/// Modal live-ad price over floor area; ties go to the earliest-seen ad.
fn price_sqm_of(cell: &WeekCell, unit: &HousingUnit) -> Option<f64> {
    let area = unit.chars.floor_area?;
    let mut counts: BTreeMap<u64, (u32, (Week, AdId), f64)> = BTreeMap::new();
    for (first, ad, price) in &cell.prices {
        let witness = (*first, ad.clone());
        counts
            .entry(price.to_bits())
            .and_modify(|(n, best, _)| {
                *n += 1;
                if witness < *best {
                    *best = witness.clone();
                }
            })
            .or_insert((1, witness, *price));
    }
    counts
        .into_values()
        .max_by(|(na, wa, _), (nb, wb, _)| na.cmp(nb).then_with(|| wb.cmp(wa)))
        .map(|(_, _, price)| price / area)
}

/// Zone-period aggregate of demand, prices, liquidity and supply
/// composition.
#[derive(Debug, Clone, Serialize)]
pub struct ZoneAggregate {
    pub zone: ZoneId,
    pub city: String,
    pub period: Quarter,
    /// Mean weekly clicks per visible ad.
    pub demand: f64,
    /// Mean asking price per square meter over unit-weeks.
    pub avprice: Option<f64>,
    /// Delistings over listings within the period.
    pub liquidity: f64,
    pub delistings: u64,
    pub listings: u64,
    /// log of the mean floor area of listings.
    pub floorarea: Option<f64>,
    /// Share of listings with at least two bathrooms.
    pub bath: f64,
    /// Share of listings with a private garden (top garden level).
    pub garden: f64,
    /// Share of listings with a terrace.
    pub terrace: f64,
}

/// Aggregates the panel per zone and quarter.
pub fn build_zone_aggregates(units: &[HousingUnit], panel: &Panel) -> Vec<ZoneAggregate> {
    let by_id: BTreeMap<&UnitId, &HousingUnit> = units.iter().map(|u| (&u.id, u)).collect();
    struct Acc<'a> {
        clicks: f64,
        ad_weeks: f64,
        price_sum: f64,
        price_n: u32,
        units: BTreeMap<&'a UnitId, &'a HousingUnit>,
    }
    let mut acc: BTreeMap<(&ZoneId, Quarter), Acc> = BTreeMap::new();
    for row in &panel.rows {
        let Some(zone) = &row.zone else { continue };
        let Some(unit) = by_id.get(&row.unit) else { continue };
        let a = acc.entry((zone, row.week.quarter())).or_insert_with(|| Acc {
            clicks: 0.0,
            ad_weeks: 0.0,
            price_sum: 0.0,
            price_n: 0,
            units: BTreeMap::new(),
        });
        a.clicks += row.clicks * 7.0 * f64::from(row.live_ads);
        a.ad_weeks += f64::from(row.live_ads);
        if let Some(p) = row.price_sqm {
            a.price_sum += p;
            a.price_n += 1;
        }
        a.units.insert(&row.unit, unit);
    }

    let mut exits: BTreeMap<(&ZoneId, Quarter), u64> = BTreeMap::new();
    for o in &panel.outcomes {
        if let (Some(zone), Some(q)) = (&o.zone, o.exit_quarter) {
            *exits.entry((zone, q)).or_insert(0) += 1;
        }
    }

    let mut out = Vec::new();
    for ((zone, period), a) in acc {
        let listings = a.units.len() as u64;
        let delistings = exits.get(&(zone, period)).copied().unwrap_or(0).min(listings);
        let with = |f: &dyn Fn(&HousingUnit) -> bool| {
            a.units.values().filter(|u| f(u)).count() as f64 / listings.max(1) as f64
        };
        let areas: Vec<f64> = a.units.values().filter_map(|u| u.chars.floor_area).collect();
        out.push(ZoneAggregate {
            zone: (*zone).clone(),
            city: zone.city().to_string(),
            period,
            demand: if a.ad_weeks > 0.0 { a.clicks / a.ad_weeks } else { 0.0 },
            avprice: (a.price_n > 0).then(|| a.price_sum / f64::from(a.price_n)),
            liquidity: delistings as f64 / listings.max(1) as f64,
            delistings,
            listings,
            floorarea: (!areas.is_empty())
                .then(|| (areas.iter().sum::<f64>() / areas.len() as f64).ln()),
            bath: with(&|u| u.chars.bathrooms.is_some_and(|b| b >= 2)),
            garden: with(&|u| u.chars.garden.is_some_and(|g| g >= 3)),
            terrace: with(&|u| u.chars.terrace == Some(true)),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Characteristics, GeoPoint};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn week(s: &str) -> Week {
        s.parse().unwrap()
    }

    fn unit(id: &str, ads: &[&str], area: Option<f64>) -> HousingUnit {
        HousingUnit {
            id: UnitId::from(id),
            member_ad_ids: ads.iter().map(|a| AdId::from(*a)).collect(),
            zone_id: Some(ZoneId::from("rome/z01")),
            location: GeoPoint::new(41.9, 12.49).unwrap(),
            asking_price: 200_000.0,
            chars: Characteristics { floor_area: area, ..Characteristics::default() },
            entry_date: "2016-01-04".parse().unwrap(),
            exit_date: None,
        }
    }

    fn row(ad: &str, w: &str, clicks: u64, price: f64) -> AdWeekRow {
        AdWeekRow { ad: AdId::from(ad), week: week(w), clicks, price }
    }

    #[test]
    fn single_ad_unit_never_flags_dupl() {
        let units = vec![unit("u1", &["a"], Some(100.0))];
        let history = vec![
            row("a", "2016-W01", 7, 2e5),
            row("a", "2016-W02", 14, 2e5),
            row("a", "2016-W03", 0, 2e5),
        ];
        let panel = build_panel(&units, &history).unwrap();
        assert_eq!(panel.rows.len(), 3);
        assert!(panel.rows.iter().all(|r| !r.dupl && !r.newdupl));
        assert_eq!(panel.rows[0].clicks, 1.0);
        assert_eq!(panel.rows[1].clicks, 2.0);
        assert!(panel.outcomes[0].single_ad);
        assert_eq!(panel.rows[0].price_sqm, Some(2000.0));
    }

    #[test]
    fn second_ad_sets_newdupl_once_and_dupl_after() {
        let units = vec![unit("u1", &["a", "b"], Some(100.0))];
        let mut history = vec![
            row("a", "2016-W01", 7, 2e5),
            row("a", "2016-W02", 7, 2e5),
            row("a", "2016-W03", 7, 2e5),
            row("a", "2016-W04", 7, 2e5),
            row("a", "2016-W05", 7, 2e5),
            row("a", "2016-W06", 7, 2e5),
        ];
        for w in ["2016-W05", "2016-W06"] {
            history.push(row("b", w, 7, 2e5));
        }
        let panel = build_panel(&units, &history).unwrap();
        let by_week: BTreeMap<Week, &PanelObservation> =
            panel.rows.iter().map(|r| (r.week, r)).collect();
        assert!(!by_week[&week("2016-W04")].dupl);
        assert!(by_week[&week("2016-W05")].newdupl, "NEWDUPL in week 5 only");
        assert!(by_week[&week("2016-W05")].dupl);
        assert!(!by_week[&week("2016-W06")].newdupl);
        assert!(by_week[&week("2016-W06")].dupl);
        assert!(!panel.outcomes[0].single_ad);
    }

    #[test]
    fn clicks_is_two_step_mean() {
        // Two ads with mean daily clicks 4 and 6: CLICKS = 5.
        let units = vec![unit("u1", &["a", "b"], Some(100.0))];
        let history = vec![row("a", "2016-W01", 28, 2e5), row("b", "2016-W01", 42, 2e5)];
        let panel = build_panel(&units, &history).unwrap();
        assert_abs_diff_eq!(panel.rows[0].clicks, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn priceref_only_on_downward_revision() {
        let units = vec![unit("u1", &["a"], Some(100.0)), unit("u2", &["b"], Some(100.0))];
        let history = vec![
            row("a", "2016-W01", 1, 200_000.0),
            row("a", "2016-W02", 1, 190_000.0),
            row("b", "2016-W01", 1, 200_000.0),
            row("b", "2016-W02", 1, 210_000.0), // upward: ignored
        ];
        let panel = build_panel(&units, &history).unwrap();
        assert!(panel.outcomes[0].priceref);
        assert!(!panel.outcomes[1].priceref);
    }

    #[test]
    fn onlint_is_relative_to_zone_average() {
        // Two units, same zone, same window: one gets 3x the clicks of the
        // other. Zone average per week = 2x, so ONLINT = 1.5 and 0.5.
        let units = vec![unit("u1", &["a"], Some(100.0)), unit("u2", &["b"], Some(100.0))];
        let history = vec![
            row("a", "2016-W01", 30, 2e5),
            row("a", "2016-W02", 30, 2e5),
            row("b", "2016-W01", 10, 2e5),
            row("b", "2016-W02", 10, 2e5),
        ];
        let panel = build_panel(&units, &history).unwrap();
        assert_abs_diff_eq!(panel.outcomes[0].onlint.unwrap(), 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(panel.outcomes[1].onlint.unwrap(), 0.5, epsilon = 1e-12);
        // Both weeks fall in the first 14 days here.
        assert_abs_diff_eq!(panel.outcomes[0].onlint2.unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn zone_aggregates_bounded_and_counted() {
        let mut u1 = unit("u1", &["a"], Some(80.0));
        u1.exit_date = Some("2016-02-01".parse().unwrap());
        u1.chars.bathrooms = Some(2);
        let mut u2 = unit("u2", &["b"], Some(120.0));
        u2.chars.terrace = Some(true);
        let units = vec![u1, u2];
        let history = vec![
            row("a", "2016-W01", 10, 2e5),
            row("a", "2016-W04", 10, 2e5),
            row("b", "2016-W01", 20, 2e5),
            row("b", "2016-W02", 20, 2e5),
        ];
        let panel = build_panel(&units, &history).unwrap();
        let aggs = build_zone_aggregates(&units, &panel);
        assert_eq!(aggs.len(), 1);
        let a = &aggs[0];
        assert_eq!(a.listings, 2);
        assert_eq!(a.delistings, 1);
        assert!((0.0..=1.0).contains(&a.liquidity));
        assert!(a.demand >= 0.0);
        assert_abs_diff_eq!(a.bath, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.terrace, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(a.floorarea.unwrap(), 100f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn unit_without_history_is_an_error() {
        let units = vec![unit("u1", &["ghost"], Some(100.0))];
        assert!(matches!(
            build_panel(&units, &[]),
            Err(PanelError::NoHistory(id)) if id == UnitId::from("u1")
        ));
    }
}
