//! Validation statistics against external reference series: delistings vs
//! recorded sales, asking prices vs official zone values, the implied
//! discount on asking prices, and the time-on-market distribution.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::ingest::{mean_zone_price, ExternalSeries, SeriesKind};
use crate::model::HousingUnit;
use crate::time::Quarter;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TomSummary {
    pub n: usize,
    pub mean_days: f64,
    pub median_days: f64,
    pub p25_days: f64,
    pub p75_days: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Pearson correlation of quarterly city delistings vs recorded sales.
    pub delistings_sales_corr: Option<f64>,
    pub delistings_sales_points: usize,
    /// Pearson correlation of zone mean asking price per square meter vs
    /// the official zone mean value.
    pub price_corr: Option<f64>,
    pub price_points: usize,
    /// Mean over zones of 1 - official value / asking price per sqm.
    pub mean_discount: Option<f64>,
    pub tom: Option<TomSummary>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValidationError {
    #[error("no overlap between units and external series")]
    NoOverlap,
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Compares deduplicated units against the external series.
pub fn validation_stats(
    units: &[HousingUnit],
    external: &[ExternalSeries],
) -> Result<ValidationReport, ValidationError> {
    // Quarterly delistings per city.
    let mut delistings: BTreeMap<(String, Quarter), f64> = BTreeMap::new();
    for unit in units {
        if let (Some(zone), Some(exit)) = (&unit.zone_id, unit.exit_date) {
            *delistings
                .entry((zone.city().to_string(), Quarter::from_date(exit)))
                .or_insert(0.0) += 1.0;
        }
    }
    let mut sales_pairs: Vec<(f64, f64)> = Vec::new();
    for row in external.iter().filter(|r| r.kind == SeriesKind::CitySales) {
        if let Ok(q) = row.period.parse::<Quarter>() {
            if let Some(d) = delistings.get(&(row.key.clone(), q)) {
                sales_pairs.push((*d, row.value1));
            }
        }
    }
    let (dx, dy): (Vec<f64>, Vec<f64>) = sales_pairs.iter().copied().unzip();
    let delistings_sales_corr = pearson(&dx, &dy);

    // Zone mean asking price per square meter vs official mean value.
    let mut zone_price: BTreeMap<String, (f64, u32)> = BTreeMap::new();
    for unit in units {
        if let (Some(zone), Some(area)) = (&unit.zone_id, unit.chars.floor_area) {
            if area > 0.0 {
                let e = zone_price.entry(zone.to_string()).or_insert((0.0, 0));
                e.0 += unit.asking_price / area;
                e.1 += 1;
            }
        }
    }
    let mut asking = Vec::new();
    let mut official = Vec::new();
    let mut discounts = Vec::new();
    for row in external.iter().filter(|r| r.kind == SeriesKind::ZonePriceBounds) {
        let (Some((sum, n)), Some(high)) = (zone_price.get(&row.key), row.value2) else {
            continue;
        };
        let Ok(mean_value) = mean_zone_price(row.value1, high) else { continue };
        let mean_asking = sum / f64::from(*n);
        asking.push(mean_asking);
        official.push(mean_value);
        discounts.push(1.0 - mean_value / mean_asking);
    }
    let price_corr = pearson(&asking, &official);
    let mean_discount =
        (!discounts.is_empty()).then(|| discounts.iter().sum::<f64>() / discounts.len() as f64);

    let mut tom_days: Vec<f64> =
        units.iter().filter_map(|u| u.time_on_market_days()).map(|d| d as f64).collect();
    tom_days.sort_by(f64::total_cmp);
    let tom = (!tom_days.is_empty()).then(|| TomSummary {
        n: tom_days.len(),
        mean_days: tom_days.iter().sum::<f64>() / tom_days.len() as f64,
        median_days: percentile(&tom_days, 0.5),
        p25_days: percentile(&tom_days, 0.25),
        p75_days: percentile(&tom_days, 0.75),
    });

    if sales_pairs.is_empty() && asking.is_empty() && tom.is_none() {
        return Err(ValidationError::NoOverlap);
    }

    Ok(ValidationReport {
        delistings_sales_corr,
        delistings_sales_points: dx.len(),
        price_corr,
        price_points: asking.len(),
        mean_discount,
        tom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdId, Characteristics, GeoPoint, UnitId, ZoneId};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeSet;

    fn unit(zone: &str, exit: Option<&str>, price: f64, area: f64) -> HousingUnit {
        HousingUnit {
            id: UnitId::from(format!("u{price}{area}").as_str()),
            member_ad_ids: BTreeSet::from([AdId::from("a")]),
            zone_id: Some(ZoneId::from(zone)),
            location: GeoPoint::new(43.0, 11.0).unwrap(),
            asking_price: price,
            chars: Characteristics { floor_area: Some(area), ..Characteristics::default() },
            entry_date: "2016-01-04".parse().unwrap(),
            exit_date: exit.map(|e| e.parse().unwrap()),
        }
    }

    #[test]
    fn affine_sales_series_correlates_perfectly() {
        // Delistings per quarter: Q1=2, Q2=1, Q3=3; sales = 0.6x exactly.
        let mut units = vec![
            unit("a/z1", Some("2016-01-20"), 2e5, 100.0),
            unit("a/z1", Some("2016-02-20"), 3e5, 100.0),
            unit("a/z1", Some("2016-04-20"), 4e5, 100.0),
            unit("a/z1", Some("2016-07-20"), 5e5, 100.0),
            unit("a/z1", Some("2016-08-20"), 6e5, 100.0),
            unit("a/z1", Some("2016-09-20"), 7e5, 100.0),
        ];
        units[0].id = UnitId::from("u0");
        let external = vec![
            ExternalSeries {
                kind: SeriesKind::CitySales,
                period: "2016-Q1".into(),
                key: "a".into(),
                value1: 1.2,
                value2: None,
            },
            ExternalSeries {
                kind: SeriesKind::CitySales,
                period: "2016-Q2".into(),
                key: "a".into(),
                value1: 0.6,
                value2: None,
            },
            ExternalSeries {
                kind: SeriesKind::CitySales,
                period: "2016-Q3".into(),
                key: "a".into(),
                value1: 1.8,
                value2: None,
            },
        ];
        let report = validation_stats(&units, &external).unwrap();
        assert_abs_diff_eq!(report.delistings_sales_corr.unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(report.delistings_sales_points, 3);
    }

    #[test]
    fn discount_against_official_values() {
        // Asking exactly 1.12x the official mean: discount 1 - 1/1.12.
        let mut units = Vec::new();
        for (i, zone) in ["a/z1", "a/z2", "a/z3"].iter().enumerate() {
            let official = 2000.0 + 300.0 * i as f64;
            units.push(unit(zone, None, official * 1.12 * 100.0, 100.0));
        }
        let external: Vec<ExternalSeries> = ["a/z1", "a/z2", "a/z3"]
            .iter()
            .enumerate()
            .map(|(i, z)| {
                let mid = 2000.0 + 300.0 * i as f64;
                ExternalSeries {
                    kind: SeriesKind::ZonePriceBounds,
                    period: "all".into(),
                    key: z.to_string(),
                    value1: mid * 0.8,
                    value2: Some(mid * 1.2),
                }
            })
            .collect();
        let report = validation_stats(&units, &external).unwrap();
        assert_abs_diff_eq!(report.mean_discount.unwrap(), 1.0 - 1.0 / 1.12, epsilon = 1e-10);
        assert_abs_diff_eq!(report.price_corr.unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tom_summary_quartiles() {
        let units = vec![
            unit("a/z1", Some("2016-01-11"), 1e5, 50.0), // 7 days
            unit("a/z1", Some("2016-01-18"), 2e5, 50.0), // 14
            unit("a/z1", Some("2016-02-01"), 3e5, 50.0), // 28
            unit("a/z1", Some("2016-03-01"), 4e5, 50.0), // 57
        ];
        let report = validation_stats(&units, &[]).unwrap();
        let tom = report.tom.unwrap();
        assert_eq!(tom.n, 4);
        assert_abs_diff_eq!(tom.mean_days, (7.0 + 14.0 + 28.0 + 57.0) / 4.0, epsilon = 1e-12);
    }

    #[test]
    fn pearson_basics() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None); // too few
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 2.0 * v).collect();
        assert_abs_diff_eq!(pearson(&x, &y).unwrap(), -1.0, epsilon = 1e-12);
        assert_eq!(pearson(&x, &[1.0, 1.0, 1.0, 1.0]), None); // zero variance
    }
}
