//! Time-dummy hedonic price index and the asking/sale discount identity.
//!
//! The index comes from one pooled regression of log price per square meter
//! on characteristics, zone effects and period dummies; movements in the
//! period dummies are price changes net of composition, so a shift toward
//! bigger or better homes moves the raw mean but not the index.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::indicators::regress::{fit_ols_fe, FeFactor, RegressError};
use crate::model::{HousingUnit, ZoneId};
use crate::time::Quarter;

/// One observation entering the hedonic regression.
#[derive(Debug, Clone)]
pub struct HedonicObs {
    pub price: f64,
    pub floor_area: f64,
    pub zone: ZoneId,
    pub period: Quarter,
    pub bathrooms: Option<f64>,
    pub maintenance: Option<f64>,
    pub elevator: Option<f64>,
    pub floor: Option<f64>,
    pub rooms: Option<f64>,
}

impl HedonicObs {
    pub fn from_unit(unit: &HousingUnit, period: Quarter) -> Option<HedonicObs> {
        Some(HedonicObs {
            price: unit.asking_price,
            floor_area: unit.chars.floor_area?,
            zone: unit.zone_id.clone()?,
            period,
            bathrooms: unit.chars.bathrooms.map(f64::from),
            maintenance: unit.chars.maintenance.map(f64::from),
            elevator: unit.chars.elevator.map(f64::from),
            floor: unit.chars.floor.map(f64::from),
            rooms: unit.chars.rooms.map(f64::from),
        })
    }
}

/// A quality-adjusted price index, base period = 100.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceIndex {
    pub base: Quarter,
    pub levels: Vec<(Quarter, f64)>,
}

impl PriceIndex {
    pub fn level(&self, period: Quarter) -> Option<f64> {
        self.levels.iter().find(|(p, _)| *p == period).map(|(_, v)| *v)
    }

    /// Log levels, for use as a regressor.
    pub fn log_levels(&self) -> Vec<(Quarter, f64)> {
        self.levels.iter().map(|(p, v)| (*p, (v / 100.0).ln())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HedonicError {
    #[error("need at least {need} observations per period, {period} has {got}")]
    ThinPeriod { period: Quarter, got: usize, need: usize },
    #[error("need observations in at least two periods")]
    SinglePeriod,
    #[error(transparent)]
    Regress(#[from] RegressError),
}

fn median_of(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

/// Fits the time-dummy hedonic regression and returns the index
/// (100 * exp(delta_t), base period first, fixed at 100).
pub fn hedonic_index(obs: &[HedonicObs], min_per_period: usize) -> Result<PriceIndex, HedonicError> {
    let mut periods: Vec<Quarter> = obs.iter().map(|o| o.period).collect();
    periods.sort();
    periods.dedup();
    if periods.len() < 2 {
        return Err(HedonicError::SinglePeriod);
    }
    for p in &periods {
        let got = obs.iter().filter(|o| o.period == *p).count();
        if got < min_per_period {
            return Err(HedonicError::ThinPeriod { period: *p, got, need: min_per_period });
        }
    }

    let y: Vec<f64> = obs.iter().map(|o| (o.price / o.floor_area).ln()).collect();

    let mut x: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    // Period dummies, base excluded; their coefficients are the index.
    for p in periods.iter().skip(1) {
        names.push(format!("period_{p}"));
        x.push(obs.iter().map(|o| f64::from(o.period == *p)).collect());
    }
    let characteristic: [(&str, fn(&HedonicObs) -> Option<f64>); 6] = [
        ("floor_area", |o| Some(o.floor_area)),
        ("bathrooms", |o| o.bathrooms),
        ("maintenance", |o| o.maintenance),
        ("elevator", |o| o.elevator),
        ("floor", |o| o.floor),
        ("rooms", |o| o.rooms),
    ];
    for (name, get) in characteristic {
        let known: Vec<f64> = obs.iter().filter_map(get).collect();
        if known.is_empty() || known.iter().all(|v| *v == known[0]) {
            continue; // constant or fully missing: nothing to adjust for
        }
        let fill = median_of(known);
        names.push(name.to_string());
        x.push(obs.iter().map(|o| get(o).unwrap_or(fill)).collect());
    }

    let mut zones: Vec<&ZoneId> = obs.iter().map(|o| &o.zone).collect();
    let mut zs = zones.clone();
    zs.sort();
    zs.dedup();
    let zindex: BTreeMap<&ZoneId, usize> =
        zs.into_iter().enumerate().map(|(i, z)| (z, i)).collect();
    let factor: FeFactor = zones.drain(..).map(|z| zindex[z]).collect();

    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    let fit = fit_ols_fe(&y, &x, &name_refs, &[factor])?;

    let mut levels = vec![(periods[0], 100.0)];
    for (k, p) in periods.iter().enumerate().skip(1) {
        levels.push((*p, 100.0 * fit.coefficients[k - 1].exp()));
    }
    Ok(PriceIndex { base: periods[0], levels })
}

/// How asking and sale prices relate through the discount.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DiscountConvention {
    /// Buyers obtain a discount off the asking price:
    /// sale = (1 - d) * asking.
    #[default]
    BuyerDiscountOffAsking,
    /// The mirrored algebra: asking = (1 - d) * sale.
    AskingBelowSale,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscountError {
    #[error("index paths must have equal length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("index values must be positive, got {0}")]
    NonPositive(f64),
    #[error("initial discount {0} must lie in [0, 1)")]
    BadInitial(f64),
}

fn check_paths(ask: &[f64], sale: &[f64], d0: f64) -> Result<(), DiscountError> {
    if ask.len() != sale.len() {
        return Err(DiscountError::LengthMismatch(ask.len(), sale.len()));
    }
    for v in ask.iter().chain(sale) {
        if !(*v > 0.0) {
            return Err(DiscountError::NonPositive(*v));
        }
    }
    if !(0.0..1.0).contains(&d0) {
        return Err(DiscountError::BadInitial(d0));
    }
    Ok(())
}

/// The discount path implied by an asking-price index, a sale-price index,
/// and the initial discount. Only relative movements of the two paths
/// matter.
pub fn implied_discount(
    ask: &[f64],
    sale: &[f64],
    d0: f64,
    convention: DiscountConvention,
) -> Result<Vec<f64>, DiscountError> {
    check_paths(ask, sale, d0)?;
    if ask.is_empty() {
        return Ok(Vec::new());
    }
    let (a0, s0) = (ask[0], sale[0]);
    Ok(ask
        .iter()
        .zip(sale)
        .map(|(a, s)| {
            let ratio = match convention {
                DiscountConvention::BuyerDiscountOffAsking => (s / s0) / (a / a0),
                DiscountConvention::AskingBelowSale => (a / a0) / (s / s0),
            };
            1.0 - (1.0 - d0) * ratio
        })
        .collect())
}

/// Inverse of [`implied_discount`]: reconstructs the sale-price path from
/// the asking path and the discount path.
pub fn implied_sale_path(
    ask: &[f64],
    discount: &[f64],
    sale0: f64,
    convention: DiscountConvention,
) -> Result<Vec<f64>, DiscountError> {
    if ask.len() != discount.len() {
        return Err(DiscountError::LengthMismatch(ask.len(), discount.len()));
    }
    if ask.is_empty() {
        return Ok(Vec::new());
    }
    if !(sale0 > 0.0) {
        return Err(DiscountError::NonPositive(sale0));
    }
    let a0 = ask[0];
    if !(a0 > 0.0) {
        return Err(DiscountError::NonPositive(a0));
    }
    let d0 = discount[0];
    Ok(ask
        .iter()
        .zip(discount)
        .map(|(a, d)| match convention {
            DiscountConvention::BuyerDiscountOffAsking => sale0 * (a / a0) * (1.0 - d) / (1.0 - d0),
            DiscountConvention::AskingBelowSale => sale0 * (a / a0) * (1.0 - d0) / (1.0 - d),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn obs(price: f64, area: f64, zone: &str, period: &str, bathrooms: f64) -> HedonicObs {
        HedonicObs {
            price,
            floor_area: area,
            zone: ZoneId::from(zone),
            period: period.parse().unwrap(),
            bathrooms: Some(bathrooms),
            maintenance: None,
            elevator: None,
            floor: None,
            rooms: None,
        }
    }

    fn two_period_sample() -> Vec<HedonicObs> {
        let mut v = Vec::new();
        for i in 0..40 {
            let area = 60.0 + (i % 8) as f64 * 12.0;
            let bath = 1.0 + (i % 2) as f64;
            let zone = format!("pisa/z{:02}", i % 3);
            let ppsm = 2200.0 * (1.0 + 0.06 * bath) * (1.0 + 0.002 * (i % 5) as f64);
            v.push(obs(ppsm * area, area, &zone, "2016-Q1", bath));
        }
        v
    }

    #[test]
    fn doubling_all_prices_doubles_the_index() {
        let mut sample = two_period_sample();
        let doubled: Vec<HedonicObs> = sample
            .iter()
            .map(|o| {
                let mut o2 = o.clone();
                o2.price *= 2.0;
                o2.period = "2016-Q2".parse().unwrap();
                o2
            })
            .collect();
        sample.extend(doubled);
        let index = hedonic_index(&sample, 10).unwrap();
        assert_eq!(index.level("2016-Q1".parse().unwrap()), Some(100.0));
        assert_abs_diff_eq!(
            index.level("2016-Q2".parse().unwrap()).unwrap(),
            200.0,
            epsilon = 0.1
        );
    }

    #[test]
    fn base_period_is_exactly_100() {
        let mut sample = two_period_sample();
        let mut moved = two_period_sample();
        for o in &mut moved {
            o.period = "2016-Q2".parse().unwrap();
            o.price *= 1.07;
        }
        sample.extend(moved);
        let index = hedonic_index(&sample, 10).unwrap();
        assert_eq!(index.levels[0].1, 100.0);
        assert_eq!(index.base, "2016-Q1".parse().unwrap());
    }

    #[test]
    fn composition_shift_leaves_index_flat_while_raw_mean_moves() {
        // Period 2 lists much larger homes at unchanged per-quality
        // prices: log(price/m2) depends only on bathrooms and zone.
        let mut sample = Vec::new();
        for (period, base_area) in [("2016-Q1", 50.0), ("2016-Q2", 120.0)] {
            for i in 0..60 {
                let area = base_area + (i % 6) as f64 * 8.0;
                let bath = 1.0 + (i % 2) as f64;
                let zone = format!("pisa/z{:02}", i % 3);
                let ppsm = 2000.0 * (1.0 + 0.08 * bath);
                sample.push(obs(ppsm * area, area, &zone, period, bath));
            }
        }
        let index = hedonic_index(&sample, 10).unwrap();
        let q2 = index.level("2016-Q2".parse().unwrap()).unwrap();
        assert_abs_diff_eq!(q2, 100.0, epsilon = 1.0);

        // Raw mean price moved by the area ratio (oracle on the sample).
        let mean = |p: &str| {
            let sel: Vec<&HedonicObs> =
                sample.iter().filter(|o| o.period == p.parse().unwrap()).collect();
            sel.iter().map(|o| o.price).sum::<f64>() / sel.len() as f64
        };
        let raw_ratio = mean("2016-Q2") / mean("2016-Q1");
        assert!(raw_ratio > 1.8, "raw mean should jump with composition, got {raw_ratio}");
    }

    #[test]
    fn index_invariant_to_zone_relabeling() {
        let mut sample = two_period_sample();
        let mut moved = two_period_sample();
        for o in &mut moved {
            o.period = "2016-Q2".parse().unwrap();
            o.price *= 1.12;
        }
        sample.extend(moved);
        let a = hedonic_index(&sample, 10).unwrap();
        let mut relabeled = sample.clone();
        for o in &mut relabeled {
            o.zone = ZoneId::from(format!("renamed/{}", o.zone).as_str());
        }
        let b = hedonic_index(&relabeled, 10).unwrap();
        for ((pa, va), (pb, vb)) in a.levels.iter().zip(&b.levels) {
            assert_eq!(pa, pb);
            assert_abs_diff_eq!(va, vb, epsilon = 1e-9);
        }
    }

    #[test]
    fn thin_period_rejected() {
        let sample = two_period_sample();
        assert!(matches!(hedonic_index(&sample, 10), Err(HedonicError::SinglePeriod)));
        let mut with_thin = two_period_sample();
        with_thin.push(obs(300_000.0, 100.0, "pisa/z00", "2016-Q2", 1.0));
        assert!(matches!(hedonic_index(&with_thin, 10), Err(HedonicError::ThinPeriod { .. })));
    }

    #[test]
    fn identical_paths_keep_the_initial_discount() {
        let ask = [100.0, 95.0, 107.0];
        let d = implied_discount(&ask, &ask, 0.12, DiscountConvention::default()).unwrap();
        for v in d {
            assert_abs_diff_eq!(v, 0.12, epsilon = 1e-12);
        }
        // Zero initial discount with equal paths stays zero.
        let d = implied_discount(&ask, &ask, 0.0, DiscountConvention::default()).unwrap();
        for v in d {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn survey_episode_magnitude() {
        // Asking prices fall 9.8%, sale prices fall 6.0%, initial discount
        // 12%: the implied discount falls by about 3.7 percentage points.
        let ask = [100.0, 90.2];
        let sale = [100.0, 94.0];
        let d = implied_discount(&ask, &sale, 0.12, DiscountConvention::BuyerDiscountOffAsking)
            .unwrap();
        let change_pp = (d[1] - d[0]) * 100.0;
        assert_abs_diff_eq!(change_pp, -3.71, epsilon = 0.05);
        // The mirrored convention moves the other way.
        let d2 =
            implied_discount(&ask, &sale, 0.12, DiscountConvention::AskingBelowSale).unwrap();
        assert!(d2[1] > d2[0]);
    }

    #[test]
    fn discount_roundtrips_sale_path() {
        let ask = [100.0, 96.0, 102.0, 91.0];
        let sale = [100.0, 98.5, 99.0, 95.5];
        for convention in
            [DiscountConvention::BuyerDiscountOffAsking, DiscountConvention::AskingBelowSale]
        {
            let d = implied_discount(&ask, &sale, 0.12, convention).unwrap();
            let back = implied_sale_path(&ask, &d, sale[0], convention).unwrap();
            for (a, b) in sale.iter().zip(&back) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn discount_input_validation() {
        assert!(implied_discount(&[1.0], &[1.0, 2.0], 0.1, Default::default()).is_err());
        assert!(implied_discount(&[1.0, 0.0], &[1.0, 1.0], 0.1, Default::default()).is_err());
        assert!(implied_discount(&[1.0, 1.0], &[1.0, 1.0], 1.0, Default::default()).is_err());
    }
}
