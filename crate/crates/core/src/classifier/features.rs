//! Comparison vector for a candidate pair.
//!
//! Continuous fields contribute both a relative and an absolute difference,
//! geolocation contributes the distance in meters, ordered traits the
//! absolute level difference, and binary/unordered traits a match dummy
//! (1 = both sides report the same value). Any component is missing when an
//! underlying field is missing on either side; the tree handles missing
//! values natively, so "both missing" is distinguishable from "both no".
//!
//! The text distance depends on who posted the ads: normalized Levenshtein
//! for the same agency (near-verbatim reposts), cosine distance between
//! description embeddings otherwise (different agencies describe the same
//! dwelling in different words).

use serde::{Deserialize, Serialize};

use crate::model::{Ad, Characteristics, GeoPoint, HousingUnit, OrderedTrait};
use crate::normalize::{cosine_distance, geo_distance_m, levenshtein_norm, EmbeddingVector};

/// Every feature the pair classifier can split on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureId {
    PriceRelDiff,
    PriceAbsDiff,
    FloorAreaRelDiff,
    FloorAreaAbsDiff,
    FloorDiff,
    GeoDistanceM,
    MaintenanceDiff,
    EnergyClassDiff,
    GarageDiff,
    GardenDiff,
    KitchenDiff,
    ElevatorMatch,
    BalconyMatch,
    TerraceMatch,
    JanitorMatch,
    UtilityRoomMatch,
    AirConditioningMatch,
    BasementMatch,
    HeatingMatch,
    PropertyTypeMatch,
    BathroomsDiff,
    RoomsDiff,
    TextDistance,
}

pub const FEATURE_COUNT: usize = 23;

pub const ALL_FEATURES: [FeatureId; FEATURE_COUNT] = [
    FeatureId::PriceRelDiff,
    FeatureId::PriceAbsDiff,
    FeatureId::FloorAreaRelDiff,
    FeatureId::FloorAreaAbsDiff,
    FeatureId::FloorDiff,
    FeatureId::GeoDistanceM,
    FeatureId::MaintenanceDiff,
    FeatureId::EnergyClassDiff,
    FeatureId::GarageDiff,
    FeatureId::GardenDiff,
    FeatureId::KitchenDiff,
    FeatureId::ElevatorMatch,
    FeatureId::BalconyMatch,
    FeatureId::TerraceMatch,
    FeatureId::JanitorMatch,
    FeatureId::UtilityRoomMatch,
    FeatureId::AirConditioningMatch,
    FeatureId::BasementMatch,
    FeatureId::HeatingMatch,
    FeatureId::PropertyTypeMatch,
    FeatureId::BathroomsDiff,
    FeatureId::RoomsDiff,
    FeatureId::TextDistance,
];

impl FeatureId {
    pub fn index(&self) -> usize {
        ALL_FEATURES.iter().position(|f| f == self).unwrap()
    }
}

/// The comparison vector plus the same-agency routing flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    pub values: Vec<Option<f64>>,
    pub same_agency: bool,
}

impl PairFeatures {
    pub fn get(&self, f: FeatureId) -> Option<f64> {
        self.values[f.index()]
    }

    pub fn set(&mut self, f: FeatureId, v: Option<f64>) {
        self.values[f.index()] = v;
    }

    pub fn empty(same_agency: bool) -> Self {
        PairFeatures { values: vec![None; FEATURE_COUNT], same_agency }
    }
}

/// One side of a comparison: an ad, or a housing unit treated as a
/// pseudo-ad (units carry no description).
#[derive(Debug, Clone)]
pub struct PairSide<'a> {
    pub price: f64,
    pub location: GeoPoint,
    pub chars: &'a Characteristics,
    pub description: Option<&'a str>,
    pub embedding: Option<&'a EmbeddingVector>,
}

impl<'a> PairSide<'a> {
    pub fn from_ad(ad: &'a Ad, embedding: Option<&'a EmbeddingVector>) -> Self {
        PairSide {
            price: ad.asking_price,
            location: ad.location,
            chars: &ad.chars,
            description: ad.description.as_deref(),
            embedding,
        }
    }

    pub fn from_unit(unit: &'a HousingUnit) -> Self {
        PairSide {
            price: unit.asking_price,
            location: unit.location,
            chars: &unit.chars,
            description: None,
            embedding: None,
        }
    }
}

fn rel_abs(a: f64, b: f64) -> (f64, f64) {
    let abs = (a - b).abs();
    (abs / a.min(b), abs)
}

fn match_dummy(a: Option<bool>, b: Option<bool>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(f64::from(x == y)),
        _ => None,
    }
}

fn category_match(a: Option<&str>, b: Option<&str>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(f64::from(x.eq_ignore_ascii_case(y))),
        _ => None,
    }
}

/// Builds the comparison vector. Symmetric in argument order: every
/// difference is absolute, including the floor difference.
pub fn extract_features(a: &PairSide, b: &PairSide, same_agency: bool) -> PairFeatures {
    let mut f = PairFeatures::empty(same_agency);

    let (price_rel, price_abs) = rel_abs(a.price, b.price);
    f.set(FeatureId::PriceRelDiff, Some(price_rel));
    f.set(FeatureId::PriceAbsDiff, Some(price_abs));

    if let (Some(x), Some(y)) = (a.chars.floor_area, b.chars.floor_area) {
        let (rel, abs) = rel_abs(x, y);
        f.set(FeatureId::FloorAreaRelDiff, Some(rel));
        f.set(FeatureId::FloorAreaAbsDiff, Some(abs));
    }
    if let (Some(x), Some(y)) = (a.chars.floor, b.chars.floor) {
        f.set(FeatureId::FloorDiff, Some(f64::from((x - y).abs())));
    }
    f.set(FeatureId::GeoDistanceM, Some(geo_distance_m(a.location, b.location)));

    let ordered = [
        (OrderedTrait::Maintenance, FeatureId::MaintenanceDiff),
        (OrderedTrait::EnergyClass, FeatureId::EnergyClassDiff),
        (OrderedTrait::Garage, FeatureId::GarageDiff),
        (OrderedTrait::Garden, FeatureId::GardenDiff),
        (OrderedTrait::Kitchen, FeatureId::KitchenDiff),
    ];
    for (t, feat) in ordered {
        if let (Some(x), Some(y)) = (a.chars.ordered_level(t), b.chars.ordered_level(t)) {
            f.set(feat, Some(f64::from(x.abs_diff(y))));
        }
    }

    let binary = [
        (FeatureId::ElevatorMatch, "elevator"),
        (FeatureId::BalconyMatch, "balcony"),
        (FeatureId::TerraceMatch, "terrace"),
        (FeatureId::JanitorMatch, "janitor"),
        (FeatureId::UtilityRoomMatch, "utility_room"),
        (FeatureId::AirConditioningMatch, "air_conditioning"),
        (FeatureId::BasementMatch, "basement"),
    ];
    for (feat, name) in binary {
        f.set(feat, match_dummy(a.chars.binary(name), b.chars.binary(name)));
    }

    f.set(
        FeatureId::HeatingMatch,
        category_match(a.chars.heating.as_deref(), b.chars.heating.as_deref()),
    );
    f.set(
        FeatureId::PropertyTypeMatch,
        category_match(a.chars.property_type.as_deref(), b.chars.property_type.as_deref()),
    );

    if let (Some(x), Some(y)) = (a.chars.bathrooms, b.chars.bathrooms) {
        f.set(FeatureId::BathroomsDiff, Some(f64::from(x.abs_diff(y))));
    }
    if let (Some(x), Some(y)) = (a.chars.rooms, b.chars.rooms) {
        f.set(FeatureId::RoomsDiff, Some(f64::from(x.abs_diff(y))));
    }

    let text = match (a.description, b.description) {
        (Some(da), Some(db)) => {
            if same_agency {
                Some(levenshtein_norm(da, db))
            } else {
                match (a.embedding, b.embedding) {
                    (Some(ea), Some(eb)) => cosine_distance(ea, eb).ok(),
                    _ => None,
                }
            }
        }
        _ => None,
    };
    f.set(FeatureId::TextDistance, text);

    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::{embed_description, EmbeddingProvider};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn chars() -> Characteristics {
        Characteristics {
            floor_area: Some(85.0),
            floor: Some(3),
            rooms: Some(3),
            bathrooms: Some(2),
            maintenance: Some(2),
            energy_class: Some(4),
            garage: Some(1),
            garden: Some(2),
            kitchen: Some(3),
            elevator: Some(true),
            balcony: Some(false),
            terrace: Some(true),
            janitor: Some(false),
            utility_room: Some(true),
            air_conditioning: Some(false),
            basement: Some(true),
            heating: Some("autonomous".into()),
            property_type: Some("apartment".into()),
        }
    }

    #[test]
    fn identical_same_agency_pair_is_all_zero_diffs_and_ones() {
        let c = chars();
        let p = GeoPoint::new(41.9, 12.49).unwrap();
        let side = PairSide {
            price: 250_000.0,
            location: p,
            chars: &c,
            description: Some("trilocale luminoso"),
            embedding: None,
        };
        let f = extract_features(&side, &side, true);
        assert_eq!(f.get(FeatureId::PriceRelDiff), Some(0.0));
        assert_eq!(f.get(FeatureId::PriceAbsDiff), Some(0.0));
        assert_eq!(f.get(FeatureId::GeoDistanceM), Some(0.0));
        assert_eq!(f.get(FeatureId::MaintenanceDiff), Some(0.0));
        for feat in [
            FeatureId::ElevatorMatch,
            FeatureId::BalconyMatch,
            FeatureId::TerraceMatch,
            FeatureId::JanitorMatch,
            FeatureId::UtilityRoomMatch,
            FeatureId::AirConditioningMatch,
            FeatureId::BasementMatch,
            FeatureId::HeatingMatch,
            FeatureId::PropertyTypeMatch,
        ] {
            assert_eq!(f.get(feat), Some(1.0), "{feat:?}");
        }
        assert_eq!(f.get(FeatureId::TextDistance), Some(0.0));
        assert!(f.same_agency);
    }

    #[test]
    fn price_rel_uses_the_lower_price() {
        let c = chars();
        let p = GeoPoint::new(41.9, 12.49).unwrap();
        let a = PairSide { price: 100_000.0, location: p, chars: &c, description: None, embedding: None };
        let b = PairSide { price: 120_000.0, location: p, chars: &c, description: None, embedding: None };
        let f = extract_features(&a, &b, false);
        assert_abs_diff_eq!(f.get(FeatureId::PriceRelDiff).unwrap(), 0.20, epsilon = 1e-12);
        assert_eq!(f.get(FeatureId::PriceAbsDiff), Some(20_000.0));
        // No descriptions: text distance missing.
        assert_eq!(f.get(FeatureId::TextDistance), None);
    }

    #[test]
    fn ordered_diff_and_missing_propagation() {
        let mut ca = chars();
        ca.maintenance = Some(2);
        ca.bathrooms = None;
        let mut cb = chars();
        cb.maintenance = Some(4);
        let p = GeoPoint::new(41.9, 12.49).unwrap();
        let a = PairSide { price: 1e5, location: p, chars: &ca, description: None, embedding: None };
        let b = PairSide { price: 1e5, location: p, chars: &cb, description: None, embedding: None };
        let f = extract_features(&a, &b, true);
        assert_eq!(f.get(FeatureId::MaintenanceDiff), Some(2.0));
        assert_eq!(f.get(FeatureId::BathroomsDiff), None);
    }

    #[test]
    fn both_no_differs_from_both_missing() {
        let mut ca = chars();
        let mut cb = chars();
        ca.elevator = Some(false);
        cb.elevator = Some(false);
        ca.balcony = None;
        cb.balcony = None;
        let p = GeoPoint::new(41.9, 12.49).unwrap();
        let a = PairSide { price: 1e5, location: p, chars: &ca, description: None, embedding: None };
        let b = PairSide { price: 1e5, location: p, chars: &cb, description: None, embedding: None };
        let f = extract_features(&a, &b, true);
        assert_eq!(f.get(FeatureId::ElevatorMatch), Some(1.0));
        assert_eq!(f.get(FeatureId::BalconyMatch), None);
    }

    #[test]
    fn cross_agency_text_uses_embeddings() {
        let c = chars();
        let p = GeoPoint::new(41.9, 12.49).unwrap();
        let provider = EmbeddingProvider::default();
        let ea = embed_description("ampio bilocale ristrutturato", &provider);
        let eb = embed_description("bilocale ampio ristrutturato di recente", &provider);
        let a = PairSide {
            price: 1e5,
            location: p,
            chars: &c,
            description: Some("ampio bilocale ristrutturato"),
            embedding: Some(&ea),
        };
        let b = PairSide {
            price: 1e5,
            location: p,
            chars: &c,
            description: Some("bilocale ampio ristrutturato di recente"),
            embedding: Some(&eb),
        };
        let f = extract_features(&a, &b, false);
        let expected = cosine_distance(&ea, &eb).unwrap();
        assert_eq!(f.get(FeatureId::TextDistance), Some(expected));
        assert!(expected < 0.5);
    }

    proptest! {
        /// extract_features(a, b) == extract_features(b, a) componentwise.
        #[test]
        fn symmetric_in_argument_order(
            pa in 1.0f64..1e6, pb in 1.0f64..1e6,
            area_a in prop::option::of(20.0f64..300.0),
            area_b in prop::option::of(20.0f64..300.0),
            floor_a in prop::option::of(-1i32..10),
            floor_b in prop::option::of(-1i32..10),
            maint_a in prop::option::of(1u8..=4),
            maint_b in prop::option::of(1u8..=4),
            elev_a in prop::option::of(prop::bool::ANY),
            elev_b in prop::option::of(prop::bool::ANY),
            lat_a in 41.0f64..42.0, lat_b in 41.0f64..42.0,
            same_agency in prop::bool::ANY,
        ) {
            let mut ca = chars();
            ca.floor_area = area_a;
            ca.floor = floor_a;
            ca.maintenance = maint_a;
            ca.elevator = elev_a;
            let mut cb = chars();
            cb.floor_area = area_b;
            cb.floor = floor_b;
            cb.maintenance = maint_b;
            cb.elevator = elev_b;
            let a = PairSide {
                price: pa,
                location: GeoPoint::new(lat_a, 12.49).unwrap(),
                chars: &ca,
                description: Some("casa con vista"),
                embedding: None,
            };
            let b = PairSide {
                price: pb,
                location: GeoPoint::new(lat_b, 12.49).unwrap(),
                chars: &cb,
                description: Some("appartamento centrale"),
                embedding: None,
            };
            let fab = extract_features(&a, &b, same_agency);
            let fba = extract_features(&b, &a, same_agency);
            prop_assert_eq!(fab, fba);
        }
    }
}
