//! Canonical domain types shared by every stage of the pipeline.
//!
//! Everything here is immutable after construction and safe to share across
//! parallel workers. Binary traits are tri-state (`Option<bool>`): the
//! classifier must be able to tell "both missing" apart from "both no",
//! so missingness is never collapsed into a default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::time::Week;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}

id_type!(
    /// Identifier of a single published advertisement.
    AdId
);
id_type!(
    /// Identifier of a deduplicated housing unit.
    UnitId
);
id_type!(
    /// Identifier of a local housing market (microzone). The city name is the
    /// prefix up to the first `/`, e.g. `milan/z03` belongs to `milan`.
    ZoneId
);

impl ZoneId {
    pub fn city(&self) -> &str {
        self.0.split('/').next().unwrap_or(&self.0)
    }
}

/// WGS84 coordinates in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, AdIssue> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(AdIssue::CoordinateOutOfRange { field: "lat", value: lat });
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(AdIssue::CoordinateOutOfRange { field: "lon", value: lon });
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Ordered categorical trait names, each encoded to integer levels 1..=K
/// where a greater value means better quality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderedTrait {
    Maintenance,
    EnergyClass,
    Garage,
    Garden,
    Kitchen,
}

impl OrderedTrait {
    pub const ALL: [OrderedTrait; 5] = [
        OrderedTrait::Maintenance,
        OrderedTrait::EnergyClass,
        OrderedTrait::Garage,
        OrderedTrait::Garden,
        OrderedTrait::Kitchen,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OrderedTrait::Maintenance => "maintenance",
            OrderedTrait::EnergyClass => "energy_class",
            OrderedTrait::Garage => "garage",
            OrderedTrait::Garden => "garden",
            OrderedTrait::Kitchen => "kitchen",
        }
    }
}

/// Mapping from category labels to integer levels 1..=K, monotone in the
/// declared quality order (first label is worst, last is best).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedLevelScheme {
    pub trait_name: String,
    /// Labels ordered worst to best; level of `labels[i]` is `i + 1`.
    pub labels: Vec<String>,
}

impl OrderedLevelScheme {
    pub fn new(trait_name: &str, labels: &[&str]) -> Result<Self, SchemeError> {
        let scheme = OrderedLevelScheme {
            trait_name: trait_name.to_string(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        };
        scheme.validate()?;
        Ok(scheme)
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        if self.labels.len() < 2 {
            return Err(SchemeError::TooFewLevels(self.trait_name.clone()));
        }
        let mut seen = BTreeSet::new();
        for label in &self.labels {
            if !seen.insert(label.to_lowercase()) {
                return Err(SchemeError::DuplicateLabel {
                    trait_name: self.trait_name.clone(),
                    label: label.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> u8 {
        self.labels.len() as u8
    }

    /// Level of a label, 1..=K. Comparison is case-insensitive.
    pub fn level_of(&self, label: &str) -> Option<u8> {
        let needle = label.to_lowercase();
        self.labels
            .iter()
            .position(|l| l.to_lowercase() == needle)
            .map(|i| (i + 1) as u8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemeError {
    #[error("level scheme for {0} needs at least two labels")]
    TooFewLevels(String),
    #[error("level scheme for {trait_name} repeats label {label:?}")]
    DuplicateLabel { trait_name: String, label: String },
}

/// The physical characteristics shared by ads and by aggregated housing
/// units. Any field may be missing.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Characteristics {
    pub floor_area: Option<f64>,
    pub floor: Option<i32>,
    pub rooms: Option<u32>,
    pub bathrooms: Option<u32>,
    pub maintenance: Option<u8>,
    pub energy_class: Option<u8>,
    pub garage: Option<u8>,
    pub garden: Option<u8>,
    pub kitchen: Option<u8>,
    pub elevator: Option<bool>,
    pub balcony: Option<bool>,
    pub terrace: Option<bool>,
    pub janitor: Option<bool>,
    pub utility_room: Option<bool>,
    pub air_conditioning: Option<bool>,
    pub basement: Option<bool>,
    pub heating: Option<String>,
    pub property_type: Option<String>,
}

impl Characteristics {
    pub fn ordered_level(&self, t: OrderedTrait) -> Option<u8> {
        match t {
            OrderedTrait::Maintenance => self.maintenance,
            OrderedTrait::EnergyClass => self.energy_class,
            OrderedTrait::Garage => self.garage,
            OrderedTrait::Garden => self.garden,
            OrderedTrait::Kitchen => self.kitchen,
        }
    }

    pub fn set_ordered_level(&mut self, t: OrderedTrait, level: Option<u8>) {
        match t {
            OrderedTrait::Maintenance => self.maintenance = level,
            OrderedTrait::EnergyClass => self.energy_class = level,
            OrderedTrait::Garage => self.garage = level,
            OrderedTrait::Garden => self.garden = level,
            OrderedTrait::Kitchen => self.kitchen = level,
        }
    }

    pub const BINARY_TRAITS: [&'static str; 7] = [
        "elevator",
        "balcony",
        "terrace",
        "janitor",
        "utility_room",
        "air_conditioning",
        "basement",
    ];

    pub fn binary(&self, name: &str) -> Option<bool> {
        match name {
            "elevator" => self.elevator,
            "balcony" => self.balcony,
            "terrace" => self.terrace,
            "janitor" => self.janitor,
            "utility_room" => self.utility_room,
            "air_conditioning" => self.air_conditioning,
            "basement" => self.basement,
            _ => None,
        }
    }
}

/// One advertisement: characteristics, location, price and click history,
/// lifecycle dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ad {
    pub id: AdId,
    /// Empty string means a private seller (no agency).
    #[serde(default)]
    pub agency_id: String,
    pub zone_id: Option<ZoneId>,
    pub location: GeoPoint,
    pub asking_price: f64,
    #[serde(rename = "characteristics")]
    pub chars: Characteristics,
    pub description: Option<String>,
    pub created_on: NaiveDate,
    /// Absent while the ad is still visible.
    pub removed_on: Option<NaiveDate>,
    /// Webpage visits per ISO week.
    #[serde(default)]
    pub clicks_by_week: BTreeMap<Week, u64>,
}

impl Ad {
    pub fn is_live(&self) -> bool {
        self.removed_on.is_none()
    }

    pub fn is_private(&self) -> bool {
        self.agency_id.is_empty()
    }

    pub fn city(&self) -> Option<&str> {
        self.zone_id.as_ref().map(|z| z.city())
    }
}

/// A cluster of ads aggregated into one dwelling record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HousingUnit {
    pub id: UnitId,
    pub member_ad_ids: BTreeSet<AdId>,
    pub zone_id: Option<ZoneId>,
    pub location: GeoPoint,
    pub asking_price: f64,
    #[serde(rename = "characteristics")]
    pub chars: Characteristics,
    /// Earliest creation date across member ads.
    pub entry_date: NaiveDate,
    /// Latest removal date, present only once every member ad is removed.
    pub exit_date: Option<NaiveDate>,
}

impl HousingUnit {
    pub fn is_live(&self) -> bool {
        self.exit_date.is_none()
    }

    /// Days on market, defined once the unit has exited.
    pub fn time_on_market_days(&self) -> Option<i64> {
        self.exit_date.map(|exit| (exit - self.entry_date).num_days())
    }
}

/// Checks that no two units share an ad id.
pub fn check_unit_partition<'a>(
    units: impl IntoIterator<Item = &'a HousingUnit>,
) -> Result<(), AdIssue> {
    let mut seen: BTreeMap<&AdId, &UnitId> = BTreeMap::new();
    for unit in units {
        for ad in &unit.member_ad_ids {
            if let Some(other) = seen.insert(ad, &unit.id) {
                return Err(AdIssue::AdInTwoUnits {
                    ad: ad.clone(),
                    first: other.clone(),
                    second: unit.id.clone(),
                });
            }
        }
    }
    Ok(())
}

/// A raw snapshot record before validation. Field names match the snapshot
/// file schema exactly; every field is optional so that missing mandatory
/// fields can be reported precisely instead of as a decode failure.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct RawAd {
    pub id: Option<String>,
    pub agency_id: Option<String>,
    pub zone_id: Option<String>,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub price: Option<f64>,
    pub floor_area: Option<f64>,
    pub floor: Option<i64>,
    pub rooms: Option<u32>,
    pub bathrooms: Option<u32>,
    pub maintenance: Option<LevelValue>,
    pub energy_class: Option<LevelValue>,
    pub garage: Option<LevelValue>,
    pub garden: Option<LevelValue>,
    pub kitchen: Option<LevelValue>,
    pub elevator: Option<BinaryValue>,
    pub balcony: Option<BinaryValue>,
    pub terrace: Option<BinaryValue>,
    pub janitor: Option<BinaryValue>,
    pub utility_room: Option<BinaryValue>,
    pub air_conditioning: Option<BinaryValue>,
    pub basement: Option<BinaryValue>,
    pub heating: Option<String>,
    pub property_type: Option<String>,
    pub description: Option<String>,
    pub created_on: Option<String>,
    pub clicks: Option<u64>,
}

/// Ordered traits arrive either as a category label or as an already
/// encoded integer level.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LevelValue {
    Level(i64),
    Label(String),
}

/// Binary traits arrive as booleans or as yes/no strings.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum BinaryValue {
    Flag(bool),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdIssue {
    #[error("missing mandatory field {0}")]
    MissingField(&'static str),
    #[error("coordinate out of range: {field}={value}")]
    CoordinateOutOfRange { field: &'static str, value: f64 },
    #[error("{field} must be strictly positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("cannot parse date {value:?} for {field}")]
    BadDate { field: &'static str, value: String },
    #[error("unknown {trait_name} label {label:?}")]
    UnknownLabel { trait_name: String, label: String },
    #[error("{trait_name} level {level} outside 1..={max}")]
    LevelOutOfRange { trait_name: String, level: i64, max: u8 },
    #[error("unrecognized yes/no value {value:?} for {field}")]
    BadBinary { field: &'static str, value: String },
    #[error("ad {ad} appears in units {first} and {second}")]
    AdInTwoUnits { ad: AdId, first: UnitId, second: UnitId },
}

/// All problems found while validating one raw record.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct InvalidAd {
    pub issues: Vec<AdIssue>,
}

impl fmt::Display for InvalidAd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msgs: Vec<String> = self.issues.iter().map(|i| i.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Level schemes for all ordered traits, keyed by trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchemes {
    #[serde(default = "default_scheme_maintenance")]
    pub maintenance: OrderedLevelScheme,
    #[serde(default = "default_scheme_energy")]
    pub energy_class: OrderedLevelScheme,
    #[serde(default = "default_scheme_garage")]
    pub garage: OrderedLevelScheme,
    #[serde(default = "default_scheme_garden")]
    pub garden: OrderedLevelScheme,
    #[serde(default = "default_scheme_kitchen")]
    pub kitchen: OrderedLevelScheme,
}

fn default_scheme_maintenance() -> OrderedLevelScheme {
    OrderedLevelScheme::new(
        "maintenance",
        &["to be fully renovated", "to be renovated", "good", "new"],
    )
    .unwrap()
}

fn default_scheme_energy() -> OrderedLevelScheme {
    OrderedLevelScheme::new("energy_class", &["g", "f", "e", "d", "c", "b", "a", "a+"]).unwrap()
}

fn default_scheme_garage() -> OrderedLevelScheme {
    OrderedLevelScheme::new("garage", &["none", "shared", "box"]).unwrap()
}

fn default_scheme_garden() -> OrderedLevelScheme {
    OrderedLevelScheme::new("garden", &["none", "shared", "private"]).unwrap()
}

fn default_scheme_kitchen() -> OrderedLevelScheme {
    OrderedLevelScheme::new("kitchen", &["kitchenette", "open", "eat-in"]).unwrap()
}

impl LevelSchemes {
    pub fn scheme(&self, t: OrderedTrait) -> &OrderedLevelScheme {
        match t {
            OrderedTrait::Maintenance => &self.maintenance,
            OrderedTrait::EnergyClass => &self.energy_class,
            OrderedTrait::Garage => &self.garage,
            OrderedTrait::Garden => &self.garden,
            OrderedTrait::Kitchen => &self.kitchen,
        }
    }

    pub fn validate(&self) -> Result<(), SchemeError> {
        for t in OrderedTrait::ALL {
            self.scheme(t).validate()?;
        }
        Ok(())
    }
}

impl Default for LevelSchemes {
    /// Shipped defaults: 4 maintenance levels, 8 energy classes, 3 levels
    /// each for garage, garden and kitchen. All overridable in the config.
    fn default() -> Self {
        LevelSchemes {
            maintenance: default_scheme_maintenance(),
            energy_class: default_scheme_energy(),
            garage: default_scheme_garage(),
            garden: default_scheme_garden(),
            kitchen: default_scheme_kitchen(),
        }
    }
}

fn decode_level(
    raw: &Option<LevelValue>,
    t: OrderedTrait,
    schemes: &LevelSchemes,
    issues: &mut Vec<AdIssue>,
) -> Option<u8> {
    let scheme = schemes.scheme(t);
    match raw {
        None => None,
        Some(LevelValue::Level(level)) => {
            if (1..=i64::from(scheme.levels())).contains(level) {
                Some(*level as u8)
            } else {
                issues.push(AdIssue::LevelOutOfRange {
                    trait_name: t.name().to_string(),
                    level: *level,
                    max: scheme.levels(),
                });
                None
            }
        }
        Some(LevelValue::Label(label)) => match scheme.level_of(label) {
            Some(level) => Some(level),
            None => {
                issues.push(AdIssue::UnknownLabel {
                    trait_name: t.name().to_string(),
                    label: label.clone(),
                });
                None
            }
        },
    }
}

fn decode_binary(
    raw: &Option<BinaryValue>,
    field: &'static str,
    issues: &mut Vec<AdIssue>,
) -> Option<bool> {
    match raw {
        None => None,
        Some(BinaryValue::Flag(b)) => Some(*b),
        Some(BinaryValue::Text(s)) => match s.to_lowercase().as_str() {
            "yes" | "true" | "1" => Some(true),
            "no" | "false" | "0" => Some(false),
            _ => {
                issues.push(AdIssue::BadBinary { field, value: s.clone() });
                None
            }
        },
    }
}

/// Validates one raw record into a typed [`Ad`]. Missing optional fields
/// stay missing, never silently defaulted. `clicks_week` dates the record's
/// click count.
pub fn validate_ad(raw: &RawAd, schemes: &LevelSchemes, clicks_week: Week) -> Result<Ad, InvalidAd> {
    let mut issues = Vec::new();

    let id = match raw.id.as_deref() {
        Some(id) if !id.is_empty() => Some(AdId::from(id)),
        _ => {
            issues.push(AdIssue::MissingField("id"));
            None
        }
    };

    let location = match (raw.lat, raw.lon) {
        (Some(lat), Some(lon)) => match GeoPoint::new(lat, lon) {
            Ok(p) => Some(p),
            Err(e) => {
                issues.push(e);
                None
            }
        },
        (lat, lon) => {
            if lat.is_none() {
                issues.push(AdIssue::MissingField("lat"));
            }
            if lon.is_none() {
                issues.push(AdIssue::MissingField("lon"));
            }
            None
        }
    };

    let asking_price = match raw.price {
        Some(p) if p > 0.0 && p.is_finite() => Some(p),
        Some(p) => {
            issues.push(AdIssue::NonPositive { field: "price", value: p });
            None
        }
        None => {
            issues.push(AdIssue::MissingField("price"));
            None
        }
    };

    let floor_area = match raw.floor_area {
        Some(a) if a > 0.0 && a.is_finite() => Some(a),
        Some(a) => {
            issues.push(AdIssue::NonPositive { field: "floor_area", value: a });
            None
        }
        None => None,
    };

    let created_on = match raw.created_on.as_deref() {
        Some(s) => match s.parse::<NaiveDate>() {
            Ok(d) => Some(d),
            Err(_) => {
                issues.push(AdIssue::BadDate { field: "created_on", value: s.to_string() });
                None
            }
        },
        None => {
            issues.push(AdIssue::MissingField("created_on"));
            None
        }
    };

    let chars = Characteristics {
        floor_area,
        floor: raw.floor.and_then(|f| i32::try_from(f).ok()),
        rooms: raw.rooms,
        bathrooms: raw.bathrooms,
        maintenance: decode_level(&raw.maintenance, OrderedTrait::Maintenance, schemes, &mut issues),
        energy_class: decode_level(&raw.energy_class, OrderedTrait::EnergyClass, schemes, &mut issues),
        garage: decode_level(&raw.garage, OrderedTrait::Garage, schemes, &mut issues),
        garden: decode_level(&raw.garden, OrderedTrait::Garden, schemes, &mut issues),
        kitchen: decode_level(&raw.kitchen, OrderedTrait::Kitchen, schemes, &mut issues),
        elevator: decode_binary(&raw.elevator, "elevator", &mut issues),
        balcony: decode_binary(&raw.balcony, "balcony", &mut issues),
        terrace: decode_binary(&raw.terrace, "terrace", &mut issues),
        janitor: decode_binary(&raw.janitor, "janitor", &mut issues),
        utility_room: decode_binary(&raw.utility_room, "utility_room", &mut issues),
        air_conditioning: decode_binary(&raw.air_conditioning, "air_conditioning", &mut issues),
        basement: decode_binary(&raw.basement, "basement", &mut issues),
        heating: raw.heating.clone().filter(|s| !s.is_empty()),
        property_type: raw.property_type.clone().filter(|s| !s.is_empty()),
    };

    if !issues.is_empty() {
        return Err(InvalidAd { issues });
    }

    let mut clicks_by_week = BTreeMap::new();
    if let Some(c) = raw.clicks {
        clicks_by_week.insert(clicks_week, c);
    }

    Ok(Ad {
        id: id.unwrap(),
        agency_id: raw.agency_id.clone().unwrap_or_default(),
        zone_id: raw.zone_id.clone().filter(|z| !z.is_empty()).map(ZoneId),
        location: location.unwrap(),
        asking_price: asking_price.unwrap(),
        chars,
        description: raw.description.clone().filter(|s| !s.is_empty()),
        created_on: created_on.unwrap(),
        removed_on: None,
        clicks_by_week,
    })
}
