//! Deduplication engine and analysis toolkit for streams of online housing
//! ads.
//!
//! Multiple ads frequently advertise the same dwelling (several agencies
//! under an open mandate, reposts by the same agency, mandate turnover).
//! This crate identifies those duplicates and merges them into housing-unit
//! records: spatial blocking proposes candidate pairs, trained decision
//! trees score each pair, and a graph-clustering step with an internal
//! similarity condition forms the units. Weekly snapshots are processed
//! incrementally, matching new and updated ads against both other ads and
//! already known units.
//!
//! On top of the deduplicated data the crate computes demand, supply and
//! price indicators (click-based demand proxies, time-on-market and
//! price-revision models, hedonic price indexes, asking/sale discount
//! paths), and ships a synthetic stream generator with ground truth for
//! end-to-end verification.


pub mod blocking;
pub mod classifier;
pub mod cluster;
pub mod config;
pub mod synth;

pub mod indicators;
pub mod ingest;
pub mod model;
pub mod normalize;

pub mod time;
pub mod time_machine;


pub use config::RunConfig;
pub use model::{Ad, AdId, GeoPoint, HousingUnit, UnitId, ZoneId};
pub use time::{Quarter, Week};
