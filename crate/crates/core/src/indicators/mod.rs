//! Demand, supply and price indicators computed on the deduplicated panel,
//! the regression engine behind them, and validation statistics against
//! external reference series.

pub mod hedonic;
pub mod models;
pub mod panel;
pub mod regress;
pub mod validation;

pub use hedonic::{
    hedonic_index, implied_discount, implied_sale_path, DiscountConvention, HedonicObs, PriceIndex,
};
pub use models::{
    build_controls, model_demand_lead, model_eq1, model_eq2, model_eq3, model_priceref, model_supply,
    model_tom, ControlMatrix, DemandResponse, SupplyResponse,
};
pub use panel::{build_panel, build_zone_aggregates, Panel, PanelObservation, UnitOutcome, ZoneAggregate};
pub use regress::{fit_logit, fit_ols_fe, RegressError, RegressionResult};
pub use validation::{validation_stats, ValidationReport};
