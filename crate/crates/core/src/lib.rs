//! Counterfactual forecasting for time series under mixed multi-treatment interventions.

// NaN-rejecting `!(x > 0.0)` checks are intended.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::type_complexity, clippy::needless_range_loop)]

pub mod autodiff;
pub mod bundle;
pub mod corrupt;
pub mod data;
pub mod effects;
pub mod json;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod seeds;
pub mod service;
pub mod sim;
pub mod train;
