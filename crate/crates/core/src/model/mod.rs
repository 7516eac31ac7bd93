//! Data containers, FIR regression, simulation and unregularized baselines.

mod data;
mod fir;

pub use data::{Dims, IODataset, ImpulseResponse, ImpulseResponseJson};
pub use fir::{
    build_fir_regression, fit_metrics, least_squares, order_selection_baseline, simulate_oe,
    FirRegression, FitReport, InitialConditions, LsFit, OrderCriterion, OrderSelection,
};
pub(crate) use fir::min_norm_lstsq;
