//! Nested risk estimators.

pub mod gns;
pub mod kernel;
pub mod regression;
pub mod sns;

pub use gns::{epsilon_schedule, gns_estimate, gns_from_kernel, gns_with_streams, recycled_losses, GnsDiagnostics, GnsReport, GnsSettings};
pub use kernel::{PortfolioKernel, RecyclingKernel};
pub use regression::{
    laguerre_features, least_squares, regression_estimate, regression_with_streams, LeastSquaresFit,
    RegressionReport, RegressionSettings,
};
pub use sns::{gordy_juneja_allocation, sns_estimate, sns_losses, sns_with_streams, SnsReport};
