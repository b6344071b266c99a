//! Exact oracles and closed forms for the expected objective under mixing.

mod enumerate;
pub mod linalg;
mod quadratic;
mod regression;
pub mod verify;

pub use enumerate::{
    enum_expected_loss, enum_moments, expected_loss, monte_carlo_expected_loss, Estimate,
    Expectation, Moments, ENUM_LIMIT,
};
pub use quadratic::{
    check_lower_bound, quadratic_expected_loss, quadratic_penalty, BoundReport, QuadraticLoss,
    BOUND_TOL,
};
pub use regression::{
    ls_mixout_solve, ls_regression_demo, ls_sgd_solve, write_demo_csv, LsDemo, LsRow,
    RegressionProblem, SgdSettings, DEMO_NOISE, DEMO_POINTS,
};
