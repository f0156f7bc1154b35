//! Estimators and hypothesis tests: stationary driver statistics against
//! closed forms, moment-bound scaling fits, and weak-convergence studies.

pub mod closed_form;
pub mod converge;
pub mod estimator;
pub mod ks;
pub mod moments;
pub mod psi;
