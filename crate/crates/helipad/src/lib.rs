//! File formats, reports, Jacobian certification and the command-line front
//! end for [`helipad_core`].

pub mod certify;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod report;
