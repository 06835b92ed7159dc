//! Checks shared by the integration tests and the acceptance report.
#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;
pub mod pipeline;
