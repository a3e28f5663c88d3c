//! Oracles and generators shared by the integration tests.
#![allow(dead_code)]

pub mod closed_form;
pub mod instances;
pub mod rational_oracle;
