//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

pub mod interp;
pub mod oracles;
pub mod workspace;
