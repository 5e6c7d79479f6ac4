//! Per-unit modeling and simulation of radial distribution feeders.
//!
//! The crate covers four layers: a validated network model loaded from JSON
//! scenario files ([`model`]), a Newton-Raphson AC power flow on that model
//! ([`powerflow`]), a one-step volt-var control environment built on the
//! solver ([`env`]) together with the exogenous irradiance/demand generators
//! ([`profile`]), and an hour-by-hour fitness ranking of candidate buses for
//! siting new PV/storage ([`placement`]).

pub mod env;
pub mod model;
pub mod placement;
pub mod powerflow;
pub mod profile;
