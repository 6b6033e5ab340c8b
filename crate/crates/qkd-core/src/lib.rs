//! Decoy-state BB84 over a simulated photonic link.
//!
//! The crate is organized as a stack: [`config`] and [`record`] define the
//! shared data model, [`sim`] produces detection records from a physical
//! channel/detector model, [`sift`] and [`decoy`] turn records into the
//! counts and bounds that [`security`] consumes for the finite-key length,
//! and [`engine`] runs the whole thing as a two-party protocol over
//! [`transport`]. [`feedback`] holds the polarization-drift compensation
//! controller. Everything stochastic draws from named [`rng::RandomStream`]s
//! so that both parties of a session, in one process or two, reproduce the
//! same world bit for bit.

pub mod config;
pub mod decoy;
pub mod engine;
pub mod feedback;
pub mod record;
pub mod rng;
pub mod security;
pub mod sift;
pub mod sim;
pub mod transport;
