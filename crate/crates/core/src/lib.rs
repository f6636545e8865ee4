//! Reconstruction of hurricane-evacuation behavior from mobile-device
//! location sightings.

pub mod analytics;
pub mod choice_model;
pub mod config;
pub mod enrich;
pub mod error;
pub mod evacuation;
pub mod geo;
pub mod home;
pub mod ingest;
pub mod mobility;
pub mod pipeline;
pub mod store;
pub mod synth;
