//! Joint optimization of solar-array size, electric-thruster operating modes
//! and a low-thrust heliocentric trajectory.
//!
//! The trajectory is written in modified equinoctial elements ([`mee`]) and
//! transcribed with RK4 defects into a sparse NLP ([`transcription`]). The
//! available-power law ([`power`]) and the discrete mode selection
//! ([`thruster`]) are smoothed; [`continuation`] tightens the smoothing and
//! [`validation`] re-checks the result with the unsmoothed models.
//! [`mission`] ties everything to configuration files and output artifacts.

pub mod mee;
pub mod power;
pub mod thruster;
pub mod transcription;
pub mod continuation;
pub mod validation;
pub mod mission;

pub use sepopt_nlp as nlp;
