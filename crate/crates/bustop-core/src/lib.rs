//! Detection and characterization of public-bus stay locations from
//! multi-modal trip traces, plus a Markov-chain arrival-time estimator.

pub mod eta;
pub mod features;
pub mod learner;
pub mod mapenc;
pub mod report;
pub mod rng;
pub mod staypoint;
pub mod synth;
pub mod trace;

pub use learner::{predict_stay_types, train_bustop, BuStopModel};
pub use staypoint::{cluster_stays, ClusterParams, StayLocation, TimeBand};
pub use trace::{StayType, TripTrace};
