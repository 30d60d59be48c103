//! Hierarchical frequency-regulation control for a VAV building fan.
//!
//! The crate covers the whole chain from identification to closed-loop
//! verification:
//!
//! * [`model`] and [`sysid`]: bilinear RC building model and its grey-box
//!   identification,
//! * [`fan`]: static fan curves and electric/thermal reserve conversion,
//! * [`signal`]: regulation-signal ingestion and energy-content analysis,
//! * [`scheduler`]: day-ahead robust reserve scheduling (level 1),
//! * [`climate`]: robust MPC and extended Kalman filter (level 2),
//! * [`regulation`]: switched feedforward/PI fan-power tracking (level 3),
//! * [`harness`]: the three-level closed loop against a twin-cell plant,
//! * [`nlp`]: the small constrained solver behind levels 1 and 2 and the
//!   identification.

pub mod climate;
pub mod error;
pub mod fan;
pub mod harness;
pub mod model;
pub mod nlp;
pub mod regulation;
pub mod scheduler;
pub mod signal;
pub mod sysid;
pub mod timeio;
pub mod verify;
pub mod weather;

pub use error::{Error, Result};
pub use fan::{FanCurves, ReservePair};
pub use model::{BuildingState, DiscreteBuildingModel, Disturbance};
