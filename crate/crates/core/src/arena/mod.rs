//! Seedable zone-capture grid arena.
//!
//! Enemies spawn in waves and home toward the agent, health and ammo pickups
//! plus a region of interest relocate on a fixed period, and the agent may
//! press any subset of its seven primitive actions in a single step.

mod config;
mod expert;
mod observe;
mod trace;
mod world;

pub use config::{EnvConfig, RewardConfig, WallRect};
pub use expert::{facing_toward, scripted_expert, ExpertConfig};
pub use observe::{observe, Channel, FrameStack, ObservationFrame, CHANNELS};
pub use trace::{format_trace, parse_trace, run_trace, script_mask, TraceRecord};
pub use world::{
    displacement, mask_of, Action, Arena, Cell, Enemy, Pickup, PickupKind, Projectile, Roi,
    StepEvents, StepOutcome, WorldState, DIRECTIONS, N_ACTIONS,
};
