//! Slotted Monte Carlo simulation of the demand process, a bit-level
//! executor of the delivery algorithms, and brute-force oracles.

mod bitlevel;
mod demand;
mod oracle;
mod process;
mod rng;

pub use rng::job_seed;
pub(crate) use rng::rng_for_restart;

pub use bitlevel::{bitlevel_slot_delivery, BitLevelOutcome, Message, MessageKind, MAX_BITLEVEL_USERS};
pub use demand::SlotDemand;
pub use oracle::{brute_force_man_slot, MAX_BRUTE_FORCE_USERS};
pub use process::{
    simulate, simulate_average_rate, simulate_replications, step, ArrivalSchedule, ProcessState, SchemeSummary,
    SimConfig, SimMode, SimReport, TraceRow, UserSession,
};
