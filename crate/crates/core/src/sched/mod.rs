//! Scheduling layer: the joint placement/rolling-update program, its exact
//! solver, the periodic rescheduling loop, and the baseline schedulers.

pub mod bb;
pub mod milp;
pub mod oracle;
pub mod simplex;
