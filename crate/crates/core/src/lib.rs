//! Deterministic simulation and analysis toolkit for time-sensitive,
//! software-defined in-vehicle Ethernet backbones.
//!
//! The crate is organized in layers:
//!
//! * [`netmodel`]: topology, frames, control flows, communication matrices.
//! * [`desim`]: the deterministic discrete-event kernel and trace recorder.
//! * [`dataplane`]: the switch pipeline (flow tables, gate control lists,
//!   credit-based shaping, ingress filtering) and scheduled endpoint senders.
//! * [`bounds`]: analytic latency bounds, slot placement, schedule validation.
//! * [`txnsched`]: network-wide transactional gate-schedule updates.
//! * [`controller`]: the central controller (packet-in handling, ACLs,
//!   stream reservation, static boot configuration).
//! * [`secsep`]: control-flow embeddings, network-flow separation metrics,
//!   path classification, and the aggregation bandwidth model.
//! * [`engine`]: glue that assembles the above into runnable simulations.
//! * [`attacksim`]: scan, flood, and replay attack scenarios.
//! * [`cli`]: scenario ingestion and the command-line entry points.

pub mod attacksim;
pub mod bounds;
pub mod cli;
pub mod controller;
pub mod dataplane;
pub mod desim;
pub mod engine;
pub mod netmodel;
pub mod secsep;
pub mod txnsched;
