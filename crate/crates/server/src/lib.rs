//! Network services around the routing core: the Envoy ext_proc gateway and
//! the simulated chat-completions backend.

pub mod extproc;
pub mod sim_server;
pub mod sink;

pub use extproc::{serve_extproc, ExtProcService, Gateway, Session};
pub use sim_server::{serve_sim, sim_app, SimSettings};
pub use sink::{DecisionLog, UsageRecord, UsageSink};
