//! Discrete-event model of a user-level RDMA engine that tolerates page
//! faults on both the source and destination buffer, together with the
//! host driver that resolves them and a benchmark harness on top.

pub mod bench;
pub mod driver;
pub mod mem;
pub mod rdma;
pub mod sim;
pub mod smmu;
pub mod system;

