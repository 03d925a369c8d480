//! Zoo models, seeded data, equivalence checking and benchmarking.

pub mod bench;
pub mod init;
pub mod verify;
pub mod zoo;

pub use bench::{bench, BenchConfig, BenchError, BenchReport, MemoryProbe, NoProbe, Strategy};
pub use verify::{verify, Mismatch, VerifyReport};
pub use zoo::{build, matmul_head, ZooName};
