//! Datasets, the synthetic benchmark generator, CSV ingestion and task
//! streams.

pub mod bench;
pub mod csv_io;
pub mod dataset;
pub mod stream;
pub mod synthetic;

pub use bench::{Benchmark, BenchmarkSpec};
pub use csv_io::{load_csv, read_csv, write_csv};
pub use dataset::{Dataset, Split};
pub use stream::{
    split_class_incremental, split_domain_incremental, Scenario, StreamManifest, Task, TaskStream,
};
pub use synthetic::{make_synthetic, SyntheticSpec, World};
