pub mod linalg;
pub mod ingest;
pub mod encoder;
pub mod neighbor_graph;
pub mod mmcr;
pub mod fuzzy;
pub mod layout;
pub mod metrics;
pub mod cli;
