pub mod bbindex;
pub mod catalog;
pub mod cli;
pub mod eval;
pub mod fingerprint;
pub mod infer;
pub mod io;
pub mod model;
pub mod molgraph;
pub mod parallel;
pub mod reaction;
pub mod sampler;
pub mod seed;
pub mod synthesis;
pub mod toydata;
