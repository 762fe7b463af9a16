pub mod autodiff;
pub mod graph;
pub mod matrix;
pub mod metapath;
pub mod model;
pub mod objective;
pub mod datagen;
pub mod metrics;
pub mod series_io;
pub mod config;
pub mod trainer;
pub mod gradcheck_toy;
