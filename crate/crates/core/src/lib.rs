pub mod augment;
pub mod dataset;
pub mod nn;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod synth;
