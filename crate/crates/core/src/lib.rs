pub mod graph;
pub mod params;
pub mod real;
pub mod resample;
pub mod tensor;
pub mod data_synth;
pub mod error;
pub mod frame;
pub mod nn;
pub mod video_io;
pub mod iht;
pub mod encoders;
pub mod decoder;
pub mod model;
pub mod checkpoint;
pub mod training;
pub mod metrics;
pub mod pipeline;
