pub mod generator;
pub mod linalg;
pub mod map;
pub mod matgeo;
pub mod model;
pub mod phase;
pub mod simulator;
pub mod stability;
pub mod confirmation;
