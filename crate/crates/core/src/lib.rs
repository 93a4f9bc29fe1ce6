pub mod align;
pub mod analysis;
pub mod enhance;
pub mod eval;
pub mod features;
pub mod hmm;
pub mod labels;
pub mod pargen;
pub mod signal;
pub mod toy;
pub mod vocoder;
