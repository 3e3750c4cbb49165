pub mod cli;
pub mod critique;
pub mod generation;
pub mod http;
pub mod kb;
pub mod logic;
pub mod prover;
pub mod refine;
pub mod retrieval;
