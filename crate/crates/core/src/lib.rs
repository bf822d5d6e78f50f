pub mod alignment;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod disambig;
pub mod eval;
pub mod mathml;
pub mod rules;
