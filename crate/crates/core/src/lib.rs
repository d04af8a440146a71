pub mod classify;
pub mod corpus;
mod exact;
pub mod fixpoint;
pub mod periodicity;
pub mod report;
pub mod selftest;
pub mod series;
pub mod singularity;
pub mod specset;
pub mod term;
