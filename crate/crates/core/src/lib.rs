pub mod cli;
pub mod cost;
pub mod experiment;
pub mod oracle;
pub mod rewrite;
pub mod spec;
pub mod table;
pub mod task;
