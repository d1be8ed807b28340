pub mod acceptance;
pub mod localnet;
pub mod report;
pub mod run;
pub mod sweep;
pub mod workload;
