pub mod audit;
pub mod canonical;
pub mod clock;
pub mod epa;
pub mod firewall;
pub mod fixtures;
pub mod fuzzer;
pub mod gateway;
pub mod hitl;
pub mod policy;
pub mod registry;
pub mod router;
pub mod strategy;
