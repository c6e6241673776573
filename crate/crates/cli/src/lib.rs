//! Config-driven experiment runner for the continual-learning engine.

pub mod aggregate;
pub mod commands;
pub mod config;
