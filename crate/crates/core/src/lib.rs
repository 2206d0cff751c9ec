pub mod backtest;
pub mod cli;
pub mod config;
pub mod error;
pub mod estimation;
pub mod io;
pub mod lob;
pub mod sim;
pub mod solver;
