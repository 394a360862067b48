pub mod conformance;
pub mod data;
pub mod engine;
pub mod gateway;
pub mod models;
pub mod refs;
pub mod runtime;
pub mod services;
pub mod value;
