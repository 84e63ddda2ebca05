//! Per-module unit tests against the public API.

mod batching;
mod data;
mod gradcheck;
mod kernels;
mod params;
mod schedules;
mod synthetic;
mod transformer;
mod vocab;
