//! WebSocket bridge for live sessions.
//!
//! [`server::bind`] starts a realtime [`ipoxp_core::LinkSession`] whose two
//! operator seats are filled by WebSocket clients (`operator_a`,
//! `operator_b`). Any number of `audience` clients may watch symbols travel
//! and header fields decode. [`bot`] holds scripted clients that stand in
//! for humans.

pub mod bot;
pub mod protocol;
pub mod server;

pub use server::{bind, serve, BridgeConfig, BridgeError, BridgeHandle, PingSchedule, Summary};
