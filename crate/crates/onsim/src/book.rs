//! Doc-test anchors for the guide in `book/`: each chapter's code blocks
//! compile and run under `cargo test --doc`, keeping the book in sync with
//! the crate.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/determinism.md")]
pub mod determinism {}

#[doc = include_str!("../../../book/src/radio-power.md")]
pub mod radio_power {}

#[doc = include_str!("../../../book/src/mobility.md")]
pub mod mobility_model {}

#[doc = include_str!("../../../book/src/routing.md")]
pub mod routing_protocols {}

#[doc = include_str!("../../../book/src/traffic.md")]
pub mod traffic_sources {}

#[doc = include_str!("../../../book/src/management.md")]
pub mod management {}

#[doc = include_str!("../../../book/src/lifecycle.md")]
pub mod lifecycle_states {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
