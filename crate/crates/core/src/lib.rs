//! Single-machine emulation of a micro-operator edge stack.
//!
//! A UE's traffic crosses an emulated radio link, is tunnelled in GTP-U to a
//! collapsed EPC, and reaches edge applications one hop behind it. Edge
//! applications arrive through a push-to-deploy pipeline, and a constant-rate
//! benchmark harness measures the end-to-end path.

pub mod bench;
pub mod epc;
pub mod fabric;
pub mod gtp;
pub mod inner;
pub mod pipeline;
pub mod radio;
pub mod stats;
pub mod userplane;
