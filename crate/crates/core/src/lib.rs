//! Emulation of an NFV-based gateway for virtualized wireless sensor networks.
//!
//! A gateway-provider orchestrator with a central VNF image store provisions,
//! migrates, chains, and elastically scales gateway VNFs (information-model
//! processors and protocol converters) into two sensor-provider domains, and
//! delivers emulated sensor measurements to an application over a
//! four-interface RESTful control plane.
//!
//! Module map:
//! - [`model`] — shared domain types and the VNF lifecycle state machine
//! - [`codecs`] — bit-exact wire formats (BrandA, BrandB, CoAP-lite, SenML, HTTP)
//! - [`sim`] — microsecond event scheduler and HTTP-bytes message transport
//! - [`trace`] — structured event trace with deterministic JSONL output
//! - [`store`] — content-addressed image store and per-domain caches
//! - [`nfvi`] — simulated compute nodes, allocations, and load estimation
//! - [`vnf`] — the four gateway functions, chain executor, instance pools
//! - [`mano`] — orchestrators: core-side migration driver, domain-side manager
//! - [`control`] — the RESTful control plane services (gateway + providers)
//! - [`harness`] — scenario assembly, sensor fleets, metrics, trace checks

pub mod codecs;
pub mod control;
pub mod harness;
pub mod mano;
pub mod model;
pub mod nfvi;
pub mod sim;
pub mod store;
pub mod trace;
pub mod vnf;

pub use model::{
    validate_chain, ChainViolation, CollectionPattern, DomainId, IllegalTransition,
    LifecycleEvent, LifecycleState, Quantity, SensorBrand, SensorReading, ServiceChain,
    ServiceRequest, VnfDescriptor, VnfInstance, VnfType,
};
