//! Remote model adapters for the block-level engine.
//!
//! [`RemoteGenerator`] wraps an OpenAI-compatible `/v1/completions` endpoint
//! as a [`GeneratorModel`](specs_core::GeneratorModel): blocks end at a
//! delimiter (`"\n\n"` by default), at end of sequence, or at the `gamma`
//! token cap, and target scoring uses prompt-logprob echo. [`RemotePrm`] wraps
//! a step-scoring endpoint as a [`RewardModel`](specs_core::RewardModel).
//! [`mock::MockServer`] serves both formats from a scenario file.

pub mod config;
pub mod mock;
pub mod remote;
pub mod wire;

pub use config::{EndpointConfig, EndpointConfigError};
pub use mock::{MockError, MockServer, Scenario};
pub use remote::{block_from_choice, RemoteGenerator, RemotePrm, Transport};
