//! Streaming gateway in front of an OpenAI-compatible inference server.
//!
//! Requests are forwarded with top-k logprobs enabled; each thinking token's
//! entropy feeds a [`rpdi_core::Session`]. When the session calls for an exit
//! the upstream stream is cancelled and a single continuation request
//! produces the answer from `prompt ⊕ reasoning ⊕ marker`. Clients see one
//! uninterrupted stream. With monitoring disabled the gateway is a byte-exact
//! relay.

pub mod client;
pub mod config;
pub mod error;
pub mod mock;
pub mod pipeline;
pub mod protocol;
pub mod server;
pub mod upstream;

pub use client::{post_stream, StreamedResponse};
pub use config::{CompletionStyle, GatewayConfig, UpstreamConfig};
pub use error::GatewayError;
pub use mock::{Interaction, InteractionLog, MockOptions, MockUpstream, RequestKind};
pub use pipeline::{ANNOTATIONS_FIELD, ANNOTATIONS_HEADER, EVENT_OBJECT};
pub use protocol::Endpoint;
pub use server::{router, serve, spawn, RunningGateway};
pub use upstream::UpstreamClient;
