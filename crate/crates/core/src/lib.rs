pub mod aggregation;
pub mod blinding;
pub mod client;
pub mod codec;
pub mod confidential;
pub mod crypto;
pub mod pipeline;
pub mod remote;
pub mod sim;
pub mod tee;
pub mod wire;
