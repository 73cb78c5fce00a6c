// SPDX-License-Identifier: Apache-2.0

//! Encrypted dictionaries for column stores: nine dictionary layouts trading
//! frequency and order leakage against storage and search cost, an enclave
//! that searches them, and a host-side engine that scans the attribute
//! vector.

pub mod bench;
pub mod builder;
pub mod crypto;
pub mod delta;
pub mod enclave;
pub mod encoding;
pub mod engine;
pub mod error;
pub mod model;
pub mod proxy;
pub mod storage;

pub use builder::{build, BuildParams};
pub use crypto::{derive_key, MasterKey};
pub use delta::{DynamicColumn, Side};
pub use enclave::{Enclave, EncryptedRangeToken, VidRange, VidSelection};
pub use error::{Error, Result};
pub use model::{EdKind, EncodedColumnStore, Endpoint, Order, PlainColumn, Repetition, SearchRange};
pub use proxy::{execute, run_query, Filter};
