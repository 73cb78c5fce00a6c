// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value of {len} bytes exceeds the column maximum of {max} bytes")]
    Length { len: usize, max: usize },

    #[error("byte 0x{byte:02x} at position {position} is outside the supported alphabet")]
    Alphabet { byte: u8, position: usize },

    #[error("value ends with a space, which collides with order-encoding padding")]
    TrailingSpace,

    /// AEAD verification failed: wrong key or tampered ciphertext.
    #[error("authentication failed (wrong key or tampered ciphertext)")]
    Auth,

    #[error("malformed range token: {0}")]
    Token(String),

    #[error("cannot parse filter: {0}")]
    Parse(String),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("record id {rid} out of range for store with {len} rows")]
    Index { rid: u64, len: usize },

    #[error("{file}: {detail}")]
    Format { file: String, detail: String },

    #[error("unsupported store version {0}")]
    Version(u16),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("column has {0} rows, more than the supported maximum")]
    TooManyRows(usize),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(file: &str, detail: impl Into<String>) -> Self {
        Error::Format {
            file: file.to_string(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that originate in the cryptographic layer.
    pub fn is_crypto(&self) -> bool {
        matches!(self, Error::Auth | Error::Token(_))
    }
}
