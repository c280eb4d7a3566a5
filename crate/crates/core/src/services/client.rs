//! Blocking client for the three user-facing queries.

use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;

use super::proto::{methods, ComposedPage, RatingValue, StreamManifest};
use crate::rpc::{ClientOptions, Fault, RpcClient, RpcError};
use crate::wire::{Field, IdSource, MessageKind, RpcMessage, TraceContext};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error("{0}")]
    Fault(Fault),
    #[error("chunk {index} had {got} bytes, expected {expected}")]
    ShortChunk { index: u64, got: usize, expected: u64 },
}

impl ClientError {
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Fault(f) => Some(&f.code),
            _ => None,
        }
    }
}

/// Result of a full rent: the manifest plus the number of bytes streamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rental {
    pub manifest: StreamManifest,
    pub bytes: u64,
}

/// Field list of each request type, shared with the load generator.
pub fn browse_fields(movie_id: u64) -> Vec<Field> {
    vec![Field::u64(0, movie_id)]
}

pub fn review_fields(movie_id: u64, user_id: u64, stars: u64, text: &[u8]) -> Vec<Field> {
    vec![
        Field::u64(0, movie_id),
        Field::u64(1, user_id),
        Field::u64(2, stars),
        Field::new(3, text.to_vec()),
    ]
}

pub fn rent_fields(user_id: u64, movie_id: u64, price: u64) -> Vec<Field> {
    vec![Field::u64(0, user_id), Field::u64(1, movie_id), Field::u64(2, price)]
}

pub fn chunk_fields(m: &StreamManifest, index: u64) -> Vec<Field> {
    vec![
        Field::u64(0, m.blob_id),
        Field::u64(1, index),
        Field::u64(2, m.chunk_size),
    ]
}

/// One connection to the entry service. Every call starts a new trace.
pub struct MovieClient {
    conn: RpcClient,
    timeout: Duration,
}

impl MovieClient {
    pub fn connect(entry: SocketAddr, timeout: Duration) -> Result<Self, ClientError> {
        let conn = RpcClient::connect(
            entry,
            &ClientOptions {
                connect_timeout: timeout,
                ..ClientOptions::default()
            },
        )?;
        Ok(MovieClient { conn, timeout })
    }

    /// Raw exchange: the reply fields, or the error response as a fault.
    pub fn request(&self, method: &str, fields: Vec<Field>) -> Result<Vec<Field>, ClientError> {
        let ctx = TraceContext::new_root(IdSource::global());
        let msg = self
            .conn
            .call(&RpcMessage::request(ctx, method, fields), self.timeout)?
            .result?;
        match msg.kind {
            MessageKind::Response => Ok(msg.fields),
            _ => Err(ClientError::Fault(Fault::new(
                msg.error_code().unwrap_or("Unknown"),
                String::from_utf8_lossy(msg.field(1).unwrap_or_default()),
            ))),
        }
    }

    pub fn browse_raw(&self, movie_id: u64) -> Result<Vec<Field>, ClientError> {
        self.request(methods::COMPOSE_PAGE, browse_fields(movie_id))
    }

    pub fn browse(&self, movie_id: u64) -> Result<ComposedPage, ClientError> {
        ComposedPage::from_fields(&self.browse_raw(movie_id)?).map_err(ClientError::Fault)
    }

    /// Returns the new review id and the movie's rating after the update.
    pub fn compose_review(
        &self,
        user_id: u64,
        movie_id: u64,
        text: &[u8],
        stars: u64,
    ) -> Result<(u64, RatingValue), ClientError> {
        let f = self.request(methods::COMPOSE_REVIEW, review_fields(movie_id, user_id, stars, text))?;
        let get = |tag| super::proto::req_u64(&f, tag, "reply").map_err(ClientError::Fault);
        Ok((get(0)?, RatingValue { sum: get(1)?, count: get(2)? }))
    }

    pub fn user_auth(&self, user_id: u64, movie_id: u64, price: u64) -> Result<StreamManifest, ClientError> {
        let f = self.request(methods::USER_AUTH, rent_fields(user_id, movie_id, price))?;
        StreamManifest::from_fields(&f).map_err(ClientError::Fault)
    }

    pub fn fetch_chunk(&self, m: &StreamManifest, index: u64) -> Result<Vec<u8>, ClientError> {
        let mut f = self.request(methods::RENT_CHUNK, chunk_fields(m, index))?;
        let body = f
            .drain(..)
            .find(|f| f.tag == 0)
            .map(|f| f.value)
            .unwrap_or_default();
        if body.len() as u64 != m.chunk_len(index) {
            return Err(ClientError::ShortChunk {
                index,
                got: body.len(),
                expected: m.chunk_len(index),
            });
        }
        Ok(body)
    }

    /// Debits the user, then streams every chunk in order.
    pub fn rent(&self, user_id: u64, movie_id: u64, price: u64) -> Result<Rental, ClientError> {
        let manifest = self.user_auth(user_id, movie_id, price)?;
        let mut bytes = 0;
        for i in 0..manifest.chunk_count {
            bytes += self.fetch_chunk(&manifest, i)?.len() as u64;
        }
        Ok(Rental { manifest, bytes })
    }
}
