//! Class descriptions from a chat-completion model: querying, parsing,
//! caching and turning phrases into descriptor embeddings.

mod cache;
mod client;
mod encoder;
mod query;
mod store;

pub use cache::{CacheMeta, DescriptionCache};
pub use client::{
    fetch_descriptions, fetch_descriptions_http, ChatMessage, ChatRequest, ChatTransport,
    ClientConfig, FetchSummary, HttpTransport, MockTransport, TransportError, PANDA_PHRASES,
    TOKEN_ENV,
};
pub use encoder::{mock_encode, MockEncoder, TextEncoder};
pub use query::{build_query, parse_phrases, QueryRecord};
pub use store::{embed_descriptions, ClassEmbedding, EmbeddingStore};
