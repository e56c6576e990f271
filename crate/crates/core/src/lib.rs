//! Universally robust private information retrieval over `n` replicated
//! servers.
//!
//! A user retrieving file `i` sends every server a query built from a
//! Staircase code. Whatever number `mu` of servers ends up answering
//! (`k <= mu <= n`), the user downloads only a prefix of each response and
//! decodes the file at rate `(mu - t) / mu`, while any `t` colluding servers
//! learn nothing about `i`.
//!
//! Module map:
//!
//! * [`field`]: GF(q) arithmetic, matrices, Vandermonde construction.
//! * [`params`]: `(n, k, t, m, q, s)` and the derived block layout.
//! * [`staircase`]: message grid, share encoding, peeling decoder.
//! * [`protocol`]: queries, server responses, download plans, capacity.
//! * [`sharing`]: generic linear secret sharing and the SS-PIR adapter.
//! * [`verifier`]: exhaustive and rank-based privacy checks, robustness and
//!   rate accounting.
//! * [`sim`]: discrete-event straggler simulation.
//! * [`wire`], [`net`]: binary frame codec and TCP server/client.
//! * [`ingest`]: byte files to field symbols and back.

pub mod error;
pub mod field;
pub mod ingest;
pub mod net;
pub mod params;
pub mod protocol;
pub mod sharing;
pub mod sim;
pub mod staircase;
pub mod verifier;
pub mod wire;

pub use error::{Error, Result};
pub use field::{FieldElement, FieldMatrix, PrimeField, SymbolVector};
pub use params::SchemeParams;
pub use staircase::{MessageGrid, RowOrder, ShareSet, StaircaseCode, StaircaseLayout};
