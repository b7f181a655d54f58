//! A dialogue model that decides *when* to talk as well as *what* to say.
//!
//! The context of a conversation is turned into a directed acyclic graph
//! over its utterances ([`convgraph`]); utterances are encoded with
//! bidirectional GRUs, refined by a double-gated graph encoder and fed to a
//! speak/silence decision head and a GRU decoder ([`model`]). [`training`]
//! optimizes the joint objective and persists checkpoints, [`evaluation`]
//! computes the automatic metrics and [`chat`] drives an interactive session.

pub mod chat;
pub mod convgraph;
pub mod corpus;
pub mod evaluation;
pub mod model;
pub mod training;

pub use w2t_numerics as numerics;
