//! Typed temporal memory for long-horizon user-state tracking.
//!
//! New evidence is adjudicated when it is written: besides adding the new
//! state, the write pipeline decides which older memories may no longer be
//! used (archiving them as STALE or blocking their slot as
//! `UNKNOWN_CURRENT`). Query-time readout then answers only from the
//! adjudicated current basis.
//!
//! Alongside the engine, [`simulator`] generates seeded implicit-conflict
//! scenarios, embeds them in distractor haystacks and scores systems on
//! state resolution, premise resistance and implicit policy adaptation.

pub mod adjudicator;
pub mod conflict;
pub mod dialogue;
pub mod engine;
pub mod pattern;
pub mod pipeline;
pub mod readout;
pub mod schema;
pub mod simulator;
pub mod store;
pub mod text;

pub use engine::Engine;
pub use schema::{Cardinality, KnowledgeBase, KnowledgeRule, Polarity, Proposition, SlotRef, StateSchema};
pub use store::{ItemId, ItemStatus, MemoryItem, Store};
