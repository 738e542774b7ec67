//! The memory engine: a store plus the write pipeline and readout wired
//! together behind one handle.

use crate::adjudicator::{Adjudicator, RuleBasedAdjudicator};
use crate::dialogue::Session;
use crate::pipeline::{ingest_session, Extractor, IngestConfig, IngestReport, PipelineError, StructuralExtractor, DEFAULT_GLOBAL_K};
use crate::readout::{answer_query, Dimension, GroundedAnswer, Probe, ReadoutError};
use crate::schema::{KnowledgeBase, StateSchema};
use crate::store::{ItemId, Store};
use crate::text::tokenize;
use std::sync::Arc;

/// Depth of the diagnostic retrieval trace recorded per probe.
pub const TRACE_DEPTH: usize = 20;

pub struct Engine {
    store: Store,
    knowledge: Arc<KnowledgeBase>,
    adjudicator: Box<dyn Adjudicator>,
    extractor: Box<dyn Extractor>,
    global_k: usize,
    transitive: bool,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("items", &self.store.len())
            .field("global_k", &self.global_k)
            .field("transitive", &self.transitive)
            .finish()
    }
}

impl Engine {
    /// Rule-based adjudication over `knowledge`.
    pub fn new(schema: Arc<StateSchema>, knowledge: Arc<KnowledgeBase>) -> Self {
        Self {
            store: Store::new(schema),
            adjudicator: Box::new(RuleBasedAdjudicator::new(knowledge.clone())),
            knowledge,
            extractor: Box::new(StructuralExtractor),
            global_k: DEFAULT_GLOBAL_K,
            transitive: false,
        }
    }

    pub fn with_adjudicator(mut self, adjudicator: Box<dyn Adjudicator>) -> Self {
        self.adjudicator = adjudicator;
        self
    }

    pub fn with_extractor(mut self, extractor: Box<dyn Extractor>) -> Self {
        self.extractor = extractor;
        self
    }

    pub fn with_global_k(mut self, k: usize) -> Self {
        self.global_k = k;
        self
    }

    pub fn with_transitive_propagation(mut self, on: bool) -> Self {
        self.transitive = on;
        self
    }

    /// Replaces the store; its schema must be the engine's.
    pub fn with_store(mut self, store: Store) -> Self {
        self.store = store;
        self
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn knowledge(&self) -> &KnowledgeBase {
        &self.knowledge
    }

    pub fn into_store(self) -> Store {
        self.store
    }

    /// Drops all memory, keeping configuration.
    pub fn reset(&mut self) {
        self.store = Store::new(self.store.schema().clone());
    }

    pub fn ingest(&mut self, session: &Session) -> Result<IngestReport, PipelineError> {
        let config = IngestConfig {
            extractor: self.extractor.as_ref(),
            adjudicator: self.adjudicator.as_ref(),
            knowledge: &self.knowledge,
            global_k: self.global_k,
            transitive: self.transitive,
        };
        ingest_session(&mut self.store, session, &config)
    }

    pub fn answer(&self, probe: &Probe, dimension: Option<Dimension>) -> Result<GroundedAnswer, ReadoutError> {
        answer_query(&self.store, probe, dimension)
    }

    /// Lexical top-[`TRACE_DEPTH`] over every stored item for the probe text,
    /// zero-overlap items dropped.
    /// Diagnostic only: answers never read it.
    pub fn retrieval_trace(&self, probe: &Probe) -> Vec<ItemId> {
        self.store
            .retrieve_lexical(&tokenize(&probe.text), TRACE_DEPTH)
            .into_iter()
            .filter(|(_, score)| *score > 0.0)
            .map(|(i, _)| i.id)
            .collect()
    }
}
