//! Typed temporal memory store.
//!
//! Items are never deleted. An item is ACTIVE until later evidence archives
//! it as STALE; once STALE it stays STALE. SINGLE-cardinality slots hold at
//! most one ACTIVE item, and a slot whose old default was retired without a
//! settled replacement carries an `UNKNOWN_CURRENT` marker.
//!
//! The store is a plain value: mutation goes through `&mut self` (one
//! writer), and readers work on clones or shared references taken between
//! writes.

use crate::schema::{Cardinality, Proposition, SchemaError, SlotRef, StateSchema};
use crate::text::{token_set, tokenize};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u64);

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ItemStatus {
    Active,
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceKind {
    Direct,
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub source_kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    pub session_id: String,
    pub turn_index: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tagged_slot: Option<SlotRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StaleCause {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub id: ItemId,
    pub proposition: Proposition,
    pub status: ItemStatus,
    pub provenance: Provenance,
    pub evidence: Vec<EvidenceSpan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub staled_by: Option<StaleCause>,
}

impl MemoryItem {
    pub fn slot(&self) -> &SlotRef {
        &self.proposition.attribute
    }

    pub fn timestamp(&self) -> DateTime<Utc> {
        self.provenance.timestamp
    }

    pub fn is_active(&self) -> bool {
        self.status == ItemStatus::Active
    }

    /// Tokens of the proposition value and all evidence text.
    pub fn lexical_tokens(&self) -> BTreeSet<String> {
        let mut tokens = token_set(&self.proposition.value);
        for e in &self.evidence {
            tokens.extend(tokenize(&e.text));
        }
        tokens
    }
}

/// Everything needed to create an ACTIVE item; the store assigns the id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemDraft {
    pub proposition: Proposition,
    pub provenance: Provenance,
    pub evidence: Vec<EvidenceSpan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MarkerStatus {
    UnknownCurrent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMarker {
    pub slot: SlotRef,
    pub status: MarkerStatus,
    pub since: DateTime<Utc>,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub schema_version: String,
    pub items: Vec<MemoryItem>,
    pub markers: Vec<SlotMarker>,
    pub clock: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("unknown slot `{0}`")]
    UnknownSlot(SlotRef),
    #[error("slot `{slot}` is SINGLE and already has ACTIVE item {existing}")]
    SingleSlotOccupied { slot: SlotRef, existing: ItemId },
    #[error("temporal causality violated: item {item} at {item_time} cannot be revised by evidence at {cause_time}")]
    TemporalCausalityViolation {
        item: ItemId,
        item_time: DateTime<Utc>,
        cause_time: DateTime<Utc>,
    },
    #[error("item {0} is already STALE")]
    AlreadyStale(ItemId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("slot `{slot}` has ACTIVE item {item} written after the marker time")]
    ActiveItemPresent { slot: SlotRef, item: ItemId },
    #[error("io error{}: {message}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Io { offset: Option<u64>, message: String },
    #[error("snapshot was written for schema `{found}`, loaded schema is `{expected}`")]
    SchemaVersionMismatch { expected: String, found: String },
}

impl From<SchemaError> for StoreError {
    fn from(e: SchemaError) -> Self {
        match e {
            SchemaError::UnknownSlot(s) => StoreError::UnknownSlot(s),
            other => StoreError::Io {
                offset: None,
                message: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    schema: Arc<StateSchema>,
    items: BTreeMap<ItemId, MemoryItem>,
    markers: BTreeMap<SlotRef, SlotMarker>,
    clock: Option<DateTime<Utc>>,
    next_id: u64,
}

impl PartialEq for Store {
    fn eq(&self, other: &Self) -> bool {
        self.schema.version() == other.schema.version()
            && self.items == other.items
            && self.markers == other.markers
            && self.clock == other.clock
            && self.next_id == other.next_id
    }
}

impl Store {
    pub fn new(schema: Arc<StateSchema>) -> Self {
        Self {
            schema,
            items: BTreeMap::new(),
            markers: BTreeMap::new(),
            clock: None,
            next_id: 1,
        }
    }

    pub fn schema(&self) -> &Arc<StateSchema> {
        &self.schema
    }

    pub fn clock(&self) -> Option<DateTime<Utc>> {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// All items in id order.
    pub fn items(&self) -> impl Iterator<Item = &MemoryItem> {
        self.items.values()
    }

    pub fn active_items(&self) -> impl Iterator<Item = &MemoryItem> {
        self.items.values().filter(|i| i.is_active())
    }

    pub fn item(&self, id: ItemId) -> Option<&MemoryItem> {
        self.items.get(&id)
    }

    pub fn markers(&self) -> impl Iterator<Item = &SlotMarker> {
        self.markers.values()
    }

    pub fn marker(&self, slot: &SlotRef) -> Option<&SlotMarker> {
        self.markers.get(slot)
    }

    pub fn active_in_slot<'a>(&'a self, slot: &'a SlotRef) -> impl Iterator<Item = &'a MemoryItem> {
        self.items
            .values()
            .filter(move |i| i.is_active() && i.slot() == slot)
    }

    fn check_slot(&self, slot: &SlotRef) -> Result<Cardinality, StoreError> {
        self.schema
            .slot_cardinality(slot)
            .map_err(|_| StoreError::UnknownSlot(slot.clone()))
    }

    fn advance_clock(&mut self, t: DateTime<Utc>) {
        self.clock = Some(self.clock.map_or(t, |c| c.max(t)));
    }

    /// Stores a new ACTIVE item. Blind inserts into an occupied SINGLE slot
    /// are refused; callers replace through the write pipeline.
    pub fn insert_item(&mut self, draft: ItemDraft) -> Result<ItemId, StoreError> {
        let slot = draft.proposition.attribute.clone();
        if self.check_slot(&slot)? == Cardinality::Single {
            let occupant = self.active_in_slot(&slot).next().map(|i| i.id);
            if let Some(existing) = occupant {
                return Err(StoreError::SingleSlotOccupied { slot, existing });
            }
        }
        let id = ItemId(self.next_id);
        self.next_id += 1;
        let t = draft.provenance.timestamp;
        self.items.insert(
            id,
            MemoryItem {
                id,
                proposition: draft.proposition,
                status: ItemStatus::Active,
                provenance: draft.provenance,
                evidence: draft.evidence,
                staled_by: None,
            },
        );
        if self.markers.get(&slot).is_some_and(|m| m.since < t) {
            self.markers.remove(&slot);
        }
        self.advance_clock(t);
        Ok(id)
    }

    pub fn mark_stale(&mut self, id: ItemId, cause: StaleCause) -> Result<MemoryItem, StoreError> {
        let item = self.items.get_mut(&id).ok_or(StoreError::UnknownItem(id))?;
        if item.status == ItemStatus::Stale {
            return Err(StoreError::AlreadyStale(id));
        }
        if cause.timestamp <= item.provenance.timestamp {
            return Err(StoreError::TemporalCausalityViolation {
                item: id,
                item_time: item.provenance.timestamp,
                cause_time: cause.timestamp,
            });
        }
        let t = cause.timestamp;
        item.status = ItemStatus::Stale;
        item.staled_by = Some(cause);
        let updated = item.clone();
        self.advance_clock(t);
        Ok(updated)
    }

    pub fn set_unknown_current(
        &mut self,
        slot: &SlotRef,
        since: DateTime<Utc>,
        cause: impl Into<String>,
    ) -> Result<SlotMarker, StoreError> {
        self.check_slot(slot)?;
        if let Some(item) = self.active_in_slot(slot).find(|i| i.timestamp() > since) {
            return Err(StoreError::ActiveItemPresent {
                slot: slot.clone(),
                item: item.id,
            });
        }
        let marker = SlotMarker {
            slot: slot.clone(),
            status: MarkerStatus::UnknownCurrent,
            since,
            cause: cause.into(),
        };
        self.markers.insert(slot.clone(), marker.clone());
        self.advance_clock(since);
        Ok(marker)
    }

    /// Same-slot items: ACTIVE before STALE, newest first, then by id.
    pub fn retrieve_same_slot(&self, slot: &SlotRef) -> Result<Vec<&MemoryItem>, StoreError> {
        self.check_slot(slot)?;
        let mut out: Vec<&MemoryItem> = self.items.values().filter(|i| i.slot() == slot).collect();
        out.sort_by(|a, b| {
            a.status
                .cmp(&b.status)
                .then(b.timestamp().cmp(&a.timestamp()))
                .then(a.id.cmp(&b.id))
        });
        Ok(out)
    }

    /// Top-`k` items by token overlap with `query_terms`:
    /// `|query ∩ item| / |query|`, ties broken by timestamp (newest first)
    /// then id.
    pub fn retrieve_lexical(&self, query_terms: &[String], k: usize) -> Vec<(&MemoryItem, f64)> {
        self.retrieve_lexical_where(query_terms, k, |_| true)
    }

    pub fn retrieve_lexical_where(
        &self,
        query_terms: &[String],
        k: usize,
        filter: impl Fn(&MemoryItem) -> bool,
    ) -> Vec<(&MemoryItem, f64)> {
        rank_lexical(query_terms, self.items.values().filter(|i| filter(i)), k)
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            schema_version: self.schema.version().to_string(),
            items: self.items.values().cloned().collect(),
            markers: self.markers.values().cloned().collect(),
            clock: self.clock,
        }
    }

    /// Writes the store as newline-delimited JSON: a header, then items in
    /// id order, then markers in slot order.
    pub fn persist(&self, mut sink: impl Write) -> Result<(), StoreError> {
        let io = |e: std::io::Error| StoreError::Io {
            offset: None,
            message: e.to_string(),
        };
        let header = Record::Header(Header {
            schema_version: self.schema.version().to_string(),
            clock: self.clock,
            next_id: self.next_id,
            item_count: self.items.len(),
            marker_count: self.markers.len(),
        });
        let write = |sink: &mut dyn Write, r: &Record| -> Result<(), StoreError> {
            let line = serde_json::to_string(r).expect("records serialize");
            sink.write_all(line.as_bytes()).map_err(io)?;
            sink.write_all(b"\n").map_err(io)
        };
        write(&mut sink, &header)?;
        for item in self.items.values() {
            write(&mut sink, &Record::Item(item.clone()))?;
        }
        for marker in self.markers.values() {
            write(&mut sink, &Record::Marker(marker.clone()))?;
        }
        sink.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.persist(&mut buf).expect("writing to memory cannot fail");
        buf
    }

    /// SHA-256 of the persisted form.
    pub fn persist_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn load(mut source: impl Read, schema: Arc<StateSchema>) -> Result<Self, StoreError> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes).map_err(|e| StoreError::Io {
            offset: None,
            message: e.to_string(),
        })?;
        Self::from_bytes(&bytes, schema)
    }

    pub fn from_bytes(bytes: &[u8], schema: Arc<StateSchema>) -> Result<Self, StoreError> {
        let corrupt = |offset: usize, message: String| StoreError::Io {
            offset: Some(offset as u64),
            message,
        };
        let mut store = Store::new(schema);
        let mut header: Option<Header> = None;
        let mut offset = 0usize;
        for raw_line in bytes.split_inclusive(|&b| b == b'\n') {
            let line_offset = offset;
            offset += raw_line.len();
            if !raw_line.ends_with(b"\n") {
                return Err(corrupt(line_offset, "truncated record (missing newline)".into()));
            }
            let line = &raw_line[..raw_line.len() - 1];
            if line.is_empty() {
                continue;
            }
            let record: Record = serde_json::from_slice(line)
                .map_err(|e| corrupt(line_offset, format!("malformed record: {e}")))?;
            match (record, &header) {
                (Record::Header(h), None) => {
                    if h.schema_version != store.schema.version() {
                        return Err(StoreError::SchemaVersionMismatch {
                            expected: store.schema.version().to_string(),
                            found: h.schema_version,
                        });
                    }
                    header = Some(h);
                }
                (Record::Header(_), Some(_)) => {
                    return Err(corrupt(line_offset, "duplicate header".into()))
                }
                (_, None) => return Err(corrupt(line_offset, "record before header".into())),
                (Record::Item(item), Some(_)) => {
                    store
                        .check_slot(item.slot())
                        .map_err(|e| corrupt(line_offset, e.to_string()))?;
                    if let Some(prev) = store.items.keys().next_back() {
                        if *prev >= item.id {
                            return Err(corrupt(line_offset, format!("item {} out of order", item.id)));
                        }
                    }
                    validate_item(&item).map_err(|m| corrupt(line_offset, m))?;
                    store.items.insert(item.id, item);
                }
                (Record::Marker(m), Some(_)) => {
                    store
                        .check_slot(&m.slot)
                        .map_err(|e| corrupt(line_offset, e.to_string()))?;
                    store.markers.insert(m.slot.clone(), m);
                }
            }
        }
        let Some(h) = header else {
            return Err(corrupt(0, "missing header".into()));
        };
        if store.items.len() != h.item_count || store.markers.len() != h.marker_count {
            return Err(corrupt(
                bytes.len(),
                format!(
                    "expected {} items and {} markers, found {} and {}",
                    h.item_count,
                    h.marker_count,
                    store.items.len(),
                    store.markers.len()
                ),
            ));
        }
        if let Err(m) = check_single_uniqueness(&store) {
            return Err(corrupt(bytes.len(), m));
        }
        store.clock = h.clock;
        store.next_id = h.next_id;
        Ok(store)
    }
}

/// Ranks `candidates` by `|query ∩ item| / |query|`, newest first on ties,
/// then by id. Shared by the store and by retrieval-only baselines.
pub fn rank_lexical<'a>(
    query_terms: &[String],
    candidates: impl Iterator<Item = &'a MemoryItem>,
    k: usize,
) -> Vec<(&'a MemoryItem, f64)> {
    if k == 0 {
        return Vec::new();
    }
    let query: BTreeSet<&str> = query_terms.iter().map(String::as_str).collect();
    let mut scored: Vec<(&MemoryItem, f64)> = candidates
        .map(|i| (i, overlap_score(&query, &i.lexical_tokens())))
        .collect();
    scored.sort_by(|(a, sa), (b, sb)| {
        sb.total_cmp(sa)
            .then(b.timestamp().cmp(&a.timestamp()))
            .then(a.id.cmp(&b.id))
    });
    scored.truncate(k);
    scored
}

fn overlap_score(query: &BTreeSet<&str>, tokens: &BTreeSet<String>) -> f64 {
    if query.is_empty() {
        return 0.0;
    }
    let hits = query.iter().filter(|q| tokens.contains(**q)).count();
    hits as f64 / query.len() as f64
}

fn validate_item(item: &MemoryItem) -> Result<(), String> {
    match (&item.status, &item.staled_by) {
        (ItemStatus::Active, None) => Ok(()),
        (ItemStatus::Active, Some(_)) => Err(format!("ACTIVE item {} carries staled_by", item.id)),
        (ItemStatus::Stale, None) => Err(format!("STALE item {} lacks staled_by", item.id)),
        (ItemStatus::Stale, Some(c)) if c.timestamp <= item.timestamp() => {
            Err(format!("item {} staled by earlier evidence", item.id))
        }
        (ItemStatus::Stale, Some(_)) => Ok(()),
    }
}

fn check_single_uniqueness(store: &Store) -> Result<(), String> {
    let mut seen = BTreeSet::new();
    for item in store.active_items() {
        if store.schema.slot_cardinality(item.slot()) == Ok(Cardinality::Single)
            && !seen.insert(item.slot().clone())
        {
            return Err(format!("SINGLE slot `{}` has multiple ACTIVE items", item.slot()));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema_version: String,
    clock: Option<DateTime<Utc>>,
    next_id: u64,
    item_count: usize,
    marker_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Header(Header),
    Item(MemoryItem),
    Marker(SlotMarker),
}
