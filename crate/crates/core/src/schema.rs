//! The typed two-level state space (domains and slots) and the declarative
//! rule set that drives conflict reasoning.
//!
//! Both are loaded from TOML documents in strict mode: unknown keys are
//! rejected so typos surface as validation errors instead of silently
//! dropping a rule. A loaded [`StateSchema`] is immutable; it is shared
//! behind an `Arc` by the store, the pipeline and the simulator.

use crate::pattern::ValuePattern;
use crate::text::normalize_value;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

const DEFAULT_SCHEMA: &str = include_str!("../data/schema.toml");
const DEFAULT_KNOWLEDGE: &str = include_str!("../data/knowledge.toml");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error at `{ident}`: {message}")]
    Validation { ident: String, message: String },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("unknown slot `{0}`")]
    UnknownSlot(SlotRef),
}

impl SchemaError {
    fn invalid(ident: impl Into<String>, message: impl Into<String>) -> Self {
        SchemaError::Validation {
            ident: ident.into(),
            message: message.into(),
        }
    }
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// A `(domain, slot)` address, written `domain/slot` in files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SlotRef {
    pub domain: String,
    pub slot: String,
}

impl SlotRef {
    pub fn new(domain: impl Into<String>, slot: impl Into<String>) -> Self {
        Self {
            domain: domain.into(),
            slot: slot.into(),
        }
    }
}

impl fmt::Display for SlotRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.domain, self.slot)
    }
}

impl FromStr for SlotRef {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once('/') {
            Some((d, l)) if is_identifier(d) && is_identifier(l) => Ok(SlotRef::new(d, l)),
            _ => Err(SchemaError::invalid(s, "expected `domain/slot`")),
        }
    }
}

impl TryFrom<String> for SlotRef {
    type Error = SchemaError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SlotRef> for String {
    fn from(s: SlotRef) -> Self {
        s.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cardinality {
    /// At most one ACTIVE item at a time.
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Assert,
    /// Explicit negation ("I no longer ..."). Never produced by implicit
    /// evidence.
    Deny,
}

/// A state proposition: `value` holds (or, for `Deny`, explicitly does not
/// hold) for `attribute`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawProposition")]
pub struct Proposition {
    #[serde(rename = "slot")]
    pub attribute: SlotRef,
    pub value: String,
    pub polarity: Polarity,
}

#[derive(Deserialize)]
struct RawProposition {
    slot: SlotRef,
    value: String,
    polarity: Polarity,
}

impl TryFrom<RawProposition> for Proposition {
    type Error = SchemaError;

    fn try_from(raw: RawProposition) -> Result<Self, Self::Error> {
        Proposition::new(raw.slot, &raw.value, raw.polarity)
    }
}

impl Proposition {
    pub fn new(attribute: SlotRef, value: &str, polarity: Polarity) -> Result<Self, SchemaError> {
        let value = normalize_value(value);
        if value.is_empty() {
            return Err(SchemaError::invalid(attribute.to_string(), "empty proposition value"));
        }
        Ok(Self {
            attribute,
            value,
            polarity,
        })
    }

    /// Convenience for literals known to be well-formed.
    ///
    /// # Panics
    /// If `value` normalizes to the empty string.
    pub fn assert(attribute: SlotRef, value: &str) -> Self {
        Self::new(attribute, value, Polarity::Assert).expect("non-empty proposition value")
    }

    pub fn deny(attribute: SlotRef, value: &str) -> Self {
        Self::new(attribute, value, Polarity::Deny).expect("non-empty proposition value")
    }

    /// The same claim with positive polarity.
    pub fn asserted(&self) -> Self {
        Self {
            polarity: Polarity::Assert,
            ..self.clone()
        }
    }
}

impl fmt::Display for Proposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.polarity {
            Polarity::Assert => write!(f, "{}@{}", self.value, self.attribute),
            Polarity::Deny => write!(f, "!{}@{}", self.value, self.attribute),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DomainDef {
    pub name: String,
    pub slots: Vec<(String, Cardinality)>,
}

/// Immutable after construction: there are no `&mut self` methods.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StateSchema {
    version: String,
    domains: Vec<DomainDef>,
    dependency_edges: BTreeSet<(String, String)>,
    #[serde(skip)]
    index: BTreeMap<SlotRef, Cardinality>,
}

impl StateSchema {
    pub fn from_parts(
        version: &str,
        domains: Vec<DomainDef>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, SchemaError> {
        if version.trim().is_empty() {
            return Err(SchemaError::invalid("version", "schema version must be non-empty"));
        }
        if domains.is_empty() {
            return Err(SchemaError::invalid("domains", "schema declares no domains"));
        }
        let mut seen = BTreeSet::new();
        let mut index = BTreeMap::new();
        for d in &domains {
            if !is_identifier(&d.name) {
                return Err(SchemaError::invalid(&d.name, "not a valid identifier"));
            }
            if !seen.insert(d.name.as_str()) {
                return Err(SchemaError::invalid(&d.name, "duplicate domain"));
            }
            if d.slots.is_empty() {
                return Err(SchemaError::invalid(&d.name, "domain declares no slots"));
            }
            for (slot, card) in &d.slots {
                let r = SlotRef::new(&d.name, slot);
                if !is_identifier(slot) {
                    return Err(SchemaError::invalid(r.to_string(), "not a valid identifier"));
                }
                if index.insert(r.clone(), *card).is_some() {
                    return Err(SchemaError::invalid(r.to_string(), "duplicate slot"));
                }
            }
        }
        let mut dependency_edges = BTreeSet::new();
        for (source, target) in edges {
            for end in [&source, &target] {
                if !seen.contains(end.as_str()) {
                    return Err(SchemaError::invalid(
                        format!("{source}->{target}"),
                        format!("dependency edge references undeclared domain `{end}`"),
                    ));
                }
            }
            dependency_edges.insert((source, target));
        }
        Ok(Self {
            version: version.to_string(),
            domains,
            dependency_edges,
            index,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn domains(&self) -> impl Iterator<Item = &str> {
        self.domains.iter().map(|d| d.name.as_str())
    }

    pub fn has_domain(&self, domain: &str) -> bool {
        self.domains.iter().any(|d| d.name == domain)
    }

    pub fn dependency_edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.dependency_edges
            .iter()
            .map(|(s, t)| (s.as_str(), t.as_str()))
    }

    pub fn has_edge(&self, source: &str, target: &str) -> bool {
        self.dependency_edges
            .contains(&(source.to_string(), target.to_string()))
    }

    /// All slots, in declaration order.
    pub fn slots(&self) -> impl Iterator<Item = (SlotRef, Cardinality)> + '_ {
        self.domains.iter().flat_map(|d| {
            d.slots
                .iter()
                .map(move |(s, c)| (SlotRef::new(&d.name, s), *c))
        })
    }

    pub fn domain_slots(&self, domain: &str) -> Result<Vec<SlotRef>, SchemaError> {
        let d = self
            .domains
            .iter()
            .find(|d| d.name == domain)
            .ok_or_else(|| SchemaError::UnknownDomain(domain.to_string()))?;
        Ok(d.slots.iter().map(|(s, _)| SlotRef::new(domain, s)).collect())
    }

    pub fn contains_slot(&self, slot: &SlotRef) -> bool {
        self.index.contains_key(slot)
    }

    pub fn slot_cardinality(&self, slot: &SlotRef) -> Result<Cardinality, SchemaError> {
        self.index
            .get(slot)
            .copied()
            .ok_or_else(|| SchemaError::UnknownSlot(slot.clone()))
    }

    /// Targets of all edges leaving `domain`.
    pub fn dependency_neighbors(&self, domain: &str) -> Result<BTreeSet<String>, SchemaError> {
        if !self.has_domain(domain) {
            return Err(SchemaError::UnknownDomain(domain.to_string()));
        }
        Ok(self
            .dependency_edges
            .iter()
            .filter(|(s, _)| s == domain)
            .map(|(_, t)| t.clone())
            .collect())
    }

    /// SHA-256 over the canonical JSON form. Used to check that no pipeline
    /// run mutates a loaded schema.
    pub fn structural_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    IncompatSameSlot,
    Dependency,
}

/// One declarative piece of world knowledge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KnowledgeRule {
    /// Values matching one pattern are incompatible with values matching the
    /// other, within a single slot. Symmetric.
    IncompatSameSlot {
        rule_id: String,
        slot: SlotRef,
        value_predicate_pair: (ValuePattern, ValuePattern),
    },
    /// An asserted value of `source_slot` matching `source_pattern` rules
    /// out any value of `target_slot` matching `target_pattern`.
    Dependency {
        rule_id: String,
        source_slot: SlotRef,
        source_pattern: ValuePattern,
        target_slot: SlotRef,
        target_pattern: ValuePattern,
        /// When present, the value the target slot is known to take instead.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        replacement: Option<String>,
    },
}

impl KnowledgeRule {
    pub fn rule_id(&self) -> &str {
        match self {
            KnowledgeRule::IncompatSameSlot { rule_id, .. }
            | KnowledgeRule::Dependency { rule_id, .. } => rule_id,
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self {
            KnowledgeRule::IncompatSameSlot { .. } => RuleKind::IncompatSameSlot,
            KnowledgeRule::Dependency { .. } => RuleKind::Dependency,
        }
    }

    /// Does this rule make `update` rule out `old`? Only positive assertions
    /// on either side participate.
    pub fn fires(&self, update: &Proposition, old: &Proposition) -> bool {
        if update.polarity != Polarity::Assert || old.polarity != Polarity::Assert {
            return false;
        }
        match self {
            KnowledgeRule::IncompatSameSlot {
                slot,
                value_predicate_pair: (a, b),
                ..
            } => {
                &update.attribute == slot
                    && &old.attribute == slot
                    && update.value != old.value
                    && ((a.matches(&update.value) && b.matches(&old.value))
                        || (b.matches(&update.value) && a.matches(&old.value)))
            }
            KnowledgeRule::Dependency {
                source_slot,
                source_pattern,
                target_slot,
                target_pattern,
                ..
            } => {
                &update.attribute == source_slot
                    && &old.attribute == target_slot
                    && source_pattern.matches(&update.value)
                    && target_pattern.matches(&old.value)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct KnowledgeBase {
    rules: Vec<KnowledgeRule>,
}

impl KnowledgeBase {
    pub fn new(rules: Vec<KnowledgeRule>, schema: &StateSchema) -> Result<Self, SchemaError> {
        let mut kb = KnowledgeBase::default();
        kb.extend(rules, schema)?;
        Ok(kb)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn rules(&self) -> &[KnowledgeRule] {
        &self.rules
    }

    pub fn rule(&self, rule_id: &str) -> Option<&KnowledgeRule> {
        self.rules.iter().find(|r| r.rule_id() == rule_id)
    }

    pub fn dependency_rules(&self) -> impl Iterator<Item = &KnowledgeRule> {
        self.rules
            .iter()
            .filter(|r| r.kind() == RuleKind::Dependency)
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Adds rules after validating each against `schema`.
    pub fn extend(
        &mut self,
        rules: impl IntoIterator<Item = KnowledgeRule>,
        schema: &StateSchema,
    ) -> Result<(), SchemaError> {
        for rule in rules {
            validate_rule(&rule, schema)?;
            if self.rule(rule.rule_id()).is_some() {
                return Err(SchemaError::invalid(rule.rule_id(), "duplicate rule_id"));
            }
            self.rules.push(rule);
        }
        Ok(())
    }
}

fn validate_rule(rule: &KnowledgeRule, schema: &StateSchema) -> Result<(), SchemaError> {
    let id = rule.rule_id();
    if !is_identifier(id) {
        return Err(SchemaError::invalid(id, "rule_id is not a valid identifier"));
    }
    let check_slot = |slot: &SlotRef| {
        if schema.contains_slot(slot) {
            Ok(())
        } else {
            Err(SchemaError::invalid(id, format!("undeclared slot `{slot}`")))
        }
    };
    match rule {
        KnowledgeRule::IncompatSameSlot { slot, .. } => check_slot(slot),
        KnowledgeRule::Dependency {
            source_slot,
            target_slot,
            replacement,
            ..
        } => {
            check_slot(source_slot)?;
            check_slot(target_slot)?;
            if source_slot == target_slot {
                return Err(SchemaError::invalid(
                    id,
                    "dependency rule must cross slots; use incompat_same_slot",
                ));
            }
            let (s, t) = (&source_slot.domain, &target_slot.domain);
            if s != t && !schema.has_edge(s, t) {
                return Err(SchemaError::invalid(
                    id,
                    format!("no dependency edge `{s}` -> `{t}` declared"),
                ));
            }
            if let Some(r) = replacement {
                if normalize_value(r).is_empty() {
                    return Err(SchemaError::invalid(id, "empty replacement value"));
                }
            }
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Document loading
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct RawSchema {
    version: String,
    #[serde(default)]
    domains: Vec<RawDomain>,
    #[serde(default)]
    dependency_edges: Vec<RawEdge>,
}

#[derive(Deserialize)]
struct RawDomain {
    name: String,
    slots: Vec<RawSlot>,
}

#[derive(Deserialize)]
struct RawSlot {
    name: String,
    cardinality: Cardinality,
}

#[derive(Deserialize)]
struct RawEdge {
    source: String,
    target: String,
}

#[derive(Deserialize)]
struct RawKnowledge {
    #[serde(default)]
    version: Option<String>,
    #[serde(default)]
    knowledge_rules: Vec<KnowledgeRule>,
}

const SCHEMA_KEYS: &[&str] = &["version", "domains", "dependency_edges", "knowledge_rules"];
const KNOWLEDGE_KEYS: &[&str] = &["version", "knowledge_rules"];
const DOMAIN_KEYS: &[&str] = &["name", "slots"];
const SLOT_KEYS: &[&str] = &["name", "cardinality"];
const EDGE_KEYS: &[&str] = &["source", "target"];
const RULE_KEYS: &[&str] = &[
    "rule_id",
    "kind",
    "slot",
    "value_predicate_pair",
    "source_slot",
    "source_pattern",
    "target_slot",
    "target_pattern",
    "replacement",
];

fn check_keys(table: &toml::Table, allowed: &[&str], context: &str) -> Result<(), SchemaError> {
    match table.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(SchemaError::invalid(
            format!("{context}.{k}"),
            "unknown field",
        )),
        None => Ok(()),
    }
}

fn check_array_keys(
    table: &toml::Table,
    key: &str,
    allowed: &[&str],
) -> Result<(), SchemaError> {
    let Some(value) = table.get(key) else {
        return Ok(());
    };
    let Some(items) = value.as_array() else {
        return Err(SchemaError::invalid(key, "expected an array"));
    };
    for (i, item) in items.iter().enumerate() {
        let ctx = format!("{key}[{i}]");
        let t = item
            .as_table()
            .ok_or_else(|| SchemaError::invalid(&ctx, "expected a table"))?;
        check_keys(t, allowed, &ctx)?;
        if key == "domains" {
            check_array_keys(t, "slots", SLOT_KEYS)
                .map_err(|e| prefix_error(e, &ctx))?;
        }
    }
    Ok(())
}

fn prefix_error(e: SchemaError, ctx: &str) -> SchemaError {
    match e {
        SchemaError::Validation { ident, message } => SchemaError::Validation {
            ident: format!("{ctx}.{ident}"),
            message,
        },
        other => other,
    }
}

fn parse_table(document: &str) -> Result<toml::Table, SchemaError> {
    document
        .parse::<toml::Table>()
        .map_err(|e| SchemaError::Parse(e.message().to_string()))
}

fn typed<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T, SchemaError> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| SchemaError::invalid("document", e.message().to_string()))
}

/// Parses and validates a schema document. Any `knowledge_rules` present
/// are checked for unknown fields but not returned; see [`load_knowledge`].
pub fn load_schema(document: &str) -> Result<StateSchema, SchemaError> {
    let table = parse_table(document)?;
    check_keys(&table, SCHEMA_KEYS, "schema")?;
    check_array_keys(&table, "domains", DOMAIN_KEYS)?;
    check_array_keys(&table, "dependency_edges", EDGE_KEYS)?;
    check_array_keys(&table, "knowledge_rules", RULE_KEYS)?;
    let mut table = table;
    table.remove("knowledge_rules");
    let raw: RawSchema = typed(table)?;
    let domains = raw
        .domains
        .into_iter()
        .map(|d| DomainDef {
            name: d.name,
            slots: d.slots.into_iter().map(|s| (s.name, s.cardinality)).collect(),
        })
        .collect();
    StateSchema::from_parts(
        &raw.version,
        domains,
        raw.dependency_edges.into_iter().map(|e| (e.source, e.target)),
    )
}

/// Loads the `knowledge_rules` of a document. Accepts either a full schema
/// document or a rules-only document (`version` optional, must match).
pub fn load_knowledge(document: &str, schema: &StateSchema) -> Result<KnowledgeBase, SchemaError> {
    let mut table = parse_table(document)?;
    let is_schema_doc = table.contains_key("domains");
    if is_schema_doc {
        check_keys(&table, SCHEMA_KEYS, "schema")?;
        table.retain(|k, _| KNOWLEDGE_KEYS.contains(&k));
    } else {
        check_keys(&table, KNOWLEDGE_KEYS, "knowledge")?;
    }
    check_array_keys(&table, "knowledge_rules", RULE_KEYS)?;
    let raw: RawKnowledge = typed(table)?;
    if let Some(v) = &raw.version {
        if v != schema.version() {
            return Err(SchemaError::invalid(
                "version",
                format!("knowledge targets schema `{v}`, loaded schema is `{}`", schema.version()),
            ));
        }
    }
    KnowledgeBase::new(raw.knowledge_rules, schema)
}

/// The bundled ten-domain schema.
pub fn default_schema() -> StateSchema {
    load_schema(DEFAULT_SCHEMA).expect("bundled schema is valid")
}

/// The bundled rule set for [`default_schema`].
pub fn default_knowledge(schema: &StateSchema) -> KnowledgeBase {
    load_knowledge(DEFAULT_KNOWLEDGE, schema).expect("bundled knowledge is valid")
}

pub fn default_schema_document() -> &'static str {
    DEFAULT_SCHEMA
}

pub fn default_knowledge_document() -> &'static str {
    DEFAULT_KNOWLEDGE
}
