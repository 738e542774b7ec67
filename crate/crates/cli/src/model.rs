use crate::{EngineArgs, Failure, ModelArgs};
use anyhow::Context;
use statemem::adjudicator::{Adjudicator, ExternalAdjudicator, ExternalConfig, RuleBasedAdjudicator, TcpTransport};
use statemem::schema::{default_knowledge, default_schema, load_knowledge, load_schema};
use statemem::store::Store;
use statemem::{Engine, KnowledgeBase, StateSchema};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

pub struct Model {
    pub schema: Arc<StateSchema>,
    pub knowledge: Arc<KnowledgeBase>,
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read `{}`", path.display()))
        .map_err(Failure::env)
}

pub fn load_model(args: &ModelArgs) -> Result<Model, Failure> {
    let (schema, schema_doc) = match &args.schema {
        Some(path) => {
            let doc = read_text(path)?;
            let schema = load_schema(&doc)
                .with_context(|| format!("invalid schema `{}`", path.display()))
                .map_err(Failure::domain)?;
            (schema, Some(doc))
        }
        None => (default_schema(), None),
    };
    let knowledge = match (&args.knowledge, schema_doc) {
        (Some(path), _) => load_knowledge(&read_text(path)?, &schema)
            .with_context(|| format!("invalid knowledge `{}`", path.display()))
            .map_err(Failure::domain)?,
        (None, Some(doc)) => load_knowledge(&doc, &schema).map_err(Failure::domain)?,
        (None, None) => default_knowledge(&schema),
    };
    Ok(Model {
        schema: Arc::new(schema),
        knowledge: Arc::new(knowledge),
    })
}

pub fn build_adjudicator(args: &EngineArgs, knowledge: &Arc<KnowledgeBase>) -> Result<Box<dyn Adjudicator>, Failure> {
    if args.adjudicator == "rule" {
        return Ok(Box::new(RuleBasedAdjudicator::new(knowledge.clone())));
    }
    if !args.adjudicator.starts_with("tcp://") {
        return Err(Failure::domain(anyhow::anyhow!(
            "unknown adjudicator `{}` (expected `rule` or `tcp://host:port`)",
            args.adjudicator
        )));
    }
    let transport = TcpTransport::from_endpoint(&args.adjudicator).map_err(|e| Failure::domain(anyhow::anyhow!("{e}")))?;
    let config = ExternalConfig {
        timeout: Duration::from_millis(args.judge_timeout_ms),
        max_retries: args.judge_retries,
        ..ExternalConfig::default()
    };
    let judge = ExternalAdjudicator::new(Box::new(transport), config).map_err(Failure::domain)?;
    Ok(Box::new(judge))
}

pub fn build_engine(model: &Model, args: &EngineArgs) -> Result<Engine, Failure> {
    Ok(Engine::new(model.schema.clone(), model.knowledge.clone())
        .with_adjudicator(build_adjudicator(args, &model.knowledge)?)
        .with_global_k(args.global_k)
        .with_transitive_propagation(args.transitive))
}

/// A missing file yields an empty store.
pub fn open_store(path: &Path, schema: &Arc<StateSchema>) -> Result<Store, Failure> {
    if !path.exists() {
        return Ok(Store::new(schema.clone()));
    }
    let bytes = fs::read(path)
        .with_context(|| format!("cannot read store `{}`", path.display()))
        .map_err(Failure::env)?;
    Store::from_bytes(&bytes, schema.clone())
        .with_context(|| format!("cannot load store `{}`", path.display()))
        .map_err(Failure::domain)
}

/// Writes `bytes` next to `path` and renames over it, so readers never see
/// a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write()
        .with_context(|| format!("cannot write `{}`", path.display()))
        .map_err(Failure::env)
}
