use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use seal_core::agent::AgentConfig;
use seal_core::calibrate::{Linker, DEFAULT_EMBEDDER};
use seal_core::config::{ConfigError, GatewaySpec, GraphPaths, SealConfig};
use seal_core::fixtures::load_fixture;
use seal_core::harness::{DialogError, DialogFile, GoldGateway, GoldMode};
use seal_core::kg::{KgError, KnowledgeGraph};
use seal_core::llm::{EndpointGateway, GatewayError, LlmGateway, PromptBundle, ScriptedGateway};
use seal_core::memory::{DialogState, GlobalMemory, MemoryError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SetupError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("graph: {0}")]
    Graph(#[from] KgError),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("dialogs: {0}")]
    Dialogs(#[from] DialogError),
    #[error("{0}")]
    Invalid(String),
}

/// Stands in when no model is configured; every request fails, so
/// coreference uses its rule fallback and drafting reports the error.
pub struct UnavailableGateway;

impl LlmGateway for UnavailableGateway {
    fn complete(&self, _bundle: &PromptBundle) -> Result<String, GatewayError> {
        Err(GatewayError::Transport("no language model configured".into()))
    }
}

/// Command-line overrides shared by the service binary and the CLI.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct ServiceArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Tab-separated triple file.
    #[arg(long)]
    pub kg: Option<PathBuf>,
    /// Tab-separated label file.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// JSON-lines file backing the global memory.
    #[arg(long)]
    pub memory: Option<PathBuf>,
    /// Disable global memory reads and writes.
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long)]
    pub link_k: Option<usize>,
    #[arg(long)]
    pub keep_variants: Option<usize>,
    /// Serve a bundled fixture (graph and scripted model): family, count-territories.
    #[arg(long)]
    pub fixture: Option<String>,
    /// Directory of scripted model responses.
    #[arg(long)]
    pub scripted: Option<PathBuf>,
    /// Simulate the model from the gold forms of this dialog file.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// Per-leaf misspelling rate of the gold model's drafts.
    #[arg(long, default_value_t = 0.0)]
    pub typo_rate: f64,
}

impl ServiceArgs {
    pub fn to_config(&self) -> Result<SealConfig, SetupError> {
        let mut cfg = match &self.config {
            Some(p) => SealConfig::load(p)?,
            None => SealConfig::default(),
        };
        if let Some(triples) = &self.kg {
            cfg.graph = Some(GraphPaths {
                triples: triples.clone(),
                labels: self.labels.clone(),
            });
        } else if self.labels.is_some() {
            return Err(SetupError::Invalid("--labels needs --kg".into()));
        }
        if self.memory.is_some() {
            cfg.memory = self.memory.clone();
        }
        if self.no_memory {
            cfg.agent.ablations.no_memory = true;
        }
        if let Some(k) = self.link_k {
            cfg.agent.link_k = k;
        }
        if let Some(k) = self.keep_variants {
            cfg.agent.keep_variants = k;
        }
        let chosen = [self.fixture.is_some(), self.scripted.is_some(), self.gold.is_some()];
        if chosen.iter().filter(|x| **x).count() > 1 {
            return Err(SetupError::Invalid(
                "choose one of --fixture, --scripted, --gold".into(),
            ));
        }
        if let Some(name) = &self.fixture {
            cfg.llm = GatewaySpec::Fixture { name: name.clone() };
        }
        if let Some(dir) = &self.scripted {
            cfg.llm = GatewaySpec::Scripted { dir: dir.clone() };
        }
        if let Some(dialogs) = &self.gold {
            cfg.llm = GatewaySpec::Gold {
                dialogs: dialogs.clone(),
                typo_rate: self.typo_rate,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub struct AppState {
    pub kg: Arc<KnowledgeGraph>,
    pub linker: Linker<'static>,
    pub llm: Arc<dyn LlmGateway>,
    pub gateway_name: String,
    pub config: AgentConfig,
    pub memory: Mutex<GlobalMemory>,
    pub memory_path: Option<PathBuf>,
    pub sessions: Mutex<HashMap<String, DialogState>>,
    next_session: AtomicU64,
}

impl AppState {
    pub fn new(kg: KnowledgeGraph, llm: Arc<dyn LlmGateway>, gateway_name: &str, config: AgentConfig) -> Self {
        let linker = Linker::new(&kg, &DEFAULT_EMBEDDER);
        AppState {
            kg: Arc::new(kg),
            linker,
            llm,
            gateway_name: gateway_name.to_string(),
            config,
            memory: Mutex::new(GlobalMemory::new()),
            memory_path: None,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    pub fn with_memory(mut self, memory: GlobalMemory, path: Option<PathBuf>) -> Self {
        self.memory = Mutex::new(memory);
        self.memory_path = path;
        self
    }

    pub fn from_config(cfg: &SealConfig) -> Result<Self, SetupError> {
        if matches!(cfg.llm, GatewaySpec::Fixture { .. }) && cfg.graph.is_some() {
            return Err(SetupError::Invalid("a fixture brings its own graph; drop --kg".into()));
        }
        let loaded = match &cfg.graph {
            Some(paths) => {
                let (g, report) = KnowledgeGraph::load(&paths.triples, paths.labels.as_deref())?;
                tracing::info!(?report, "graph loaded");
                Some(g)
            }
            None => None,
        };
        let (kg, llm, name): (KnowledgeGraph, Arc<dyn LlmGateway>, String) = match &cfg.llm {
            GatewaySpec::Fixture { name } => {
                let (g, gw, _) =
                    load_fixture(name).ok_or_else(|| SetupError::Invalid(format!("unknown fixture `{name}`")))?;
                (g, Arc::new(gw), format!("fixture:{name}"))
            }
            spec => {
                let g = loaded.ok_or_else(|| SetupError::Invalid("no graph given (use --kg or --fixture)".into()))?;
                let (gw, name): (Arc<dyn LlmGateway>, String) = match spec {
                    GatewaySpec::None => (Arc::new(UnavailableGateway), "none".into()),
                    GatewaySpec::Endpoint(e) => (
                        Arc::new(EndpointGateway::new(e.clone())?),
                        format!("endpoint:{}", e.base_url),
                    ),
                    GatewaySpec::Scripted { dir } => (
                        Arc::new(ScriptedGateway::from_dir(dir)?),
                        format!("scripted:{}", dir.display()),
                    ),
                    GatewaySpec::Gold { dialogs, typo_rate } => {
                        let d = DialogFile::load(dialogs)?;
                        let gw = GoldGateway::new(&d, &g, GoldMode::Exact).with_typo_rate(*typo_rate);
                        (Arc::new(gw), format!("gold:{}", dialogs.display()))
                    }
                    GatewaySpec::Fixture { .. } => unreachable!("handled above"),
                };
                (g, gw, name)
            }
        };
        let memory = match &cfg.memory {
            Some(p) => GlobalMemory::restore(p)?,
            None => GlobalMemory::new(),
        };
        Ok(AppState::new(kg, llm, &name, cfg.agent.clone()).with_memory(memory, cfg.memory.clone()))
    }

    pub fn new_session(&self) -> String {
        let id = format!("s{}", self.next_session.fetch_add(1, Ordering::Relaxed));
        self.sessions
            .lock()
            .expect("session lock")
            .insert(id.clone(), DialogState::new());
        id
    }
}
