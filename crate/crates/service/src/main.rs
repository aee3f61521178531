use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::http::HeaderValue;
use clap::Parser;
use personaflow::adapter::PromptMatcher;
use personaflow::engine::Engine;
use personaflow::gateway::{BackendConfig, CachedBackend, Gateway, HttpBackend};
use personaflow::golden;
use personaflow::prompts::PromptCatalog;
use personaflow_service::{router, AppState, SessionStore};
use tower_http::cors::{Any, CorsLayer};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(version, about = "Serve personaflow sessions over HTTP")]
struct Args {
    #[arg(long, env = "PF_LISTEN_ADDR", default_value = "127.0.0.1:8080")]
    listen: SocketAddr,
    /// Persist sessions here; in-memory when unset.
    #[arg(long, env = "PF_SNAPSHOT_DIR")]
    snapshot_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    #[arg(long, env = "PF_CORS_ORIGIN")]
    cors_origin: Option<String>,
    /// Response cache (JSONL) in front of the model backend.
    #[arg(long, env = "PF_CACHE")]
    cache: Option<PathBuf>,
    /// Use the scripted demo backend instead of PF_BASE_URL.
    #[arg(long)]
    mock: bool,
}

fn gateway(args: &Args) -> Result<Gateway, String> {
    if args.mock {
        return Ok(Gateway::mock(golden::golden_backend()));
    }
    let cfg = BackendConfig::from_env().map_err(|e| e.to_string())?;
    let defaults = cfg.sampling_defaults();
    let http: Arc<dyn personaflow::gateway::Backend> = Arc::new(HttpBackend::new(cfg));
    let backend: Arc<dyn personaflow::gateway::Backend> = match &args.cache {
        Some(path) => Arc::new(CachedBackend::open(http, path).map_err(|e| e.to_string())?),
        None => http,
    };
    Ok(Gateway::new(backend, defaults))
}

#[tokio::main]
async fn main() -> Result<(), String> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let gateway = gateway(&args)?;
    let catalog = Arc::new(PromptCatalog::builtin());
    let engine = Engine::new(gateway.clone(), Arc::new(PromptMatcher::new(gateway, catalog.clone())), catalog);
    let store = match &args.snapshot_dir {
        Some(dir) => SessionStore::open(dir).map_err(|e| e.to_string())?,
        None => SessionStore::in_memory(),
    };
    tracing::info!(sessions = store.len(), "session store ready");
    let cors = match &args.cors_origin {
        Some(origin) => CorsLayer::new()
            .allow_origin(origin.parse::<HeaderValue>().map_err(|e| e.to_string())?)
            .allow_methods(Any)
            .allow_headers(Any),
        None => CorsLayer::permissive(),
    };
    let app = router(AppState {
        engine,
        store: Arc::new(store),
    })
    .layer(cors);
    let listener = tokio::net::TcpListener::bind(args.listen).await.map_err(|e| e.to_string())?;
    tracing::info!(addr = %args.listen, mock = args.mock, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| e.to_string())
}
