use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use malleable::attribution::{self, AttributionError};
use malleable::backend::{BackendError, LogitBackend};
use malleable::decoder::{self, DecodeError, DecodeOptions, TraceDetail};
use malleable::graph::{EncodingAssignment, GraphError, NewVersion};
use malleable::modularizer::{ExtractError, Extractor};
use malleable::prompt::{self, Choice, DecodeMode, MalleablePrompt, PromptError, SteeringConfig};
use malleable::service::{self, AppState, BackendKind, ExtractorKind, ServiceConfig, Workspace};
use malleable::sweep::{self, SweepError};

#[derive(Parser)]
#[command(name = "steer", version, about = "Attribute-level steering of text generation")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// toy | remote
    #[arg(long, env = "STEER_BACKEND", default_value = "toy", global = true)]
    backend: BackendKind,
    /// Toy model spec (JSON). The built-in demo model is used when absent.
    #[arg(long, env = "STEER_MODEL_SPEC", global = true)]
    model_spec: Option<PathBuf>,
    /// Logits endpoint for the remote backend.
    #[arg(long, env = "STEER_REMOTE_ENDPOINT", global = true)]
    remote_endpoint: Option<String>,
    /// Token list (JSON array of strings) for the remote backend.
    #[arg(long, env = "STEER_VOCAB", global = true)]
    vocab: Option<PathBuf>,
    /// rules | remote
    #[arg(long, env = "STEER_EXTRACTOR", default_value = "rules", global = true)]
    extractor: ExtractorKind,
    /// Chat endpoint for the remote extractor.
    #[arg(long, env = "STEER_EXTRACTOR_ENDPOINT", global = true)]
    extractor_endpoint: Option<String>,
    #[arg(long, env = "STEER_WORKSPACE", default_value = "steer-workspace", global = true)]
    workspace: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Modularize a prompt and print it as JSON.
    Parse { text: String },
    /// Steered generation; stores a version unless --no-save.
    Generate {
        #[command(flatten)]
        input: PromptInput,
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        parent: Option<u64>,
        #[arg(long)]
        no_save: bool,
        /// Print the full generation record.
        #[arg(long)]
        json: bool,
    },
    /// Attribution report for a stored version.
    Attribute {
        node_id: u64,
        #[arg(long, default_value_t = attribution::DEFAULT_EPSILON)]
        epsilon: f64,
    },
    /// One decode per lambda value of a continuous attribute.
    Sweep {
        #[command(flatten)]
        input: PromptInput,
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        attr: String,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long, default_value_t = 3.0)]
        to: f64,
        #[arg(long, default_value_t = 0.5)]
        step: f64,
        #[arg(long)]
        json: bool,
    },
    /// Version graph operations.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        listen: std::net::SocketAddr,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print nodes and visual encodings as JSON.
    Export {
        #[arg(long)]
        color_by: Option<String>,
        #[arg(long)]
        fill_by: Option<String>,
        #[arg(long)]
        size_by: Option<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PromptInput {
    /// Raw prompt text, modularized with the active extractor.
    #[arg(required_unless_present = "prompt_file")]
    text: Option<String>,
    /// A modularized prompt as JSON.
    #[arg(long, conflicts_with = "text")]
    prompt_file: Option<PathBuf>,
}

#[derive(Args)]
struct Settings {
    /// `id=value`; continuous values snap to the 0.5 grid.
    #[arg(long = "lambda", value_name = "ID=VALUE")]
    lambdas: Vec<String>,
    /// `id=option` for categorical or numeric attributes.
    #[arg(long = "choice", value_name = "ID=VALUE")]
    choices: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = prompt::DEFAULT_MAX_TOKENS)]
    max_tokens: usize,
    /// Sample at this temperature instead of greedy decoding.
    #[arg(long)]
    temperature: Option<f64>,
}

enum Failure {
    Usage(String),
    Backend(String),
    Validation(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Backend(_) => 3,
            Failure::Validation(_) => 4,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Backend(m) | Failure::Validation(m) | Failure::Other(m) => m,
        }
    }
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Tokenize(_) | BackendError::UnknownToken { .. } | BackendError::EmptyContext => {
                Failure::Validation(e.to_string())
            }
            _ => Failure::Backend(e.to_string()),
        }
    }
}

impl From<DecodeError> for Failure {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Backend(b) => b.into(),
            DecodeError::Failed(_) => Failure::Backend(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<ExtractError> for Failure {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::Remote(_) => Failure::Backend(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::Validation(e.to_string())
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::Io(_) | GraphError::Json(_) => Failure::Other(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<AttributionError> for Failure {
    fn from(e: AttributionError) -> Self {
        match e {
            AttributionError::Extract(x) => x.into(),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<SweepError> for Failure {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::NotContinuous(_) | SweepError::Grid(_) => Failure::Usage(e.to_string()),
            SweepError::Prompt(p) => p.into(),
            SweepError::Decode(d) => d.into(),
            SweepError::Attribution(a) => a.into(),
        }
    }
}

impl From<malleable::Error> for Failure {
    fn from(e: malleable::Error) -> Self {
        use malleable::Error as E;
        match e {
            E::Backend(b) => b.into(),
            E::Prompt(p) => p.into(),
            E::Extract(x) => x.into(),
            E::Decode(d) => d.into(),
            E::Graph(g) => g.into(),
            E::Attribution(a) => a.into(),
            E::Sweep(x) => x.into(),
            other => Failure::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn service_config(g: &Global) -> ServiceConfig {
    ServiceConfig {
        backend: g.backend,
        model_spec: g.model_spec.clone(),
        remote_endpoint: g.remote_endpoint.clone(),
        vocab: g.vocab.clone(),
        extractor: g.extractor,
        extractor_endpoint: g.extractor_endpoint.clone(),
        workspace: g.workspace.clone(),
        ..ServiceConfig::default()
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), Failure> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{}", serde_json::to_string_pretty(value)?) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn load_prompt(input: &PromptInput, extractor: &Extractor) -> Result<MalleablePrompt, Failure> {
    match (&input.prompt_file, &input.text) {
        (Some(path), _) => Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?),
        (None, Some(text)) => {
            let env = extractor.modularize(text)?;
            warn_all(&env.warnings);
            Ok(env.value)
        }
        (None, None) => Err(Failure::Usage("give a prompt text or --prompt-file".into())),
    }
}

fn split_setting(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| Failure::Usage(format!("expected ID=VALUE, got {s:?}")))
}

fn build_config(prompt: &MalleablePrompt, s: &Settings) -> Result<SteeringConfig, Failure> {
    let mut config = SteeringConfig::defaults(prompt);
    config.seed = s.seed;
    config.max_tokens = s.max_tokens;
    if let Some(t) = s.temperature {
        config.decode_mode = DecodeMode::Sampled { temperature: t };
    }
    for entry in &s.lambdas {
        let (id, v) = split_setting(entry)?;
        let v: f64 = v
            .parse()
            .map_err(|_| Failure::Usage(format!("bad lambda value in {entry:?}")))?;
        config = prompt::set_lambda(prompt, &config, id, v)?;
    }
    for entry in &s.choices {
        let (id, v) = split_setting(entry)?;
        let choice = match v.parse::<u64>() {
            Ok(n) if prompt.attribute(id)?.kind == prompt::AttributeKind::Numeric => Choice::Number(n),
            _ => Choice::Text(v.to_string()),
        };
        config = prompt::set_choice(prompt, &config, id, choice)?;
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = service_config(&cli.global);
    let workspace = Workspace::new(config.workspace.clone());
    match cli.command {
        Command::Parse { text } => {
            let extractor = config.build_extractor()?;
            let env = extractor.modularize(&text)?;
            warn_all(&env.warnings);
            print_json(&env.value)
        }
        Command::Generate {
            input,
            settings,
            parent,
            no_save,
            json,
        } => {
            let extractor = config.build_extractor()?;
            let backend: Arc<dyn LogitBackend> = config.build_backend()?;
            let prompt = load_prompt(&input, &extractor)?;
            let steering = build_config(&prompt, &settings)?;
            let record = decoder::generate(&prompt, &steering, backend.as_ref(), DecodeOptions::default())?;
            let node_id = if no_save {
                None
            } else {
                let v = NewVersion::new(prompt.clone(), steering.clone(), record.text.clone());
                Some(workspace.commit(parent, v, &record)?)
            };
            if json {
                print_json(&serde_json::json!({ "node_id": node_id, "record": record }))
            } else {
                println!("{}", record.text);
                if let Some(id) = node_id {
                    eprintln!("saved version {id} in {}", workspace.dir().display());
                }
                eprintln!(
                    "forward passes: {} stepping, {} opening",
                    record.passes.stepping, record.passes.opening
                );
                Ok(())
            }
        }
        Command::Attribute { node_id, epsilon } => {
            let extractor = config.build_extractor()?;
            let node = workspace.load_graph()?.node(node_id)?.clone();
            let record = workspace.load_record(node_id)?;
            let report = attribution::report(&record, &node.prompt, &node.config, &extractor, epsilon)?;
            print_json(&report)
        }
        Command::Sweep {
            input,
            settings,
            attr,
            from,
            to,
            step,
            json,
        } => {
            let extractor = config.build_extractor()?;
            let backend = config.build_backend()?;
            let prompt = load_prompt(&input, &extractor)?;
            if prompt.attribute(&attr).is_err() {
                return Err(Failure::Usage(format!("no attribute {attr:?} in the prompt")));
            }
            let base = build_config(&prompt, &settings)?;
            let grid = sweep::lambda_grid(from, to, step)?;
            let options = DecodeOptions {
                trace: TraceDetail::Full,
                allow_negative_lambda: false,
            };
            let report = sweep::sweep(&prompt, &base, &attr, &grid, backend.as_ref(), options)?;
            if json {
                return print_json(&report);
            }
            println!("{:>6}  {:>8}  {:>8}  {:>10}  text", "lambda", "overlap", "mean_phi", "mean_λF");
            for row in &report.rows {
                let phi = row.mean_phi.map_or("-".to_string(), |p| format!("{p:.4}"));
                println!(
                    "{:>6.1}  {:>8.3}  {:>8}  {:>10.4}  {}",
                    row.lambda, row.overlap, phi, row.mean_contribution, row.text
                );
            }
            Ok(())
        }
        Command::Graph {
            command:
                GraphCommand::Export {
                    color_by,
                    fill_by,
                    size_by,
                    output,
                },
        } => {
            let graph = workspace.load_graph()?;
            let assignment = if color_by.is_none() && fill_by.is_none() && size_by.is_none() {
                graph.encoding.clone()
            } else {
                EncodingAssignment {
                    color_by,
                    fill_by,
                    size_by,
                }
            };
            let encodings = graph.encode(&assignment)?;
            let doc = serde_json::json!({
                "nodes": graph.nodes(),
                "encoding": assignment,
                "encodings": encodings,
            });
            match output {
                Some(path) => {
                    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
                    Ok(())
                }
                None => print_json(&doc),
            }
        }
        Command::Serve { listen } => {
            let state = Arc::new(AppState::from_config(&config)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(state, listen))?;
            Ok(())
        }
    }
}
