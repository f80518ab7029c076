use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use seal_client::SealClient;
use seal_core::api::{BatchGateway, BatchRequest, CorruptBenchRequest, EvolveRequest, GenRequest, TurnResponse};
use seal_core::config::GatewaySpec;
use seal_core::harness::{DialogFile, SynthSpec};
use seal_core::kg::KnowledgeGraph;
use seal_server::{serve, AppState, ServiceArgs, UnavailableGateway};
use serde::Serialize;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};

#[derive(Debug, Parser)]
#[command(name = "seal", about = "Conversational question answering over a knowledge graph")]
struct Cli {
    /// Talk to a running service instead of starting one in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    #[command(flatten)]
    service: ServiceArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Interactive dialog; `:why`, `:memory`, `:reset` and `:quit` are commands.
    Repl,
    /// Ask questions in order within one dialog.
    Ask { questions: Vec<String> },
    /// Run a dialog file and report metrics.
    Batch {
        /// JSON dialog file.
        dialogs: PathBuf,
        /// Simulate the model from the file's gold forms (honours --typo-rate).
        #[arg(long)]
        gold_gateway: bool,
        /// Start from and grow the service's global memory.
        #[arg(long)]
        use_global_memory: bool,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Generate a synthetic graph with gold dialogs.
    Gen {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON generator spec; the flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        entities: Option<usize>,
        #[arg(long)]
        relations: Option<usize>,
        #[arg(long)]
        dialogs: Option<usize>,
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        followup_rate: Option<f64>,
        /// Output directory for triples.tsv, labels.tsv and dialogs.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Syntax and linking recovery under injected corruption.
    CorruptBench {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        cases: usize,
        #[command(flatten)]
        report: ReportArgs,
    },
    /// Accuracy trend as global memory grows.
    EvolveReport {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Dialog stream over the service graph; a generated stream when absent.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[command(flatten)]
        report: ReportArgs,
    },
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    /// Write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON instead of the table.
    #[arg(long)]
    json: bool,
}

trait Report: Serialize {
    fn table(&self) -> String;
}

impl Report for seal_core::harness::BatchReport {
    fn table(&self) -> String {
        self.to_table()
    }
}

impl Report for seal_core::harness::CorruptionReport {
    fn table(&self) -> String {
        self.to_table()
    }
}

impl Report for seal_core::harness::EvolveReport {
    fn table(&self) -> String {
        self.to_table()
    }
}

fn emit(report: &impl Report, args: &ReportArgs) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    if let Some(p) = &args.out {
        std::fs::write(p, &json).with_context(|| format!("writing {}", p.display()))?;
    }
    if args.json {
        println!("{json}");
    } else {
        print!("{}", report.table());
    }
    Ok(())
}

fn needs_graph(cmd: &Command) -> bool {
    match cmd {
        Command::Repl | Command::Ask { .. } | Command::Batch { .. } => true,
        Command::EvolveReport { stream, .. } => stream.is_some(),
        Command::Gen { .. } | Command::CorruptBench { .. } => false,
    }
}

/// Starts the service on an ephemeral local port.
async fn embedded(service: &ServiceArgs, require_graph: bool) -> anyhow::Result<SealClient> {
    let cfg = service.to_config()?;
    let standalone = cfg.graph.is_none() && !matches!(cfg.llm, GatewaySpec::Fixture { .. });
    let state = if standalone && !require_graph {
        AppState::new(
            KnowledgeGraph::new(),
            Arc::new(UnavailableGateway),
            "none",
            cfg.agent.clone(),
        )
    } else {
        AppState::from_config(&cfg)?
    };
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    tokio::spawn(serve(listener, Arc::new(state)));
    Ok(SealClient::new(format!("http://{addr}")))
}

fn print_turn(out: &TurnResponse) {
    match &out.answer {
        Some(a) => println!("{a}"),
        None => println!(
            "(no answer: {})",
            out.trace.failure.as_deref().unwrap_or("unknown failure")
        ),
    }
}

fn print_why(out: &TurnResponse) {
    let t = &out.trace;
    println!("resolved: {}", t.resolved_question);
    println!("template: {}", t.template_id.as_deref().unwrap_or("-"));
    println!(
        "sexpr:    {}",
        t.sexpr.as_ref().map(ToString::to_string).unwrap_or_else(|| "-".into())
    );
    println!("sparql:\n{}", t.sparql.as_deref().unwrap_or("-"));
}

async fn repl(c: &SealClient) -> anyhow::Result<()> {
    let mut session = c.create_session().await?;
    let mut last: Option<TurnResponse> = None;
    let mut lines = BufReader::new(tokio::io::stdin()).lines();
    let mut stdout = tokio::io::stdout();
    loop {
        stdout.write_all(b"> ").await?;
        stdout.flush().await?;
        let Some(line) = lines.next_line().await? else { break };
        let line = line.trim();
        match line {
            "" => continue,
            ":quit" | ":q" => break,
            ":why" => match &last {
                Some(t) => print_why(t),
                None => println!("nothing asked yet"),
            },
            ":memory" => {
                let m = c.memory().await?;
                println!(
                    "{} records{}",
                    m.records,
                    m.path.map(|p| format!(" in {p}")).unwrap_or_default()
                );
            }
            ":reset" => {
                c.close(&session).await?;
                session = c.create_session().await?;
                last = None;
                println!("dialog reset");
            }
            q if q.starts_with(':') => println!("unknown command {q}"),
            q => {
                let out = c.ask(&session, q).await?;
                print_turn(&out);
                last = Some(out);
            }
        }
    }
    Ok(())
}

fn load_dialogs(path: &Path) -> anyhow::Result<DialogFile> {
    DialogFile::load(path).with_context(|| format!("loading {}", path.display()))
}

async fn run(cli: Cli) -> anyhow::Result<()> {
    let client = match &cli.server {
        Some(url) => SealClient::new(url.clone()),
        None => embedded(&cli.service, needs_graph(&cli.command)).await?,
    };
    match cli.command {
        Command::Repl => repl(&client).await?,
        Command::Ask { questions } => {
            if questions.is_empty() {
                bail!("no questions given");
            }
            let session = client.create_session().await?;
            for q in &questions {
                print_turn(&client.ask(&session, q).await?);
            }
        }
        Command::Batch {
            dialogs,
            gold_gateway,
            use_global_memory,
            report,
        } => {
            let req = BatchRequest {
                dialogs: load_dialogs(&dialogs)?,
                gateway: if gold_gateway {
                    BatchGateway::Gold {
                        typo_rate: cli.service.typo_rate,
                    }
                } else {
                    BatchGateway::Configured
                },
                use_global_memory,
            };
            emit(&client.batch(&req).await?, &report)?;
        }
        Command::Gen {
            seed,
            spec,
            entities,
            relations,
            dialogs,
            turns,
            followup_rate,
            out,
        } => {
            let mut s: SynthSpec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => SynthSpec::default(),
            };
            s.n_entities = entities.unwrap_or(s.n_entities);
            s.n_relations = relations.unwrap_or(s.n_relations);
            s.n_dialogs = dialogs.unwrap_or(s.n_dialogs);
            s.turns_per_dialog = turns.unwrap_or(s.turns_per_dialog);
            s.followup_rate = followup_rate.unwrap_or(s.followup_rate);
            let set = client.gen(&GenRequest { seed, spec: s }).await?;
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("triples.tsv"), &set.triples)?;
            std::fs::write(out.join("labels.tsv"), &set.labels)?;
            std::fs::write(out.join("dialogs.json"), set.dialogs.to_json())?;
            println!(
                "wrote {} dialogs ({} turns) to {}",
                set.dialogs.dialogs.len(),
                set.dialogs.turn_count(),
                out.display()
            );
        }
        Command::CorruptBench { seed, cases, report } => {
            let req = CorruptBenchRequest {
                seed,
                cases_per_class: cases,
            };
            emit(&client.corrupt_bench(&req).await?, &report)?;
        }
        Command::EvolveReport { seed, stream, report } => {
            let stream = stream.as_deref().map(load_dialogs).transpose()?;
            emit(&client.evolve(&EvolveRequest { seed, stream }).await?, &report)?;
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() {
    if let Err(e) = run(Cli::parse()).await {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
