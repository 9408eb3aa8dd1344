//! Command-line front end. Every command talks to the service over HTTP:
//! either a remote server given with --server, or an in-process instance
//! spawned on an ephemeral local port for the duration of the command.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use kgqa_client::Client;
use kgqa_core::api::{AnswerRequest, EvalRequest, SynthesizeRequest};
use kgqa_core::config::{Config, ConfigLayer, ProviderConfig};
use kgqa_core::error::Error;
use kgqa_core::eval::{load_dataset, AttackMode, AttackSpec, EvalReport};

#[derive(Debug, Parser)]
#[command(name = "kgqa", about = "Question answering over a knowledge graph")]
struct Cli {
    /// TOML config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base URL of a running service; default spawns one in-process.
    #[arg(long, global = true)]
    server: Option<String>,
    /// Graph triples TSV.
    #[arg(long, global = true)]
    graph: Option<PathBuf>,
    /// Entity labels TSV.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    /// Entity aliases TSV.
    #[arg(long, global = true)]
    aliases: Option<PathBuf>,
    /// Relation treated as rdf:type for type decorations.
    #[arg(long, global = true)]
    type_relation: Option<String>,
    /// JSON-lines training pool for retrieval-mixed demonstrations.
    #[arg(long, global = true)]
    training_pool: Option<PathBuf>,
    /// Directory for all output files.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallelism knob; 1 keeps runs fully deterministic.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    max_hops: Option<usize>,
    #[arg(long, global = true)]
    max_edges: Option<usize>,
    #[arg(long, global = true)]
    probe_budget: Option<usize>,
    #[arg(long, global = true)]
    k_relations: Option<usize>,
    #[arg(long, global = true)]
    n_per_parent: Option<usize>,
    #[arg(long, global = true)]
    m_demos: Option<usize>,
    /// Enable or disable decoration variants: on | off.
    #[arg(long, global = true)]
    decorations: Option<String>,
    /// Completion provider: echo-mock | remote.
    #[arg(long, global = true)]
    completion_mode: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Load the graph and print its statistics.
    LoadCheck,
    /// Dump the candidate pool and selected demonstrations.
    Synthesize {
        #[arg(long, conflicts_with = "dataset")]
        question: Option<String>,
        /// JSON-lines dataset; one pool/demos dump per item.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Answer one question and persist the full record.
    Answer {
        #[arg(long)]
        question: String,
        /// Entity link as surface=node-key; repeatable.
        #[arg(long = "link", value_parser = parse_link)]
        links: Vec<(String, String)>,
    },
    /// Evaluate a dataset; writes report.json and records.jsonl.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate under demonstration corruption.
    Attack {
        #[arg(long)]
        dataset: PathBuf,
        /// Number of demonstrations to corrupt per question.
        #[arg(long)]
        level: usize,
        /// relation | entity.
        #[arg(long)]
        mode: AttackMode,
    },
    /// Run the service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

fn parse_link(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| format!("expected surface=node-key, got {s:?}"))
}

fn flag_layer(cli: &Cli) -> Result<ConfigLayer, Error> {
    let decorations = match cli.decorations.as_deref() {
        None => None,
        Some("on") => Some(true),
        Some("off") => Some(false),
        Some(other) => {
            return Err(Error::Config(format!(
                "--decorations expects on or off, got {other:?}"
            )))
        }
    };
    Ok(ConfigLayer {
        graph: cli.graph.clone(),
        labels: cli.labels.clone(),
        aliases: cli.aliases.clone(),
        type_relation: cli.type_relation.clone(),
        training_pool: cli.training_pool.clone(),
        max_hops: cli.max_hops,
        max_edges: cli.max_edges,
        k_relations: cli.k_relations,
        n_per_parent: cli.n_per_parent,
        m_demos: cli.m_demos,
        probe_budget: cli.probe_budget,
        row_cap: None,
        decorations,
        retries: None,
        seed: cli.seed,
        jobs: cli.jobs,
        out_dir: cli.out_dir.clone(),
        similarity: None,
        reranker: None,
        completion: cli.completion_mode.as_ref().map(|mode| ProviderConfig {
            mode: Some(mode.clone()),
            ..ProviderConfig::default()
        }),
    })
}

/// The fully resolved config, re-expressed as a layer so a remote server
/// applies the same effective settings per request.
fn as_layer(c: &Config) -> ConfigLayer {
    ConfigLayer {
        graph: c.graph.clone(),
        labels: c.labels.clone(),
        aliases: c.aliases.clone(),
        type_relation: c.type_relation.clone(),
        training_pool: c.training_pool.clone(),
        max_hops: Some(c.max_hops),
        max_edges: Some(c.max_edges),
        k_relations: Some(c.k_relations),
        n_per_parent: Some(c.n_per_parent),
        m_demos: Some(c.m_demos),
        probe_budget: Some(c.probe_budget),
        row_cap: Some(c.row_cap),
        decorations: Some(c.decorations),
        retries: Some(c.retries),
        seed: Some(c.seed),
        jobs: Some(c.jobs),
        out_dir: Some(c.out_dir.clone()),
        similarity: Some(c.similarity.clone()),
        reranker: Some(c.reranker.clone()),
        completion: Some(c.completion.clone()),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("tokio runtime")
        .block_on(run(cli));
    std::process::exit(code);
}

async fn run(cli: Cli) -> i32 {
    match try_run(&cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

async fn try_run(cli: &Cli) -> Result<i32, Error> {
    let file = match &cli.config {
        Some(p) => Some(ConfigLayer::from_toml(&std::fs::read_to_string(p)?)?),
        None => None,
    };
    let config = Config::resolve(file.as_ref(), &flag_layer(cli)?);
    let overrides = Some(as_layer(&config));

    if let Cmd::Serve { addr } = &cli.cmd {
        let state = Arc::new(kgqa_service::load_state(config)?);
        let (bound, handle) = kgqa_service::spawn(state, addr).await?;
        println!("listening on {bound}");
        handle.await.map_err(|e| Error::Other(e.to_string()))?;
        return Ok(0);
    }

    // Keep the in-process server (if any) alive for the whole command.
    let mut _local = None;
    let base = match &cli.server {
        Some(url) => url.clone(),
        None => {
            let state = Arc::new(kgqa_service::load_state(config.clone())?);
            let (addr, handle) = kgqa_service::spawn(state, "127.0.0.1:0").await?;
            _local = Some(handle);
            format!("http://{addr}")
        }
    };
    let client = Client::new(base);
    let wrap = |e: kgqa_client::ClientError| Error::Other(e.to_string());

    let out_dir = config.out_dir.clone();
    std::fs::create_dir_all(&out_dir)?;

    match &cli.cmd {
        Cmd::Serve { .. } => unreachable!("handled above"),
        Cmd::LoadCheck => {
            let stats = client.graph_stats().await.map_err(wrap)?;
            println!(
                "graph ok: {} entities, {} relations, {} triples",
                stats.entities, stats.relations, stats.triples
            );
            Ok(0)
        }
        Cmd::Synthesize { question, dataset } => {
            let questions: Vec<(String, Option<BTreeMap<String, String>>)> = match (question, dataset) {
                (Some(q), None) => vec![(q.clone(), None)],
                (None, Some(path)) => load_dataset(BufReader::new(File::open(path)?))?
                    .into_iter()
                    .map(|item| (item.question, item.entity_links))
                    .collect(),
                _ => {
                    return Err(Error::Config(
                        "synthesize needs exactly one of --question or --dataset".into(),
                    ))
                }
            };
            let single = questions.len() == 1;
            for (i, (q, links)) in questions.iter().enumerate() {
                let resp = client
                    .synthesize(&SynthesizeRequest {
                        question: q.clone(),
                        entity_links: links.clone(),
                        overrides: overrides.clone(),
                    })
                    .await
                    .map_err(wrap)?;
                let (pool_name, demos_name) = if single {
                    ("pool.jsonl".to_string(), "demos.jsonl".to_string())
                } else {
                    (format!("pool_{i:03}.jsonl"), format!("demos_{i:03}.jsonl"))
                };
                write_jsonl(&out_dir.join(&pool_name), &resp.pool)?;
                write_jsonl(&out_dir.join(&demos_name), &resp.demonstrations)?;
                println!(
                    "{q}: {} candidates, {} demonstrations, {} probes{} -> {pool_name}, {demos_name}",
                    resp.pool.len(),
                    resp.demonstrations.len(),
                    resp.probe_count,
                    if resp.truncated { " (truncated)" } else { "" },
                );
            }
            Ok(0)
        }
        Cmd::Answer { question, links } => {
            let entity_links = if links.is_empty() {
                None
            } else {
                Some(links.iter().cloned().collect::<BTreeMap<_, _>>())
            };
            let record = client
                .answer(&AnswerRequest {
                    question: question.clone(),
                    entity_links,
                    overrides: overrides.clone(),
                })
                .await
                .map_err(wrap)?;
            let answers: Vec<String> = record.answers.iter().map(|a| a.to_string()).collect();
            if answers.is_empty() {
                println!("no answer");
            } else {
                println!("{}", answers.join(", "));
            }
            let path = out_dir.join("record.json");
            std::fs::write(&path, serde_json::to_string_pretty(&record)? + "\n")?;
            println!("record written to {}", path.display());
            Ok(0)
        }
        Cmd::Eval { dataset } => {
            let items = load_dataset(BufReader::new(File::open(dataset)?))?;
            let resp = client
                .eval(&EvalRequest {
                    items,
                    attack: None,
                    overrides: overrides.clone(),
                })
                .await
                .map_err(wrap)?;
            finish_eval(&out_dir, &resp.report, &resp.records)
        }
        Cmd::Attack {
            dataset,
            level,
            mode,
        } => {
            let items = load_dataset(BufReader::new(File::open(dataset)?))?;
            let resp = client
                .attack(&EvalRequest {
                    items,
                    attack: Some(AttackSpec {
                        level: *level,
                        mode: *mode,
                        seed: config.seed,
                    }),
                    overrides: overrides.clone(),
                })
                .await
                .map_err(wrap)?;
            finish_eval(&out_dir, &resp.report, &resp.records)
        }
    }
}

fn finish_eval(
    out_dir: &std::path::Path,
    report: &EvalReport,
    records: &[kgqa_core::qa::AnswerRecord],
) -> Result<i32, Error> {
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report)? + "\n",
    )?;
    write_jsonl(&out_dir.join("records.jsonl"), records)?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "items {}  F1 {}  TPQ {}s  QPQ {}  tokens in/out {}/{}  pool {}",
        report.items.len(),
        fmt(report.aggregate_f1),
        fmt(report.mean_tpq_seconds),
        fmt(report.mean_qpq),
        fmt(report.mean_tokens_in),
        fmt(report.mean_tokens_out),
        fmt(report.mean_pool_size),
    );
    for (tag, stats) in &report.per_tag {
        println!("  {tag}: {} items, F1 {:.4}", stats.count, stats.f1);
    }
    if report.hard_failures > 0 {
        eprintln!("{} item(s) hard-failed", report.hard_failures);
        return Ok(1);
    }
    Ok(0)
}

fn write_jsonl<T: serde::Serialize>(path: &std::path::Path, rows: &[T]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for row in rows {
        writeln!(f, "{}", serde_json::to_string(row)?)?;
    }
    Ok(())
}
