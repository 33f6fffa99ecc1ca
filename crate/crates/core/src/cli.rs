//! The `delta-embed` command line.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a data or validation
//! error. Results go to stdout, as text or (with `--json`) as one JSON
//! document; diagnostics go to stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::analysis::{self, Metric, PoolEntry, RetrievalMode};
use crate::baselines;
use crate::embed::{self, EmbeddingConfig, LayerSelector, Method, ModelEmbedding, TokenSelector};
use crate::error::Result;
use crate::ingest::{read_dump, write_dump};
use crate::pipeline::{self, PoolSpec};
use crate::probe::{self, ProbeSet};
use crate::registry::Registry;
use crate::selection;
use crate::toylm::{
    self, corpus, dump_activations, init_model, load_checkpoint, sample_continuations, save_checkpoint, train,
    Domain, DumpSpec, MeaningSource, SamplingParams, Schedule, Split, ToyLmConfig, TrainSpec,
};

/// Environment variable naming the default registry directory.
pub const HOME_ENV: &str = "DELTA_EMBED_HOME";

#[derive(Debug, Parser)]
#[command(name = "delta-embed", version, about = "Embed finetuned models by their activation shifts")]
struct Cli {
    /// Print one JSON document instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Registry directory (default: $DELTA_EMBED_HOME, else ./.delta-embed).
    #[arg(long, global = true)]
    registry: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect probe sets.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Train, sample and dump the bundled toy transformer.
    #[command(subcommand)]
    Toylm(ToylmCmd),
    /// Compute an embedding from a dump pair or a checkpoint pair.
    Embed(EmbedArgs),
    /// Manage the embedding registry.
    #[command(subcommand)]
    Registry(RegistryCmd),
    /// Evaluate registry embeddings.
    #[command(subcommand)]
    Analyze(AnalyzeCmd),
    /// Pick models for merging.
    #[command(subcommand)]
    Select(SelectCmd),
    /// End-to-end toy runs.
    #[command(subcommand)]
    Pipeline(PipelineCmd),
}

#[derive(Debug, Args)]
struct ProbeArgs {
    /// Bundled set name.
    #[arg(long, default_value = "default", conflicts_with = "file")]
    set: String,
    /// Probe file: one prompt per line, `#` comments.
    #[arg(long)]
    file: Option<PathBuf>,
}

impl ProbeArgs {
    fn load(&self) -> Result<ProbeSet> {
        Ok(match &self.file {
            Some(p) => probe::load_probe_set(p)?,
            None => probe::bundled(&self.set)?,
        })
    }
}

#[derive(Debug, Subcommand)]
enum ProbeCmd {
    /// Print the prompts and the probe hash.
    Show(ProbeArgs),
    /// Print the probe hash only.
    Hash(ProbeArgs),
}

#[derive(Debug, Subcommand)]
enum ToylmCmd {
    /// Write a freshly initialized checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        d_model: usize,
        #[arg(long, default_value_t = 6)]
        layers: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 64)]
        context: usize,
    },
    /// Train a checkpoint on a corpus file or a synthetic domain split.
    Train(TrainArgs),
    /// Sample continuations of a prompt.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 16)]
        max_new_tokens: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Write ACTV dumps for a model and its base.
    Dump(DumpArgs),
    /// Print synthetic corpus examples, one per line.
    Corpus {
        #[arg(long)]
        domain: String,
        /// 1..3, or "pretrain" / "heldout".
        #[arg(long, default_value = "1")]
        split: String,
        #[arg(long, default_value_t = 10)]
        size: usize,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Text file, one example per line.
    #[arg(long, conflicts_with = "domain")]
    corpus: Option<PathBuf>,
    #[arg(long)]
    domain: Option<String>,
    #[arg(long, default_value = "1")]
    split: String,
    #[arg(long, default_value_t = 400)]
    size: usize,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, conflicts_with = "epochs")]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct DumpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    out_ft: PathBuf,
    #[arg(long)]
    out_base: PathBuf,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long)]
    base_id: Option<String>,
    #[command(flatten)]
    probe: ProbeArgs,
    /// Comma-separated blocks, or "all".
    #[arg(long, default_value = "all")]
    layers: String,
    #[arg(long)]
    logits: bool,
    /// Also record a meaning trace with this many base-sampled continuations.
    #[arg(long)]
    meaning_n: Option<usize>,
    #[arg(long, default_value_t = 16)]
    max_new_tokens: usize,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// delta-act, delta-logits, delta-meaning, flattened-weights or salient-mask.
    #[arg(long, default_value = "delta-act")]
    method: String,
    #[arg(long, required_unless_present = "ckpt_ft")]
    dump_ft: Option<PathBuf>,
    #[arg(long, required_unless_present = "ckpt_base")]
    dump_base: Option<PathBuf>,
    /// Weight baselines read checkpoints instead of dumps.
    #[arg(long)]
    ckpt_ft: Option<PathBuf>,
    #[arg(long)]
    ckpt_base: Option<PathBuf>,
    /// first, mid, last or weighted.
    #[arg(long, default_value = "last")]
    token: String,
    /// shallow, mid, deep, last, or a block index.
    #[arg(long, default_value = "last")]
    layer: String,
    #[arg(long, default_value_t = baselines::DEFAULT_SALIENT_FRACTION)]
    fraction: f64,
    /// Override the model id recorded in the embedding.
    #[arg(long)]
    model_id: Option<String>,
    /// Write the embedding as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum RegistryCmd {
    /// Add an embedding file.
    Add {
        #[arg(long)]
        embedding: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// List entries.
    List,
    /// Remove an entry.
    Remove { model_id: String },
}

#[derive(Debug, Args)]
struct CohortArgs {
    /// Cohort method; may be omitted when the registry holds one cohort.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Subcommand)]
enum AnalyzeCmd {
    /// Mean silhouette of a labeled cohort.
    Silhouette {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value = "cosine")]
        metric: String,
    },
    /// Compare a mixed model with two single-domain models.
    Additive {
        #[arg(long)]
        mixed: String,
        #[arg(long)]
        d1: String,
        #[arg(long)]
        d2: String,
    },
    /// Fraction of task embeddings whose nearest registry model has their label.
    Retrieval {
        #[command(flatten)]
        cohort: CohortArgs,
        /// LABEL=PATH to an embedding file; repeatable.
        #[arg(long, required = true)]
        task: Vec<String>,
        #[arg(long, default_value = "nearest_model")]
        mode: String,
    },
    /// Principal-component coordinates as CSV.
    Project {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct QueryArgs {
    /// Registry id of the query model.
    #[arg(long)]
    query_id: Option<String>,
    /// Embedding file of the query.
    #[arg(long)]
    query: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum SelectCmd {
    /// Top-k most similar models.
    Nearest {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        k: usize,
    },
    /// The most similar model plus a seeded random fill.
    Anchor {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        k: usize,
    },
    /// A maximally dispersed subset.
    Disperse {
        #[command(flatten)]
        cohort: CohortArgs,
        #[arg(long)]
        k: usize,
    },
}

#[derive(Debug, Subcommand)]
enum PipelineCmd {
    /// Build the 3-domain x 3-split toy pool and print its metrics.
    Demo,
}

/// A command result, in both renderings.
struct Output {
    text: String,
    json: Value,
}

fn out(text: impl Into<String>, json: Value) -> Output {
    Output { text: text.into(), json }
}

/// Runs the CLI on `args` (including the program name) and returns the exit
/// status.
pub fn run(args: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let json = cli.json;
    match dispatch(cli) {
        Ok(o) => {
            if json {
                println!("{}", serde_json::to_string_pretty(&o.json).expect("json output"));
            } else if !o.text.is_empty() {
                println!("{}", o.text.trim_end_matches('\n'));
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn registry_dir(explicit: &Option<PathBuf>) -> PathBuf {
    explicit
        .clone()
        .or_else(|| std::env::var_os(HOME_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".delta-embed"))
}

fn open_registry(dir: &Path) -> Result<Registry> {
    if dir.join(crate::registry::MANIFEST_FILE).exists() {
        Ok(Registry::load(dir)?)
    } else {
        Ok(Registry::new())
    }
}

fn dispatch(cli: Cli) -> Result<Output> {
    let reg_dir = registry_dir(&cli.registry);
    let seed = cli.seed;
    match cli.command {
        Command::Probe(cmd) => probe_cmd(cmd),
        Command::Toylm(cmd) => toylm_cmd(cmd, seed),
        Command::Embed(args) => embed_cmd(args),
        Command::Registry(cmd) => registry_cmd(cmd, &reg_dir),
        Command::Analyze(cmd) => analyze_cmd(cmd, &reg_dir),
        Command::Select(cmd) => select_cmd(cmd, &reg_dir, seed),
        Command::Pipeline(PipelineCmd::Demo) => demo_cmd(seed),
    }
}

fn probe_cmd(cmd: ProbeCmd) -> Result<Output> {
    match cmd {
        ProbeCmd::Show(a) => {
            let set = a.load()?;
            let mut text = String::new();
            for p in set.prompts() {
                text.push_str(&format!("{}\t{}\n", p.id, p.text));
            }
            text.push_str(&format!("hash\t{}\n", set.hash()));
            let prompts: Vec<&str> = set.texts().collect();
            Ok(out(text, json!({"name": set.name(), "prompts": prompts, "hash": set.hash()})))
        }
        ProbeCmd::Hash(a) => {
            let set = a.load()?;
            Ok(out(set.hash(), json!({"name": set.name(), "hash": set.hash()})))
        }
    }
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "pretrain" => Ok(Split::Pretrain),
        "heldout" | "held-out" => Ok(Split::HeldOut),
        _ => match s.parse::<u8>() {
            Ok(k @ 1..=3) => Ok(Split::Train(k)),
            Ok(k) => Err(toylm::ToyLmError::InvalidSplit(k).into()),
            Err(_) => Err(toylm::ToyLmError::InvalidTrainSpec(format!("unknown split {s:?}")).into()),
        },
    }
}

fn parse_layers(s: &str, n_layers: usize) -> Result<Vec<usize>> {
    if s == "all" {
        return Ok((1..=n_layers).collect());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| toylm::ToyLmError::InvalidConfig(format!("bad layer list {s:?}")).into())
        })
        .collect()
}

fn read_lines(path: &Path) -> Result<Vec<Vec<u8>>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.is_empty())
        .map(|l| l.as_bytes().to_vec())
        .collect())
}

fn toylm_cmd(cmd: ToylmCmd, seed: u64) -> Result<Output> {
    match cmd {
        ToylmCmd::Init {
            out: dir,
            d_model,
            layers,
            heads,
            context,
        } => {
            let ckpt = init_model(&ToyLmConfig::new(d_model, layers, heads, context, seed))?;
            save_checkpoint(&ckpt, &dir)?;
            let n = ckpt.params.len();
            Ok(out(
                format!("wrote {} ({n} parameters)", dir.display()),
                json!({"out": dir, "parameters": n}),
            ))
        }
        ToylmCmd::Train(a) => {
            let ckpt = load_checkpoint(&a.ckpt)?;
            let data = match (&a.corpus, &a.domain) {
                (Some(path), _) => read_lines(path)?,
                (None, Some(d)) => corpus(d.parse::<Domain>()?, parse_split(&a.split)?, a.size, seed),
                (None, None) => {
                    return Err(toylm::ToyLmError::InvalidTrainSpec("give --corpus or --domain".into()).into())
                }
            };
            let schedule = match (a.steps, a.epochs) {
                (_, Some(e)) => Schedule::Epochs(e),
                (Some(s), None) => Schedule::Steps(s),
                (None, None) => Schedule::Steps(300),
            };
            let spec = TrainSpec {
                corpus: data,
                lr: a.lr,
                batch_size: a.batch,
                schedule,
                seed,
            };
            let trained = train(&ckpt, &spec)?;
            save_checkpoint(&trained.checkpoint, &a.out)?;
            let first = trained.losses.first().copied().unwrap_or(f64::NAN);
            let last = trained.losses.last().copied().unwrap_or(f64::NAN);
            Ok(out(
                format!(
                    "trained {} steps: loss {first:.4} -> {last:.4}; wrote {}",
                    trained.losses.len(),
                    a.out.display()
                ),
                json!({"steps": trained.losses.len(), "first_loss": first, "final_loss": last, "out": a.out}),
            ))
        }
        ToylmCmd::Sample {
            ckpt,
            prompt,
            n,
            max_new_tokens,
            temperature,
        } => {
            let ckpt = load_checkpoint(&ckpt)?;
            let params = SamplingParams {
                n,
                max_new_tokens,
                temperature,
                seed,
            };
            let conts: Vec<String> = sample_continuations(&ckpt, &prompt, &params)?
                .into_iter()
                .map(|b| String::from_utf8(b).expect("ASCII continuations"))
                .collect();
            let text = conts.iter().map(|c| format!("{c:?}")).collect::<Vec<_>>().join("\n");
            Ok(out(text, json!({"prompt": prompt, "continuations": conts})))
        }
        ToylmCmd::Dump(a) => {
            let model = load_checkpoint(&a.ckpt)?;
            let base = load_checkpoint(&a.base)?;
            let probe = a.probe.load()?;
            let stem = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let spec = DumpSpec {
                model_id: a.model_id.unwrap_or_else(|| stem(&a.ckpt)),
                base_id: a.base_id.unwrap_or_else(|| stem(&a.base)),
                layers: parse_layers(&a.layers, model.config.n_layers)?,
                with_logits: a.logits,
                meaning: a.meaning_n.map(|n| {
                    MeaningSource::SampleBase(SamplingParams {
                        n,
                        max_new_tokens: a.max_new_tokens,
                        temperature: a.temperature,
                        seed,
                    })
                }),
            };
            let pair = dump_activations(&model, &base, &probe, &spec)?;
            for w in &pair.warnings {
                eprintln!("warning: {w}");
            }
            write_dump(&pair.model, &a.out_ft)?;
            write_dump(&pair.base, &a.out_base)?;
            Ok(out(
                format!("wrote {} and {}", a.out_ft.display(), a.out_base.display()),
                json!({"out_ft": a.out_ft, "out_base": a.out_base, "warnings": pair.warnings}),
            ))
        }
        ToylmCmd::Corpus { domain, split, size } => {
            let lines = corpus(domain.parse::<Domain>()?, parse_split(&split)?, size, seed);
            let lines: Vec<String> = lines.into_iter().map(|l| String::from_utf8(l).expect("ASCII corpus")).collect();
            Ok(out(lines.join("\n"), json!(lines)))
        }
    }
}

fn embed_cmd(a: EmbedArgs) -> Result<Output> {
    let method: Method = a.method.parse()?;
    let token: TokenSelector = a.token.parse()?;
    let layer: LayerSelector = a.layer.parse()?;
    let mut e = match method {
        Method::FlattenedWeights | Method::SalientMask => {
            let (Some(ft), Some(base)) = (&a.ckpt_ft, &a.ckpt_base) else {
                return Err(toylm::ToyLmError::InvalidConfig(format!("{method} needs --ckpt-ft and --ckpt-base")).into());
            };
            let ft_ckpt = load_checkpoint(ft)?;
            let base_ckpt = load_checkpoint(base)?;
            let name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            if method == Method::FlattenedWeights {
                baselines::flattened_weight_embedding(&ft_ckpt, &base_ckpt, &name(ft), &name(base))?
            } else {
                let m = baselines::salient_mask_embedding(&ft_ckpt, &base_ckpt, a.fraction, &name(ft), &name(base))?;
                if m.degenerate {
                    eprintln!("warning: no parameter differs from the base; mask is all zeros");
                }
                m.embedding
            }
        }
        _ => {
            let (Some(ft), Some(base)) = (&a.dump_ft, &a.dump_base) else {
                return Err(toylm::ToyLmError::InvalidConfig(format!("{method} needs --dump-ft and --dump-base")).into());
            };
            let ft = read_dump(ft)?;
            let base = read_dump(base)?;
            match method {
                Method::DeltaActivations => embed::delta_activations(&ft, &base, token, layer)?,
                Method::DeltaLogits => embed::delta_logits(&ft, &base, token)?,
                _ => embed::delta_meaning(&ft, &base)?,
            }
        }
    };
    if let Some(id) = a.model_id {
        e.model_id = id;
    }
    let doc = serde_json::to_value(&e)?;
    match &a.out {
        Some(path) => {
            fs::write(path, serde_json::to_string_pretty(&e)? + "\n")?;
            Ok(out(
                format!("{} {} dim {} -> {}", e.model_id, e.method, e.dim(), path.display()),
                json!({"model_id": e.model_id, "method": e.method, "dim": e.dim(), "out": path}),
            ))
        }
        None => Ok(out(serde_json::to_string(&e)?, doc)),
    }
}

fn read_embedding(path: &Path) -> Result<ModelEmbedding> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn registry_cmd(cmd: RegistryCmd, dir: &Path) -> Result<Output> {
    match cmd {
        RegistryCmd::Add { embedding, label } => {
            let mut reg = open_registry(dir)?;
            let e = read_embedding(&embedding)?;
            let id = e.model_id.clone();
            reg.add(e, label.as_deref())?;
            reg.save(dir)?;
            Ok(out(format!("added {id} ({} entries)", reg.len()), json!({"added": id, "size": reg.len()})))
        }
        RegistryCmd::List => {
            let reg = open_registry(dir)?;
            let rows: Vec<Value> = reg
                .list()
                .iter()
                .map(|e| {
                    json!({
                        "model_id": e.model_id,
                        "base_model_id": e.base_model_id,
                        "method": e.method,
                        "dim": e.dim(),
                        "label": reg.label(&e.model_id),
                    })
                })
                .collect();
            let text = reg
                .list()
                .iter()
                .map(|e| format!("{}\t{}\t{}\t{}", e.model_id, e.method, e.dim(), reg.label(&e.model_id).unwrap_or("-")))
                .collect::<Vec<_>>()
                .join("\n");
            Ok(out(text, json!({"entries": rows})))
        }
        RegistryCmd::Remove { model_id } => {
            let mut reg = Registry::load(dir)?;
            reg.remove(&model_id)?;
            reg.save(dir)?;
            Ok(out(format!("removed {model_id}"), json!({"removed": model_id, "size": reg.len()})))
        }
    }
}

/// The single `(method, config)` cohort selected by `--method`.
fn cohort<'r>(reg: &'r Registry, args: &CohortArgs) -> Result<Vec<&'r ModelEmbedding>> {
    let method: Option<Method> = args.method.as_deref().map(str::parse).transpose()?;
    let cohorts: Vec<(Method, EmbeddingConfig)> =
        reg.cohorts().into_iter().filter(|(m, _)| method.is_none_or(|want| *m == want)).collect();
    match cohorts.as_slice() {
        [(m, c)] => Ok(reg.cohort(*m, c)),
        [] => Err(analysis::AnalysisError::EmptyInput("no matching registry cohort").into()),
        _ => Err(analysis::AnalysisError::Parse {
            kind: "cohort (several match; pass --method)",
            value: args.method.clone().unwrap_or_default(),
        }
        .into()),
    }
}

fn analyze_cmd(cmd: AnalyzeCmd, dir: &Path) -> Result<Output> {
    let reg = Registry::load(dir)?;
    match cmd {
        AnalyzeCmd::Silhouette { cohort: c, metric } => {
            let metric: Metric = metric.parse()?;
            let members = cohort(&reg, &c)?;
            let points: Vec<(&str, &[f32])> = members.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
            let r = analysis::silhouette_score(&points, reg.labels(), metric)?;
            let mut text = String::new();
            for (id, s) in &r.per_point {
                text.push_str(&format!("{id}\t{s:.6}\n"));
            }
            text.push_str(&format!("mean silhouette ({metric}): {:.6}", r.mean));
            Ok(out(text, serde_json::to_value(&r)?))
        }
        AnalyzeCmd::Additive { mixed, d1, d2 } => {
            let r = analysis::additive_check(&reg.get(&mixed)?.vector, &reg.get(&d1)?.vector, &reg.get(&d2)?.vector)?;
            Ok(out(
                format!(
                    "sim(mixed, d1) {:.6}\nsim(mixed, d2) {:.6}\nsim(mixed, d1+d2) {:.6}",
                    r.sim_d1, r.sim_d2, r.sim_sum
                ),
                serde_json::to_value(r)?,
            ))
        }
        AnalyzeCmd::Retrieval { cohort: c, task, mode } => {
            let mode: RetrievalMode = mode.parse()?;
            let members = cohort(&reg, &c)?;
            let mut entries = Vec::new();
            for e in &members {
                let label = reg
                    .label(&e.model_id)
                    .ok_or_else(|| analysis::AnalysisError::Unlabeled(e.model_id.clone()))?;
                entries.push(PoolEntry {
                    model_id: &e.model_id,
                    vector: &e.vector,
                    label,
                });
            }
            let mut rows = Vec::new();
            let mut hits = 0;
            for t in &task {
                let (label, path) = t.split_once('=').ok_or_else(|| analysis::AnalysisError::Parse {
                    kind: "task (expected LABEL=PATH)",
                    value: t.clone(),
                })?;
                let e = read_embedding(Path::new(path))?;
                let r = analysis::retrieve(&e.vector, &entries, mode)?;
                hits += (r.label == label) as usize;
                rows.push(json!({"task": path, "label": label, "retrieved": r.matched, "retrieved_label": r.label, "similarity": r.similarity}));
            }
            let rate = hits as f64 / task.len() as f64;
            let text = rows
                .iter()
                .map(|r| format!("{} ({}) -> {} ({})", r["task"].as_str().unwrap(), r["label"].as_str().unwrap(), r["retrieved"].as_str().unwrap(), r["retrieved_label"].as_str().unwrap()))
                .chain([format!("retrieval rate {hits}/{} = {rate:.4}", task.len())])
                .collect::<Vec<_>>()
                .join("\n");
            Ok(out(text, json!({"rate": rate, "tasks": rows})))
        }
        AnalyzeCmd::Project { cohort: c, k, out: path } => {
            let members = cohort(&reg, &c)?;
            let points: Vec<(&str, &[f32])> = members.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
            let coords = analysis::pca_project(&points, k)?;
            let mut csv = Vec::new();
            analysis::write_projection_csv(&mut csv, &coords, reg.labels())?;
            let csv = String::from_utf8(csv).expect("csv is UTF-8");
            let rows: Vec<Value> = coords
                .iter()
                .map(|(id, c)| json!({"model_id": id, "label": reg.label(id), "coords": c}))
                .collect();
            match path {
                Some(p) => {
                    fs::write(&p, &csv)?;
                    Ok(out(format!("wrote {}", p.display()), json!({"out": p, "points": rows})))
                }
                None => Ok(out(csv, json!({"points": rows}))),
            }
        }
    }
}

fn query_vector(reg: &Registry, q: &QueryArgs) -> Result<ModelEmbedding> {
    match (&q.query_id, &q.query) {
        (Some(id), _) => Ok(reg.get(id)?.clone()),
        (None, Some(path)) => read_embedding(path),
        // clap's argument group requires one of the two
        (None, None) => unreachable!("query group is required"),
    }
}

/// Registry members of the query's cohort, excluding the query itself.
fn pool_for<'r>(reg: &'r Registry, q: &ModelEmbedding) -> Vec<(&'r str, &'r [f32])> {
    reg.cohort(q.method, &q.config)
        .into_iter()
        .filter(|e| e.model_id != q.model_id)
        .map(|e| (e.model_id.as_str(), e.vector.as_slice()))
        .collect()
}

fn select_cmd(cmd: SelectCmd, dir: &Path, seed: u64) -> Result<Output> {
    let reg = Registry::load(dir)?;
    match cmd {
        SelectCmd::Nearest { query, k } => {
            let q = query_vector(&reg, &query)?;
            let ranked = selection::nearest(&q.vector, &pool_for(&reg, &q), k)?;
            let text = ranked.iter().map(|(id, s)| format!("{id}\t{s:.6}")).collect::<Vec<_>>().join("\n");
            let rows: Vec<Value> = ranked.iter().map(|(id, s)| json!({"model_id": id, "similarity": s})).collect();
            Ok(out(text, json!({"query": q.model_id, "nearest": rows})))
        }
        SelectCmd::Anchor { query, k } => {
            let q = query_vector(&reg, &query)?;
            let picked = selection::anchor_select(&q.vector, &pool_for(&reg, &q), k, seed)?;
            Ok(out(picked.join("\n"), json!({"query": q.model_id, "anchor": picked[0], "selected": picked})))
        }
        SelectCmd::Disperse { cohort: c, k } => {
            let members = cohort(&reg, &c)?;
            let pool: Vec<(&str, &[f32])> = members.iter().map(|e| (e.model_id.as_str(), e.vector.as_slice())).collect();
            let picked = selection::disperse_select(&pool, k, seed)?;
            Ok(out(picked.join("\n"), json!({"selected": picked})))
        }
    }
}

fn demo_cmd(seed: u64) -> Result<Output> {
    let spec = PoolSpec::standard(seed);
    let report = pipeline::run_demo(&spec, &probe::default_probe_set())?;
    let mut text = format!(
        "toy pool: {} domains x {} splits, seed {seed}\n",
        spec.domains.len(),
        spec.splits.len()
    );
    text.push_str(&format!(
        "silhouette (cosine): delta activations {:.4}, flattened weights {:.4}, salient mask {:.4}\n",
        report.activation_silhouette, report.flattened_weights_silhouette, report.salient_mask_silhouette
    ));
    for a in &report.additive {
        text.push_str(&format!(
            "additive {}+{}: sim d1 {:.4}, d2 {:.4}, sum {:.4}\n",
            a.pair.0, a.pair.1, a.report.sim_d1, a.report.sim_d2, a.report.sim_sum
        ));
    }
    for t in &report.tasks {
        text.push_str(&format!("task {} -> {} ({:.4})\n", t.domain, t.retrieved, t.similarity));
    }
    text.push_str(&format!("retrieval rate {:.4}", report.retrieval_rate));
    Ok(out(text, json!({"spec": spec, "report": report})))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(v: &[&str]) -> Vec<String> {
        std::iter::once("delta-embed").chain(v.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(&args(&["--no-such-flag"])), 1);
        assert_eq!(run(&args(&["probe"])), 1);
        assert_eq!(run(&args(&["probe", "show", "--bogus"])), 1);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(&args(&["--help"])), 0);
    }

    #[test]
    fn data_errors_exit_two() {
        assert_eq!(run(&args(&["probe", "show", "--set", "nope"])), 2);
        let dir = tempfile::tempdir().unwrap();
        let reg = dir.path().join("empty");
        assert_eq!(run(&args(&["analyze", "silhouette", "--registry", reg.to_str().unwrap()])), 2);
    }

    #[test]
    fn split_and_layer_parsing() {
        assert_eq!(parse_split("2").unwrap(), Split::Train(2));
        assert_eq!(parse_split("heldout").unwrap(), Split::HeldOut);
        assert!(parse_split("4").is_err());
        assert_eq!(parse_layers("all", 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_layers("0, 2", 3).unwrap(), vec![0, 2]);
        assert!(parse_layers("x", 3).is_err());
    }
}
