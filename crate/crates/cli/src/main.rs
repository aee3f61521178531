use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use personaflow::adapter::PromptMatcher;
use personaflow::dataset::{
    self, annotate_corpus, build_attribute_pairs, build_dpo_pairs, build_masked_records, corpus_stats,
    filter_by_self_disclosure, parse_corpus, AnnotatedDialogue, DatasetWarning, MaskedProfileRecord,
    DEFAULT_DPO_CANDIDATES,
};
use personaflow::engine::{Engine, EngineConfig, PersonaSetting};
use personaflow::gateway::{Backend, BackendConfig, CachedBackend, Gateway, HttpBackend};
use personaflow::golden;
use personaflow::metrics::IdfModel;
use personaflow::persona::Persona;
use personaflow::prompts::PromptCatalog;
use personaflow::sim::{
    self, alignment_curve, desk, export_pairwise_bundle, static_eval, AlignmentCurve, EvalDialogue, SettingTranscripts,
    SimulationConfig, SimulationResult, StaticEvalRow, Transcript,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "personaflow", version, about = "Dataset, metric and simulation tools for personaflow")]
struct Cli {
    #[command(flatten)]
    backend: BackendArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BackendArgs {
    /// Offline rule-based backend instead of PF_BASE_URL.
    #[arg(long, global = true)]
    mock: bool,
    /// JSONL response cache in front of the model backend.
    #[arg(long, global = true, env = "PF_CACHE")]
    cache: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Keep corpus dialogues whose supporter self-disclosed more than twice.
    Filter {
        input: PathBuf,
        /// Write the kept dialogues here as JSONL.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Annotate seeker and supporter personas for each dialogue.
    Annotate {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Annotate every dialogue, skipping the self-disclosure filter.
        #[arg(long)]
        no_filter: bool,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Pair each seeker attribute with the closest same-category supporter attribute.
    Pairs {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Masked-profile training records.
    Mask {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Records per dialogue.
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Preference pairs from judged refinement candidates.
    Dpo {
        input: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        #[arg(long, short = 'n', default_value_t = DEFAULT_DPO_CANDIDATES)]
        candidates: u32,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
    },
    /// Counts over an annotated corpus.
    Stats { input: PathBuf },
    /// Response metrics over scored dialogues, optionally with a PA series.
    Metrics {
        /// JSONL of {responses, references, persona}.
        dialogues: PathBuf,
        /// Simulation runs to derive a per-turn PA series from.
        #[arg(long)]
        runs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,6,8")]
        turns: Vec<u32>,
        #[command(flatten)]
        idf: IdfArgs,
    },
    /// Self-play dialogues between a seeker agent and the engine.
    Simulate {
        /// Run N dialogues in the synthetic desk world (offline, oracle matcher).
        #[arg(long, conflicts_with = "seekers")]
        desk: Option<usize>,
        /// JSONL of seeker personas.
        #[arg(long, required_unless_present = "desk")]
        seekers: Option<PathBuf>,
        /// JSONL of ground-truth supporter personas aligned with the seekers.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_values_t = PersonaSetting::ALL)]
        settings: Vec<PersonaSetting>,
        #[arg(long, default_value_t = sim::DEFAULT_MAX_ROUNDS)]
        rounds: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Mean PA per setting at sampled turns.
    Curve {
        runs: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,2,4,6,8")]
        turns: Vec<u32>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        idf: IdfArgs,
    },
    /// Metric table per setting.
    StaticEval {
        /// JSON array (or JSONL) of {setting, dialogues}.
        input: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        idf: IdfArgs,
    },
    /// Blinded side-by-side bundle for human raters.
    Pairwise {
        runs: PathBuf,
        #[arg(long, default_value = "Ours")]
        a: PersonaSetting,
        #[arg(long, default_value = "PreMatch")]
        b: PersonaSetting,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        bundle: PathBuf,
        /// Unblinding key; keep away from raters.
        #[arg(long)]
        key: PathBuf,
    },
}

#[derive(Args)]
struct IdfArgs {
    /// One document per line; defaults to the texts of the input itself.
    #[arg(long)]
    idf_corpus: Option<PathBuf>,
}

/// One simulated dialogue as written by `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimRun {
    dialogue: usize,
    setting: PersonaSetting,
    seeker_persona: Persona,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<Persona>,
    result: SimulationResult,
}

fn gateway(args: &BackendArgs) -> Result<Gateway> {
    if args.mock {
        return Ok(Gateway::mock(golden::demo_backend()));
    }
    let cfg = BackendConfig::from_env().context("model backend (set PF_BASE_URL or pass --mock)")?;
    let defaults = cfg.sampling_defaults();
    let http: Arc<dyn Backend> = Arc::new(HttpBackend::new(cfg));
    let backend: Arc<dyn Backend> = match &args.cache {
        Some(path) => Arc::new(CachedBackend::open(http, path)?),
        None => http,
    };
    Ok(Gateway::new(backend, defaults))
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(dataset::import_jsonl(path)?)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    Ok(dataset::export_jsonl(records, path)?)
}

fn print_json(value: &Value) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn idf_model<'a>(args: &IdfArgs, fallback: impl Iterator<Item = &'a str>) -> Result<IdfModel> {
    let model = match &args.idf_corpus {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| path.display().to_string())?;
            IdfModel::build(text.lines().filter(|l| !l.trim().is_empty()))?
        }
        None => IdfModel::build(fallback)?,
    };
    Ok(model)
}

fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut text = format!("{header}\n");
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn curve_csv(path: &Path, curves: &[AlignmentCurve]) -> Result<()> {
    let rows = curves
        .iter()
        .flat_map(|c| c.points.iter().map(move |p| format!("{},{},{},{}", c.setting, p.turn, p.mean_pa, p.sessions)));
    write_csv(path, "setting,turn,mean_pa,sessions", rows)
}

fn eval_csv(path: &Path, rows: &[StaticEvalRow]) -> Result<()> {
    let lines = rows.iter().map(|r| {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.setting, r.bleu_1, r.bleu_2, r.bleu_3, r.rouge_l, r.distinct_1, r.distinct_2, r.distinct_3, r.p_cover, r.a_cover
        )
    });
    write_csv(
        path,
        "setting,bleu_1,bleu_2,bleu_3,rouge_l,distinct_1,distinct_2,distinct_3,p_cover,a_cover",
        lines,
    )
}

fn runs_curve(runs: &[SimRun], model: &IdfModel, turns: &[u32]) -> Result<(Vec<AlignmentCurve>, Vec<String>)> {
    let mut sessions = Vec::new();
    for r in runs {
        let gt = r
            .ground_truth
            .as_ref()
            .with_context(|| format!("run {} ({}) has no ground-truth persona", r.dialogue, r.setting))?;
        sessions.push((&r.result.state, gt));
    }
    Ok(alignment_curve(&sessions, model, turns))
}

fn run_texts(runs: &[SimRun]) -> impl Iterator<Item = &str> {
    runs.iter().flat_map(|r| {
        r.ground_truth
            .iter()
            .flat_map(|p| p.texts())
            .chain(r.seeker_persona.texts())
            .chain(r.result.state.agent_persona.texts())
    })
}

fn warnings_json(warnings: &[DatasetWarning]) -> Value {
    serde_json::to_value(warnings).unwrap_or(Value::Null)
}

fn filter(input: &Path, output: Option<&Path>) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| input.display().to_string())?;
    let corpus = parse_corpus(&text)?;
    let outcome = filter_by_self_disclosure(&corpus);
    if let Some(path) = output {
        let kept: Vec<_> = outcome.kept.iter().map(|&i| corpus[i].clone()).collect();
        write_jsonl(path, &kept)?;
    }
    print_json(&json!({
        "total": corpus.len(),
        "kept": outcome.kept,
        "warnings": warnings_json(&outcome.warnings),
    }))
}

fn annotate(args: &BackendArgs, input: &Path, output: &Path, no_filter: bool, workers: usize) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| input.display().to_string())?;
    let corpus = parse_corpus(&text)?;
    let mut warnings = Vec::new();
    let selected: Vec<usize> = if no_filter {
        (0..corpus.len()).collect()
    } else {
        let outcome = filter_by_self_disclosure(&corpus);
        warnings.extend(outcome.warnings);
        outcome.kept
    };
    let mut dialogues = Vec::new();
    for i in selected {
        match corpus[i].to_history() {
            Ok(h) => dialogues.push((i, h)),
            Err(e) => warnings.push(DatasetWarning::new(i, "load", e.to_string())),
        }
    }
    let gateway = gateway(args)?;
    let (annotated, failed) = annotate_corpus(&dialogues, &gateway, &PromptCatalog::builtin(), workers);
    warnings.extend(failed);
    write_jsonl(output, &annotated)?;
    print_json(&json!({"annotated": annotated.len(), "warnings": warnings_json(&warnings)}))
}

fn pairs(args: &BackendArgs, input: &Path, output: &Path) -> Result<()> {
    let annotated: Vec<AnnotatedDialogue> = read_jsonl(input)?;
    let gateway = gateway(args)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for a in &annotated {
        match build_attribute_pairs(a, &gateway) {
            Ok(r) => records.extend(r),
            Err(e) => warnings.push(DatasetWarning::new(a.index, "pairs", e.to_string())),
        }
    }
    write_jsonl(output, &records)?;
    print_json(&json!({"pairs": records.len(), "warnings": warnings_json(&warnings)}))
}

fn mask(input: &Path, output: &Path, seed: u64, count: usize) -> Result<()> {
    let annotated: Vec<AnnotatedDialogue> = read_jsonl(input)?;
    let mut records = Vec::new();
    let mut warnings = Vec::new();
    for a in &annotated {
        // disjoint seed ranges per dialogue
        let base = seed.wrapping_add((a.index as u64).wrapping_mul(count as u64));
        let (r, w) = build_masked_records(a, base, count);
        records.extend(r);
        warnings.extend(w);
    }
    write_jsonl(output, &records)?;
    print_json(&json!({"records": records.len(), "warnings": warnings_json(&warnings)}))
}

fn dpo(args: &BackendArgs, input: &Path, output: &Path, n: u32, temperature: f64) -> Result<()> {
    let masked: Vec<MaskedProfileRecord> = read_jsonl(input)?;
    let gateway = gateway(args)?;
    let catalog = PromptCatalog::builtin();
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    let mut candidate_pairs = 0;
    for r in &masked {
        match build_dpo_pairs(r, &gateway, &gateway, &catalog, n, temperature) {
            Ok(out) => {
                candidate_pairs += out.candidate_pairs;
                pairs.extend(out.pairs);
                warnings.extend(out.warnings);
            }
            Err(e) => warnings.push(DatasetWarning::new(r.dialogue, "dpo", e.to_string())),
        }
    }
    write_jsonl(output, &pairs)?;
    print_json(&json!({
        "candidate_pairs": candidate_pairs,
        "pairs": pairs.len(),
        "warnings": warnings_json(&warnings),
    }))
}

fn metrics(dialogues: &Path, runs: Option<&Path>, turns: &[u32], idf: &IdfArgs) -> Result<()> {
    let dialogues: Vec<EvalDialogue> = read_jsonl(dialogues)?;
    let runs: Vec<SimRun> = match runs {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let texts = dialogues
        .iter()
        .flat_map(|d| d.references.iter().map(String::as_str).chain(d.persona.texts()))
        .chain(run_texts(&runs));
    let model = idf_model(idf, texts)?;
    let table = SettingTranscripts {
        setting: "input".into(),
        dialogues,
    };
    let row = static_eval(std::slice::from_ref(&table), &model)?.remove(0);
    let mut report = serde_json::to_value(&row)?;
    if let Value::Object(map) = &mut report {
        map.remove("setting");
        if !runs.is_empty() {
            let (curves, warnings) = runs_curve(&runs, &model, turns)?;
            map.insert("pa_series".into(), serde_json::to_value(curves)?);
            map.insert("pa_warnings".into(), serde_json::to_value(warnings)?);
        }
    }
    print_json(&report)
}

struct SimulateArgs<'a> {
    desk: Option<usize>,
    seekers: Option<&'a Path>,
    ground_truth: Option<&'a Path>,
    settings: &'a [PersonaSetting],
    rounds: u32,
    seed: u64,
    workers: usize,
    output: &'a Path,
}

fn simulate(backend: &BackendArgs, a: SimulateArgs) -> Result<()> {
    let sim_config = SimulationConfig {
        max_rounds: a.rounds,
        seed: a.seed,
        settings: a.settings.to_vec(),
        ..SimulationConfig::default()
    };
    let runs: Vec<SimRun> = match a.desk {
        Some(n) => {
            let suite = desk::run_desk_suite(n, &sim_config, &EngineConfig::default())?;
            suite
                .runs
                .into_iter()
                .map(|r| SimRun {
                    dialogue: r.dialogue,
                    setting: r.setting,
                    seeker_persona: suite.worlds[r.dialogue].seeker.clone(),
                    ground_truth: Some(r.ground_truth),
                    result: r.result,
                })
                .collect()
        }
        None => {
            let seekers: Vec<Persona> = read_jsonl(a.seekers.context("--seekers is required without --desk")?)?;
            let truth: Vec<Persona> = match a.ground_truth {
                Some(p) => read_jsonl(p)?,
                None => Vec::new(),
            };
            if !truth.is_empty() && truth.len() != seekers.len() {
                bail!("{} seekers but {} ground-truth personas", seekers.len(), truth.len());
            }
            let gateway = gateway(backend)?;
            let catalog = Arc::new(PromptCatalog::builtin());
            let engine = Engine::new(
                gateway.clone(),
                Arc::new(PromptMatcher::new(gateway.clone(), catalog.clone())),
                catalog,
            );
            let jobs: Vec<(usize, PersonaSetting)> = (0..seekers.len())
                .flat_map(|i| a.settings.iter().map(move |s| (i, *s)))
                .collect();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(a.workers.max(1)).build()?;
            pool.install(|| {
                jobs.par_iter()
                    .map(|&(i, setting)| {
                        let result = sim::simulate(
                            &format!("sim-{i}-{setting}"),
                            &seekers[i],
                            &engine,
                            EngineConfig::with_setting(setting),
                            &sim_config,
                            &gateway,
                        )?;
                        Ok(SimRun {
                            dialogue: i,
                            setting,
                            seeker_persona: seekers[i].clone(),
                            ground_truth: truth.get(i).cloned(),
                            result,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })?
        }
    };
    write_jsonl(a.output, &runs)?;
    let truncated = runs.iter().filter(|r| r.result.truncated).count();
    print_json(&json!({"runs": runs.len(), "truncated": truncated}))
}

fn curve(runs: &Path, turns: &[u32], csv: Option<&Path>, idf: &IdfArgs) -> Result<()> {
    let runs: Vec<SimRun> = read_jsonl(runs)?;
    let model = idf_model(idf, run_texts(&runs))?;
    let (curves, warnings) = runs_curve(&runs, &model, turns)?;
    if let Some(path) = csv {
        curve_csv(path, &curves)?;
    }
    print_json(&json!({"curves": curves, "warnings": warnings}))
}

fn static_eval_cmd(input: &Path, csv: Option<&Path>, idf: &IdfArgs) -> Result<()> {
    let text = fs::read_to_string(input).with_context(|| input.display().to_string())?;
    let settings: Vec<SettingTranscripts> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text)?
    } else {
        dataset::from_jsonl(&text)?
    };
    let texts = settings
        .iter()
        .flat_map(|s| s.dialogues.iter())
        .flat_map(|d| d.references.iter().map(String::as_str).chain(d.persona.texts()));
    let model = idf_model(idf, texts)?;
    let rows = static_eval(&settings, &model)?;
    if let Some(path) = csv {
        eval_csv(path, &rows)?;
    }
    print_json(&serde_json::to_value(rows)?)
}

fn pairwise(runs: &Path, a: PersonaSetting, b: PersonaSetting, seed: u64, bundle_path: &Path, key_path: &Path) -> Result<()> {
    if a == b {
        bail!("--a and --b must name different settings");
    }
    let runs: Vec<SimRun> = read_jsonl(runs)?;
    let transcript = |r: &SimRun| Transcript {
        setting: r.setting.to_string(),
        seeker_persona: r.seeker_persona.clone(),
        history: r.result.transcript.clone(),
    };
    let mut pairs = Vec::new();
    for x in runs.iter().filter(|r| r.setting == a) {
        if let Some(y) = runs.iter().find(|r| r.setting == b && r.dialogue == x.dialogue) {
            pairs.push((transcript(x), transcript(y)));
        }
    }
    if pairs.is_empty() {
        bail!("no dialogue was simulated under both {a} and {b}");
    }
    let (bundle, key) = export_pairwise_bundle(&pairs, seed)?;
    fs::write(bundle_path, serde_json::to_string_pretty(&bundle)?).with_context(|| bundle_path.display().to_string())?;
    fs::write(key_path, serde_json::to_string_pretty(&key)?).with_context(|| key_path.display().to_string())?;
    print_json(&json!({"items": bundle.items.len()}))
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .init();
    let cli = Cli::parse();
    let b = &cli.backend;
    match &cli.command {
        Command::Filter { input, output } => filter(input, output.as_deref()),
        Command::Annotate {
            input,
            output,
            no_filter,
            workers,
        } => annotate(b, input, output, *no_filter, *workers),
        Command::Pairs { input, output } => pairs(b, input, output),
        Command::Mask {
            input,
            output,
            seed,
            count,
        } => mask(input, output, *seed, *count),
        Command::Dpo {
            input,
            output,
            candidates,
            temperature,
        } => dpo(b, input, output, *candidates, *temperature),
        Command::Stats { input } => {
            let annotated: Vec<AnnotatedDialogue> = read_jsonl(input)?;
            print_json(&serde_json::to_value(corpus_stats(&annotated))?)
        }
        Command::Metrics { dialogues, runs, turns, idf } => metrics(dialogues, runs.as_deref(), turns, idf),
        Command::Simulate {
            desk,
            seekers,
            ground_truth,
            settings,
            rounds,
            seed,
            workers,
            output,
        } => simulate(
            b,
            SimulateArgs {
                desk: *desk,
                seekers: seekers.as_deref(),
                ground_truth: ground_truth.as_deref(),
                settings,
                rounds: *rounds,
                seed: *seed,
                workers: *workers,
                output,
            },
        ),
        Command::Curve { runs, turns, csv, idf } => curve(runs, turns, csv.as_deref(), idf),
        Command::StaticEval { input, csv, idf } => static_eval_cmd(input, csv.as_deref(), idf),
        Command::Pairwise {
            runs,
            a,
            b: other,
            seed,
            bundle,
            key,
        } => pairwise(runs, *a, *other, *seed, bundle, key),
    }
}
