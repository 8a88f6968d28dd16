//! `personaflow`: generate personas for a repository, map its issues to
//! them and read coverage analytics, against an embedded engine or a
//! running API server.
//!
//! Exit codes: 0 success, 2 invalid input or unknown entity, 3 failure of a
//! remote service (API server or hosting service), 4 model provider failure,
//! 1 anything else.

mod backend;
mod render;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Instant;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use personaflow_core::connector::{parse_repo_url, StateFilter, SyncMode, SyncRequest};
use personaflow_core::fixture::bundled_dir;
use personaflow_core::jobs::{JobSnapshot, JobStage};
use personaflow_core::model::{ConfidenceBand, IssueState, PersonaId, PersonaProfile, RepoId};
use personaflow_core::service::{GenerationRequest, IssueQuery, IssueView};
use serde::Serialize;
use serde_json::Value;

use backend::{job_exit_code, Backend, CliResult, Failure};

#[derive(Parser)]
#[command(
    name = "personaflow",
    version,
    about = "Repository personas and issue mapping"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Base URL of a running API server (remote mode).
    #[arg(long, global = true, env = "PERSONAFLOW_API")]
    api: Option<String>,
    /// Use an embedded engine even when an API URL is configured.
    #[arg(long, global = true)]
    local: bool,
    /// Where the embedded engine keeps its store.
    #[arg(
        long,
        global = true,
        env = "PERSONAFLOW_DATA_DIR",
        default_value = ".personaflow"
    )]
    data_dir: PathBuf,
    /// Model provider for the embedded engine.
    #[arg(long, global = true, value_enum, default_value_t = ProviderKind::Offline)]
    provider: ProviderKind,
    /// Fixture root for the offline provider (defaults to the bundled set).
    #[arg(long, global = true, env = "PERSONAFLOW_FIXTURES")]
    fixtures: Option<PathBuf>,
    /// Generate avatar images instead of parameterized avatar URLs.
    #[arg(long, global = true)]
    images: bool,
    /// Base URL of an OpenAI-compatible endpoint for the live provider.
    #[arg(
        long,
        global = true,
        env = "PERSONAFLOW_LLM_BASE",
        default_value = "https://api.openai.com/v1"
    )]
    llm_base: String,
    #[arg(
        long,
        global = true,
        env = "PERSONAFLOW_MODEL",
        default_value = "gpt-4o"
    )]
    model: String,
    #[arg(
        long,
        global = true,
        env = "PERSONAFLOW_IMAGE_MODEL",
        default_value = "dall-e-3"
    )]
    image_model: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProviderKind {
    /// Replay recorded responses and serve repositories from fixtures.
    Offline,
    /// Call the hosting service and an OpenAI-compatible endpoint.
    Live,
}

/// Settings for the embedded engine.
pub struct LocalOptions {
    pub data_dir: PathBuf,
    pub provider: ProviderKind,
    pub fixtures: PathBuf,
    pub images: bool,
    pub llm_base: String,
    pub model: String,
    pub image_model: String,
    pub api_key: Option<String>,
    pub host_token: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate personas for a repository.
    Analyze(AnalyzeArgs),
    /// Show one job, or all jobs when no id is given.
    Status {
        job: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// List analyzed repositories.
    Repos {
        #[arg(long)]
        json: bool,
    },
    /// List, edit, merge, export and regenerate personas
    #[command(subcommand)]
    Personas(PersonasCmd),
    /// Sync issues and manage their persona mappings
    #[command(subcommand)]
    Issues(IssuesCmd),
    /// Coverage summary for a repository.
    Analytics {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API over the embedded engine.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Repository URL, e.g. https://github.com/owner/name
    url: String,
    /// Number of personas to generate (1-10).
    #[arg(long, default_value_t = 4)]
    personas: usize,
    /// Extra documentation page to include (repeatable).
    #[arg(long = "doc-url")]
    doc_urls: Vec<String>,
    /// Free-text context for the analysis.
    #[arg(long, default_value = "")]
    context: String,
    /// Wait for the job and print the personas.
    #[arg(long)]
    wait: bool,
    /// After generation, sync the issues and map them to the personas.
    #[arg(long)]
    save: bool,
    /// Print personas as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
    Markdown,
}

#[derive(Subcommand)]
enum PersonasCmd {
    /// List personas.
    List {
        #[arg(long)]
        repo: Option<String>,
        /// Include archived personas.
        #[arg(long)]
        all: bool,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Show one persona.
    Show {
        id: String,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Edit fields of a persona.
    Edit {
        id: String,
        /// `field=value`; list fields take a JSON array (repeatable).
        #[arg(long = "set")]
        sets: Vec<String>,
        /// A JSON patch object, or `@path` to read one from a file.
        #[arg(long)]
        patch: Option<String>,
        /// Version last read; the edit fails if the persona changed since.
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        json: bool,
    },
    /// Merge two or more personas into one.
    Merge {
        #[arg(num_args = 2.., required = true)]
        ids: Vec<String>,
        #[arg(long)]
        guidance: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Archive a persona.
    Delete {
        id: String,
        #[arg(long)]
        version: Option<u64>,
    },
    /// Export active personas.
    Export {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Markdown)]
        format: Format,
    },
    /// Add a hand-written persona from a JSON profile file.
    Create {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate additional personas from the stored analysis.
    Generate {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        json: bool,
    },
    /// Replace all unedited AI personas with a fresh set.
    Regenerate {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    AllNew,
    Ids,
    Labels,
    DateRange,
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Open,
    Closed,
    All,
}

#[derive(Subcommand)]
enum IssuesCmd {
    /// Fetch issues from the hosting service and map the changed ones.
    Sync {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long, value_enum, default_value_t = ModeArg::AllNew)]
        mode: ModeArg,
        /// Issue numbers for `--mode ids` (comma separated).
        #[arg(long, value_delimiter = ',')]
        ids: Vec<u64>,
        /// Labels for `--mode labels` (comma separated).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// RFC 3339 lower bound for `--mode date-range`.
        #[arg(long)]
        since: Option<String>,
        /// RFC 3339 upper bound for `--mode date-range`.
        #[arg(long)]
        until: Option<String>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum)]
        state: Option<StateArg>,
        #[arg(long)]
        wait: bool,
    },
    /// List issues with their persona badges.
    List {
        #[arg(long)]
        repo: Option<String>,
        #[arg(long, value_enum, default_value_t = ViewArg::Github)]
        view: ViewArg,
        #[arg(long, value_enum)]
        band: Option<BandArg>,
        #[arg(long, value_enum)]
        state: Option<IssueStateArg>,
        /// Only issues associated with this persona id.
        #[arg(long)]
        persona: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Show one issue with its full mapping.
    Show {
        number: u64,
        #[arg(long)]
        repo: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Map issues that have no mapping yet.
    Map {
        #[arg(long)]
        repo: Option<String>,
        /// Re-map every issue; manual decisions are kept.
        #[arg(long)]
        force_remap_ai: bool,
        #[arg(long)]
        wait: bool,
    },
    /// Add or remove persona associations by hand.
    Associate {
        number: u64,
        #[arg(long)]
        repo: Option<String>,
        #[arg(long, value_delimiter = ',')]
        add: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        remove: Vec<String>,
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ViewArg {
    Github,
    Persona,
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    High,
    Medium,
    Low,
    Unmatched,
}

#[derive(Clone, Copy, ValueEnum)]
enum IssueStateArg {
    Open,
    Closed,
}

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("PERSONAFLOW_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("error")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    if let Err(f) = run(cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn local_options(g: &Global) -> LocalOptions {
    LocalOptions {
        data_dir: g.data_dir.clone(),
        provider: g.provider,
        fixtures: g.fixtures.clone().unwrap_or_else(bundled_dir),
        images: g.images,
        llm_base: g.llm_base.clone(),
        model: g.model.clone(),
        image_model: g.image_model.clone(),
        api_key: std::env::var("PERSONAFLOW_API_KEY")
            .ok()
            .filter(|k| !k.is_empty()),
        host_token: std::env::var("GITHUB_TOKEN").ok().filter(|k| !k.is_empty()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Command::Serve { addr } = cli.command {
        let engine = backend::local_engine(&local_options(&cli.global))?;
        let rt = tokio::runtime::Runtime::new()
            .map_err(|e| Failure::new(backend::EXIT_INTERNAL, e.to_string()))?;
        eprintln!("serving on http://{addr}");
        return rt
            .block_on(personaflow_server::serve(engine, addr))
            .map_err(|e| Failure::new(backend::EXIT_INTERNAL, e.to_string()));
    }
    let backend = match (&cli.global.api, cli.global.local) {
        (Some(url), false) => Backend::remote(url)?,
        _ => Backend::local(&local_options(&cli.global))?,
    };
    match cli.command {
        Command::Analyze(args) => analyze(&backend, args),
        Command::Status { job, json } => match job {
            Some(id) => {
                let snap = backend.job(&id)?;
                print_json_or(json, &snap, || render::job(&snap))
            }
            None => {
                let jobs = backend.jobs()?;
                print_json_or(json, &jobs, || {
                    jobs.iter().map(render::job).collect::<Vec<_>>().join("\n")
                })
            }
        },
        Command::Repos { json } => {
            let repos = backend.repos()?;
            print_json_or(json, &repos, || render::repos(&repos))
        }
        Command::Personas(cmd) => personas(&backend, cmd),
        Command::Issues(cmd) => issues(&backend, cmd),
        Command::Analytics { repo, json } => {
            let repo = resolve_repo(&backend, repo.as_deref())?;
            let summary = backend.analytics(&repo)?;
            if json {
                return print_json(&summary);
            }
            let status = backend.mapping_status(&repo)?;
            let names: BTreeMap<PersonaId, String> = backend
                .personas(&repo, true)?
                .into_iter()
                .map(|p| (p.persona.id, p.persona.profile.name))
                .collect();
            emit(&render::analytics(&repo, &summary, &status, &names));
            Ok(())
        }
        Command::Serve { .. } => unreachable!("handled above"),
    }
}

/// Writes to stdout; a reader that went away (`| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn print_json<T: Serialize>(v: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(v)
        .map_err(|e| Failure::new(backend::EXIT_INTERNAL, e.to_string()))?;
    emit(&format!("{text}\n"));
    Ok(())
}

fn print_json_or<T: Serialize>(json: bool, v: &T, text: impl FnOnce() -> String) -> CliResult<()> {
    if json {
        print_json(v)
    } else {
        let t = text();
        if t.ends_with('\n') {
            emit(&t);
        } else {
            emit(&format!("{t}\n"));
        }
        Ok(())
    }
}

/// Accepts a repository URL, `owner/name`, or a store id (`owner~name`).
/// Without an argument the only stored repository is used.
fn resolve_repo(backend: &Backend, arg: Option<&str>) -> CliResult<RepoId> {
    match arg {
        Some(s) if s.contains("://") => {
            let url = parse_repo_url(s)?;
            Ok(RepoId::new(&url.owner, &url.name))
        }
        Some(s) => match s.split_once('/') {
            Some((owner, name)) => Ok(RepoId::new(owner, name)),
            None => Ok(RepoId(s.to_ascii_lowercase())),
        },
        None => {
            let repos = backend.repos()?;
            match repos.as_slice() {
                [only] => Ok(only.repo_id.clone()),
                [] => Err(Failure::usage(
                    "no repository analyzed yet; run `analyze` first",
                )),
                _ => Err(Failure::usage(
                    "several repositories are stored; pass --repo",
                )),
            }
        }
    }
}

/// Polls a job until it ends, printing stage changes to stderr. Fails with
/// the exit code of the job's failure class.
fn wait_for(backend: &Backend, job_id: &str) -> CliResult<JobSnapshot> {
    let interval = backend.poll_interval();
    let started = Instant::now();
    let mut last: Option<(JobStage, u8)> = None;
    loop {
        let snap = backend.job(job_id)?;
        if last != Some((snap.stage, snap.percent)) {
            eprintln!(
                "[{:>3}%] {} {}",
                snap.percent,
                snap.kind.as_str(),
                snap.stage
            );
            last = Some((snap.stage, snap.percent));
        }
        if snap.stage.is_terminal() {
            for w in &snap.warnings {
                eprintln!("warning: {w}");
            }
            if snap.stage == JobStage::Failed {
                return Err(Failure::new(
                    job_exit_code(snap.error_class),
                    format!(
                        "job {job_id} failed: {}",
                        snap.error.as_deref().unwrap_or("unknown error")
                    ),
                ));
            }
            eprintln!("finished in {:.1}s", started.elapsed().as_secs_f64());
            return Ok(snap);
        }
        std::thread::sleep(interval);
    }
}

/// Jobs of an embedded engine stop with the process, so local mode always
/// waits; remote mode waits only when asked.
fn should_wait(backend: &Backend, wait: bool) -> bool {
    wait || backend.is_local()
}

fn analyze(backend: &Backend, args: AnalyzeArgs) -> CliResult<()> {
    let job = backend.submit_generation(GenerationRequest {
        url: args.url,
        persona_count: args.personas,
        external_urls: args.doc_urls,
        additional_context: args.context,
    })?;
    if !should_wait(backend, args.wait || args.save) {
        emit(&format!("{job}\n"));
        return Ok(());
    }
    let snap = wait_for(backend, &job)?;
    let personas = backend.personas(&snap.repo_id, false)?;
    if args.save {
        let sync = backend.save(&snap.repo_id)?;
        wait_for(backend, &sync)?;
        let status = backend.mapping_status(&snap.repo_id)?;
        eprintln!(
            "mapped {} of {} issues ({} without a persona)",
            status.mapped, status.total, status.unmapped
        );
    }
    print_json_or(args.json, &personas, || render::personas_table(&personas))
}

fn read_patch(sets: &[String], patch: Option<&str>) -> CliResult<Value> {
    const TEXT_FIELDS: [&str; 6] = [
        "name",
        "occupation",
        "location",
        "quote",
        "tagline",
        "background",
    ];
    let mut obj = match patch {
        None => serde_json::Map::new(),
        Some(raw) => {
            let text = match raw.strip_prefix('@') {
                Some(path) => std::fs::read_to_string(path)
                    .map_err(|e| Failure::usage(format!("{path}: {e}")))?,
                None => raw.to_string(),
            };
            match serde_json::from_str(&text) {
                Ok(Value::Object(m)) => m,
                _ => return Err(Failure::usage("--patch must be a JSON object")),
            }
        }
    };
    for set in sets {
        let (key, value) = set
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--set expects field=value, got `{set}`")))?;
        let key = key.trim();
        let value = if TEXT_FIELDS.contains(&key) {
            Value::String(value.to_string())
        } else {
            serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()))
        };
        obj.insert(key.to_string(), value);
    }
    if obj.is_empty() {
        return Err(Failure::usage("nothing to change; pass --set or --patch"));
    }
    Ok(Value::Object(obj))
}

fn personas(backend: &Backend, cmd: PersonasCmd) -> CliResult<()> {
    match cmd {
        PersonasCmd::List { repo, all, format } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let list = backend.personas(&repo, all)?;
            show_personas(&repo, &list, format)
        }
        PersonasCmd::Show { id, format } => {
            let p = backend.persona(&PersonaId(id))?;
            match format {
                Format::Json => print_json(&p),
                Format::Markdown => {
                    emit(&render::persona_markdown(&p));
                    Ok(())
                }
                Format::Table => {
                    emit(&render::personas_table(std::slice::from_ref(&p)));
                    Ok(())
                }
            }
        }
        PersonasCmd::Edit {
            id,
            sets,
            patch,
            version,
            json,
        } => {
            let patch = read_patch(&sets, patch.as_deref())?;
            let p = backend.edit_persona(&PersonaId(id), patch, version)?;
            print_json_or(json, &p, || render::persona_markdown(&p))
        }
        PersonasCmd::Merge {
            ids,
            guidance,
            json,
        } => {
            let ids: Vec<PersonaId> = ids.into_iter().map(PersonaId).collect();
            let p = backend.merge(&ids, guidance.as_deref())?;
            print_json_or(json, &p, || render::persona_markdown(&p))
        }
        PersonasCmd::Delete { id, version } => {
            let p = backend.archive_persona(&PersonaId(id), version)?;
            emit(&format!(
                "archived {} ({})\n",
                p.persona.profile.name, p.persona.id
            ));
            Ok(())
        }
        PersonasCmd::Export { repo, format } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let list = backend.personas(&repo, false)?;
            show_personas(&repo, &list, format)
        }
        PersonasCmd::Create { repo, file, json } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let text = std::fs::read_to_string(&file)
                .map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
            let profile: PersonaProfile = serde_json::from_str(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", file.display())))?;
            let p = backend.create_custom(&repo, profile)?;
            print_json_or(json, &p, || render::persona_markdown(&p))
        }
        PersonasCmd::Generate { repo, count, json } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let added = backend.generate_more(&repo, count)?;
            print_json_or(json, &added, || render::personas_table(&added))
        }
        PersonasCmd::Regenerate { repo, json } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let fresh = backend.regenerate_all(&repo)?;
            print_json_or(json, &fresh, || render::personas_table(&fresh))
        }
    }
}

fn show_personas(
    repo: &RepoId,
    list: &[personaflow_core::service::PersonaView],
    format: Format,
) -> CliResult<()> {
    match format {
        Format::Json => print_json(&list),
        Format::Markdown => {
            emit(&render::personas_markdown(repo, list));
            Ok(())
        }
        Format::Table => {
            emit(&render::personas_table(list));
            Ok(())
        }
    }
}

fn parse_time(flag: &str, raw: Option<String>) -> CliResult<Option<DateTime<Utc>>> {
    raw.map(|s| {
        s.parse::<DateTime<Utc>>().map_err(|e| {
            Failure::usage(format!(
                "--{flag}: `{s}` is not an RFC 3339 timestamp ({e})"
            ))
        })
    })
    .transpose()
}

fn sync_request(
    mode: ModeArg,
    ids: Vec<u64>,
    labels: Vec<String>,
    since: Option<String>,
    until: Option<String>,
    limit: Option<usize>,
    state: Option<StateArg>,
) -> CliResult<SyncRequest> {
    let mut req = SyncRequest {
        mode: match mode {
            ModeArg::AllNew => SyncMode::AllNew,
            ModeArg::Ids => SyncMode::ByIds,
            ModeArg::Labels => SyncMode::ByLabels,
            ModeArg::DateRange => SyncMode::ByDateRange,
        },
        ids,
        labels,
        since: parse_time("since", since)?,
        until: parse_time("until", until)?,
        ..SyncRequest::default()
    };
    if let Some(limit) = limit {
        req.limit = limit;
    }
    if let Some(state) = state {
        req.state = match state {
            StateArg::Open => StateFilter::Open,
            StateArg::Closed => StateFilter::Closed,
            StateArg::All => StateFilter::All,
        };
    }
    Ok(req)
}

fn issues(backend: &Backend, cmd: IssuesCmd) -> CliResult<()> {
    match cmd {
        IssuesCmd::Sync {
            repo,
            mode,
            ids,
            labels,
            since,
            until,
            limit,
            state,
            wait,
        } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let req = sync_request(mode, ids, labels, since, until, limit, state)?;
            let job = backend.sync(&repo, req)?;
            finish_job(backend, &job, wait)?;
            if should_wait(backend, wait) {
                let status = backend.mapping_status(&repo)?;
                emit(&format!(
                    "{} issues: {} mapped, {} unmapped, {} not yet analyzed\n",
                    status.total, status.mapped, status.unmapped, status.pending
                ));
            }
            Ok(())
        }
        IssuesCmd::List {
            repo,
            view,
            band,
            state,
            persona,
            json,
        } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let query = IssueQuery {
                view: match view {
                    ViewArg::Github => IssueView::Github,
                    ViewArg::Persona => IssueView::Persona,
                },
                state: state.map(|s| match s {
                    IssueStateArg::Open => IssueState::Open,
                    IssueStateArg::Closed => IssueState::Closed,
                }),
                confidence_band: band.map(|b| match b {
                    BandArg::High => ConfidenceBand::High,
                    BandArg::Medium => ConfidenceBand::Medium,
                    BandArg::Low => ConfidenceBand::Low,
                    BandArg::Unmatched => ConfidenceBand::Unmatched,
                }),
                persona_id: persona.map(PersonaId),
            };
            let listing = backend.issues(&repo, &query)?;
            print_json_or(json, &listing, || render::issue_listing(&listing))
        }
        IssuesCmd::Show { number, repo, json } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let detail = backend.issue(&repo, number)?;
            print_json_or(json, &detail, || render::issue_detail(&detail))
        }
        IssuesCmd::Map {
            repo,
            force_remap_ai,
            wait,
        } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let job = backend.map(&repo, force_remap_ai)?;
            finish_job(backend, &job, wait)
        }
        IssuesCmd::Associate {
            number,
            repo,
            add,
            remove,
            version,
            json,
        } => {
            let repo = resolve_repo(backend, repo.as_deref())?;
            let add: Vec<PersonaId> = add.into_iter().map(PersonaId).collect();
            let remove: Vec<PersonaId> = remove.into_iter().map(PersonaId).collect();
            if add.is_empty() && remove.is_empty() {
                return Err(Failure::usage("nothing to change; pass --add or --remove"));
            }
            let detail = backend.associate(&repo, number, &add, &remove, version)?;
            print_json_or(json, &detail, || render::issue_detail(&detail))
        }
    }
}

fn finish_job(backend: &Backend, job: &str, wait: bool) -> CliResult<()> {
    if should_wait(backend, wait) {
        let snap = wait_for(backend, job)?;
        eprintln!("{}", render::job(&snap));
    } else {
        emit(&format!("{job}\n"));
    }
    Ok(())
}
