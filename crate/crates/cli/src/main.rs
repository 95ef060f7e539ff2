//! `p2`: compile tool outputs into perception programs, check them, solve
//! tasks from them, score reconstructions and run model benchmarks.
//!
//! Payloads go to stdout, diagnostics to stderr. Exit status is 1 for
//! unreadable or malformed inputs and 2 for compile, program or solver
//! errors.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use p2_harness::bench::{load_results, summarize_records};
use p2_harness::recon::{read_recon_tasks, run_reconstruction, ReconOptions};
use p2_harness::{
    run_benchmark, BenchOptions, EndpointConfig, Existing, HttpChatClient, Setting, Templates,
};
use perception_program::analysis::{displacement_error_stats, kendall_tau, ranking_from_depth};
use perception_program::compile::{
    compile_depth, compile_detections, compile_flow, compile_jigsaw, compile_points,
    compile_semantic_correspondence, compile_visual_correspondence, FlowAxis, JigsawInstance,
    StripAnchor, DEFAULT_GRID, DEFAULT_TAU,
};
use perception_program::ingest::{DepthConvention, Reader, TaskKind};
use perception_program::model::{validate_program, CellRect, Modality, NormBox, PerceptionProgram};
use perception_program::solve::{
    naive_correspondence, oracle_correspondence, solve_jigsaw, solve_localization, solve_multiview,
    solve_relative_depth, solve_semantic, CameraConvention, REF_ID,
};
use perception_program::text::{parse, serialize};
use serde_json::json;

use config::RunConfig;

/// An error and the exit status it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn input(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 1,
        message: e.to_string(),
    }
}

fn program(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Parser)]
#[command(
    name = "p2",
    version,
    about = "Compile, check and solve perception programs"
)]
struct Cli {
    /// Settings file (TOML). Flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a tool output into a program.
    Compile(CompileArgs),
    /// Parse and check programs; prints one JSON report per file.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Answer a task from its programs; prints the chosen label.
    Solve(SolveArgs),
    /// Score rankings, reconstructions or benchmark results.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run a task set against a chat-completion endpoint.
    Bench(BenchArgs),
    /// Ask a model to fill in redacted programs and score the result.
    Recon(ReconArgs),
}

#[derive(Args)]
struct CompileArgs {
    /// depth, flow, visual_correspondence, detection, semantic_correspondence,
    /// points or jigsaw.
    #[arg(long)]
    modality: String,
    /// Tool output; for jigsaw the source image then candidates A and B.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Write here instead of stdout.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Grid order P for depth and flow.
    #[arg(long)]
    grid: Option<u32>,
    /// Depth margin on the normalized scale.
    #[arg(long)]
    tau: Option<f64>,
    /// Flow component: horizontal or vertical.
    #[arg(long)]
    axis: Option<String>,
    /// Jigsaw edge strip width in pixels.
    #[arg(long)]
    strip_width: Option<u32>,
    /// Jigsaw source band: outside, inside or auto.
    #[arg(long)]
    anchor: Option<String>,
    /// Raw depth orientation: nearer_is_larger or farther_is_larger.
    #[arg(long)]
    convention: Option<String>,
    /// Jigsaw missing region in source pixels, half-open: x0,y0,x1,y1.
    #[arg(long, value_delimiter = ',')]
    region: Option<Vec<u32>>,
}

#[derive(Args)]
struct SolveArgs {
    /// multi_view, relative_depth, visual_correspondence, jigsaw,
    /// object_localization or semantic_correspondence.
    #[arg(long)]
    kind: String,
    #[arg(required = true)]
    programs: Vec<PathBuf>,
    /// Camera convention for multi_view: camera_opposes_flow or camera_follows_flow.
    #[arg(long)]
    convention: Option<String>,
    /// Correspondence matches program; switches visual_correspondence to the
    /// match-following solver.
    #[arg(long)]
    matches: Option<PathBuf>,
    /// Object label for object_localization.
    #[arg(long)]
    target: Option<String>,
    /// Candidate box for object_localization, normalized: LABEL=x0,y0,x1,y1.
    #[arg(long = "box", value_name = "LABEL=BOX")]
    boxes: Vec<String>,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Kendall tau-b between the rankings of two depth programs.
    Kendall { a: PathBuf, b: PathBuf },
    /// Displacement and error of a completed correspondence program against
    /// the tool's matches.
    Displacement {
        matches: PathBuf,
        completed: PathBuf,
    },
    /// Accuracy and token use of a benchmark results file.
    Accuracy { results: PathBuf },
}

#[derive(Args)]
struct EndpointArgs {
    /// Endpoint file (TOML); overrides `[endpoint]` in the settings file.
    #[arg(long, value_name = "FILE")]
    endpoint: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Task manifest (JSONL) or a directory holding manifest.jsonl.
    #[arg(long)]
    tasks: PathBuf,
    /// Results file (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// standard, raw_tool or p2.
    #[arg(long)]
    setting: Option<String>,
    /// Continue a run, skipping tasks already in the results file.
    #[arg(long, conflicts_with = "overwrite")]
    resume: bool,
    /// Discard an existing results file.
    #[arg(long)]
    overwrite: bool,
    /// Include the in-context example when the templates provide one.
    #[arg(long)]
    icl: bool,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

#[derive(Args)]
struct ReconArgs {
    /// Reconstruction tasks (JSONL) or a directory holding recon.jsonl.
    #[arg(long)]
    tasks: PathBuf,
    /// Exemplars, same format as the tasks.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// How many exemplars to show.
    #[arg(long, default_value_t = 5)]
    exemplar_count: usize,
    /// Grid orders to sweep for depth, comma separated.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<u32>>,
    #[arg(long)]
    tau: Option<f64>,
    /// Per-task records (JSONL).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
}

fn read_program(path: &Path) -> Result<PerceptionProgram> {
    let text =
        std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
    parse(&text).map_err(|e| program(format!("{}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => {
            std::fs::write(path, text).map_err(|e| input(format!("{}: {e}", path.display())))
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(input),
    }
}

fn choose<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

fn parse_with<T>(
    value: Option<String>,
    what: &str,
    f: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    value
        .map(|v| f(&v).ok_or_else(|| input(format!("unknown {what} `{v}`"))))
        .transpose()
}

fn axis(s: &str) -> Option<FlowAxis> {
    match s {
        "horizontal" => Some(FlowAxis::Horizontal),
        "vertical" => Some(FlowAxis::Vertical),
        _ => None,
    }
}

fn anchor(s: &str) -> Option<StripAnchor> {
    match s {
        "outside" => Some(StripAnchor::Outside),
        "inside" => Some(StripAnchor::Inside),
        "auto" => Some(StripAnchor::Auto),
        _ => None,
    }
}

fn arity(inputs: &[PathBuf], n: usize, modality: &str) -> Result<()> {
    if inputs.len() != n {
        return Err(input(format!(
            "{modality} takes {n} input file(s), got {}",
            inputs.len()
        )));
    }
    Ok(())
}

fn cmd_compile(a: CompileArgs, cfg: &RunConfig) -> Result<()> {
    let modality = Modality::parse(&a.modality)
        .ok_or_else(|| input(format!("unknown modality `{}`", a.modality)))?;
    let reader = Reader::default();
    let grid = choose(a.grid, cfg.grid, DEFAULT_GRID);
    let pp = match modality {
        Modality::Depth => {
            arity(&a.inputs, 1, "depth")?;
            let convention = choose(
                parse_with(a.convention, "depth convention", DepthConvention::parse)?,
                parse_with(
                    cfg.depth_convention.clone(),
                    "depth convention",
                    DepthConvention::parse,
                )?,
                DepthConvention::default(),
            );
            let field = reader.read_depth(&a.inputs[0], convention).map_err(input)?;
            compile_depth(&field, grid, choose(a.tau, cfg.tau, DEFAULT_TAU)).map_err(program)?
        }
        Modality::Flow => {
            arity(&a.inputs, 1, "flow")?;
            let axis = choose(
                parse_with(a.axis, "axis", axis)?,
                parse_with(cfg.axis.clone(), "axis", axis)?,
                FlowAxis::default(),
            );
            let field = reader.read_flow(&a.inputs[0]).map_err(input)?;
            compile_flow(&field, grid, axis).map_err(program)?
        }
        Modality::VisualCorrespondence => {
            arity(&a.inputs, 1, "visual_correspondence")?;
            compile_visual_correspondence(&reader.read_matches(&a.inputs[0]).map_err(input)?)
                .map_err(program)?
        }
        Modality::Detection => {
            arity(&a.inputs, 1, "detection")?;
            compile_detections(&reader.read_detections(&a.inputs[0]).map_err(input)?)
                .map_err(program)?
        }
        Modality::SemanticCorrespondence => {
            arity(&a.inputs, 1, "semantic_correspondence")?;
            compile_semantic_correspondence(&reader.read_candidates(&a.inputs[0]).map_err(input)?)
                .map_err(program)?
        }
        Modality::Points => {
            arity(&a.inputs, 1, "points")?;
            compile_points(&reader.read_points(&a.inputs[0]).map_err(input)?).map_err(program)?
        }
        Modality::Jigsaw => {
            arity(&a.inputs, 3, "jigsaw")?;
            let r = a
                .region
                .filter(|r| r.len() == 4)
                .ok_or_else(|| input("jigsaw needs --region x0,y0,x1,y1"))?;
            let image = |p: &PathBuf| reader.read_image(p).map_err(input);
            let ji = JigsawInstance {
                source: image(&a.inputs[0])?,
                region: CellRect {
                    x0: r[0],
                    y0: r[1],
                    x1: r[2],
                    y1: r[3],
                },
                candidates: [image(&a.inputs[1])?, image(&a.inputs[2])?],
                strip_width: a.strip_width.or(cfg.strip_width),
                anchor: choose(
                    parse_with(a.anchor, "anchor", anchor)?,
                    parse_with(cfg.anchor.clone(), "anchor", anchor)?,
                    StripAnchor::default(),
                ),
            };
            compile_jigsaw(&ji).map_err(program)?
        }
    };
    emit(a.output.as_deref(), &serialize(&pp).map_err(program)?)
}

fn cmd_validate(files: &[PathBuf]) -> Result<()> {
    let mut bad = 0;
    let mut out = String::new();
    for path in files {
        let text =
            std::fs::read_to_string(path).map_err(|e| input(format!("{}: {e}", path.display())))?;
        let report = match parse(&text) {
            Err(e) => json!({"path": path, "ok": false, "error": e.to_string()}),
            Ok(pp) => {
                let violations: Vec<String> = validate_program(&pp)
                    .iter()
                    .map(ToString::to_string)
                    .collect();
                let canonical = serialize(&pp).is_ok_and(|s| s == text);
                json!({
                    "path": path,
                    "ok": violations.is_empty(),
                    "modality": pp.modality.as_str(),
                    "items": pp.items.len(),
                    "relations": pp.relations.len(),
                    "canonical": canonical,
                    "violations": violations,
                })
            }
        };
        if report["ok"] != true {
            bad += 1;
        }
        out.push_str(&report.to_string());
        out.push('\n');
    }
    emit(None, &out)?;
    if bad > 0 {
        return Err(program(format!(
            "{bad} of {} program(s) failed validation",
            files.len()
        )));
    }
    Ok(())
}

fn by_modality(programs: &[PerceptionProgram], m: Modality) -> Result<&PerceptionProgram> {
    programs
        .iter()
        .find(|p| p.modality == m)
        .ok_or_else(|| input(format!("no {m} program given")))
}

fn parse_box(spec: &str) -> Result<(String, NormBox)> {
    let bad = || input(format!("bad --box `{spec}`, expected LABEL=x0,y0,x1,y1"));
    let (label, coords) = spec.split_once('=').ok_or_else(bad)?;
    let v: Vec<u32> = coords
        .split(',')
        .map(|c| c.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad())?;
    if v.len() != 4 {
        return Err(bad());
    }
    Ok((
        label.to_string(),
        NormBox::new(v[0], v[1], v[2], v[3]).map_err(input)?,
    ))
}

fn cmd_solve(a: SolveArgs, cfg: &RunConfig) -> Result<()> {
    let kind =
        TaskKind::parse(&a.kind).ok_or_else(|| input(format!("unknown task kind `{}`", a.kind)))?;
    let programs: Vec<PerceptionProgram> = a
        .programs
        .iter()
        .map(|p| read_program(p))
        .collect::<Result<_>>()?;
    let label = match kind {
        TaskKind::MultiView => {
            let convention = choose(
                parse_with(a.convention, "camera convention", CameraConvention::parse)?,
                parse_with(
                    cfg.camera_convention.clone(),
                    "camera convention",
                    CameraConvention::parse,
                )?,
                CameraConvention::default(),
            );
            solve_multiview(by_modality(&programs, Modality::Flow)?, convention)
                .map_err(program)?
                .to_string()
        }
        TaskKind::RelativeDepth => solve_relative_depth(
            by_modality(&programs, Modality::Points)?,
            by_modality(&programs, Modality::Depth)?,
        )
        .map_err(program)?,
        TaskKind::VisualCorrespondence => {
            let points = by_modality(&programs, Modality::Points)?;
            match &a.matches {
                None => naive_correspondence(points).map_err(program)?,
                Some(path) => {
                    let matches = read_program(path)?;
                    let reference = points
                        .item(REF_ID)
                        .and_then(|it| it.loc.as_point())
                        .ok_or_else(|| program("points program has no REF point"))?;
                    oracle_correspondence(&matches, reference, points).map_err(program)?
                }
            }
        }
        TaskKind::Jigsaw => solve_jigsaw(by_modality(&programs, Modality::Jigsaw)?)
            .map_err(program)?
            .to_string(),
        TaskKind::SemanticCorrespondence => {
            solve_semantic(by_modality(&programs, Modality::SemanticCorrespondence)?)
                .map_err(program)?
        }
        TaskKind::ObjectLocalization => {
            let target = a
                .target
                .as_deref()
                .ok_or_else(|| input("object_localization needs --target"))?;
            let boxes: Vec<(String, NormBox)> = a
                .boxes
                .iter()
                .map(|b| parse_box(b))
                .collect::<Result<_>>()?;
            solve_localization(by_modality(&programs, Modality::Detection)?, &boxes, target)
                .map_err(program)?
        }
    };
    emit(None, &format!("{label}\n"))
}

fn cmd_eval(e: EvalCommand) -> Result<()> {
    let value = match e {
        EvalCommand::Kendall { a, b } => {
            let ra = ranking_from_depth(&read_program(&a)?).map_err(program)?;
            let rb = ranking_from_depth(&read_program(&b)?).map_err(program)?;
            json!({"kendall_tau": kendall_tau(&ra, &rb).map_err(program)?})
        }
        EvalCommand::Displacement { matches, completed } => {
            let ms = Reader::default().read_matches(&matches).map_err(input)?;
            let report =
                displacement_error_stats(&ms, &read_program(&completed)?).map_err(program)?;
            serde_json::to_value(report).expect("report serializes")
        }
        EvalCommand::Accuracy { results } => {
            let records = load_results(&results).map_err(input)?;
            let refs: Vec<_> = records.iter().collect();
            let (overall, per_kind) = summarize_records(&refs);
            json!({"overall": overall, "per_kind": per_kind})
        }
    };
    emit(None, &format!("{value}\n"))
}

struct Endpoint {
    client: HttpChatClient,
    concurrency: usize,
    templates: Templates,
    max_attachment: usize,
}

fn endpoint(a: EndpointArgs, cfg: &RunConfig) -> Result<Endpoint> {
    let config = match a.endpoint {
        Some(path) => EndpointConfig::read(&path).map_err(input)?,
        None => cfg
            .endpoint
            .clone()
            .ok_or_else(|| input("no endpoint: pass --endpoint or set [endpoint] in --config"))?,
    };
    let templates = match a.templates.or(cfg.templates.clone()) {
        Some(dir) => Templates::load(&dir).map_err(input)?,
        None => Templates::builtin(),
    };
    Ok(Endpoint {
        client: HttpChatClient::new(config).map_err(input)?,
        concurrency: choose(
            a.concurrency,
            cfg.concurrency,
            p2_harness::bench::DEFAULT_CONCURRENCY,
        ),
        templates,
        max_attachment: cfg
            .max_attachment_bytes
            .unwrap_or(p2_harness::prompt::DEFAULT_MAX_ATTACHMENT),
    })
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(input)
}

fn cmd_bench(a: BenchArgs, cfg: &RunConfig) -> Result<()> {
    let setting = choose(
        parse_with(a.setting, "setting", Setting::parse)?,
        parse_with(cfg.setting.clone(), "setting", Setting::parse)?,
        Setting::P2,
    );
    let tasks = Reader::default().read_task_set(&a.tasks).map_err(input)?;
    let ep = endpoint(a.endpoint, cfg)?;
    let mut opts = BenchOptions::new(setting);
    opts.concurrency = ep.concurrency;
    opts.templates = ep.templates;
    opts.max_attachment = ep.max_attachment;
    opts.use_icl = a.icl;
    opts.existing = match (a.resume, a.overwrite) {
        (true, _) => Existing::Resume,
        (_, true) => Existing::Overwrite,
        _ => Existing::Fail,
    };
    let summary = runtime()?
        .block_on(run_benchmark(&tasks, &opts, &ep.client, &a.out))
        .map_err(input)?;
    eprint!("{}", summary.to_text());
    emit(
        None,
        &format!(
            "{}\n",
            serde_json::to_string(&summary).expect("summary serializes")
        ),
    )
}

fn cmd_recon(a: ReconArgs, cfg: &RunConfig) -> Result<()> {
    let reader = Reader::default();
    let tasks = read_recon_tasks(&a.tasks, &reader).map_err(input)?;
    let mut exemplars = match &a.exemplars {
        Some(p) => read_recon_tasks(p, &reader).map_err(input)?,
        None => Vec::new(),
    };
    exemplars.truncate(a.exemplar_count);
    let ep = endpoint(a.endpoint, cfg)?;
    let mut opts = ReconOptions {
        tau: choose(a.tau, cfg.tau, DEFAULT_TAU),
        concurrency: ep.concurrency,
        templates: ep.templates,
        max_attachment: ep.max_attachment,
        ..Default::default()
    };
    if let Some(g) = a.grid.or(cfg.grids.clone()) {
        opts.grids = g;
    }
    let report = runtime()?
        .block_on(run_reconstruction(&tasks, &exemplars, &opts, &ep.client))
        .map_err(program)?;
    if let Some(path) = &a.out {
        let mut lines = String::new();
        for r in &report.records {
            lines.push_str(&serde_json::to_string(r).expect("records serialize"));
            lines.push('\n');
        }
        std::fs::write(path, lines).map_err(|e| input(format!("{}: {e}", path.display())))?;
    }
    eprint!("{}", report.to_text());
    let mut rows = String::new();
    for row in &report.table {
        rows.push_str(&serde_json::to_string(row).expect("rows serialize"));
        rows.push('\n');
    }
    emit(None, &rows)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::read(path).map_err(input)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Compile(a) => cmd_compile(a, &cfg),
        Command::Validate { files } => cmd_validate(&files),
        Command::Solve(a) => cmd_solve(a, &cfg),
        Command::Eval(e) => cmd_eval(e),
        Command::Bench(a) => cmd_bench(a, &cfg),
        Command::Recon(a) => cmd_recon(a, &cfg),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("p2: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
