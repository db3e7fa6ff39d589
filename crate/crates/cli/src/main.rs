//! `iosf`: command-line driver for the ios-fscil engine.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ios_fscil::datasets::gen_synthetic;
use ios_fscil::metrics::{emit_all, render, ReportFormat, RunReport};
use ios_fscil::trainer::{
    ablate_hparam, ablate_scope, checkpoint_path, load_config, render_hparam_table, render_scope_table,
    render_seed_table, seed_variance, Checkpoint, DataBundle, HparamAxis, RunConfig, Runner,
};
use ios_fscil::{Error, Result};
use serde_json::json;

const CONFIG_FILE: &str = "config.json";
const CHECKPOINT_DIR: &str = "checkpoints";
const REPORT_DIR: &str = "reports";
const TIMINGS_FILE: &str = "timings.json";

#[derive(Parser, Debug)]
#[command(name = "iosf", version, about = "Few-shot class-incremental learning with prompt memory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, env = "IOSF_SEED")]
    seed: Option<u64>,
    /// Checkpoint to continue from or evaluate.
    #[arg(long, global = true)]
    resume: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic IOSF-EMB dataset (train/ and test/) to --out.
    GenSynthetic,
    /// Run the whole protocol into the run directory --out.
    Run,
    /// Continue a run from --resume.
    Resume,
    /// Re-evaluate the checkpoint given by --resume.
    Eval {
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Train once per update scope and print a comparison table.
    AblateScope,
    /// Sweep pair counts, top-K or seeds and print a grid.
    AblateHparam(Sweep),
    /// Re-emit the reports of the run directory --out.
    Report {
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
struct Sweep {
    /// Comma-separated `base:inc` pair counts, e.g. `20:3,10:2`.
    #[arg(long)]
    pairs: Option<String>,
    /// Comma-separated top-K values.
    #[arg(long)]
    top_k: Option<String>,
    /// Comma-separated seeds for the variance study.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Json,
    Csv,
    Plotdata,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
            Format::Plotdata => ReportFormat::PlotData,
        }
    }
}

fn flag_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        message: message.into(),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path).map_err(|e| match e {
            Error::Io { .. } => flag_err("config", e.to_string()),
            other => other,
        })?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| flag_err(flag, format!("--{flag} is required for this command")))
}

fn parse_list<T: std::str::FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| flag_err(key, format!("cannot parse {s:?}")))
        })
        .collect()
}

fn parse_pairs(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|item| {
            let (b, i) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| flag_err("pairs", format!("{item:?} is not base:inc")))?;
            let n = |s: &str| s.parse().map_err(|_| flag_err("pairs", format!("cannot parse {item:?}")));
            Ok((n(b)?, n(i)?))
        })
        .collect()
}

/// Train every remaining session, checkpointing into `run_dir`.
fn drive_run(runner: &mut Runner<'_>, run_dir: &Path) -> Result<RunReport> {
    let ckpt_dir = run_dir.join(CHECKPOINT_DIR);
    let mut timings = Vec::new();
    let start = Instant::now();
    while !runner.is_done() {
        let t0 = Instant::now();
        let report = runner.step()?;
        let (t, acc) = (report.session, report.accuracy.all);
        runner.checkpoint().save(&checkpoint_path(&ckpt_dir, t))?;
        let seconds = t0.elapsed().as_secs_f64();
        log::info!("session {t}: acc_all {acc:.4} ({seconds:.2}s)");
        timings.push(json!({ "session": t, "seconds": seconds }));
    }
    let report = runner.report()?;
    emit_all(&report, &run_dir.join(REPORT_DIR))?;
    let timings = json!({ "sessions": timings, "total_seconds": start.elapsed().as_secs_f64() });
    write_file(
        &run_dir.join(TIMINGS_FILE),
        &(serde_json::to_string_pretty(&timings).expect("timings serialize") + "\n"),
    )?;
    Ok(report)
}

fn summary_line(report: &RunReport) -> String {
    let s = &report.summary;
    let nla = s.nla.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
    format!(
        "sessions {} final {:.4} avg {:.4} pd {:.4} nla {nla} bma {:.4}\n",
        report.sessions.len(),
        report.final_accuracy(),
        s.avg,
        s.pd,
        s.bma
    )
}

fn cmd_gen_synthetic(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let out = required(&common.out, "out")?;
    let data = gen_synthetic(&cfg.synthetic_spec(), cfg.seed)?;
    data.write(out)?;
    print(&format!(
        "wrote {} train and {} test records to {}\n",
        data.train.records.len(),
        data.test.records.len(),
        out.display()
    ))
}

fn cmd_run(common: &Common) -> Result<()> {
    if common.resume.is_some() {
        return cmd_resume(common);
    }
    let cfg = config(common)?;
    let out = required(&common.out, "out")?;
    let data = DataBundle::load(&cfg)?;
    let mut runner = Runner::new(&cfg, &data)?;
    write_file(&out.join(CONFIG_FILE), &cfg.to_json())?;
    let report = drive_run(&mut runner, out)?;
    print(&summary_line(&report))
}

/// Run directory a checkpoint belongs to, when it sits in `<run>/checkpoints/`.
fn run_dir_of(ckpt: &Path) -> Option<PathBuf> {
    let parent = ckpt.parent()?;
    (parent.file_name()? == CHECKPOINT_DIR).then(|| parent.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn cmd_resume(common: &Common) -> Result<()> {
    let path = required(&common.resume, "resume")?;
    let ckpt = Checkpoint::load(path)?;
    if common.config.is_some() {
        ckpt.check_compatible(&config(common)?)?;
    }
    let out = match (&common.out, run_dir_of(path)) {
        (Some(o), _) => o.clone(),
        (None, Some(d)) => d,
        (None, None) => return Err(flag_err("out", "--out is required when the checkpoint is outside a run directory")),
    };
    let data = DataBundle::load(&ckpt.config)?;
    let mut runner = Runner::resume(&ckpt, &data.train, &data.test, data.tokens.as_ref())?;
    let echo = out.join(CONFIG_FILE);
    if !echo.exists() {
        write_file(&echo, &ckpt.config.to_json())?;
    }
    let report = drive_run(&mut runner, &out)?;
    print(&summary_line(&report))
}

fn cmd_eval(common: &Common, format: Format) -> Result<()> {
    let path = required(&common.resume, "resume")?;
    let ckpt = Checkpoint::load(path)?;
    let data = DataBundle::load(&ckpt.config)?;
    let runner = Runner::resume(&ckpt, &data.train, &data.test, data.tokens.as_ref())?;
    let latest = runner.reevaluate()?;
    let mut sessions = ckpt.reports.clone();
    *sessions.last_mut().expect("reevaluate needs a session") = latest;
    let report = RunReport::from_sessions(sessions)?;
    if let Some(out) = &common.out {
        emit_all(&report, &out.join(REPORT_DIR))?;
    }
    print(&render(&report, format.into()))
}

fn write_table(common: &Common, name: &str, table: &str) -> Result<()> {
    if let Some(out) = &common.out {
        write_file(&out.join(name), table)?;
    }
    print(table)
}

fn cmd_ablate_scope(common: &Common) -> Result<()> {
    let cfg = config(common)?;
    let data = DataBundle::load(&cfg)?;
    let rows = ablate_scope(&cfg, &data)?;
    write_table(common, "ablate_scope.csv", &render_scope_table(&rows))
}

fn cmd_ablate_hparam(common: &Common, sweep: &Sweep) -> Result<()> {
    let cfg = config(common)?;
    if let Some(seeds) = &sweep.seeds {
        let v = seed_variance(&cfg, &parse_list("seeds", seeds)?)?;
        return write_table(common, "seed_variance.csv", &render_seed_table(&v));
    }
    let axis = match (&sweep.pairs, &sweep.top_k) {
        (Some(p), _) => HparamAxis::Pairs(parse_pairs(p)?),
        (_, Some(k)) => HparamAxis::TopK(parse_list("top_k", k)?),
        _ => unreachable!("clap requires one sweep axis"),
    };
    let data = DataBundle::load(&cfg)?;
    let rows = ablate_hparam(&cfg, &data, &axis)?;
    write_table(common, "ablate_hparam.csv", &render_hparam_table(&rows))
}

fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(io_err(dir))?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries {
        let path = entry.map_err(io_err(dir))?.path();
        let t = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("session_")?.strip_suffix(".iosc")?.parse().ok());
        if let Some(t) = t {
            if best.as_ref().is_none_or(|(b, _)| t > *b) {
                best = Some((t, path));
            }
        }
    }
    best.map(|(_, p)| p)
        .ok_or_else(|| Error::Setup(format!("no checkpoints in {}", dir.display())))
}

fn cmd_report(common: &Common, format: Format) -> Result<()> {
    let out = required(&common.out, "out")?;
    let ckpt = Checkpoint::load(&latest_checkpoint(&out.join(CHECKPOINT_DIR))?)?;
    let report = RunReport::from_sessions(ckpt.reports)?;
    emit_all(&report, &out.join(REPORT_DIR))?;
    print(&render(&report, format.into()))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::GenSynthetic => cmd_gen_synthetic(c),
        Command::Run => cmd_run(c),
        Command::Resume => cmd_resume(c),
        Command::Eval { format } => cmd_eval(c, *format),
        Command::AblateScope => cmd_ablate_scope(c),
        Command::AblateHparam(sweep) => cmd_ablate_hparam(c, sweep),
        Command::Report { format } => cmd_report(c, *format),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            eprintln!("iosf: {category:?} error: {e}");
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
