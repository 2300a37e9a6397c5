use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use engage_core::evaluation::{export_histogram, export_violin_data, metrics_table, parameter_table, report_toml};
use engage_core::synthgen::write_corpus;
use engage_core::timeline::load_dir;
use engage_core::trainer::{occurrence_counts, train_with};
use engage_core::{
    compare_methods, corpus_stats, evaluate, generate, split_dataset, trajectory, EvalMetrics, InteractionSession,
    Method, ParameterSet, ScenarioConfig, SlopeMode, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Command, EstimateArgs, EvaluateArgs, InspectArgs, SimulateArgs, Subset, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Core(engage_core::Error),
    Usage(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::Usage(m) => f.write_str(m),
        }
    }
}

impl From<engage_core::Error> for CliError {
    fn from(e: engage_core::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

struct Context {
    seed: Option<u64>,
    quiet: bool,
    out: Option<PathBuf>,
}

impl Context {
    fn say(&self, text: impl fmt::Display) {
        if !self.quiet {
            // a closed pipe (e.g. `| head`) is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{text}");
        }
    }

    fn out_dir(&self, default: &str) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from(default));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Usage(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed,
        quiet: cli.quiet,
        out: cli.out,
    };
    match cli.command {
        Command::Simulate(args) => simulate(&ctx, args),
        Command::Train(args) => train(&ctx, args),
        Command::Estimate(args) => estimate(&ctx, args),
        Command::Evaluate(args) => evaluate_cmd(&ctx, args),
        Command::Inspect(args) => inspect(&ctx, args),
    }
}

/// `default`, `reference` or a parameter file, with an optional alpha override.
fn resolve_params(source: &str, alpha: Option<f64>) -> Result<ParameterSet> {
    let params = match source {
        "default" => ParameterSet::initial(),
        "reference" => ParameterSet::reference(),
        path => ParameterSet::load(path)?,
    };
    Ok(match alpha {
        Some(a) => params.with_alpha(a)?,
        None => params,
    })
}

/// Sessions of a corpus directory, looking inside `sessions/` when present.
fn load_corpus(dir: &Path) -> Result<Vec<InteractionSession>> {
    let nested = dir.join("sessions");
    let sessions = load_dir(if nested.is_dir() { &nested } else { dir })?;
    if sessions.is_empty() {
        return Err(engage_core::Error::EmptyDataset.into());
    }
    Ok(sessions)
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    train_fraction: f64,
    train_user_fraction: f64,
    train: Vec<String>,
    validation: Vec<String>,
}

fn simulate(ctx: &Context, args: SimulateArgs) -> Result<()> {
    let mut config = match &args.scenario {
        Some(path) if !path.is_file() => {
            return Err(CliError::Usage(format!("scenario not found: {}", path.display())));
        }
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(n) = args.sessions {
        config.n_sessions = n;
    }
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let sessions = generate(&config)?;
    let dir = ctx.out_dir("corpus")?;
    write_corpus(&dir, &sessions, &config.ground_truth)?;
    let scenario_path = dir.join("scenario.toml");
    std::fs::write(&scenario_path, config.to_toml_string())
        .map_err(|e| CliError::Usage(format!("{}: {e}", scenario_path.display())))?;
    ctx.say(format_args!("wrote {} sessions to {}", sessions.len(), dir.display()));
    ctx.say(corpus_stats(&sessions)?);
    Ok(())
}

fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let sessions = load_corpus(&args.data)?;
    let seed = ctx.seed.unwrap_or(0);
    let split = split_dataset(&sessions, args.train_fraction, seed)?;
    let init = resolve_params(&args.init, args.alpha)?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        max_iterations: args.max_iterations.unwrap_or(defaults.max_iterations),
        gradient_step: args.gradient_step.unwrap_or(defaults.gradient_step),
        convergence_tolerance: args.tolerance.unwrap_or(defaults.convergence_tolerance),
        dependence_enabled: args.dependence.enabled(),
        ..defaults
    };
    let users = |s: &[InteractionSession]| s.iter().map(|x| x.users.len()).sum::<usize>();
    ctx.say(format_args!(
        "split: {} train / {} validation sessions; {} of {} users ({:.1}%) in train",
        split.train.len(),
        split.validation.len(),
        users(&split.train),
        users(&sessions),
        100.0 * split.train_user_fraction
    ));

    let report = train_with(&split.train, &init, &config, |r| {
        if !ctx.quiet {
            eprintln!(
                "iter {:>4}  objective {:.6}  |g| {:.3e}  step {:.3e}",
                r.iteration, r.objective, r.gradient_norm, r.step
            );
        }
    })?;

    let dir = ctx.out_dir("model")?;
    report.params.save(dir.join("params.toml"))?;
    report.save(dir.join("report.toml"))?;
    let split_file = SplitFile {
        seed,
        train_fraction: args.train_fraction,
        train_user_fraction: split.train_user_fraction,
        train: split.train.iter().map(|s| s.session_id.clone()).collect(),
        validation: split.validation.iter().map(|s| s.session_id.clone()).collect(),
    };
    let split_path = dir.join("split.toml");
    std::fs::write(&split_path, toml::to_string(&split_file).expect("split serializes"))
        .map_err(|e| CliError::Usage(format!("{}: {e}", split_path.display())))?;

    ctx.say(format_args!(
        "{}: final objective {:.6} after {} iterations ({})",
        report.method.label(),
        report.final_objective(),
        report.iterations.len(),
        if report.converged { "converged" } else { "iteration limit" }
    ));
    ctx.say(parameter_table(&report.params, &report.occurrences));
    ctx.say(format_args!("wrote params.toml, report.toml and split.toml to {}", dir.display()));
    Ok(())
}

fn estimate(ctx: &Context, args: EstimateArgs) -> Result<()> {
    let session = InteractionSession::load(&args.session)?;
    let params = resolve_params(&args.params, args.alpha)?;
    let mode = if args.sampled {
        SlopeMode::Sampled {
            seed: ctx.seed.unwrap_or(0),
        }
    } else {
        SlopeMode::Mean
    };
    let method = Method::from_dependence(args.dependence.enabled());
    let trace = trajectory(&session, &args.user, &params, method, mode)?;
    if let Some(path) = &args.trace {
        trace.write_csv(path)?;
    }
    // the estimate is the command's result, so it is printed even when quiet
    println!(
        "{} {}: estimated duration {:.3} s{}",
        session.session_id,
        args.user,
        trace.estimated_duration,
        if trace.capped { " (capped)" } else { "" }
    );
    Ok(())
}

fn select_subset(sessions: Vec<InteractionSession>, split: &Path, subset: Subset) -> Result<Vec<InteractionSession>> {
    let text = std::fs::read_to_string(split).map_err(|e| CliError::Usage(format!("{}: {e}", split.display())))?;
    let file: SplitFile = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", split.display())))?;
    let ids = match subset {
        Subset::Train => file.train,
        Subset::Validation => file.validation,
        Subset::All => return Ok(sessions),
    };
    let chosen: Vec<_> = sessions.into_iter().filter(|s| ids.contains(&s.session_id)).collect();
    if chosen.len() != ids.len() {
        return Err(CliError::Usage(format!(
            "{}: {} of {} listed sessions found in the corpus",
            split.display(),
            chosen.len(),
            ids.len()
        )));
    }
    Ok(chosen)
}

fn evaluate_cmd(ctx: &Context, args: EvaluateArgs) -> Result<()> {
    let mut sessions = load_corpus(&args.data)?;
    if let Some(split) = &args.split {
        sessions = select_subset(sessions, split, args.subset.unwrap_or(Subset::Validation))?;
    }
    let params = resolve_params(&args.params, args.alpha)?;
    let dir = ctx.out_dir("evaluation")?;
    let report_path = args.report.clone().unwrap_or_else(|| dir.join("report.toml"));

    let export = |m: &EvalMetrics, suffix: &str| -> Result<()> {
        export_histogram(m, dir.join(format!("histogram{suffix}.csv")))?;
        export_violin_data(m, dir.join(format!("violin{suffix}.csv")))?;
        Ok(())
    };
    let (report, table) = match &args.params2 {
        Some(source) => {
            let params2 = resolve_params(source, args.alpha)?;
            let c = compare_methods(&sessions, &params, &params2)?;
            export(&c.method1, "_method1")?;
            export(&c.method2, "_method2")?;
            (report_toml(&[&c.method1, &c.method2], Some(&params2), &sessions), c.table())
        }
        None => {
            let enabled = args.dependence.is_none_or(|d| d.enabled());
            let m = evaluate(&sessions, &params, Method::from_dependence(enabled))?;
            export(&m, "")?;
            (report_toml(&[&m], Some(&params), &sessions), metrics_table(&[&m]))
        }
    };
    std::fs::write(&report_path, report).map_err(|e| CliError::Usage(format!("{}: {e}", report_path.display())))?;
    ctx.say(table);
    ctx.say(format_args!("wrote report to {} and exports to {}", report_path.display(), dir.display()));
    Ok(())
}

fn inspect(ctx: &Context, args: InspectArgs) -> Result<()> {
    let path = &args.path;
    if path.is_dir() {
        ctx.say(corpus_stats(&load_corpus(path)?)?);
        return Ok(());
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "tsv") => inspect_session(ctx, &InteractionSession::load(path)?),
        Some("toml") => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            if let Ok(params) = ParameterSet::from_toml_str(&text) {
                ctx.say(format_args!("alpha {}  t_max {} s", params.alpha(), params.t_max()));
                ctx.say(format_args!("{:<12} {:>12} {:>12} {:>10}", "behavior", "mean", "variance", "dependent"));
                for (b, g) in params.iter() {
                    ctx.say(format_args!(
                        "{:<12} {:>12.4e} {:>12.4e} {:>10}",
                        b.name(),
                        g.mean(),
                        g.variance(),
                        if b.is_dependent() { "yes" } else { "no" }
                    ));
                }
                Ok(())
            } else if let Ok(scenario) = ScenarioConfig::from_toml_str(&text) {
                ctx.say(scenario.to_toml_string());
                Ok(())
            } else {
                Err(CliError::Usage(format!(
                    "{}: neither a parameter file nor a scenario",
                    path.display()
                )))
            }
        }
        _ => Err(CliError::Usage(format!("{}: unrecognized file type", path.display()))),
    }
}

fn inspect_session(ctx: &Context, session: &InteractionSession) -> Result<()> {
    let violations = session.validate();
    ctx.say(format_args!("session {} ({} users)", session.session_id, session.users.len()));
    for v in &violations {
        ctx.say(format_args!("  violation: {v}"));
    }
    let counts = occurrence_counts(std::slice::from_ref(session));
    for user in &session.users {
        ctx.say(format_args!(
            "user {}: arrival {:.2} s, observed {:.2} s, {} intervals",
            user.user_id,
            user.arrival(),
            user.observed_duration,
            user.intervals.len()
        ));
        if !violations.is_empty() {
            continue;
        }
        for s in session.segment(&user.user_id)? {
            let co: Vec<&str> = s.co_behaviors.iter().map(|b| b.name()).collect();
            ctx.say(format_args!(
                "  {:>3} [{:>8.2}, {:>8.2}) {:<12} co [{}]{}",
                s.index,
                s.start,
                s.end,
                s.target_behavior.name(),
                co.join(", "),
                if s.open_ended { "  open tail" } else { "" }
            ));
        }
    }
    let present: Vec<String> = counts.iter().filter(|(_, &n)| n > 0).map(|(b, n)| format!("{b} {n}")).collect();
    ctx.say(format_args!("behaviors: {}", present.join(", ")));
    Ok(())
}
