use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use icl_forge::data::write_embeddings;
use icl_forge::eval::{aggregate_seeds, select_baseline, EvalReport};
use icl_forge::experiments::{
    baseline_candidates, build_universe, evaluate_or_resume, run_dir, run_suite, single_task, train_or_resume,
    variant_tag, ExperimentPlan, SuiteKind, Variant, REPORT_FILE, SHIFT_FILE, TRIPLETS_FILE,
};
use icl_forge::fsio::{read_string, write_atomic};
use icl_forge::model::load_checkpoint;
use icl_forge::rng::stream;
use icl_forge::seqbuild::{build_sequence, to_json_line, ClassSet, GraftedUniverseTask, Split, TaskSource};
use icl_forge::Error;
use serde::Serialize;

use crate::manifest::RunManifest;
use crate::{plot, selfcheck};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::LengthExtrapolation { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "icl-forge", version, about = "In-context learning under spurious correlations, at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct PlanArgs {
    /// Plan file (flat `key = value`, `[section]` headers).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run a single seed instead of the plan's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// Comma-separated evaluation lengths.
    #[arg(long)]
    pub lengths: Option<String>,
    /// Comma-separated variants, e.g. "Naive + P,Proposed + G + P + I".
    #[arg(long)]
    pub variants: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the plan's synthetic universe and write its embeddings.
    GenUniverse(PlanArgs),
    /// Write training sequences as JSON lines.
    DumpSeq {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Train every plan variant (resumes finished runs).
    Train(PlanArgs),
    /// Evaluate trained checkpoints and write a report.
    Eval(PlanArgs),
    /// Evaluate the plan's baselines with grid selection.
    Baseline(PlanArgs),
    /// Run a named suite: train, evaluate, compare, plot.
    Suite {
        name: String,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Render a report CSV as an SVG chart.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "accuracy")]
        metric: String,
    },
    /// Check masks, positions, grafting and metrics against their definitions.
    Selfcheck,
}

fn load_plan(args: &PlanArgs, preset: Option<&str>) -> CliResult<ExperimentPlan> {
    let mut plan = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mut file = icl_forge::experiments::PlanFile::parse(&text)?;
            if let Some(name) = preset {
                if file.get("", "preset").is_none() && file.get("", "kind").is_none() {
                    file.set("", "preset", name);
                }
            }
            ExperimentPlan::from_plan_file(&file)?
        }
        None => ExperimentPlan::preset(preset.unwrap_or("single-task"))?,
    };
    if let Some(seed) = args.seed {
        plan.seeds = vec![seed];
    }
    if let Some(lengths) = &args.lengths {
        plan.lengths = lengths
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| CliError::Config(format!("bad length '{s}'"))))
            .collect::<CliResult<_>>()?;
    }
    if let Some(variants) = &args.variants {
        plan.variants = variants.split(',').map(Variant::parse).collect::<Result<_, _>>()?;
    }
    plan.validate()?;
    Ok(plan)
}

fn progress(msg: &str) {
    eprintln!("{msg}");
}

/// A task object for the plan, boxed behind the trait.
fn make_task(plan: &ExperimentPlan) -> CliResult<Box<dyn TaskSource>> {
    let universe = build_universe(plan)?;
    Ok(match plan.kind {
        SuiteKind::SingleTask => Box::new(single_task(plan, &universe)?),
        SuiteKind::MultiTask => Box::new(GraftedUniverseTask::new(Arc::new(universe), plan.k_max, ClassSet::Ood)?),
    })
}

fn write_manifest(command: &str, plan: &ExperimentPlan, out_dir: &Path, outputs: &[&str]) -> CliResult<()> {
    let previous = read_string(out_dir.join(crate::manifest::MANIFEST_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok());
    if let Some(prev) = previous {
        let hash = crate::manifest::config_hash(plan);
        if !prev.is_consistent() || prev.config_hash != hash {
            eprintln!(
                "warning: {} was last used with a different plan ({}); cached runs are reused by variant, lr and seed only",
                out_dir.display(),
                prev.command
            );
        }
    }
    RunManifest::new(command, plan, outputs.iter().map(|s| s.to_string()).collect()).write(out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct UniverseSummary {
    d: usize,
    n_classes: usize,
    id_classes: Vec<usize>,
    ood_classes: Vec<usize>,
    avg_norm: f64,
    n_examples: usize,
    seed: u64,
}

fn gen_universe(args: &PlanArgs) -> CliResult<()> {
    let mut plan = load_plan(args, None)?;
    if let Some(seed) = args.seed {
        plan.universe_seed = seed;
    }
    write_manifest("gen-universe", &plan, &args.out_dir, &["universe.emb", "universe.json"])?;
    let universe = build_universe(&plan)?;
    let mut examples = Vec::new();
    for c in &universe.classes {
        for x in c.train_split.iter().chain(&c.holdout_split) {
            // y carries the class id modulo 2 only; the summary lists the real split
            examples.push(icl_forge::data::Example::new(x.clone(), (c.class_id % 2) as u8, 0));
        }
    }
    write_embeddings(args.out_dir.join("universe.emb"), &examples)?;
    let meta = universe.meta();
    let summary = UniverseSummary {
        d: universe.d,
        n_classes: universe.classes.len(),
        id_classes: universe.id_classes.clone(),
        ood_classes: universe.ood_classes.clone(),
        avg_norm: meta.avg_norm,
        n_examples: meta.n_examples,
        seed: plan.universe_seed,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(args.out_dir.join("universe.json"), json.as_bytes())?;
    println!("{} classes, {} examples, avg norm {:.4}", summary.n_classes, summary.n_examples, summary.avg_norm);
    Ok(())
}

fn dump_seq(args: &PlanArgs, count: usize) -> CliResult<()> {
    let plan = load_plan(args, None)?;
    let task = make_task(&plan)?;
    let seed = plan.seeds[0];
    let mut out = String::new();
    for variant in &plan.variants {
        let recipe = variant.recipe(plan.n, plan.hint_prob, plan.permute_annotations);
        let codebook = icl_forge::seqbuild::AnnotationCodebook::new(
            task.dim(),
            task.meta().avg_norm,
            recipe.label_mode,
            &mut stream(seed, "codebook", 0),
        )?;
        for i in 0..count as u64 {
            let mut rng = stream(seed, "train-sequence", i);
            let ep = task.sample_episode(&recipe, Split::Train, &mut rng)?;
            let seq = build_sequence(&ep.context, &ep.queries, &recipe, &codebook, &mut rng)?;
            out.push_str(&to_json_line(&seq));
            out.push('\n');
        }
    }
    write_atomic(args.out_dir.join("sequences.jsonl"), out.as_bytes())?;
    println!("wrote {} sequences", count * plan.variants.len());
    Ok(())
}

fn train_cmd(args: &PlanArgs) -> CliResult<()> {
    let plan = load_plan(args, None)?;
    write_manifest("train", &plan, &args.out_dir, &["runs"])?;
    let task = make_task(&plan)?;
    for variant in &plan.variants {
        let recipe = variant.recipe(plan.n, plan.hint_prob, plan.permute_annotations);
        for &lr in &plan.lrs {
            for &seed in &plan.seeds {
                let dir = run_dir(&args.out_dir, variant, lr, seed);
                let (_, log) = train_or_resume(task.as_ref(), &recipe, &plan, lr, seed, &dir, &mut progress)?;
                println!("{} lr={lr} seed={seed} final loss {:.4}", variant, log.last_loss().unwrap_or(f64::NAN));
            }
        }
    }
    Ok(())
}

fn eval_cmd(args: &PlanArgs) -> CliResult<()> {
    let plan = load_plan(args, None)?;
    write_manifest("eval", &plan, &args.out_dir, &[REPORT_FILE])?;
    let task = make_task(&plan)?;
    let mut report = EvalReport::default();
    for variant in &plan.variants {
        let recipe = variant.recipe(plan.n, plan.hint_prob, plan.permute_annotations);
        for &lr in &plan.lrs {
            let mut per_seed = Vec::new();
            for &seed in &plan.seeds {
                let dir = run_dir(&args.out_dir, variant, lr, seed);
                let ckpt = dir.join(icl_forge::experiments::CHECKPOINT_FILE);
                if !ckpt.exists() {
                    return Err(CliError::Runtime(format!("no checkpoint at {} (run train first)", ckpt.display())));
                }
                let params = load_checkpoint(&ckpt)?;
                let sets = evaluate_or_resume(
                    &params,
                    task.as_ref(),
                    &recipe,
                    &plan.lengths,
                    plan.n_eval,
                    plan.eval_seed.wrapping_add(seed),
                    &dir.join(TRIPLETS_FILE),
                )?;
                per_seed.push((seed, sets));
            }
            report.rows.extend(aggregate_seeds(variant.method(), &variant_tag(&plan, variant, lr), &per_seed)?);
        }
    }
    report.validate()?;
    write_atomic(args.out_dir.join(REPORT_FILE), report.to_csv().as_bytes())?;
    print_summary(&report, &plan);
    Ok(())
}

fn baseline_cmd(args: &PlanArgs) -> CliResult<()> {
    let plan = load_plan(args, None)?;
    if plan.baselines.is_empty() {
        return Err(CliError::Config("plan lists no baselines".into()));
    }
    write_manifest("baseline", &plan, &args.out_dir, &["baselines.csv"])?;
    let task = make_task(&plan)?;
    let recipe = plan.variants[0].recipe(plan.n, plan.hint_prob, plan.permute_annotations);
    let seeds: Vec<u64> = plan.seeds.iter().map(|s| plan.eval_seed.wrapping_add(*s)).collect();
    let mut report = EvalReport::default();
    for name in &plan.baselines {
        let candidates = baseline_candidates(name)?;
        let (rows, chosen) = select_baseline(
            &candidates,
            task.as_ref(),
            &recipe,
            &plan.lengths,
            plan.baseline_n_eval,
            &seeds,
            plan.selection_metric,
        )?;
        for (len, idx) in chosen {
            eprintln!("{name} length {len}: candidate {:?}", candidates[idx]);
        }
        report.rows.extend(rows);
    }
    report.validate()?;
    write_atomic(args.out_dir.join("baselines.csv"), report.to_csv().as_bytes())?;
    print_summary(&report, &plan);
    Ok(())
}

fn print_summary(report: &EvalReport, plan: &ExperimentPlan) {
    let Some(&max_len) = plan.lengths.iter().max() else { return };
    for (method, variant) in report.series_keys() {
        let fmt = |m: &str| {
            report.mean(&method, &variant, max_len, m).map_or_else(|| "null".to_string(), |v| format!("{v:.4}"))
        };
        println!(
            "{:<28} len {max_len}: accuracy {} worst_group {} minority_group {}",
            plot::series_label(&method, &variant),
            fmt("accuracy"),
            fmt("worst_group"),
            fmt("minority_group")
        );
    }
}

fn suite_cmd(name: &str, args: &PlanArgs) -> CliResult<()> {
    let plan = load_plan(args, Some(name))?;
    let mut outputs = vec![REPORT_FILE, "curves.svg", "runs"];
    if !plan.rho_grid.is_empty() {
        outputs.push(SHIFT_FILE);
    }
    write_manifest(&format!("suite {name}"), &plan, &args.out_dir, &outputs)?;
    let out = run_suite(&plan, &args.out_dir, &mut progress)?;
    let svg = plot::emit_plot(&out.report, "accuracy", &format!("{name}: accuracy")).map_err(CliError::Runtime)?;
    write_atomic(args.out_dir.join("curves.svg"), svg.as_bytes())?;
    if let Ok(svg) = plot::emit_plot(&out.report, "worst_group", &format!("{name}: worst-group accuracy")) {
        write_atomic(args.out_dir.join("curves_worst_group.svg"), svg.as_bytes())?;
    }
    print_summary(&out.report, &plan);
    if let Some(shift) = &out.shift {
        for (rho, mean, _) in shift.series("worst_group") {
            println!("rho {rho}: worst_group {}", mean.map_or_else(|| "null".to_string(), |v| format!("{v:.4}")));
        }
    }
    Ok(())
}

fn plot_cmd(input: &Path, out: &Path, metric: &str) -> CliResult<()> {
    let text = read_string(input).map_err(|e| CliError::Config(e.to_string()))?;
    let report = EvalReport::from_csv(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let title = input.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let svg = plot::emit_plot(&report, metric, &format!("{title}: {metric}")).map_err(CliError::Config)?;
    write_atomic(out, svg.as_bytes())?;
    Ok(())
}

fn selfcheck_cmd() -> CliResult<()> {
    let mut failed = 0;
    for (name, t) in selfcheck::run() {
        println!("{name}: {} passed, {} failed", t.passed, t.failed);
        failed += t.failed;
    }
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} checks failed")));
    }
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenUniverse(a) => gen_universe(a),
        Command::DumpSeq { plan, count } => dump_seq(plan, *count),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
        Command::Suite { name, plan } => suite_cmd(name, plan),
        Command::Plot { input, out, metric } => plot_cmd(input, out, metric),
        Command::Selfcheck => selfcheck_cmd(),
    }
}
