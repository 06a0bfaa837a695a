use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::plan::{ExperimentPlan, SuiteKind};
use super::variant::Variant;
use crate::baselines::BaselineGrid;
use crate::data::{make_synthetic_universe, Universe};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_seeds, compute_metrics, evaluate_icl, population_std, select_baseline, BaselineMethod, EvalReport,
    LengthTriplets, PredictionTriplet,
};
use crate::fsio::{read_string, write_atomic};
use crate::graft::{make_severe_shift, GraftSpec};
use crate::model::{load_checkpoint, save_checkpoint, train_with_hook, ModelParams, TrainConfig, TrainLog};
use crate::rng::stream;
use crate::seqbuild::{ClassSet, GraftedUniverseTask, SequenceRecipe, SingleTask, TaskSource};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRIPLETS_FILE: &str = "eval_triplets.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SHIFT_FILE: &str = "shift_curve.csv";

pub fn build_universe(plan: &ExperimentPlan) -> Result<Universe> {
    make_synthetic_universe(&plan.universe, plan.universe_seed)
}

fn shift_spec(plan: &ExperimentPlan, universe: &Universe, rho: f64) -> Result<crate::graft::SevereShiftSpec> {
    // the same stream for every rho, so only the norm changes along a grid
    make_severe_shift(&universe.meta(), rho, &mut stream(plan.single.shift_seed, "severe-shift", 0))
}

/// The plan's class pair, grafted on `graft_k` dimensions placed after the
/// type dimensions, optionally shifted.
pub fn single_task(plan: &ExperimentPlan, universe: &Universe) -> Result<SingleTask> {
    let s = &plan.single;
    let offset = GraftedUniverseTask::RESERVED_DIMS;
    let graft = GraftSpec::new(
        (offset..offset + s.graft_k).collect(),
        GraftSpec::DEFAULT_CONTEXT_RATIO,
        GraftSpec::DEFAULT_QUERY_RATIO,
    )?;
    let shift = s.rho.map(|rho| shift_spec(plan, universe, rho)).transpose()?;
    let mut rng = stream(plan.universe_seed, "single-task", 0);
    SingleTask::from_universe(universe, s.class_a, s.class_b, &graft, shift.as_ref(), &mut rng)
}

/// First two out-of-distribution classes, no grafting, shifted by `rho`.
pub fn interpolation_task(plan: &ExperimentPlan, universe: &Universe, rho: f64) -> Result<SingleTask> {
    if universe.ood_classes.len() < 2 {
        return Err(Error::Config("interpolation needs two out-of-distribution classes".into()));
    }
    let graft = GraftSpec::new(Vec::new(), GraftSpec::DEFAULT_CONTEXT_RATIO, GraftSpec::DEFAULT_QUERY_RATIO)?;
    let shift = shift_spec(plan, universe, rho)?;
    let mut rng = stream(plan.universe_seed, "interpolation-task", 0);
    let (a, b) = (universe.ood_classes[0], universe.ood_classes[1]);
    SingleTask::from_universe(universe, a, b, &graft, Some(&shift), &mut rng)
}

pub fn run_dir(out_dir: &Path, variant: &Variant, lr: f64, seed: u64) -> PathBuf {
    out_dir.join("runs").join(variant.slug()).join(format!("lr{lr}")).join(format!("seed{seed}"))
}

/// Variant column of reports; carries the learning rate when a plan sweeps it.
pub fn variant_tag(plan: &ExperimentPlan, variant: &Variant, lr: f64) -> String {
    if plan.lrs.len() > 1 {
        format!("{}@lr={lr}", variant.flags())
    } else {
        variant.flags()
    }
}

/// Loads a finished run from `dir` or trains it. A run is finished once its
/// checkpoint exists; the checkpoint is written last.
pub fn train_or_resume(
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    plan: &ExperimentPlan,
    lr: f64,
    seed: u64,
    dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<(ModelParams<f32>, TrainLog)> {
    let ckpt = dir.join(CHECKPOINT_FILE);
    let log_path = dir.join(TRAIN_LOG_FILE);
    if ckpt.exists() && log_path.exists() {
        progress(&format!("resume {}", dir.display()));
        return Ok((load_checkpoint(&ckpt)?, TrainLog::from_csv(&read_string(&log_path)?)?));
    }
    let mut model = plan.model.clone();
    model.d_in = task.dim();
    let cfg = TrainConfig { lr, seed, ..plan.train.clone() };
    let label = dir.display().to_string();
    let n_steps = cfg.n_steps();
    let out = train_with_hook(task, recipe, &model, &cfg, &mut |row| {
        progress(&format!("{label} step {}/{n_steps} loss {:.4}", row.step, row.loss))
    })?;
    write_atomic(&log_path, out.log.to_csv().as_bytes())?;
    save_checkpoint(&ckpt, &out.params)?;
    Ok((out.params, out.log))
}

pub fn triplets_to_csv(sets: &LengthTriplets) -> String {
    let mut out = String::from("context_len,c0,c1,c2,c3,query_group,predicted,label\n");
    for ts in sets.values() {
        for t in ts {
            let c = t.context_counts;
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                t.context_len, c[0], c[1], c[2], c[3], t.query_group, t.predicted, t.label
            )
            .unwrap();
        }
    }
    out
}

pub fn triplets_from_csv(text: &str) -> Result<LengthTriplets> {
    let mut lines = text.lines();
    if lines.next() != Some("context_len,c0,c1,c2,c3,query_group,predicted,label") {
        return Err(Error::Format("triplet CSV header mismatch".into()));
    }
    let mut out = LengthTriplets::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<u32> = line
            .split(',')
            .map(|v| v.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Format(format!("triplet CSV row {}: not an integer", i + 1)))?;
        if f.len() != 8 {
            return Err(Error::Format(format!("triplet CSV row {}: expected 8 fields", i + 1)));
        }
        let t = PredictionTriplet {
            context_counts: [f[1], f[2], f[3], f[4]],
            query_group: f[5] as u8,
            predicted: f[6] as u8,
            label: f[7] as u8,
            context_len: f[0] as usize,
        };
        out.entry(t.context_len).or_default().push(t);
    }
    Ok(out)
}

/// Evaluation triplets of a run, cached in `dir`.
pub fn evaluate_or_resume(
    params: &ModelParams<f32>,
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    lengths: &[usize],
    n_eval: usize,
    seed: u64,
    path: &Path,
) -> Result<LengthTriplets> {
    if path.exists() {
        let cached = triplets_from_csv(&read_string(path)?)?;
        let complete =
            lengths.iter().all(|l| cached.get(l).is_some_and(|ts| ts.len() == n_eval)) && cached.len() == lengths.len();
        if complete {
            return Ok(cached);
        }
    }
    let sets = evaluate_icl(params, task, recipe, lengths, n_eval, seed)?;
    write_atomic(path, triplets_to_csv(&sets).as_bytes())?;
    Ok(sets)
}

/// Worst-group (and other) accuracies of one variant along the rho grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftPoint {
    pub variant: String,
    pub rho: f64,
    pub context_len: usize,
    pub metric: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ShiftCurve {
    pub points: Vec<ShiftPoint>,
}

impl ShiftCurve {
    pub const HEADER: &'static str = "variant,rho,context_len,metric,mean,std,seeds";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |x| x.to_string());
        let mut out = format!("{}\n", Self::HEADER);
        for p in &self.points {
            let seeds: Vec<String> = p.seeds.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                p.variant,
                p.rho,
                p.context_len,
                p.metric,
                opt(p.mean),
                opt(p.std),
                seeds.join(";")
            )
            .unwrap();
        }
        out
    }

    /// Mean of `metric` at each rho, in grid order.
    pub fn series(&self, metric: &str) -> Vec<(f64, Option<f64>, Option<f64>)> {
        self.points.iter().filter(|p| p.metric == metric).map(|p| (p.rho, p.mean, p.std)).collect()
    }
}

/// Evaluates trained models on the interpolation task at every rho of the
/// plan's grid, at the largest evaluation length.
pub fn run_shift_interpolation(
    plan: &ExperimentPlan,
    universe: &Universe,
    variant: &Variant,
    models: &[(u64, ModelParams<f32>)],
) -> Result<ShiftCurve> {
    let len = *plan.lengths.iter().max().ok_or_else(|| Error::Config("no evaluation lengths".into()))?;
    let recipe = variant.recipe(plan.n, plan.hint_prob, plan.permute_annotations);
    let mut curve = ShiftCurve::default();
    for &rho in &plan.rho_grid {
        let task = interpolation_task(plan, universe, rho)?;
        let mut per_seed = Vec::with_capacity(models.len());
        for (seed, params) in models {
            let sets = evaluate_icl(params, &task, &recipe, &[len], plan.n_eval, plan.eval_seed.wrapping_add(*seed))?;
            per_seed.push(compute_metrics(&sets[&len]));
        }
        for (k, (metric, _)) in per_seed[0].iter().enumerate() {
            let values: Option<Vec<f64>> = per_seed.iter().map(|m| m[k].1).collect();
            let (mean, std) = match values {
                Some(v) => (Some(v.iter().sum::<f64>() / v.len() as f64), Some(population_std(&v))),
                None => (None, None),
            };
            curve.points.push(ShiftPoint {
                variant: variant.flags(),
                rho,
                context_len: len,
                metric: metric.name(),
                mean,
                std,
                seeds: models.iter().map(|(s, _)| *s).collect(),
            });
        }
    }
    Ok(curve)
}

/// Everything a suite produced.
#[derive(Debug, Clone, Default)]
pub struct SuiteOutput {
    pub report: EvalReport,
    pub shift: Option<ShiftCurve>,
    /// `(variant, lr, seed, log)` per training run.
    pub train_logs: Vec<(Variant, f64, u64, TrainLog)>,
}

/// Grid candidates of a named baseline: "1nn", "erm" or "groupdro".
pub fn baseline_candidates(name: &str) -> Result<Vec<BaselineMethod>> {
    let grid = BaselineGrid::default();
    Ok(match name {
        "1nn" => vec![BaselineMethod::Knn],
        "erm" => grid.erm.iter().map(|h| BaselineMethod::Erm(*h)).collect(),
        "groupdro" => grid.dro.iter().map(|h| BaselineMethod::GroupDro(*h)).collect(),
        _ => return Err(Error::Config(format!("unknown baseline '{name}'"))),
    })
}

fn run_with_task(
    plan: &ExperimentPlan,
    task: &dyn TaskSource,
    universe: &Universe,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<SuiteOutput> {
    let mut out = SuiteOutput::default();
    let mut shift = ShiftCurve::default();
    for variant in &plan.variants {
        let recipe = variant.recipe(plan.n, plan.hint_prob, plan.permute_annotations);
        for &lr in &plan.lrs {
            let mut per_seed = Vec::with_capacity(plan.seeds.len());
            let mut models = Vec::with_capacity(plan.seeds.len());
            for &seed in &plan.seeds {
                let dir = run_dir(out_dir, variant, lr, seed);
                let (params, log) = train_or_resume(task, &recipe, plan, lr, seed, &dir, progress)?;
                let sets = evaluate_or_resume(
                    &params,
                    task,
                    &recipe,
                    &plan.lengths,
                    plan.n_eval,
                    plan.eval_seed.wrapping_add(seed),
                    &dir.join(TRIPLETS_FILE),
                )?;
                progress(&format!("{} evaluated", dir.display()));
                per_seed.push((seed, sets));
                out.train_logs.push((*variant, lr, seed, log));
                models.push((seed, params));
            }
            out.report.rows.extend(aggregate_seeds(variant.method(), &variant_tag(plan, variant, lr), &per_seed)?);
            if !plan.rho_grid.is_empty() {
                shift.points.extend(run_shift_interpolation(plan, universe, variant, &models)?.points);
            }
        }
    }
    if !plan.baselines.is_empty() {
        let recipe = plan.variants[0].recipe(plan.n, plan.hint_prob, plan.permute_annotations);
        let seeds: Vec<u64> = plan.seeds.iter().map(|s| plan.eval_seed.wrapping_add(*s)).collect();
        for name in &plan.baselines {
            progress(&format!("baseline {name}"));
            let candidates = baseline_candidates(name)?;
            let (rows, _) = select_baseline(
                &candidates,
                task,
                &recipe,
                &plan.lengths,
                plan.baseline_n_eval,
                &seeds,
                plan.selection_metric,
            )?;
            out.report.rows.extend(rows);
        }
    }
    out.report.validate()?;
    write_atomic(out_dir.join(REPORT_FILE), out.report.to_csv().as_bytes())?;
    if !plan.rho_grid.is_empty() {
        write_atomic(out_dir.join(SHIFT_FILE), shift.to_csv().as_bytes())?;
        out.shift = Some(shift);
    }
    Ok(out)
}

/// Trains every variant and seed on the plan's single task, evaluates the
/// curves and the baselines on the same episodes.
pub fn run_single_task_suite(
    plan: &ExperimentPlan,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<SuiteOutput> {
    if plan.kind != SuiteKind::SingleTask {
        return Err(Error::Config(format!("plan '{}' is not a single-task plan", plan.name)));
    }
    plan.validate()?;
    let universe = build_universe(plan)?;
    let task = single_task(plan, &universe)?;
    run_with_task(plan, &task, &universe, out_dir, progress)
}

/// Trains on fresh in-distribution class pairs and evaluates on
/// out-of-distribution pairs; runs the shift interpolation when the plan
/// has a rho grid.
pub fn run_multi_task_suite(
    plan: &ExperimentPlan,
    out_dir: &Path,
    progress: &mut dyn FnMut(&str),
) -> Result<SuiteOutput> {
    if plan.kind != SuiteKind::MultiTask {
        return Err(Error::Config(format!("plan '{}' is not a multi-task plan", plan.name)));
    }
    plan.validate()?;
    let universe = Arc::new(build_universe(plan)?);
    let task = GraftedUniverseTask::new(universe.clone(), plan.k_max, ClassSet::Ood)?;
    run_with_task(plan, &task, &universe, out_dir, progress)
}

pub fn run_suite(plan: &ExperimentPlan, out_dir: &Path, progress: &mut dyn FnMut(&str)) -> Result<SuiteOutput> {
    match plan.kind {
        SuiteKind::SingleTask => run_single_task_suite(plan, out_dir, progress),
        SuiteKind::MultiTask => run_multi_task_suite(plan, out_dir, progress),
    }
}

/// Loss-curve summary used by the plateau comparison: the first logged step
/// whose loss drops below `threshold`, per run.
pub fn steps_to_loss(logs: &[(Variant, f64, u64, TrainLog)], threshold: f64) -> BTreeMap<(String, u64), Option<usize>> {
    logs.iter()
        .map(|(v, _, seed, log)| {
            let step = log.rows.iter().find(|r| r.loss < threshold).map(|r| r.step);
            ((v.to_string(), *seed), step)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplet_csv_round_trip() {
        let mut sets = LengthTriplets::new();
        sets.insert(
            2,
            vec![PredictionTriplet {
                context_counts: [1, 0, 0, 1],
                query_group: 3,
                predicted: 1,
                label: 1,
                context_len: 2,
            }],
        );
        sets.insert(
            4,
            vec![PredictionTriplet {
                context_counts: [2, 0, 1, 1],
                query_group: 1,
                predicted: 0,
                label: 0,
                context_len: 4,
            }],
        );
        assert_eq!(triplets_from_csv(&triplets_to_csv(&sets)).unwrap(), sets);
        assert!(triplets_from_csv("bad header\n").is_err());
    }

    #[test]
    fn run_dirs_are_distinct() {
        let v = Variant::parse("Proposed + G + P + I").unwrap();
        let a = run_dir(Path::new("out"), &v, 1e-3, 0);
        assert_eq!(a, Path::new("out/runs/proposed-gpi/lr0.001/seed0"));
        assert_ne!(a, run_dir(Path::new("out"), &v, 3e-4, 0));
    }
}
