//! Desk-scale experiment suites: plan files, the table variants, and
//! resumable runs that train, evaluate and compare against baselines.

mod plan;
mod suite;
mod variant;

pub use plan::{ExperimentPlan, PlanFile, SingleTaskPlan, SuiteKind};
pub use suite::{
    baseline_candidates, build_universe, evaluate_or_resume, interpolation_task, run_dir, run_multi_task_suite,
    run_shift_interpolation, run_single_task_suite, run_suite, single_task, steps_to_loss, train_or_resume,
    triplets_from_csv, triplets_to_csv, variant_tag, ShiftCurve, ShiftPoint, SuiteOutput, CHECKPOINT_FILE, REPORT_FILE,
    SHIFT_FILE, TRAIN_LOG_FILE, TRIPLETS_FILE,
};
pub use variant::{SchemeKey, Variant};
