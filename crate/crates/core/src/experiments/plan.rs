use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use super::variant::Variant;
use crate::data::UniverseConfig;
use crate::error::{Error, Result};
use crate::eval::Metric;
use crate::model::{ModelConfig, TrainConfig};
use crate::seqbuild::SequenceRecipe;

/// Flat `key = value` text with optional `[section]` headers. Keys before
/// the first header live in the unnamed section `""`. `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanFile {
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = PlanFile::default();
        let mut section = String::new();
        out.sections.entry(section.clone()).or_default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", lineno + 1)))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {}: empty section name", lineno + 1)));
                }
                section = name.to_string();
                out.sections.entry(section.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            let entries = out.sections.get_mut(&section).unwrap();
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Ok(out)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.sections.entry(section.to_string()).or_default().insert(key.to_string(), value.to_string());
    }

    /// Canonical text: unnamed section first, then sections and keys sorted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(root) = self.sections.get("") {
            for (k, v) in root {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        for (name, entries) in &self.sections {
            if name.is_empty() || entries.is_empty() {
                continue;
            }
            writeln!(out, "\n[{name}]").unwrap();
            for (k, v) in entries {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        out
    }
}

/// Which task family a plan trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKind {
    /// One fixed class pair with a planted spurious feature.
    SingleTask,
    /// A fresh in-distribution class pair per sequence, evaluated on
    /// out-of-distribution pairs.
    MultiTask,
}

impl SuiteKind {
    pub fn name(self) -> &'static str {
        match self {
            SuiteKind::SingleTask => "single-task",
            SuiteKind::MultiTask => "multi-task",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single-task" => Ok(SuiteKind::SingleTask),
            "multi-task" => Ok(SuiteKind::MultiTask),
            _ => Err(Error::Config(format!("unknown suite kind '{s}'"))),
        }
    }
}

/// The class pair and spurious feature of a single-task plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleTaskPlan {
    pub class_a: usize,
    pub class_b: usize,
    /// Number of grafted dimensions (placed right after the type dimensions).
    pub graft_k: usize,
    /// Relative norm of the additive shift; `None` for no shift.
    pub rho: Option<f64>,
    pub shift_seed: u64,
}

/// Everything needed to run a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub name: String,
    pub kind: SuiteKind,
    pub seeds: Vec<u64>,
    pub universe: UniverseConfig,
    pub universe_seed: u64,
    pub single: SingleTaskPlan,
    /// Largest graft size of the multi-task universe task.
    pub k_max: usize,
    pub variants: Vec<Variant>,
    pub n: usize,
    pub hint_prob: f64,
    pub permute_annotations: bool,
    pub model: ModelConfig,
    /// `lr` and `seed` are overwritten per run.
    pub train: TrainConfig,
    pub lrs: Vec<f64>,
    pub lengths: Vec<usize>,
    pub n_eval: usize,
    pub eval_seed: u64,
    /// Baseline names: `1nn`, `erm`, `groupdro`.
    pub baselines: Vec<String>,
    pub baseline_n_eval: usize,
    pub selection_metric: Metric,
    /// Non-empty: evaluate the trained multi-task models on a shifted
    /// out-of-distribution pair at every listed relative norm.
    pub rho_grid: Vec<f64>,
}

fn list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::Config(format!("bad {what} entry '{p}'"))))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

fn parse_bool(s: &str) -> Result<bool> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got '{s}'"))),
    }
}

struct Reader<'a> {
    file: &'a PlanFile,
    used: Vec<(String, String)>,
}

impl<'a> Reader<'a> {
    fn raw(&mut self, section: &str, key: &str) -> Option<&'a str> {
        self.used.push((section.to_string(), key.to_string()));
        self.file.get(section, key)
    }

    fn value<T: FromStr>(&mut self, section: &str, key: &str, default: T) -> Result<T> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for {}", qualified(section, key)))),
        }
    }

    fn flag(&mut self, section: &str, key: &str, default: bool) -> Result<bool> {
        self.raw(section, key).map_or(Ok(default), parse_bool)
    }

    fn list<T: FromStr>(&mut self, section: &str, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(section, key) {
            None => Ok(default),
            Some(v) => list(v, &qualified(section, key)),
        }
    }

    fn unknown_keys(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (section, entries) in &self.file.sections {
            for key in entries.keys() {
                if !self.used.iter().any(|(s, k)| s == section && k == key) {
                    out.push(qualified(section, key));
                }
            }
        }
        out
    }
}

fn qualified(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

impl ExperimentPlan {
    /// Desk-scale defaults for a suite kind.
    pub fn defaults(kind: SuiteKind) -> Self {
        let universe = UniverseConfig { noise_scale: 1.5, ..UniverseConfig::default() };
        let model = ModelConfig { d_in: universe.d, n_heads: 2, ..ModelConfig::default() };
        let variants = match kind {
            SuiteKind::SingleTask => Variant::TABLE_ROWS.to_vec(),
            SuiteKind::MultiTask => {
                ["Proposed + P + I", "Proposed + G + P + I"].iter().map(|s| Variant::parse(s).unwrap()).collect()
            }
        };
        ExperimentPlan {
            name: kind.name().to_string(),
            kind,
            seeds: (0..5).collect(),
            k_max: crate::seqbuild::GraftedUniverseTask::default_k_max(universe.d),
            universe,
            universe_seed: 1,
            single: SingleTaskPlan { class_a: 0, class_b: 1, graft_k: 8, rho: None, shift_seed: 0 },
            variants,
            n: 64,
            hint_prob: SequenceRecipe::DEFAULT_HINT_PROB,
            permute_annotations: false,
            model,
            train: TrainConfig::default(),
            lrs: vec![TrainConfig::default().lr],
            lengths: vec![1, 2, 4, 8, 16, 32, 64],
            n_eval: 8192,
            eval_seed: 1000,
            baselines: ["1nn", "erm", "groupdro"].map(String::from).to_vec(),
            baseline_n_eval: 1024,
            selection_metric: Metric::WorstGroup,
            rho_grid: Vec::new(),
        }
    }

    /// Named presets behind `suite <name>`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut p = match name {
            "single-task" => Self::defaults(SuiteKind::SingleTask),
            "memorization" => {
                let mut p = Self::defaults(SuiteKind::SingleTask);
                p.variants = vec![Variant::parse("Naive").unwrap(), Variant::parse("Naive + P").unwrap()];
                p.baselines = vec!["1nn".into(), "erm".into()];
                p
            }
            "severe" => {
                let mut p = Self::defaults(SuiteKind::SingleTask);
                p.single.graft_k = 0;
                p.single.rho = Some(1.0);
                p.variants = vec![Variant::parse("Naive + P").unwrap(), Variant::parse("Proposed + P").unwrap()];
                p
            }
            "multi-task" => Self::defaults(SuiteKind::MultiTask),
            "interpolation" => {
                let mut p = Self::defaults(SuiteKind::MultiTask);
                p.variants = vec![Variant::parse("Proposed + G + P + I").unwrap()];
                p.baselines = Vec::new();
                p.rho_grid = vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
                p
            }
            _ => {
                return Err(Error::Config(format!(
                    "unknown suite '{name}' (expected one of: {})",
                    Self::PRESETS.join(", ")
                )))
            }
        };
        p.name = name.to_string();
        if p.kind == SuiteKind::MultiTask {
            p.train.n_sequences = 200_000;
            p.lengths.retain(|&l| l >= 2);
        }
        Ok(p)
    }

    pub const PRESETS: [&'static str; 5] = ["single-task", "memorization", "severe", "multi-task", "interpolation"];

    pub fn from_plan_file(file: &PlanFile) -> Result<Self> {
        let mut r = Reader { file, used: Vec::new() };
        let kind = match r.raw("", "kind") {
            Some(k) => SuiteKind::parse(k)?,
            None => SuiteKind::SingleTask,
        };
        let base = match r.raw("", "preset") {
            Some(name) => Self::preset(name)?,
            None => Self::defaults(kind),
        };
        let kind = if r.file.get("", "kind").is_some() { kind } else { base.kind };
        let u = &base.universe;
        let universe = UniverseConfig {
            d: r.value("universe", "d", u.d)?,
            n_classes: r.value("universe", "n_classes", u.n_classes)?,
            pool_size: r.value("universe", "pool_size", u.pool_size)?,
            noise_scale: r.value("universe", "noise_scale", u.noise_scale)?,
            prototype_scale: r.value("universe", "prototype_scale", u.prototype_scale)?,
            ood_fraction: r.value("universe", "ood_fraction", u.ood_fraction)?,
        };
        let rho = match r.raw("task", "rho") {
            None => base.single.rho,
            Some("none") => None,
            Some(v) => Some(v.parse().map_err(|_| Error::Config(format!("bad value '{v}' for task.rho")))?),
        };
        let single = SingleTaskPlan {
            class_a: r.value("task", "class_a", base.single.class_a)?,
            class_b: r.value("task", "class_b", base.single.class_b)?,
            graft_k: r.value("task", "graft_k", base.single.graft_k)?,
            rho,
            shift_seed: r.value("task", "shift_seed", base.single.shift_seed)?,
        };
        let variants = match r.raw("recipe", "variants") {
            None => base.variants.clone(),
            Some(v) => {
                v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(Variant::parse).collect::<Result<_>>()?
            }
        };
        let m = &base.model;
        let model = ModelConfig {
            d_in: universe.d,
            d_model: r.value("model", "d_model", m.d_model)?,
            n_layers: r.value("model", "n_layers", m.n_layers)?,
            n_heads: r.value("model", "n_heads", m.n_heads)?,
            d_ff: r.value("model", "d_ff", m.d_ff)?,
            input_layernorm: r.flag("model", "input_layernorm", m.input_layernorm)?,
            max_positions: r.value("model", "max_positions", m.max_positions)?,
        };
        let t = &base.train;
        let lrs = r.list("train", "lr", base.lrs.clone())?;
        let train = TrainConfig {
            lr: lrs.first().copied().unwrap_or(t.lr),
            batch_size: r.value("train", "batch_size", t.batch_size)?,
            n_sequences: r.value("train", "n_sequences", t.n_sequences)?,
            beta1: r.value("train", "beta1", t.beta1)?,
            beta2: r.value("train", "beta2", t.beta2)?,
            eps: r.value("train", "eps", t.eps)?,
            weight_decay: r.value("train", "weight_decay", t.weight_decay)?,
            warmup_steps: r.value("train", "warmup_steps", t.warmup_steps)?,
            cosine_decay: r.flag("train", "cosine_decay", t.cosine_decay)?,
            min_lr_ratio: r.value("train", "min_lr_ratio", t.min_lr_ratio)?,
            log_every: r.value("train", "log_every", t.log_every)?,
            seed: 0,
        };
        let selection_metric = match r.raw("eval", "selection_metric") {
            None => base.selection_metric,
            Some(s) => Metric::parse(s)?,
        };
        let plan = ExperimentPlan {
            name: r.value("", "name", base.name.clone())?,
            kind,
            seeds: r.list("", "seeds", base.seeds.clone())?,
            universe,
            universe_seed: r.value("universe", "seed", base.universe_seed)?,
            single,
            k_max: r.value("task", "k_max", base.k_max)?,
            variants,
            n: r.value("recipe", "n", base.n)?,
            hint_prob: r.value("recipe", "hint_prob", base.hint_prob)?,
            permute_annotations: r.flag("recipe", "permute_annotations", base.permute_annotations)?,
            model,
            train,
            lrs,
            lengths: r.list("eval", "lengths", base.lengths.clone())?,
            n_eval: r.value("eval", "n_eval", base.n_eval)?,
            eval_seed: r.value("eval", "seed", base.eval_seed)?,
            baselines: match r.raw("eval", "baselines") {
                None => base.baselines.clone(),
                Some("none") => Vec::new(),
                Some(v) => list(v, "eval.baselines")?,
            },
            baseline_n_eval: r.value("eval", "baseline_n_eval", base.baseline_n_eval)?,
            selection_metric,
            rho_grid: r.list("eval", "rho_grid", base.rho_grid.clone())?,
        };
        let unknown = r.unknown_keys();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown plan keys: {}", unknown.join(", "))));
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_plan_file(&PlanFile::parse(text)?)
    }

    /// Full plan text; parsing it back yields an equal plan.
    pub fn to_plan_file(&self) -> PlanFile {
        let mut f = PlanFile::default();
        f.set("", "name", &self.name);
        f.set("", "kind", self.kind.name());
        f.set("", "seeds", join(&self.seeds));
        let u = &self.universe;
        f.set("universe", "d", u.d);
        f.set("universe", "n_classes", u.n_classes);
        f.set("universe", "pool_size", u.pool_size);
        f.set("universe", "noise_scale", u.noise_scale);
        f.set("universe", "prototype_scale", u.prototype_scale);
        f.set("universe", "ood_fraction", u.ood_fraction);
        f.set("universe", "seed", self.universe_seed);
        let s = &self.single;
        f.set("task", "class_a", s.class_a);
        f.set("task", "class_b", s.class_b);
        f.set("task", "graft_k", s.graft_k);
        f.set("task", "rho", s.rho.map_or_else(|| "none".to_string(), |r| r.to_string()));
        f.set("task", "shift_seed", s.shift_seed);
        f.set("task", "k_max", self.k_max);
        f.set("recipe", "variants", join(&self.variants));
        f.set("recipe", "n", self.n);
        f.set("recipe", "hint_prob", self.hint_prob);
        f.set("recipe", "permute_annotations", self.permute_annotations);
        let m = &self.model;
        f.set("model", "d_model", m.d_model);
        f.set("model", "n_layers", m.n_layers);
        f.set("model", "n_heads", m.n_heads);
        f.set("model", "d_ff", m.d_ff);
        f.set("model", "input_layernorm", m.input_layernorm);
        f.set("model", "max_positions", m.max_positions);
        let t = &self.train;
        f.set("train", "lr", join(&self.lrs));
        f.set("train", "batch_size", t.batch_size);
        f.set("train", "n_sequences", t.n_sequences);
        f.set("train", "beta1", t.beta1);
        f.set("train", "beta2", t.beta2);
        f.set("train", "eps", t.eps);
        f.set("train", "weight_decay", t.weight_decay);
        f.set("train", "warmup_steps", t.warmup_steps);
        f.set("train", "cosine_decay", t.cosine_decay);
        f.set("train", "min_lr_ratio", t.min_lr_ratio);
        f.set("train", "log_every", t.log_every);
        f.set("eval", "lengths", join(&self.lengths));
        f.set("eval", "n_eval", self.n_eval);
        f.set("eval", "seed", self.eval_seed);
        f.set("eval", "baselines", if self.baselines.is_empty() { "none".to_string() } else { join(&self.baselines) });
        f.set("eval", "baseline_n_eval", self.baseline_n_eval);
        f.set("eval", "selection_metric", self.selection_metric.name());
        f.set("eval", "rho_grid", join(&self.rho_grid));
        f
    }

    pub fn to_text(&self) -> String {
        self.to_plan_file().to_text()
    }

    pub fn validate(&self) -> Result<()> {
        self.universe.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("plan lists no seeds".into()));
        }
        if self.variants.is_empty() {
            return Err(Error::Config("plan lists no variants".into()));
        }
        if self.lrs.is_empty() || self.lrs.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.lengths.is_empty() {
            return Err(Error::Config("plan lists no evaluation lengths".into()));
        }
        if let Some(&l) = self.lengths.iter().find(|&&l| l > self.n) {
            return Err(Error::LengthExtrapolation { requested: l, trained: self.n });
        }
        if self.n_eval == 0 {
            return Err(Error::Config("n_eval must be positive".into()));
        }
        for v in &self.variants {
            v.validate()?;
            if self.kind == SuiteKind::MultiTask && v.scheme != super::SchemeKey::Proposed {
                return Err(Error::Config(format!("{v}: multi-task plans support the proposed scheme only")));
            }
            if v.scheme == super::SchemeKey::Proposed && self.lengths.contains(&0) {
                return Err(Error::Config("the proposed scheme has no prediction without context".into()));
            }
        }
        for b in &self.baselines {
            if !["1nn", "erm", "groupdro"].contains(&b.as_str()) {
                return Err(Error::Config(format!("unknown baseline '{b}'")));
            }
        }
        if !self.baselines.is_empty() && self.lengths.contains(&0) {
            return Err(Error::Config("baselines need at least one context example".into()));
        }
        if self.rho_grid.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("rho grid entries must be non-negative".into()));
        }
        if !self.rho_grid.is_empty() && self.kind != SuiteKind::MultiTask {
            return Err(Error::Config("the rho grid applies to multi-task plans".into()));
        }
        if self.kind == SuiteKind::SingleTask {
            let s = &self.single;
            if s.class_a == s.class_b || s.class_a.max(s.class_b) >= self.universe.n_classes {
                return Err(Error::Config(format!("invalid class pair ({}, {})", s.class_a, s.class_b)));
            }
            if s.graft_k + crate::seqbuild::GraftedUniverseTask::RESERVED_DIMS > self.universe.d {
                return Err(Error::Config(format!("graft_k {} too large for d = {}", s.graft_k, self.universe.d)));
            }
        }
        let mut model = self.model.clone();
        model.d_in = self.universe.d;
        model.validate()?;
        self.train.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_sections_and_comments() {
        let f = PlanFile::parse("name = x # trailing\n\n[train]\nlr = 1e-3, 3e-4\n# whole line\n[eval]\nn_eval=10\n")
            .unwrap();
        assert_eq!(f.get("", "name"), Some("x"));
        assert_eq!(f.get("train", "lr"), Some("1e-3, 3e-4"));
        assert_eq!(f.get("eval", "n_eval"), Some("10"));
        assert!(PlanFile::parse("[a\nk = v").is_err());
        assert!(PlanFile::parse("just text").is_err());
        assert!(PlanFile::parse("k = 1\nk = 2").is_err());
    }

    #[test]
    fn plan_round_trips_through_text() {
        for name in ExperimentPlan::PRESETS {
            let p = ExperimentPlan::preset(name).unwrap();
            let q = ExperimentPlan::parse(&p.to_text()).unwrap();
            assert_eq!(p, q, "{name}");
        }
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let p =
            ExperimentPlan::parse("preset = severe\nseeds = 3, 4\n[train]\nlr = 1e-4, 3e-4\nn_sequences = 64").unwrap();
        assert_eq!(p.seeds, vec![3, 4]);
        assert_eq!(p.lrs, vec![1e-4, 3e-4]);
        assert_eq!(p.single.rho, Some(1.0));
        assert_eq!(p.train.n_sequences, 64);
        assert!(matches!(ExperimentPlan::parse("[train]\nlearning_rate = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentPlan::parse("[eval]\nlengths = 128"), Err(Error::LengthExtrapolation { .. })));
        assert!(ExperimentPlan::parse("kind = multi-task\n[recipe]\nvariants = Naive + P").is_err());
    }
}
