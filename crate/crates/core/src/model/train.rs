use rayon::prelude::*;

use super::{adam_step, loss_and_grad, AdamState, ModelConfig, ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqbuild::{build_sequence, AnnotationCodebook, IclSequence, SequenceRecipe, Split, TaskSource};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub const HEADER: &'static str = "step,loss,lr,seed";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.lr, r.seed));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(Error::Format("training log header is missing".into()));
        }
        let bad = |line: &str| Error::Format(format!("bad training log line: {line}"));
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            rows.push(TrainLogRow {
                step: f[0].parse().map_err(|_| bad(line))?,
                loss: f[1].parse().map_err(|_| bad(line))?,
                lr: f[2].parse().map_err(|_| bad(line))?,
                seed: f[3].parse().map_err(|_| bad(line))?,
            });
        }
        Ok(TrainLog { rows })
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub log: TrainLog,
}

/// Builds training sequence `index` of a run; a pure function of the seed.
pub(crate) fn training_sequence(
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    codebook: &AnnotationCodebook,
    seed: u64,
    index: u64,
) -> Result<IclSequence> {
    let mut rng = rng::stream(seed, "train-sequence", index);
    let ep = task.sample_episode(recipe, Split::Train, &mut rng)?;
    build_sequence(&ep.context, &ep.queries, recipe, codebook, &mut rng)
}

pub fn train(
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_with_hook(task, recipe, model, cfg, &mut |_| {})
}

/// Streams `cfg.n_sequences` fresh sequences through Adam. Per-sequence
/// gradients are computed in parallel and summed in index order, so the
/// result does not depend on the thread count.
pub fn train_with_hook(
    task: &dyn TaskSource,
    recipe: &SequenceRecipe,
    model: &ModelConfig,
    cfg: &TrainConfig,
    hook: &mut dyn FnMut(&TrainLogRow),
) -> Result<TrainOutput> {
    recipe.validate()?;
    model.validate()?;
    cfg.validate()?;
    if model.d_in != task.dim() {
        return Err(Error::Config(format!("model d_in {} but task dimension {}", model.d_in, task.dim())));
    }
    if recipe.max_position() >= model.max_positions {
        return Err(Error::Config(format!(
            "context size {} needs max_positions above {}",
            recipe.n,
            recipe.max_position()
        )));
    }
    let mut cb_rng = rng::stream(cfg.seed, "codebook", 0);
    let codebook = AnnotationCodebook::new(task.dim(), task.meta().avg_norm, recipe.label_mode, &mut cb_rng)?;
    let mut params = ModelParams::<f32>::init(model.clone(), codebook, cfg.seed)?;
    let mut state = AdamState::new(params.n_params());
    let mut log = TrainLog::default();
    let n_steps = cfg.n_steps();
    let mut grad = vec![0f32; params.n_params()];

    for step in 0..n_steps {
        let start = step * cfg.batch_size;
        let end = (start + cfg.batch_size).min(cfg.n_sequences);
        let weight = 1.0 / (end - start) as f32;
        let per_seq: Vec<Result<(f32, Vec<f32>)>> = (start..end)
            .into_par_iter()
            .map(|i| {
                let seq = training_sequence(task, recipe, &params.codebook, cfg.seed, i as u64)?;
                let mut g = vec![0f32; params.n_params()];
                let l = loss_and_grad(&params, &seq, weight, &mut g)?;
                Ok((l, g))
            })
            .collect();
        grad.fill(0.0);
        let mut batch_loss = 0f64;
        for item in per_seq {
            let (l, g) = item?;
            batch_loss += f64::from(l);
            for (acc, v) in grad.iter_mut().zip(&g) {
                *acc += v;
            }
        }
        batch_loss /= (end - start) as f64;
        if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step });
        }
        let lr = cfg.lr_at(step);
        if step % cfg.log_every == 0 || step + 1 == n_steps {
            let row = TrainLogRow { step, loss: batch_loss, lr, seed: cfg.seed };
            hook(&row);
            log.rows.push(row);
        }
        adam_step(&mut params.theta, &grad, &mut state, cfg, lr);
    }
    Ok(TrainOutput { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_csv_round_trip() {
        let log = TrainLog {
            rows: vec![
                TrainLogRow { step: 0, loss: 0.6875, lr: 1e-5, seed: 7 },
                TrainLogRow { step: 50, loss: 0.1, lr: 0.001, seed: 7 },
            ],
        };
        let text = log.to_csv();
        assert!(text.starts_with("step,loss,lr,seed\n0,0.6875,0.00001,7\n"));
        assert_eq!(TrainLog::from_csv(&text).unwrap(), log);
        assert!(TrainLog::from_csv("nope\n").is_err());
    }
}
