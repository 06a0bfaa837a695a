//! Per-sequence learners fitted on a context and evaluated on a query:
//! 1-nearest-neighbour, logistic regression (ERM) and GroupDRO.

use crate::data::Example;
use crate::error::{Error, Result};

/// `p(y = 1 | x) = sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearModel {
    pub fn zeros(d: usize) -> Self {
        LinearModel { w: vec![0.0; d], b: 0.0 }
    }

    pub fn logit(&self, x: &[f32]) -> f64 {
        self.w.iter().zip(x).map(|(w, &v)| w * f64::from(v)).sum::<f64>() + self.b
    }

    pub fn predict_proba(&self, x: &[f32]) -> f64 {
        sigmoid(self.logit(x))
    }

    pub fn predict(&self, x: &[f32]) -> u8 {
        u8::from(self.logit(x) > 0.0)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(z: f64, y: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    if y == 1 {
        softplus - z
    } else {
        softplus
    }
}

/// Label of the Euclidean-nearest context example; ties go to the earliest.
pub fn knn_predict(context: &[Example], query: &[f32]) -> Result<u8> {
    let mut best: Option<(f64, u8)> = None;
    for e in context {
        if e.dim() != query.len() {
            return Err(Error::DimensionMismatch { expected: query.len(), got: e.dim() });
        }
        let dist: f64 = e.x.iter().zip(query).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
        if best.is_none_or(|(d, _)| dist < d) {
            best = Some((dist, e.y));
        }
    }
    best.map(|(_, y)| y).ok_or(Error::EmptyDataset)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ErmHyper {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DroHyper {
    pub lr: f64,
    pub epochs: usize,
    pub eta: f64,
    pub l2: f64,
}

/// Hyperparameter grids searched per context length.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGrid {
    pub erm: Vec<ErmHyper>,
    pub dro: Vec<DroHyper>,
}

impl Default for BaselineGrid {
    fn default() -> Self {
        let mut erm = Vec::new();
        let mut dro = Vec::new();
        for lr in [0.01, 0.001] {
            for epochs in [100, 200] {
                erm.push(ErmHyper { lr, epochs, l2: 0.0 });
                for eta in [0.01, 0.1, 1.0] {
                    for l2 in [0.0, 1.0] {
                        dro.push(DroHyper { lr, epochs, eta, l2 });
                    }
                }
            }
        }
        BaselineGrid { erm, dro }
    }
}

fn check_context(context: &[Example]) -> Result<usize> {
    let d = context.first().ok_or(Error::EmptyDataset)?.dim();
    if let Some(e) = context.iter().find(|e| e.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: e.dim() });
    }
    Ok(d)
}

/// One gradient step on `sum_i weights[i] * CE_i + l2 * |w|^2 / 2`.
fn weighted_step(model: &mut LinearModel, context: &[Example], weights: &[f64], lr: f64, l2: f64) {
    let mut gw: Vec<f64> = model.w.iter().map(|w| l2 * w).collect();
    let mut gb = 0.0;
    for (e, &wt) in context.iter().zip(weights) {
        let r = wt * (sigmoid(model.logit(&e.x)) - f64::from(e.y));
        for (g, &x) in gw.iter_mut().zip(&e.x) {
            *g += r * f64::from(x);
        }
        gb += r;
    }
    for (w, g) in model.w.iter_mut().zip(&gw) {
        *w -= lr * g;
    }
    model.b -= lr * gb;
}

/// Full-batch gradient descent from zero; returns the parameters after
/// every epoch (entry 0 is the initial model).
pub fn erm_fit_trace(context: &[Example], hyper: &ErmHyper) -> Result<Vec<LinearModel>> {
    let d = check_context(context)?;
    let weights = vec![1.0 / context.len() as f64; context.len()];
    let mut model = LinearModel::zeros(d);
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    trace.push(model.clone());
    for _ in 0..hyper.epochs {
        weighted_step(&mut model, context, &weights, hyper.lr, hyper.l2);
        trace.push(model.clone());
    }
    Ok(trace)
}

pub fn erm_fit(context: &[Example], hyper: &ErmHyper) -> Result<LinearModel> {
    let d = check_context(context)?;
    let weights = vec![1.0 / context.len() as f64; context.len()];
    let mut model = LinearModel::zeros(d);
    for _ in 0..hyper.epochs {
        weighted_step(&mut model, context, &weights, hyper.lr, hyper.l2);
    }
    Ok(model)
}

/// Mean cross-entropy of the context under `model`.
pub fn mean_loss(model: &LinearModel, context: &[Example]) -> f64 {
    context.iter().map(|e| bce(model.logit(&e.x), e.y)).sum::<f64>() / context.len() as f64
}

/// GroupDRO state after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct DroTrace {
    pub models: Vec<LinearModel>,
    /// Group weights used for each epoch's step; absent groups stay at 0.
    pub q: Vec<[f64; 4]>,
}

fn run_dro(
    context: &[Example],
    hyper: &DroHyper,
    mut record: impl FnMut(&LinearModel, &[f64; 4]),
) -> Result<LinearModel> {
    let d = check_context(context)?;
    let mut counts = [0usize; 4];
    for e in context {
        counts[e.g as usize] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    let mut q = counts.map(|c| if c > 0 { 1.0 / present } else { 0.0 });
    let mut model = LinearModel::zeros(d);
    for _ in 0..hyper.epochs {
        let mut group_loss = [0.0f64; 4];
        for e in context {
            group_loss[e.g as usize] += bce(model.logit(&e.x), e.y);
        }
        for g in 0..4 {
            if counts[g] > 0 {
                group_loss[g] /= counts[g] as f64;
                q[g] *= (hyper.eta * group_loss[g]).exp();
            }
        }
        let total: f64 = q.iter().sum();
        for v in &mut q {
            *v /= total;
        }
        let weights: Vec<f64> = context.iter().map(|e| q[e.g as usize] / counts[e.g as usize] as f64).collect();
        weighted_step(&mut model, context, &weights, hyper.lr, hyper.l2);
        record(&model, &q);
    }
    Ok(model)
}

/// Exponentiated-weights GroupDRO over the groups present in the context:
/// each epoch updates `q_g ∝ q_g exp(eta L_g)` from the current per-group
/// mean losses, then takes one step on `sum_g q_g L_g` (plus L2).
pub fn groupdro_fit(context: &[Example], hyper: &DroHyper) -> Result<LinearModel> {
    run_dro(context, hyper, |_, _| {})
}

pub fn groupdro_fit_trace(context: &[Example], hyper: &DroHyper) -> Result<DroTrace> {
    let d = check_context(context)?;
    let mut trace = DroTrace { models: vec![LinearModel::zeros(d)], q: Vec::new() };
    run_dro(context, hyper, |m, q| {
        trace.models.push(m.clone());
        trace.q.push(*q);
    })?;
    Ok(trace)
}

/// Index of the candidate with the highest mean score over seeds; the
/// first candidate wins ties.
pub fn grid_select(scores: &[Vec<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.is_empty() {
            return Err(Error::Config(format!("grid point {i} has no scores")));
        }
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        if best.is_none_or(|(_, m)| mean > m) {
            best = Some((i, mean));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::Config("empty hyperparameter grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(x: &[f32], y: u8, s: u8) -> Example {
        Example::new(x.to_vec(), y, s)
    }

    #[test]
    fn knn_rules() {
        let ctx = vec![ex(&[0.0, 0.0], 0, 0), ex(&[2.0, 0.0], 1, 1), ex(&[-2.0, 0.0], 1, 1)];
        assert_eq!(knn_predict(&ctx, &[2.0, 0.0]).unwrap(), 1);
        // equidistant from the first two: earlier wins
        assert_eq!(knn_predict(&ctx, &[1.0, 0.0]).unwrap(), 0);
        assert!(knn_predict(&[], &[1.0]).is_err());
    }

    #[test]
    fn erm_symmetric_pair() {
        let ctx = vec![ex(&[1.0, 0.0], 1, 1), ex(&[-1.0, 0.0], 0, 0)];
        let m = erm_fit(&ctx, &ErmHyper { lr: 0.1, epochs: 100, l2: 0.0 }).unwrap();
        assert_eq!(m.predict(&[2.0, 0.0]), 1);
        assert_eq!(m.w[1], 0.0);
        assert!(m.b.abs() < 1e-12);
        let zero = erm_fit(&ctx, &ErmHyper { lr: 0.1, epochs: 0, l2: 0.0 }).unwrap();
        assert_eq!(zero.predict_proba(&[5.0, 5.0]), 0.5);
        let reg = erm_fit(&ctx, &ErmHyper { lr: 1e-7, epochs: 100, l2: 1e6 }).unwrap();
        assert!(reg.w.iter().map(|w| w * w).sum::<f64>().sqrt() < 1e-2);
    }

    #[test]
    fn dro_upweights_the_hard_group() {
        // the lone group-2 point sits among the negatives, so its loss stays highest
        let mut ctx = Vec::new();
        for i in 0..10 {
            let v = 1.0 + i as f32 * 0.1;
            ctx.push(ex(&[v], 1, 1));
            ctx.push(ex(&[-v], 0, 0));
        }
        ctx.push(ex(&[-1.5], 1, 0));
        let trace = groupdro_fit_trace(&ctx, &DroHyper { lr: 0.01, epochs: 50, eta: 0.1, l2: 0.0 }).unwrap();
        // the first update sees the zero model, where every group loss is ln 2
        for (e, w) in trace.q.windows(2).enumerate() {
            let m = &trace.models[e + 1];
            let hard = mean_loss(m, &ctx[20..]);
            assert!(hard > mean_loss(m, &ctx[..20]));
            assert!(w[1][2] > w[0][2]);
        }
        for q in &trace.q {
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(q[0] > 0.0 && q[3] > 0.0 && q[2] > 0.0);
            assert_eq!(q[1], 0.0);
        }
    }

    #[test]
    fn grid_rules() {
        assert_eq!(grid_select(&[vec![0.3]]).unwrap(), 0);
        assert_eq!(grid_select(&[vec![0.5, 0.5], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(), 1);
        assert!(grid_select(&[]).is_err());
        let g = BaselineGrid::default();
        assert_eq!(g.erm.len(), 4);
        assert_eq!(g.dro.len(), 24);
    }
}
