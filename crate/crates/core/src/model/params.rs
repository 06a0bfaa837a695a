use rand::Rng;
use rand_distr::StandardNormal;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::rng;
use crate::seqbuild::AnnotationCodebook;

/// Name, shape and flat offset of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of one transformer block's tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Flat parameter layout in declaration order. Weight matrices are stored
/// row-major as `in x out`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
    pub ln_in: Option<(usize, usize)>,
    pub w_in: usize,
    pub b_in: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_out: usize,
    pub b_out: usize,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize]) -> usize {
        let offset = self.total;
        let spec = TensorSpec { name, shape: shape.to_vec(), offset };
        self.total += spec.len();
        self.tensors.push(spec);
        offset
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (di, dm, dff) = (cfg.d_in, cfg.d_model, cfg.d_ff);
        let mut b = Builder { tensors: Vec::new(), total: 0 };
        let ln_in = cfg.input_layernorm.then(|| (b.push("ln_in.g".into(), &[di]), b.push("ln_in.b".into(), &[di])));
        let w_in = b.push("w_in".into(), &[di, dm]);
        let b_in = b.push("b_in".into(), &[dm]);
        let layers = (0..cfg.n_layers)
            .map(|l| LayerOffsets {
                ln1_g: b.push(format!("layer{l}.ln1.g"), &[dm]),
                ln1_b: b.push(format!("layer{l}.ln1.b"), &[dm]),
                wq: b.push(format!("layer{l}.wq"), &[dm, dm]),
                wk: b.push(format!("layer{l}.wk"), &[dm, dm]),
                wv: b.push(format!("layer{l}.wv"), &[dm, dm]),
                wo: b.push(format!("layer{l}.wo"), &[dm, dm]),
                bo: b.push(format!("layer{l}.bo"), &[dm]),
                ln2_g: b.push(format!("layer{l}.ln2.g"), &[dm]),
                ln2_b: b.push(format!("layer{l}.ln2.b"), &[dm]),
                w1: b.push(format!("layer{l}.w1"), &[dm, dff]),
                b1: b.push(format!("layer{l}.b1"), &[dff]),
                w2: b.push(format!("layer{l}.w2"), &[dff, dm]),
                b2: b.push(format!("layer{l}.b2"), &[dm]),
            })
            .collect();
        let lnf_g = b.push("lnf.g".into(), &[dm]);
        let lnf_b = b.push("lnf.b".into(), &[dm]);
        let w_out = b.push("w_out".into(), &[dm]);
        let b_out = b.push("b_out".into(), &[1]);
        Layout { tensors: b.tensors, total: b.total, ln_in, w_in, b_in, layers, lnf_g, lnf_b, w_out, b_out }
    }

    pub fn tensor(&self, name: &str) -> Option<&TensorSpec> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Transformer weights plus the annotation codebook they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub theta: Vec<S>,
    pub codebook: AnnotationCodebook,
}

fn init_std(name: &str, cfg: &ModelConfig) -> Option<f64> {
    let residual = 1.0 / (2.0 * cfg.n_layers.max(1) as f64).sqrt();
    let dm = cfg.d_model as f64;
    let leaf = name.rsplit('.').next().unwrap_or(name);
    match leaf {
        "w_in" => Some(1.0 / (cfg.d_in as f64).sqrt()),
        "wq" | "wk" | "wv" | "w1" | "w_out" => Some(1.0 / dm.sqrt()),
        "wo" => Some(residual / dm.sqrt()),
        "w2" => Some(residual / (cfg.d_ff as f64).sqrt()),
        _ => None,
    }
}

impl<S: Scalar> ModelParams<S> {
    /// Gaussian weights scaled by fan-in (residual projections further
    /// scaled by depth), zero biases, unit layer-norm gains.
    pub fn init(config: ModelConfig, codebook: AnnotationCodebook, seed: u64) -> Result<Self> {
        config.validate()?;
        if codebook.dim() != config.d_in {
            return Err(Error::DimensionMismatch { expected: config.d_in, got: codebook.dim() });
        }
        let layout = Layout::new(&config);
        let mut theta = vec![S::zero(); layout.total];
        let mut rng = rng::stream(seed, "model-init", 0);
        for t in &layout.tensors {
            if let Some(std) = init_std(&t.name, &config) {
                for v in &mut theta[t.range()] {
                    *v = S::of(std * rng.sample::<f64, _>(StandardNormal));
                }
            } else if t.name.ends_with(".g") {
                theta[t.range()].fill(S::one());
            }
        }
        Ok(ModelParams { config, layout, theta, codebook })
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            theta: self.theta.iter().map(|v| T::of(v.f64())).collect(),
            codebook: self.codebook.clone(),
        }
    }

    pub fn slice(&self, offset: usize, len: usize) -> &[S] {
        &self.theta[offset..offset + len]
    }
}
