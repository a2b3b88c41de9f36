//! Conditional autoregressive quantile flows.
//!
//! Each action dimension j carries a stack of M monotone coupling
//! transformers. The parameters of every transformer come from a conditioner
//! network fed with the state feature mapping g(s) and, for j > 1, the
//! earlier action dimensions. Generation runs the base variable through the
//! stack; with a uniform base, setting z = alpha reads off the conditional
//! alpha-quantile directly.
//!
//! Two bases and two training objectives share this machinery:
//! uniform base + Monte-Carlo quantile loss (AQF), and standard-normal base
//! + exact negative log-likelihood (ANF).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::path::Path;

use super::coupling::{
    forward_on_tape, inverse_on_tape, log_derivative_on_tape, CouplingKind, NlsqParams,
    Transformer,
};
use super::train::{EpochStats, TrainConfig, TrainReport};
use super::QuantileModel;
use crate::autodiff::{AdamState, DenseNet, NetCache, Tape, Var};
use crate::data::{read_json, write_json, ActionDims, Normalizer, Sample, StateFeatures};
use crate::error::{Error, Result};
use crate::quantile::{tal_unchecked, QuantileLevel};

/// Base distribution of the latent variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    /// Uniform on [0, 1]; the flow is the quantile function itself.
    Uniform,
    /// Standard normal; quantiles go through the probit point.
    Normal,
}

/// The four trained flow variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowKind {
    AqfAffine,
    AqfNlsq,
    AnfAffine,
    AnfNlsq,
}

impl FlowKind {
    pub fn base(self) -> BaseKind {
        match self {
            FlowKind::AqfAffine | FlowKind::AqfNlsq => BaseKind::Uniform,
            FlowKind::AnfAffine | FlowKind::AnfNlsq => BaseKind::Normal,
        }
    }

    pub fn coupling(self) -> CouplingKind {
        match self {
            FlowKind::AqfAffine | FlowKind::AnfAffine => CouplingKind::Affine,
            FlowKind::AqfNlsq | FlowKind::AnfNlsq => CouplingKind::Nlsq,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FlowKind::AqfAffine => "aqf-affine",
            FlowKind::AqfNlsq => "aqf-nlsq",
            FlowKind::AnfAffine => "anf-affine",
            FlowKind::AnfNlsq => "anf-nlsq",
        }
    }
}

impl std::str::FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aqf-affine" => Ok(FlowKind::AqfAffine),
            "aqf-nlsq" => Ok(FlowKind::AqfNlsq),
            "anf-affine" => Ok(FlowKind::AnfAffine),
            "anf-nlsq" => Ok(FlowKind::AnfNlsq),
            other => Err(Error::invalid(
                "FlowKind",
                format!("unknown flow kind `{other}` (expected aqf-affine, aqf-nlsq, anf-affine, or anf-nlsq)"),
            )),
        }
    }
}

impl std::fmt::Display for FlowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Conditioner hidden architecture shared by all four variants.
pub const CONDITIONER_HIDDEN: [usize; 2] = [64, 64];

/// Transformers per dimension.
pub const DEFAULT_STACK_DEPTH: usize = 3;

pub const FLOW_CHECKPOINT_VERSION: u32 = 1;

/// A trained (or freshly initialized) conditional flow.
#[derive(Debug, Clone)]
pub struct ConditionalFlow {
    kind: FlowKind,
    dims: ActionDims,
    stack_depth: usize,
    /// conditioners[dim][layer]: (g(s), a_<j) -> raw transformer parameters.
    conditioners: Vec<Vec<DenseNet>>,
    normalizer: Normalizer,
}

impl ConditionalFlow {
    /// Fresh flow whose stack starts out state-independent: the last
    /// conditioner layer is zero-weighted with a bias that makes the
    /// composed map affine — identity-like for the normal base, [0,1] to
    /// [-2,2] for the uniform base.
    pub fn new(
        kind: FlowKind,
        dims: ActionDims,
        stack_depth: usize,
        hidden: &[usize],
        normalizer: &Normalizer,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if stack_depth == 0 {
            return Err(Error::invalid("ConditionalFlow::new", "stack depth must be >= 1"));
        }
        if normalizer.feature_dim() != dims.feature_dim()
            || normalizer.action_dims() != dims.count()
        {
            return Err(Error::ShapeMismatch {
                context: "ConditionalFlow::new normalizer",
                expected: dims.feature_dim(),
                actual: normalizer.feature_dim(),
            });
        }
        let p = kind.coupling().raw_param_count();
        // Per-layer scale k and shift d of the initial affine behavior.
        let (k, shift) = match kind.base() {
            BaseKind::Uniform => {
                let k = 4.0_f64.powf(1.0 / stack_depth as f64);
                (k, -2.0 * (k - 1.0) / (k.powi(stack_depth as i32) - 1.0))
            }
            BaseKind::Normal => (1.0, 0.0),
        };
        let mut conditioners = Vec::with_capacity(dims.count());
        for j in 0..dims.count() {
            let mut arch = Vec::with_capacity(hidden.len() + 2);
            arch.push(dims.feature_dim() + j);
            arch.extend_from_slice(hidden);
            arch.push(p);
            let mut stack = Vec::with_capacity(stack_depth);
            for _ in 0..stack_depth {
                let mut net = DenseNet::new(&arch, rng)?;
                let last = net.num_layers() - 1;
                net.weight_mut(last).iter_mut().for_each(|w| *w = 0.0);
                let bias = net.bias_mut(last);
                bias[0] = shift;
                bias[1] = k.ln();
                stack.push(net);
            }
            conditioners.push(stack);
        }
        Ok(ConditionalFlow {
            kind,
            dims,
            stack_depth,
            conditioners,
            normalizer: normalizer.clone(),
        })
    }

    pub fn kind(&self) -> FlowKind {
        self.kind
    }

    pub fn dims(&self) -> ActionDims {
        self.dims
    }

    pub fn stack_depth(&self) -> usize {
        self.stack_depth
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    /// Direct access to one conditioner net. The monotonicity of the flow is
    /// carried by the transformer parameterization, so any parameter values
    /// are safe.
    pub fn conditioner_mut(&mut self, dim: usize, layer: usize) -> &mut DenseNet {
        &mut self.conditioners[dim][layer]
    }

    fn base_point(&self, level: QuantileLevel) -> Result<f64> {
        let alpha = level.value();
        match self.kind.base() {
            BaseKind::Uniform => Ok(alpha),
            BaseKind::Normal => {
                if alpha <= 0.0 || alpha >= 1.0 {
                    Err(Error::InvalidLevel {
                        level: alpha,
                        reason: "probit point undefined at the endpoints",
                    })
                } else {
                    Ok(Normal::standard().inverse_cdf(alpha))
                }
            }
        }
    }

    /// Transformer stack of dimension `dim`, conditioned on standardized
    /// features and (teacher-forced or generated) standardized prefix.
    fn stack_for(&self, dim: usize, feats_std: &[f64], prefix_std: &[f64]) -> Result<Vec<Transformer>> {
        let mut input = Vec::with_capacity(feats_std.len() + dim);
        input.extend_from_slice(feats_std);
        input.extend_from_slice(&prefix_std[..dim]);
        self.conditioners[dim]
            .iter()
            .map(|net| {
                let raw = net.forward(&input)?;
                Ok(Transformer::from_raw(self.kind.coupling(), &raw))
            })
            .collect()
    }

    fn quantile_std(&self, dim: usize, feats_std: &[f64], prefix_std: &[f64], z: f64) -> Result<f64> {
        let mut v = z;
        for t in self.stack_for(dim, feats_std, prefix_std)? {
            v = t.forward(v);
        }
        Ok(v)
    }

    /// Conditional alpha-quantile of action dimension `prefix.len()`,
    /// teacher-forcing the given raw-unit prefix. Monotone nondecreasing in
    /// alpha by composition of increasing maps.
    pub fn quantile(&self, state: &StateFeatures, level: QuantileLevel, prefix: &[f64]) -> Result<f64> {
        let j = prefix.len();
        if j >= self.dims.count() {
            return Err(Error::invalid(
                "flow quantile",
                format!("prefix length {j} leaves no dimension to predict"),
            ));
        }
        let feats = self.normalizer.standardize_features(state)?;
        let prefix_std: Vec<f64> = prefix
            .iter()
            .enumerate()
            .map(|(d, &a)| self.normalizer.standardize_action(d, a))
            .collect();
        let z = self.base_point(level)?;
        let v = self.quantile_std(j, &feats, &prefix_std, z)?;
        Ok(self.normalizer.destandardize_action(j, v))
    }

    /// Generation: runs the base vector through the stacks in autoregressive
    /// order, conditioning each dimension on the previously generated ones.
    /// Returns raw-unit actions.
    pub fn generate(&self, state: &StateFeatures, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.dims.count();
        if z.len() != d {
            return Err(Error::ShapeMismatch {
                context: "flow generate",
                expected: d,
                actual: z.len(),
            });
        }
        if self.kind.base() == BaseKind::Uniform {
            if let Some(&bad) = z.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::OutsideSupport {
                    value: bad,
                    base: "uniform",
                });
            }
        }
        let feats = self.normalizer.standardize_features(state)?;
        let mut generated_std = Vec::with_capacity(d);
        let mut out = Vec::with_capacity(d);
        for j in 0..d {
            let v = self.quantile_std(j, &feats, &generated_std, z[j])?;
            generated_std.push(v);
            out.push(self.normalizer.destandardize_action(j, v));
        }
        Ok(out)
    }

    /// Monte-Carlo quantile loss (uniform base): one fresh alpha draw per
    /// datum per dimension, teacher forcing the true prefix. Computed in
    /// standardized space.
    pub fn aqf_loss(&self, batch: &[Sample], rng: &mut impl Rng) -> Result<f64> {
        if self.kind.base() != BaseKind::Uniform {
            return Err(Error::invalid("aqf_loss", "requires a uniform-base flow"));
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput { context: "aqf_loss" });
        }
        let d = self.dims.count();
        let mut sum = 0.0;
        for s in batch {
            let feats = self.normalizer.standardize_features(&s.state)?;
            let a_std: Vec<f64> = (0..d)
                .map(|j| self.normalizer.standardize_action(j, s.action.component(j)))
                .collect();
            for j in 0..d {
                let alpha: f64 = rng.gen();
                let pred = self.quantile_std(j, &feats, &a_std, alpha)?;
                sum += tal_unchecked(a_std[j], pred, alpha);
            }
        }
        let loss = sum / batch.len() as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                context: "aqf_loss",
                value: loss,
            });
        }
        Ok(loss)
    }

    /// Exact negative log-likelihood (normal base): invert the stack at the
    /// observed action and add the change-of-variables terms. The density of
    /// dimension j is log phi(z_j) + log dz_j/da_j with dz/da the product of
    /// the inverse-layer derivatives. Computed in standardized space.
    pub fn anf_nll(&self, batch: &[Sample]) -> Result<f64> {
        if self.kind.base() != BaseKind::Normal {
            return Err(Error::invalid("anf_nll", "requires a normal-base flow"));
        }
        if batch.is_empty() {
            return Err(Error::EmptyInput { context: "anf_nll" });
        }
        let d = self.dims.count();
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let mut sum = 0.0;
        for s in batch {
            let feats = self.normalizer.standardize_features(&s.state)?;
            let a_std: Vec<f64> = (0..d)
                .map(|j| self.normalizer.standardize_action(j, s.action.component(j)))
                .collect();
            for j in 0..d {
                let stack = self.stack_for(j, &feats, &a_std)?;
                let mut v = a_std[j];
                let mut log_det = 0.0;
                for t in stack.iter().rev() {
                    let prev = t.inverse(v)?;
                    let deriv = t.derivative(prev);
                    if !(deriv > 0.0) {
                        return Err(Error::invalid(
                            "anf_nll",
                            format!("nonpositive transformer derivative {deriv}"),
                        ));
                    }
                    log_det += deriv.ln();
                    v = prev;
                }
                sum += 0.5 * v * v + half_ln_2pi + log_det;
            }
        }
        let nll = sum / batch.len() as f64;
        if !nll.is_finite() {
            return Err(Error::NonFinite {
                context: "anf_nll",
                value: nll,
            });
        }
        Ok(nll)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &FlowCheckpoint {
                format_version: FLOW_CHECKPOINT_VERSION,
                kind: self.kind,
                dims: self.dims,
                stack_depth: self.stack_depth,
                conditioners: self.conditioners.clone(),
                normalizer: self.normalizer.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: FlowCheckpoint = read_json(path)?;
        if ck.format_version != FLOW_CHECKPOINT_VERSION {
            return Err(Error::FormatVersion {
                found: ck.format_version,
                supported: FLOW_CHECKPOINT_VERSION,
            });
        }
        Ok(ConditionalFlow {
            kind: ck.kind,
            dims: ck.dims,
            stack_depth: ck.stack_depth,
            conditioners: ck.conditioners,
            normalizer: ck.normalizer,
        })
    }
}

/// Checkpoint layout: kind tag, dimension order, stack depth, conditioner
/// weights, base kind (implied by the kind tag), normalizer statistics,
/// format version.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowCheckpoint {
    pub format_version: u32,
    pub kind: FlowKind,
    pub dims: ActionDims,
    pub stack_depth: usize,
    pub conditioners: Vec<Vec<DenseNet>>,
    pub normalizer: Normalizer,
}

impl QuantileModel for ConditionalFlow {
    fn feature_dim(&self) -> usize {
        self.normalizer.feature_dim()
    }

    fn action_dims(&self) -> usize {
        self.dims.count()
    }

    fn quantile(&self, state: &StateFeatures, level: QuantileLevel, prefix: &[f64]) -> Result<f64> {
        ConditionalFlow::quantile(self, state, level, prefix)
    }
}

/// Trains a flow of the given kind with the default conditioner architecture
/// and stack depth.
pub fn flow_train(
    train: &[Sample],
    kind: FlowKind,
    dims: ActionDims,
    config: &TrainConfig,
    normalizer: &Normalizer,
    seed: u64,
    val: Option<&[Sample]>,
) -> Result<(ConditionalFlow, TrainReport)> {
    flow_train_with_arch(
        train,
        kind,
        dims,
        config,
        normalizer,
        seed,
        val,
        &CONDITIONER_HIDDEN,
        DEFAULT_STACK_DEPTH,
    )
}

/// Standardized training arrays plus the flat-parameter bookkeeping and
/// per-batch scratch of the flow trainer. The gradient path is a hybrid:
/// conditioner networks run the fast layer-wise backward pass, while the
/// transformer stack and the loss head are replayed on the scalar tape
/// (including the implicit derivative of the NLSQ inverse for the NLL
/// objective).
struct FlowTrainer {
    feats_std: Vec<f64>,
    actions_std: Vec<f64>,
    /// Flat-parameter offsets per (dim, layer), dim-major.
    offsets: Vec<usize>,
    grads: Vec<f64>,
    k_draws: usize,
    caches: Vec<Vec<Vec<NetCache>>>,
    raw_vars: Vec<Vec<Vec<Var>>>,
    tape: Tape,
    input_buf: Vec<f64>,
    /// Minimum tau'(z)/slope seen since the last take (constraint monitor).
    min_slope_ratio: f64,
}

impl FlowTrainer {
    fn new(flow: &ConditionalFlow, train: &[Sample], batch: usize, k_draws: usize) -> Result<Self> {
        let d = flow.dims.count();
        let m = flow.stack_depth;
        let fd = flow.normalizer.feature_dim();
        let n = train.len();
        let mut feats_std = vec![0.0; n * fd];
        let mut actions_std = vec![0.0; n * d];
        for (i, s) in train.iter().enumerate() {
            let f = flow.normalizer.standardize_features(&s.state)?;
            feats_std[i * fd..(i + 1) * fd].copy_from_slice(&f);
            for j in 0..d {
                actions_std[i * d + j] =
                    flow.normalizer.standardize_action(j, s.action.component(j));
            }
        }
        let mut offsets = vec![0usize; d * m + 1];
        for j in 0..d {
            for l in 0..m {
                let idx = j * m + l;
                offsets[idx + 1] = offsets[idx] + flow.conditioners[j][l].param_count();
            }
        }
        Ok(FlowTrainer {
            feats_std,
            actions_std,
            grads: vec![0.0; offsets[d * m]],
            offsets,
            k_draws,
            caches: vec![vec![vec![NetCache::new(); batch]; m]; d],
            raw_vars: vec![vec![Vec::new(); m]; d],
            tape: Tape::new(),
            input_buf: vec![0.0; fd + d],
            min_slope_ratio: f64::INFINITY,
        })
    }

    fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn flatten_params(&self, flow: &ConditionalFlow, out: &mut Vec<f64>) {
        for stack in &flow.conditioners {
            for net in stack {
                net.flatten(out);
            }
        }
    }

    fn load_params(&self, flow: &mut ConditionalFlow, params: &[f64]) -> Result<()> {
        let m = flow.stack_depth;
        for (j, stack) in flow.conditioners.iter_mut().enumerate() {
            for (l, net) in stack.iter_mut().enumerate() {
                let range = self.offsets[j * m + l]..self.offsets[j * m + l + 1];
                net.load_flat(&params[range])?;
            }
        }
        Ok(())
    }

    fn take_min_slope_ratio(&mut self) -> f64 {
        std::mem::replace(&mut self.min_slope_ratio, f64::INFINITY)
    }

    /// One mini-batch: builds the tape over `chunk`, backpropagates, and
    /// leaves d(loss)/d(param) in `self.grads`. Returns the batch loss.
    fn batch_step(
        &mut self,
        flow: &ConditionalFlow,
        chunk: &[usize],
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let kind = flow.kind;
        let d = flow.dims.count();
        let m = flow.stack_depth;
        let fd = flow.normalizer.feature_dim();
        let p = kind.coupling().raw_param_count();

        self.tape.clear();
        let mut loss_sum = self.tape.constant(0.0);
        for (slot, &i) in chunk.iter().enumerate() {
            self.input_buf[..fd].copy_from_slice(&self.feats_std[i * fd..(i + 1) * fd]);
            for j in 0..d {
                self.input_buf[fd..fd + j]
                    .copy_from_slice(&self.actions_std[i * d..i * d + j]);
                let input = &self.input_buf[..fd + j];
                for l in 0..m {
                    flow.conditioners[j][l].forward_cached(input, &mut self.caches[j][l][slot])?;
                    let raw = self.caches[j][l][slot].output();
                    if slot == 0 {
                        self.raw_vars[j][l].clear();
                    }
                    for &r in raw.iter() {
                        let leaf = self.tape.leaf(r);
                        self.raw_vars[j][l].push(leaf);
                    }
                    if kind.coupling() == CouplingKind::Nlsq {
                        let np = NlsqParams::from_raw(raw);
                        let ratio = np.derivative(np.derivative_argmin()) / np.slope();
                        self.min_slope_ratio = self.min_slope_ratio.min(ratio);
                    } else {
                        self.min_slope_ratio = self.min_slope_ratio.min(1.0);
                    }
                }
                let a_j = self.actions_std[i * d + j];
                match kind.base() {
                    BaseKind::Uniform => {
                        for _ in 0..self.k_draws {
                            let alpha: f64 = rng.gen();
                            let mut v = self.tape.constant(alpha);
                            for l in 0..m {
                                let raw = &self.raw_vars[j][l][slot * p..(slot + 1) * p];
                                v = forward_on_tape(&mut self.tape, kind.coupling(), raw, v);
                            }
                            let a_node = self.tape.constant(a_j);
                            let r = self.tape.sub(a_node, v);
                            let up = self.tape.mul_const(r, alpha);
                            let down = self.tape.mul_const(r, alpha - 1.0);
                            let l_term = self.tape.max(up, down);
                            loss_sum = self.tape.add(loss_sum, l_term);
                        }
                    }
                    BaseKind::Normal => {
                        let mut v = self.tape.constant(a_j);
                        let mut nll = self
                            .tape
                            .constant(0.5 * (2.0 * std::f64::consts::PI).ln());
                        for l in (0..m).rev() {
                            let raw = &self.raw_vars[j][l][slot * p..(slot + 1) * p];
                            let prev = inverse_on_tape(&mut self.tape, kind.coupling(), raw, v)?;
                            let ld =
                                log_derivative_on_tape(&mut self.tape, kind.coupling(), raw, prev);
                            nll = self.tape.add(nll, ld);
                            v = prev;
                        }
                        let z2 = self.tape.square(v);
                        let half_z2 = self.tape.mul_const(z2, 0.5);
                        nll = self.tape.add(nll, half_z2);
                        loss_sum = self.tape.add(loss_sum, nll);
                    }
                }
            }
        }
        let k = if kind.base() == BaseKind::Uniform {
            self.k_draws
        } else {
            1
        };
        let total = self.tape.mul_const(loss_sum, 1.0 / (chunk.len() * k) as f64);
        let batch_loss = self.tape.value(total);
        if !batch_loss.is_finite() {
            return Ok(batch_loss); // caller turns this into a divergence error
        }
        self.tape.backward(total)?;

        self.grads.iter_mut().for_each(|g| *g = 0.0);
        let mut d_out = vec![0.0; p];
        for j in 0..d {
            for l in 0..m {
                let range = self.offsets[j * m + l]..self.offsets[j * m + l + 1];
                for slot in 0..chunk.len() {
                    for (q, dst) in d_out.iter_mut().enumerate() {
                        *dst = self.tape.grad(self.raw_vars[j][l][slot * p + q]);
                    }
                    flow.conditioners[j][l].backprop(
                        &self.caches[j][l][slot],
                        &d_out,
                        &mut self.grads[range.clone()],
                    )?;
                }
            }
        }
        Ok(batch_loss)
    }
}

/// Trains a flow with explicit conditioner architecture and stack depth.
/// Monotonicity constraints hold throughout by parameterization; there is no
/// projection step.
#[allow(clippy::too_many_arguments)]
pub fn flow_train_with_arch(
    train: &[Sample],
    kind: FlowKind,
    dims: ActionDims,
    config: &TrainConfig,
    normalizer: &Normalizer,
    seed: u64,
    val: Option<&[Sample]>,
    hidden: &[usize],
    stack_depth: usize,
) -> Result<(ConditionalFlow, TrainReport)> {
    if train.is_empty() {
        return Err(Error::EmptyInput { context: "flow_train" });
    }
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut flow = ConditionalFlow::new(kind, dims, stack_depth, hidden, normalizer, &mut rng)?;

    let n = train.len();
    let batch = config.batch_size.min(n);
    let k_draws = if kind.base() == BaseKind::Uniform {
        config.mc_draws
    } else {
        1
    };
    let mut trainer = FlowTrainer::new(&flow, train, batch, k_draws)?;
    let mut params = Vec::with_capacity(trainer.param_count());
    trainer.flatten_params(&flow, &mut params);
    let mut adam = AdamState::new(params.len(), config.adam());

    let val_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let eval_loss = |flow: &ConditionalFlow, data: &[Sample]| -> Result<f64> {
        match kind.base() {
            BaseKind::Uniform => {
                let mut vrng = ChaCha8Rng::seed_from_u64(val_seed);
                flow.aqf_loss(data, &mut vrng)
            }
            BaseKind::Normal => flow.anf_nll(data),
        }
    };

    let mut report = TrainReport {
        initial_train_loss: eval_loss(&flow, train)?,
        ..TrainReport::default()
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut lr = config.learning_rate;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch) {
            let batch_loss = trainer.batch_step(&flow, chunk, &mut rng)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: batch_loss,
                });
            }
            adam.step(&mut params, &trainer.grads)?;
            trainer.load_params(&mut flow, &params)?;
            epoch_loss += batch_loss;
            batches += 1;
        }
        let val_loss = val.map(|v| eval_loss(&flow, v)).transpose()?;
        report.epochs.push(EpochStats {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_loss,
            min_slope_ratio: Some(trainer.take_min_slope_ratio()),
        });
        lr *= config.lr_decay;
        adam.set_learning_rate(lr);
    }
    report.final_train_loss = eval_loss(&flow, train)?;
    Ok((flow, report))
}
