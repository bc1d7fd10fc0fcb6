//! Prong architecture, parameters and the recurrent rollout.
//!
//! Each prong is a stack of predictive layers. Layer `l` keeps a ConvLSTM
//! representation `R_l`, predicts its input `Â_l` from `R_l`, and passes the
//! split-rectified error `E_l = [relu(A_l − Â_l); relu(Â_l − A_l)]` upward as
//! `A_{l+1} = avgpool(conv(E_l))`. Representations update top-down, each layer
//! seeing the upsampled representation from above. The layer-0 prediction,
//! pushed through a 3-way normalized exponential, is the eOGM output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{ensure_same, Shape, Tensor};

/// Input/output channels of an eOGM map: `(m_o, m_f)`.
pub const MASS_CHANNELS: usize = 2;
/// Logits of the output head: `(o, f, of)`.
pub const HEAD_CHANNELS: usize = 3;
/// Default loss weight on the full-map term.
pub const DEFAULT_ALPHA: f64 = 10.0;

/// One same-size zero-padded convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 || self.dilation == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("bad convolution {self:?}")));
        }
        Ok(())
    }

    pub fn weight_len(&self) -> usize {
        [self.in_channels, self.kernel, self.kernel].iter().fold(self.out_channels, |a, &b| a.saturating_mul(b))
    }
}

/// Widths and dilations of one prong, layer 0 first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProngConfig {
    pub widths: Vec<usize>,
    pub dilations: Vec<usize>,
    pub kernel: usize,
}

impl ProngConfig {
    /// Three layers, widths 16/32/64.
    pub fn static_default() -> Self {
        ProngConfig { widths: vec![16, 32, 64], dilations: vec![1, 1, 1], kernel: 3 }
    }

    /// Two layers, widths 16/32, the second dilated by 2.
    pub fn dynamic_default() -> Self {
        ProngConfig { widths: vec![16, 32], dilations: vec![1, 2], kernel: 3 }
    }

    pub fn layers(&self) -> usize {
        self.widths.len()
    }

    /// Grid sides must be divisible by this.
    pub fn size_divisor(&self) -> usize {
        1 << self.layers().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() {
            return Err(Error::InvalidConfig("a prong needs at least one layer".into()));
        }
        if self.dilations.len() != self.widths.len() {
            return Err(Error::InvalidConfig("one dilation per layer".into()));
        }
        if self.layers() > 8 {
            return Err(Error::InvalidConfig("at most 8 layers".into()));
        }
        for spec in self.layer_specs().iter().flat_map(LayerSpecs::all) {
            spec.validate()?;
        }
        Ok(())
    }

    /// Channels of the layer's target `A_l`.
    fn target_channels(&self, l: usize) -> usize {
        if l == 0 {
            MASS_CHANNELS
        } else {
            self.widths[l]
        }
    }

    pub fn layer_specs(&self) -> Vec<LayerSpecs> {
        let n = self.layers();
        (0..n)
            .map(|l| {
                let (r, a) = (self.widths[l], self.target_channels(l));
                let above = if l + 1 < n { self.widths[l + 1] } else { 0 };
                let conv = |i, o| ConvSpec { in_channels: i, out_channels: o, kernel: self.kernel, dilation: self.dilations[l] };
                LayerSpecs {
                    lstm: conv(2 * a + r + above, 4 * r),
                    predict: conv(r, if l == 0 { HEAD_CHANNELS } else { a }),
                    upward: (l + 1 < n).then(|| conv(2 * a, self.target_channels(l + 1))),
                }
            })
            .collect()
    }
}

/// Convolutions of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpecs {
    /// Gates `(input, forget, output, candidate)` over `[E_l, R_l, up(R_{l+1})]`.
    pub lstm: ConvSpec,
    /// `R_l → Â_l`; on layer 0 these are the head logits.
    pub predict: ConvSpec,
    /// `E_l → A_{l+1}` before pooling.
    pub upward: Option<ConvSpec>,
}

impl LayerSpecs {
    pub fn all(&self) -> impl Iterator<Item = ConvSpec> {
        [Some(self.lstm), Some(self.predict), self.upward].into_iter().flatten()
    }
}

/// Named flat parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<Param>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<f64>,
}

impl ParamStore {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|p| p.name == name)
    }

    fn push(&mut self, name: String, dims: Vec<usize>, value: Vec<f64>) -> usize {
        self.entries.push(Param { name, dims, value });
        self.entries.len() - 1
    }

    /// Records every parameter as a tape leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.entries.iter().map(|p| tape.leaf(Shape::new(p.value.len(), 1, 1), p.value.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvParams {
    weight: usize,
    bias: usize,
    spec: ConvSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerParams {
    lstm: ConvParams,
    predict: ConvParams,
    upward: Option<ConvParams>,
}

/// A prong's configuration and where its parameters live in the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prong {
    pub config: ProngConfig,
    layers: Vec<LayerParams>,
}

impl Prong {
    fn register(config: ProngConfig, prefix: &str, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut conv = |name: String, spec: ConvSpec, forget_bias: Option<usize>| {
            // Uniform fan-in scaling.
            let fan_in = (spec.in_channels * spec.kernel * spec.kernel) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let w = (0..spec.weight_len()).map(|_| rng.gen_range(-bound..bound)).collect();
            let mut b: Vec<f64> = (0..spec.out_channels).map(|_| rng.gen_range(-bound..bound)).collect();
            if let Some(width) = forget_bias {
                b[width..2 * width].iter_mut().for_each(|v| *v = 1.0);
            }
            let dims = vec![spec.out_channels, spec.in_channels, spec.kernel, spec.kernel];
            let weight = store.push(format!("{name}.weight"), dims, w);
            let bias = store.push(format!("{name}.bias"), vec![spec.out_channels], b);
            ConvParams { weight, bias, spec }
        };
        let layers = config
            .layer_specs()
            .into_iter()
            .enumerate()
            .map(|(l, s)| LayerParams {
                lstm: conv(format!("{prefix}.l{l}.lstm"), s.lstm, Some(config.widths[l])),
                predict: conv(format!("{prefix}.l{l}.predict"), s.predict, None),
                upward: s.upward.map(|u| conv(format!("{prefix}.l{l}.upward"), u, None)),
            })
            .collect();
        Ok(Prong { config, layers })
    }

    /// Parameter indices owned by this prong.
    pub fn param_indices(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [Some(l.lstm), Some(l.predict), l.upward].into_iter().flatten())
            .flat_map(|c| [c.weight, c.bias])
            .collect()
    }

    fn conv(&self, tape: &mut Tape, p: &[Var], x: Var, c: ConvParams) -> Var {
        tape.conv2d(x, p[c.weight], p[c.bias], c.spec.kernel, c.spec.dilation)
    }

    /// Checks a `(m_o, m_f)` input shape against this prong.
    pub fn check_input(&self, s: Shape) -> Result<()> {
        let d = self.config.size_divisor();
        if s.channels != MASS_CHANNELS || s.height == 0 || s.width == 0 || s.height % d != 0 || s.width % d != 0 {
            return Err(crate::error::shape(format!(
                "prong input {s:?}: need {MASS_CHANNELS} channels and sides divisible by {d}"
            )));
        }
        Ok(())
    }

    /// Runs the prong over `inputs` teacher-forced, then `horizon` steps on its own predictions.
    ///
    /// Returns the one-step predictions of frames `1..k` made while teacher
    /// forcing, and the `horizon` extrapolated frames `k..k + horizon`.
    pub fn run(&self, tape: &mut Tape, p: &[Var], inputs: &[Var], horizon: usize) -> ProngOutputs {
        let k = inputs.len();
        assert!(k >= 1, "at least one input frame");
        let base = tape.shape(inputs[0]);
        let n = self.config.layers();
        let dims: Vec<Shape> = (0..n).map(|l| Shape::new(1, base.height >> l, base.width >> l)).collect();
        let mut r: Vec<Var> = (0..n).map(|l| tape.zeros(dims[l].with_channels(self.config.widths[l]))).collect();
        let mut c = r.clone();
        let mut e: Vec<Var> =
            (0..n).map(|l| tape.zeros(dims[l].with_channels(2 * self.config.target_channels(l)))).collect();
        let mut out = ProngOutputs { teacher: Vec::with_capacity(k.saturating_sub(1)), rollout: Vec::with_capacity(horizon) };
        let steps = k + horizon;
        for t in 0..steps {
            for l in (0..n).rev() {
                let width = self.config.widths[l];
                let mut parts = vec![e[l], r[l]];
                if l + 1 < n {
                    parts.push(tape.upsample2(r[l + 1]));
                }
                let x = tape.concat(&parts);
                let gates = self.conv(tape, p, x, self.layers[l].lstm);
                let ig = tape.slice(gates, 0, width);
                let fg = tape.slice(gates, width, width);
                let og = tape.slice(gates, 2 * width, width);
                let cg = tape.slice(gates, 3 * width, width);
                let (i, f, o, g) = (tape.sigmoid(ig), tape.sigmoid(fg), tape.sigmoid(og), tape.tanh(cg));
                let keep = tape.mul(f, c[l]);
                let write = tape.mul(i, g);
                c[l] = tape.add(keep, write);
                let squashed = tape.tanh(c[l]);
                r[l] = tape.mul(o, squashed);
            }
            let logits = self.conv(tape, p, r[0], self.layers[0].predict);
            let probs = tape.softmax(logits);
            let prediction = tape.slice(probs, 0, MASS_CHANNELS);
            if t >= k {
                out.rollout.push(prediction);
            } else if t >= 1 {
                out.teacher.push(prediction);
            }
            if t + 1 == steps {
                break;
            }
            let mut target = if t < k { inputs[t] } else { prediction };
            for l in 0..n {
                let predicted = if l == 0 { prediction } else { self.conv(tape, p, r[l], self.layers[l].predict) };
                let under = tape.sub(target, predicted);
                let over = tape.sub(predicted, target);
                let (under, over) = (tape.relu(under), tape.relu(over));
                e[l] = tape.concat(&[under, over]);
                if let Some(up) = self.layers[l].upward {
                    let z = self.conv(tape, p, e[l], up);
                    target = tape.avg_pool2(z);
                }
            }
        }
        out
    }
}

/// Predictions recorded by [`Prong::run`].
#[derive(Debug, Clone, Default)]
pub struct ProngOutputs {
    /// One-step predictions of input frames `1..k`.
    pub teacher: Vec<Var>,
    /// Extrapolated frames after the inputs.
    pub rollout: Vec<Var>,
}

/// Which prongs a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Static and dynamic prongs fused cellwise.
    DoubleProng,
    /// One prong on full eOGMs; the ablation baseline.
    SingleProng,
}

/// Architecture and loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub static_prong: ProngConfig,
    pub dynamic_prong: ProngConfig,
    pub alpha: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::DoubleProng,
            static_prong: ProngConfig::static_default(),
            dynamic_prong: ProngConfig::dynamic_default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

impl ModelConfig {
    /// Narrow layers for gradient checks and smoke tests.
    pub fn tiny() -> Self {
        ModelConfig {
            kind: ModelKind::DoubleProng,
            static_prong: ProngConfig { widths: vec![3, 4, 4], dilations: vec![1, 1, 1], kernel: 3 },
            dynamic_prong: ProngConfig { widths: vec![3, 4], dilations: vec![1, 2], kernel: 3 },
            alpha: DEFAULT_ALPHA,
        }
    }

    pub fn single(mut self) -> Self {
        self.kind = ModelKind::SingleProng;
        self
    }

    /// Scalar parameters the architecture holds (saturating).
    pub fn parameter_count(&self) -> usize {
        let prong = |c: &ProngConfig| -> usize {
            c.layer_specs()
                .iter()
                .flat_map(LayerSpecs::all)
                .map(|s| s.weight_len().saturating_add(s.out_channels))
                .fold(0usize, usize::saturating_add)
        };
        match self.kind {
            ModelKind::DoubleProng => prong(&self.static_prong).saturating_add(prong(&self.dynamic_prong)),
            ModelKind::SingleProng => prong(&self.static_prong),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be finite and non-negative, got {}", self.alpha)));
        }
        self.static_prong.validate()?;
        if self.kind == ModelKind::DoubleProng {
            self.dynamic_prong.validate()?;
        }
        Ok(())
    }
}

/// Training progress, so stages run in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Progress {
    #[default]
    Untrained,
    NextFrame,
    Finetuned,
}

/// The predictor: a static prong, an optional dynamic prong and the loss weight.
///
/// With [`ModelKind::SingleProng`] the static prong runs on full eOGMs and
/// the dynamic prong is absent.
#[derive(Debug, Clone, PartialEq)]
pub struct DoubleProngModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub static_prong: Prong,
    pub dynamic_prong: Option<Prong>,
    pub progress: Progress,
}

impl DoubleProngModel {
    /// Random initialization, deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore { entries: Vec::new() };
        let static_prong = Prong::register(config.static_prong.clone(), "static", &mut params, &mut rng)?;
        let dynamic_prong = match config.kind {
            ModelKind::DoubleProng => {
                Some(Prong::register(config.dynamic_prong.clone(), "dynamic", &mut params, &mut rng)?)
            }
            ModelKind::SingleProng => None,
        };
        Ok(DoubleProngModel { config, params, static_prong, dynamic_prong, progress: Progress::Untrained })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn alpha(&self) -> f64 {
        self.config.alpha
    }

    /// Smallest grid side step every prong accepts.
    pub fn size_divisor(&self) -> usize {
        let d = self.static_prong.config.size_divisor();
        self.dynamic_prong.as_ref().map_or(d, |p| d.max(p.config.size_divisor()))
    }
}

pub(crate) fn tape_frames(tape: &mut Tape, frames: &[Tensor]) -> Vec<Var> {
    frames.iter().map(|f| tape.leaf(f.shape, f.data.clone())).collect()
}

pub(crate) fn check_frames(what: &str, frames: &[Tensor], prong: &Prong) -> Result<()> {
    let first = frames.first().ok_or_else(|| crate::error::shape(format!("{what}: no frames")))?;
    prong.check_input(first.shape)?;
    for f in frames {
        ensure_same(what, first.shape, f.shape)?;
        if !f.is_finite() {
            return Err(Error::NonFiniteInput(what.to_string()));
        }
    }
    Ok(())
}

/// Runs one prong from a fresh state: `k` teacher-forced inputs, then `horizon` predicted frames.
pub fn prong_forward(model: &DoubleProngModel, prong: &Prong, inputs: &[Tensor], horizon: usize) -> Result<Vec<Tensor>> {
    check_frames("prong inputs", inputs, prong)?;
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape);
    let x = tape_frames(&mut tape, inputs);
    let out = prong.run(&mut tape, &p, &x, horizon);
    Ok(out.rollout.iter().map(|&v| Tensor { shape: tape.shape(v), data: tape.value(v).to_vec() }).collect())
}
