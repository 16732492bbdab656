//! Multi-head network assembly: a shared trunk plus one classification
//! head per task, runnable in variational or deterministic mode.
//!
//! Training and the finite-difference oracle both view the trainable
//! parameters through a flat vector. The layout is fixed by `Scope`:
//! trunk blocks in layer order, then head blocks in ascending task order;
//! within a block, all mu values followed by all rho values (rho omitted
//! in deterministic mode).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, VdpError};
use crate::gaussian::GaussianTensor;
use crate::layers::{
    det_relu_backward, det_relu_forward, det_softmax_backward, det_softmax_forward,
    relu_backward, relu_forward, softmax_backward, softmax_forward, ConvCache, GaussGrad,
    ParamGradSink, VdpConv, VdpLinear,
};
use crate::numerics::PatchLayout;
use crate::param::VariationalParameter;
use crate::rng::SeededRng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkMode {
    Variational,
    Deterministic,
}

#[derive(Debug)]
pub enum TrunkLayer {
    Linear(VdpLinear),
    Conv(VdpConv),
    Relu,
    Flatten,
}

/// Stable identity of one parameter block, used to key priors and
/// snapshots across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ParamKey {
    TrunkWeights(usize),
    TrunkBias(usize),
    HeadWeights(usize),
    HeadBias(usize),
}

/// Which parameters are trainable for the current step.
#[derive(Debug, Clone)]
pub struct Scope {
    pub trunk: bool,
    pub heads: Vec<usize>,
}

impl Scope {
    pub fn task(task: usize) -> Self {
        Self { trunk: true, heads: vec![task] }
    }

    pub fn head_only(task: usize) -> Self {
        Self { trunk: false, heads: vec![task] }
    }
}

#[derive(Debug, Clone)]
struct BlockInfo {
    offset: usize,
    len: usize,
    has_rho: bool,
}

/// Offsets of every trainable block inside the flat parameter vector.
#[derive(Debug, Clone)]
pub struct ScopeLayout {
    blocks: BTreeMap<ParamKey, BlockInfo>,
    order: Vec<ParamKey>,
    total: usize,
    pub trunk: bool,
}

impl ScopeLayout {
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn keys(&self) -> &[ParamKey] {
        &self.order
    }

    /// (offset, mu_len, has_rho) for a block, if in scope.
    pub fn block(&self, key: ParamKey) -> Option<(usize, usize, bool)> {
        self.blocks.get(&key).map(|b| (b.offset, b.len, b.has_rho))
    }
}

/// Per-forward activation cache for the variational backward pass.
pub struct Trace {
    pub task: usize,
    inputs: Vec<GaussianTensor>,
    conv_caches: Vec<Option<ConvCache>>,
    head_input: GaussianTensor,
    pre_softmax: GaussianTensor,
    probs: Tensor,
    pub output: GaussianTensor,
}

/// Per-forward activation cache for the deterministic backward pass.
pub struct DetTrace {
    pub task: usize,
    inputs: Vec<Tensor>,
    conv_cols: Vec<Option<Tensor>>,
    head_input: Tensor,
    pub probs: Tensor,
}

pub struct MultiHeadNetwork {
    pub trunk: Vec<TrunkLayer>,
    heads: BTreeMap<usize, VdpLinear>,
    pub mode: NetworkMode,
}

impl MultiHeadNetwork {
    pub fn new(trunk: Vec<TrunkLayer>, mode: NetworkMode) -> Self {
        Self { trunk, heads: BTreeMap::new(), mode }
    }

    /// Fully connected trunk: alternating linear/ReLU over `hidden` sizes.
    pub fn mlp(input: usize, hidden: &[usize], mode: NetworkMode, pi: f64, rng: &mut SeededRng) -> Self {
        let mut trunk = Vec::new();
        let mut n_in = input;
        for &h in hidden {
            trunk.push(TrunkLayer::Linear(VdpLinear::init(n_in, h, pi, rng)));
            trunk.push(TrunkLayer::Relu);
            n_in = h;
        }
        Self::new(trunk, mode)
    }

    /// Convolutional trunk for 3x32x32 inputs: six 3x3 convs with channels
    /// 32,32,64,64,128,128 (stride 2 on every second conv), each followed
    /// by ReLU, then flatten and two linear+ReLU stages 2048->512->256.
    pub fn conv_trunk_32(mode: NetworkMode, pi: f64, rng: &mut SeededRng) -> Result<Self> {
        let channels = [32, 32, 64, 64, 128, 128];
        let mut trunk = Vec::new();
        let (mut c, mut h, mut w) = (3usize, 32usize, 32usize);
        for (idx, &out_ch) in channels.iter().enumerate() {
            let stride = if idx % 2 == 1 { 2 } else { 1 };
            let conv = VdpConv::init(c, h, w, out_ch, 3, 3, stride, 1, pi, rng)?;
            let out = conv.out_shape();
            trunk.push(TrunkLayer::Conv(conv));
            trunk.push(TrunkLayer::Relu);
            c = out[0];
            h = out[1];
            w = out[2];
        }
        trunk.push(TrunkLayer::Flatten);
        let flat = c * h * w;
        for &n_out in &[512usize, 256] {
            let n_in = if n_out == 512 { flat } else { 512 };
            trunk.push(TrunkLayer::Linear(VdpLinear::init(n_in, n_out, pi, rng)));
            trunk.push(TrunkLayer::Relu);
        }
        Ok(Self::new(trunk, mode))
    }

    pub fn attach_head(&mut self, task: usize, n_classes: usize, pi: f64, rng: &mut SeededRng) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(VdpError::DuplicateTask(task));
        }
        let n_in = self.trunk_output_len()?;
        self.heads.insert(task, VdpLinear::init(n_in, n_classes, pi, rng));
        Ok(())
    }

    pub fn head(&self, task: usize) -> Result<&VdpLinear> {
        self.heads.get(&task).ok_or(VdpError::UnknownTask(task))
    }

    pub fn head_tasks(&self) -> Vec<usize> {
        self.heads.keys().copied().collect()
    }

    pub fn trunk_output_len(&self) -> Result<usize> {
        let mut len: Option<usize> = None;
        for layer in &self.trunk {
            match layer {
                TrunkLayer::Linear(l) => len = Some(l.n_out),
                TrunkLayer::Conv(c) => len = Some(c.out_shape().iter().product()),
                TrunkLayer::Relu | TrunkLayer::Flatten => {}
            }
        }
        len.ok_or_else(|| VdpError::InvalidConfig("trunk has no parameterized layers".into()))
    }

    // -- parameter views ---------------------------------------------------

    fn param_of(&self, key: ParamKey) -> Result<&VariationalParameter> {
        match key {
            ParamKey::TrunkWeights(i) | ParamKey::TrunkBias(i) => {
                let bias = matches!(key, ParamKey::TrunkBias(_));
                match self.trunk.get(i) {
                    Some(TrunkLayer::Linear(l)) => Ok(if bias { &l.bias } else { &l.weights }),
                    Some(TrunkLayer::Conv(c)) => Ok(if bias { &c.bias } else { &c.kernels }),
                    _ => Err(VdpError::InvalidConfig(format!("no parameters at trunk layer {i}"))),
                }
            }
            ParamKey::HeadWeights(t) => Ok(&self.head(t)?.weights),
            ParamKey::HeadBias(t) => Ok(&self.head(t)?.bias),
        }
    }

    fn param_of_mut(&mut self, key: ParamKey) -> Result<&mut VariationalParameter> {
        match key {
            ParamKey::TrunkWeights(i) | ParamKey::TrunkBias(i) => {
                let bias = matches!(key, ParamKey::TrunkBias(_));
                match self.trunk.get_mut(i) {
                    Some(TrunkLayer::Linear(l)) => Ok(if bias { &mut l.bias } else { &mut l.weights }),
                    Some(TrunkLayer::Conv(c)) => Ok(if bias { &mut c.bias } else { &mut c.kernels }),
                    _ => Err(VdpError::InvalidConfig(format!("no parameters at trunk layer {i}"))),
                }
            }
            ParamKey::HeadWeights(t) | ParamKey::HeadBias(t) => {
                let bias = matches!(key, ParamKey::HeadBias(_));
                let head = self.heads.get_mut(&t).ok_or(VdpError::UnknownTask(t))?;
                Ok(if bias { &mut head.bias } else { &mut head.weights })
            }
        }
    }

    /// Parameter keys covered by a scope, in canonical order.
    pub fn scope_keys(&self, scope: &Scope) -> Result<Vec<ParamKey>> {
        let mut keys = Vec::new();
        if scope.trunk {
            for (i, layer) in self.trunk.iter().enumerate() {
                if matches!(layer, TrunkLayer::Linear(_) | TrunkLayer::Conv(_)) {
                    keys.push(ParamKey::TrunkWeights(i));
                    keys.push(ParamKey::TrunkBias(i));
                }
            }
        }
        let mut heads = scope.heads.clone();
        heads.sort_unstable();
        for t in heads {
            self.head(t)?;
            keys.push(ParamKey::HeadWeights(t));
            keys.push(ParamKey::HeadBias(t));
        }
        Ok(keys)
    }

    pub fn scope_layout(&self, scope: &Scope) -> Result<ScopeLayout> {
        let has_rho = self.mode == NetworkMode::Variational;
        let mut blocks = BTreeMap::new();
        let order = self.scope_keys(scope)?;
        let mut offset = 0;
        for &key in &order {
            let len = self.param_of(key)?.len();
            blocks.insert(key, BlockInfo { offset, len, has_rho });
            offset += if has_rho { 2 * len } else { len };
        }
        Ok(ScopeLayout { blocks, order, total: offset, trunk: scope.trunk })
    }

    pub fn flatten(&self, layout: &ScopeLayout) -> Result<Vec<f64>> {
        let mut out = vec![0.0; layout.total];
        for &key in &layout.order {
            let (offset, len, has_rho) = layout.block(key).unwrap();
            let p = self.param_of(key)?;
            out[offset..offset + len].copy_from_slice(p.mu.data());
            if has_rho {
                out[offset + len..offset + 2 * len].copy_from_slice(p.rho().data());
            }
        }
        Ok(out)
    }

    pub fn load_flat(&mut self, layout: &ScopeLayout, data: &[f64]) -> Result<()> {
        if data.len() != layout.total {
            return Err(VdpError::DimensionMismatch(format!(
                "flat vector has {} values, layout expects {}",
                data.len(),
                layout.total
            )));
        }
        for &key in &layout.order {
            let (offset, len, has_rho) = layout.block(key).unwrap();
            let p = self.param_of_mut(key)?;
            if has_rho {
                let (mu, rho) = data[offset..offset + 2 * len].split_at(len);
                p.load_flat(mu, rho);
            } else {
                p.load_mu(&data[offset..offset + len]);
            }
        }
        Ok(())
    }

    /// Iterate (key, parameter) over a scope, for KL evaluation.
    pub fn scope_params(&self, scope: &Scope) -> Result<Vec<(ParamKey, &VariationalParameter)>> {
        self.scope_keys(scope)?
            .into_iter()
            .map(|k| self.param_of(k).map(|p| (k, p)))
            .collect()
    }

    // -- variational forward/backward --------------------------------------

    /// Propagate a deterministic input through trunk + head(task) + softmax.
    pub fn forward(&self, x: &Tensor, task: usize) -> Result<Trace> {
        if self.mode != NetworkMode::Variational {
            return Err(VdpError::RequiresVariationalMode);
        }
        let head = self.head(task)?;
        let mut act = GaussianTensor::deterministic(x.clone());
        let mut inputs = Vec::with_capacity(self.trunk.len());
        let mut conv_caches = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            inputs.push(act.clone());
            let mut cache = None;
            act = match layer {
                TrunkLayer::Linear(l) => l.forward(&act)?,
                TrunkLayer::Conv(c) => {
                    let (out, cc) = c.forward(&act)?;
                    cache = Some(cc);
                    out
                }
                TrunkLayer::Relu => relu_forward(&act),
                TrunkLayer::Flatten => GaussianTensor {
                    mean: act.mean.clone().reshape(vec![act.len()])?,
                    variance: act.variance.clone().reshape(vec![act.len()])?,
                },
            };
            conv_caches.push(cache);
        }
        let head_input = GaussianTensor {
            mean: act.mean.clone().reshape(vec![act.len()])?,
            variance: act.variance.clone().reshape(vec![act.len()])?,
        };
        let pre_softmax = head.forward(&head_input)?;
        let (output, probs) = softmax_forward(&pre_softmax);
        Ok(Trace { task, inputs, conv_caches, head_input, pre_softmax, probs, output })
    }

    /// Accumulate analytic gradients of the objective into the scope-flat
    /// vector `acc`, given its gradient with respect to the output moments.
    pub fn backward(&self, trace: &Trace, d_out: &GaussGrad, layout: &ScopeLayout, acc: &mut [f64]) -> Result<()> {
        if acc.len() != layout.total {
            return Err(VdpError::DimensionMismatch(format!(
                "gradient accumulator has {} values, layout expects {}",
                acc.len(),
                layout.total
            )));
        }
        let head = self.head(trace.task)?;
        let mut d = softmax_backward(&trace.pre_softmax, &trace.probs, d_out);
        d = with_sinks(acc, layout, ParamKey::HeadWeights(trace.task), ParamKey::HeadBias(trace.task), |sinks| {
            head.backward(&trace.head_input, &d, sinks)
        })?;
        if !layout.trunk {
            return Ok(());
        }
        // Undo the implicit flatten before the head.
        let mut d = GaussGrad {
            mean: d.mean.reshape(trace_last_shape(trace))?,
            variance: d.variance.reshape(trace_last_shape(trace))?,
        };
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            d = match layer {
                TrunkLayer::Linear(l) => with_sinks(
                    acc,
                    layout,
                    ParamKey::TrunkWeights(i),
                    ParamKey::TrunkBias(i),
                    |sinks| l.backward(input, &d, sinks),
                )?,
                TrunkLayer::Conv(c) => {
                    let cache = trace.conv_caches[i]
                        .as_ref()
                        .ok_or(VdpError::BackwardWithoutForward)?;
                    with_sinks(acc, layout, ParamKey::TrunkWeights(i), ParamKey::TrunkBias(i), |sinks| {
                        c.backward(cache, &d, sinks)
                    })?
                }
                TrunkLayer::Relu => relu_backward(input, &d),
                TrunkLayer::Flatten => GaussGrad {
                    mean: d.mean.reshape(input.shape().to_vec())?,
                    variance: d.variance.reshape(input.shape().to_vec())?,
                },
            };
        }
        Ok(())
    }

    // -- deterministic forward/backward ------------------------------------

    /// Point-network forward: class probabilities from the mean weights.
    pub fn det_forward(&self, x: &Tensor, task: usize) -> Result<DetTrace> {
        let head = self.head(task)?;
        let mut act = x.clone();
        let mut inputs = Vec::with_capacity(self.trunk.len());
        let mut conv_cols = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            inputs.push(act.clone());
            let mut cols = None;
            act = match layer {
                TrunkLayer::Linear(l) => l.det_forward(&act)?,
                TrunkLayer::Conv(c) => {
                    let (out, cc) = c.det_forward(&act)?;
                    cols = Some(cc);
                    out
                }
                TrunkLayer::Relu => det_relu_forward(&act),
                TrunkLayer::Flatten => {
                    let n = act.len();
                    act.reshape(vec![n])?
                }
            };
            conv_cols.push(cols);
        }
        let n = act.len();
        let head_input = act.reshape(vec![n])?;
        let logits = head.det_forward(&head_input)?;
        let probs = det_softmax_forward(&logits);
        Ok(DetTrace { task, inputs, conv_cols, head_input, probs })
    }

    /// Backward from a gradient with respect to the output probabilities.
    pub fn det_backward(&self, trace: &DetTrace, d_probs: &Tensor, layout: &ScopeLayout, acc: &mut [f64]) -> Result<()> {
        let head = self.head(trace.task)?;
        let mut d = det_softmax_backward(&trace.probs, d_probs);
        d = with_sinks(acc, layout, ParamKey::HeadWeights(trace.task), ParamKey::HeadBias(trace.task), |sinks| {
            head.det_backward(&trace.head_input, &d, sinks)
        })?;
        if !layout.trunk {
            return Ok(());
        }
        let last_shape = trace.inputs.last().map(|t| t.shape().to_vec());
        let _ = last_shape;
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let input = &trace.inputs[i];
            d = match layer {
                TrunkLayer::Linear(l) => with_sinks(
                    acc,
                    layout,
                    ParamKey::TrunkWeights(i),
                    ParamKey::TrunkBias(i),
                    |sinks| l.det_backward(input, &d, sinks),
                )?,
                TrunkLayer::Conv(c) => {
                    let cols = trace.conv_cols[i].as_ref().ok_or(VdpError::BackwardWithoutForward)?;
                    let shaped = d.reshape(c.out_shape())?;
                    with_sinks(acc, layout, ParamKey::TrunkWeights(i), ParamKey::TrunkBias(i), |sinks| {
                        c.det_backward(cols, &shaped, sinks)
                    })?
                }
                TrunkLayer::Relu => det_relu_backward(input, &d),
                TrunkLayer::Flatten => d.reshape(input.shape().to_vec())?,
            };
        }
        Ok(())
    }

    /// One Monte-Carlo draw: sample every weight from its factor and run
    /// the deterministic forward. Used by the moment oracle.
    pub fn sampled_forward(&self, x: &Tensor, task: usize, rng: &mut SeededRng) -> Result<Tensor> {
        if self.mode != NetworkMode::Variational {
            return Err(VdpError::RequiresVariationalMode);
        }
        let head = self.head(task)?;
        let mut act = x.clone();
        for layer in &self.trunk {
            act = match layer {
                TrunkLayer::Linear(l) => l.sampled_forward(&act, rng)?,
                TrunkLayer::Conv(c) => c.sampled_forward(&act, rng)?,
                TrunkLayer::Relu => det_relu_forward(&act),
                TrunkLayer::Flatten => {
                    let n = act.len();
                    act.reshape(vec![n])?
                }
            };
        }
        let n = act.len();
        let logits = head.sampled_forward(&act.reshape(vec![n])?, rng)?;
        Ok(det_softmax_forward(&logits))
    }

    // -- checkpoint --------------------------------------------------------

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_u32::<LittleEndian>(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(1)?;
        w.write_u8(match self.mode {
            NetworkMode::Variational => 0,
            NetworkMode::Deterministic => 1,
        })?;
        w.write_u32::<LittleEndian>(self.trunk.len() as u32)?;
        for layer in &self.trunk {
            match layer {
                TrunkLayer::Linear(l) => {
                    w.write_u8(0)?;
                    w.write_u32::<LittleEndian>(l.n_in as u32)?;
                    w.write_u32::<LittleEndian>(l.n_out as u32)?;
                    write_param(w, &l.weights)?;
                    write_param(w, &l.bias)?;
                }
                TrunkLayer::Conv(c) => {
                    w.write_u8(1)?;
                    for v in [
                        c.layout.channels,
                        c.layout.height,
                        c.layout.width,
                        c.out_ch,
                        c.layout.kh,
                        c.layout.kw,
                        c.layout.stride,
                        c.layout.padding,
                    ] {
                        w.write_u32::<LittleEndian>(v as u32)?;
                    }
                    write_param(w, &c.kernels)?;
                    write_param(w, &c.bias)?;
                }
                TrunkLayer::Relu => w.write_u8(2)?,
                TrunkLayer::Flatten => w.write_u8(3)?,
            }
        }
        w.write_u32::<LittleEndian>(self.heads.len() as u32)?;
        for (&task, head) in &self.heads {
            w.write_u32::<LittleEndian>(task as u32)?;
            w.write_u32::<LittleEndian>(head.n_in as u32)?;
            w.write_u32::<LittleEndian>(head.n_out as u32)?;
            write_param(w, &head.weights)?;
            write_param(w, &head.bias)?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let magic = r.read_u32::<LittleEndian>()?;
        if magic != CHECKPOINT_MAGIC {
            return Err(VdpError::Checkpoint(format!("bad magic {magic:#010x}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != 1 {
            return Err(VdpError::Checkpoint(format!("unsupported version {version}")));
        }
        let mode = match r.read_u8()? {
            0 => NetworkMode::Variational,
            1 => NetworkMode::Deterministic,
            m => return Err(VdpError::Checkpoint(format!("unknown mode {m}"))),
        };
        let n_trunk = r.read_u32::<LittleEndian>()? as usize;
        let mut trunk = Vec::with_capacity(n_trunk);
        for _ in 0..n_trunk {
            match r.read_u8()? {
                0 => {
                    let n_in = r.read_u32::<LittleEndian>()? as usize;
                    let n_out = r.read_u32::<LittleEndian>()? as usize;
                    let weights = read_param(r, vec![n_in, n_out])?;
                    let bias = read_param(r, vec![n_out])?;
                    trunk.push(TrunkLayer::Linear(VdpLinear::from_parts(weights, bias)?));
                }
                1 => {
                    let mut dims = [0usize; 8];
                    for d in &mut dims {
                        *d = r.read_u32::<LittleEndian>()? as usize;
                    }
                    let [in_ch, h, wd, out_ch, kh, kw, stride, padding] = dims;
                    let layout = PatchLayout::new(in_ch, h, wd, kh, kw, stride, padding)?;
                    let kernels = read_param(r, vec![out_ch, layout.patch_len()])?;
                    let bias = read_param(r, vec![out_ch])?;
                    trunk.push(TrunkLayer::Conv(VdpConv { kernels, bias, layout, out_ch }));
                }
                2 => trunk.push(TrunkLayer::Relu),
                3 => trunk.push(TrunkLayer::Flatten),
                t => return Err(VdpError::Checkpoint(format!("unknown layer tag {t}"))),
            }
        }
        let mut net = Self::new(trunk, mode);
        let n_heads = r.read_u32::<LittleEndian>()? as usize;
        for _ in 0..n_heads {
            let task = r.read_u32::<LittleEndian>()? as usize;
            let n_in = r.read_u32::<LittleEndian>()? as usize;
            let n_out = r.read_u32::<LittleEndian>()? as usize;
            let weights = read_param(r, vec![n_in, n_out])?;
            let bias = read_param(r, vec![n_out])?;
            net.heads.insert(task, VdpLinear::from_parts(weights, bias)?);
        }
        Ok(net)
    }
}

const CHECKPOINT_MAGIC: u32 = 0x5644_504E; // "VDPN"

fn write_param<W: Write>(w: &mut W, p: &VariationalParameter) -> Result<()> {
    for &x in p.mu.data() {
        w.write_u64::<LittleEndian>(x.to_bits())?;
    }
    for &x in p.rho().data() {
        w.write_u64::<LittleEndian>(x.to_bits())?;
    }
    Ok(())
}

fn read_param<R: Read>(r: &mut R, shape: Vec<usize>) -> Result<VariationalParameter> {
    let n: usize = shape.iter().product();
    let mut mu = Vec::with_capacity(n);
    for _ in 0..n {
        mu.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    let mut rho = Vec::with_capacity(n);
    for _ in 0..n {
        rho.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    VariationalParameter::new(Tensor::new(shape.clone(), mu)?, Tensor::new(shape, rho)?)
}

fn trace_last_shape(trace: &Trace) -> Vec<usize> {
    vec![trace.head_input.len()]
}

/// Run `f` with gradient sinks for the (weights, bias) blocks of one
/// layer, or `None` when the layer is outside the training scope.
fn with_sinks<T>(
    acc: &mut [f64],
    layout: &ScopeLayout,
    w_key: ParamKey,
    b_key: ParamKey,
    f: impl FnOnce(Option<(ParamGradSink<'_>, ParamGradSink<'_>)>) -> Result<T>,
) -> Result<T> {
    match (layout.block(w_key), layout.block(b_key)) {
        (Some((w_off, w_len, has_rho)), Some((b_off, b_len, _))) => {
            debug_assert!(w_off < b_off);
            let w_span = if has_rho { 2 * w_len } else { w_len };
            let b_span = if has_rho { 2 * b_len } else { b_len };
            let (_, rest) = acc.split_at_mut(w_off);
            let (w_slice, rest) = rest.split_at_mut(w_span);
            let gap = b_off - (w_off + w_span);
            let (_, rest) = rest.split_at_mut(gap);
            let (b_slice, _) = rest.split_at_mut(b_span);
            let (w_mu, w_rho) = w_slice.split_at_mut(w_len);
            let (b_mu, b_rho) = b_slice.split_at_mut(b_len);
            f(Some((
                ParamGradSink { mu: w_mu, rho: w_rho },
                ParamGradSink { mu: b_mu, rho: b_rho },
            )))
        }
        _ => f(None),
    }
}
