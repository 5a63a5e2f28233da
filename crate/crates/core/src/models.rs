//! The five 1D backbones with late fusion of EHR vectors.
//!
//! Every model maps a `B×3×L` window (plus an optional `B×E` EHR block) to
//! `B×1` logits through:
//!
//! ```text
//! backbone → features → dense+relu (hidden) → concat(ehr) → dense → logit
//! ```
//!
//! Convolutional backbones end in global average pooling; the transformer
//! ends in a convolution and a flatten.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    conv1d_output_len, pool1d_output_len, positional_encoding, AutodiffError, Graph, ParamId, ParamStore, Tensor, Var,
};
use crate::ehr::{CLINICAL_LEN, DEMOGRAPHIC_LEN};
use crate::signal::CHANNELS;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("{family}: input length {len} is incompatible: {reason}")]
    IncompatibleLength { family: Family, len: usize, reason: String },
    #[error("expected an EHR block of length {expected}, got {found}")]
    FusionLength { expected: usize, found: usize },
    #[error("parameter mismatch: {0}")]
    Parameters(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vgg1d,
    Resnet1d,
    Mobilenet1d,
    Senet1d,
    Transformer1d,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::Vgg1d,
        Family::Resnet1d,
        Family::Mobilenet1d,
        Family::Senet1d,
        Family::Transformer1d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Vgg1d => "vgg1d",
            Family::Resnet1d => "resnet1d",
            Family::Mobilenet1d => "mobilenet1d",
            Family::Senet1d => "senet1d",
            Family::Transformer1d => "transformer1d",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown model family `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthPreset {
    Tiny,
    Small,
    Standard,
}

impl DepthPreset {
    fn base_width(self) -> f64 {
        match self {
            DepthPreset::Tiny => 16.0,
            DepthPreset::Small => 32.0,
            DepthPreset::Standard => 64.0,
        }
    }

    fn hidden(self) -> usize {
        match self {
            DepthPreset::Tiny => 8,
            DepthPreset::Small => 16,
            DepthPreset::Standard => 32,
        }
    }
}

impl FromStr for DepthPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tiny" => Ok(DepthPreset::Tiny),
            "small" => Ok(DepthPreset::Small),
            "standard" => Ok(DepthPreset::Standard),
            other => Err(format!("unknown depth preset `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionInputs {
    pub demographics: bool,
    pub clinical: bool,
}

impl FusionInputs {
    pub const NONE: FusionInputs = FusionInputs {
        demographics: false,
        clinical: false,
    };

    pub fn len(&self) -> usize {
        DEMOGRAPHIC_LEN * usize::from(self.demographics) + CLINICAL_LEN * usize::from(self.clinical)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub width_scale: f64,
    pub depth: DepthPreset,
    pub fusion: FusionInputs,
}

impl ModelSpec {
    pub fn new(family: Family) -> Self {
        Self {
            family,
            width_scale: 0.25,
            depth: DepthPreset::Standard,
            fusion: FusionInputs::NONE,
        }
    }

    pub fn with_depth(mut self, depth: DepthPreset) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_fusion(mut self, fusion: FusionInputs) -> Self {
        self.fusion = fusion;
        self
    }

    fn width(&self) -> usize {
        ((self.depth.base_width() * self.width_scale).round() as usize).max(2)
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    padding: usize,
    groups: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct SqueezeExcite {
    reduce: Dense,
    expand: Dense,
}

#[derive(Clone, Debug, PartialEq)]
struct Residual {
    conv1: Conv,
    conv2: Conv,
    shortcut: Option<Conv>,
    gate: Option<SqueezeExcite>,
}

#[derive(Clone, Debug, PartialEq)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct EncoderLayer {
    query: Dense,
    key: Dense,
    value: Dense,
    out: Dense,
    norm1: Norm,
    ff1: Dense,
    ff2: Dense,
    norm2: Norm,
}

#[derive(Clone, Debug, PartialEq)]
enum Stage {
    ConvRelu(Conv),
    MaxPool { kernel: usize, stride: usize },
    Residual(Residual),
    Separable { depthwise: Conv, pointwise: Conv },
}

#[derive(Clone, Debug, PartialEq)]
enum Backbone {
    Convolutional(Vec<Stage>),
    Transformer {
        embed: Conv,
        layers: Vec<EncoderLayer>,
        heads: usize,
        positions: Tensor,
        out_conv: Conv,
        flat: usize,
    },
}

/// Registers parameters with Kaiming-normal weights and zero biases while
/// tracking the sequence length through the stack.
struct Builder {
    params: ParamStore,
    rng: ChaCha8Rng,
    family: Family,
    input_len: usize,
}

impl Builder {
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let t = Tensor::from_fn(shape, |_| normal.sample(&mut self.rng));
        self.params.register(name, t)
    }

    fn zeros(&mut self, name: String, shape: &[usize]) -> ParamId {
        self.params.register(name, Tensor::zeros(shape))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        len: &mut usize,
    ) -> Result<Conv, ModelError> {
        *len = conv1d_output_len(*len, kernel, stride, padding).ok_or_else(|| self.too_short(name, *len))?;
        let per_group = c_in / groups;
        Ok(Conv {
            w: self.weight(format!("{name}.w"), &[c_out, per_group, kernel], per_group * kernel),
            b: self.zeros(format!("{name}.b"), &[c_out]),
            stride,
            padding,
            groups,
        })
    }

    fn dense(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Dense {
        Dense {
            w: self.weight(format!("{name}.w"), &[fan_out, fan_in], fan_in),
            b: self.zeros(format!("{name}.b"), &[fan_out]),
        }
    }

    fn norm(&mut self, name: &str, dim: usize) -> Norm {
        Norm {
            gamma: self.params.register(format!("{name}.gamma"), Tensor::full(&[dim], 1.0)),
            beta: self.zeros(format!("{name}.beta"), &[dim]),
        }
    }

    fn pool(&self, name: &str, kernel: usize, stride: usize, len: &mut usize) -> Result<Stage, ModelError> {
        *len = pool1d_output_len(*len, kernel, stride).ok_or_else(|| self.too_short(name, *len))?;
        Ok(Stage::MaxPool { kernel, stride })
    }

    fn too_short(&self, layer: &str, len: usize) -> ModelError {
        ModelError::IncompatibleLength {
            family: self.family,
            len: self.input_len,
            reason: format!("sequence of length {len} is too short for layer {layer}"),
        }
    }

    fn residual(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        gated: bool,
        len: &mut usize,
    ) -> Result<Stage, ModelError> {
        let mut inner = *len;
        let conv1 = self.conv(&format!("{name}.conv1"), c_in, c_out, 3, stride, 1, 1, &mut inner)?;
        let conv2 = self.conv(&format!("{name}.conv2"), c_out, c_out, 3, 1, 1, 1, &mut inner)?;
        let shortcut = if stride != 1 || c_in != c_out {
            let mut short = *len;
            Some(self.conv(&format!("{name}.shortcut"), c_in, c_out, 1, stride, 0, 1, &mut short)?)
        } else {
            None
        };
        let gate = gated.then(|| {
            let squeezed = (c_out / 4).max(1);
            SqueezeExcite {
                reduce: self.dense(&format!("{name}.se.reduce"), c_out, squeezed),
                expand: self.dense(&format!("{name}.se.expand"), squeezed, c_out),
            }
        });
        *len = inner;
        Ok(Stage::Residual(Residual {
            conv1,
            conv2,
            shortcut,
            gate,
        }))
    }
}

/// A built model: parameters plus the layer plan that reads them.
#[derive(Clone, Debug, PartialEq)]
pub struct AcuityModel {
    spec: ModelSpec,
    input_len: usize,
    params: ParamStore,
    backbone: Backbone,
    feature_dim: usize,
    hidden: Dense,
    head: Dense,
}

impl AcuityModel {
    /// Builds the family's stack for windows of `input_len` samples.
    pub fn build(spec: ModelSpec, input_len: usize, seed: u64) -> Result<Self, ModelError> {
        let mut b = Builder {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            family: spec.family,
            input_len,
        };
        if input_len == 0 {
            return Err(b.too_short("input", 0));
        }
        let c = spec.width();
        let mut len = input_len;
        let (backbone, feature_dim) = match spec.family {
            Family::Vgg1d => {
                let plan: &[usize] = match spec.depth {
                    DepthPreset::Tiny => &[1, 0, 2, 0],
                    DepthPreset::Small => &[1, 0, 2, 0, 4, 4, 0],
                    DepthPreset::Standard => &[1, 0, 2, 0, 4, 4, 0, 8, 8, 0, 8, 8, 0],
                };
                let mut stages = Vec::new();
                let mut ch = CHANNELS;
                for (i, &m) in plan.iter().enumerate() {
                    let name = format!("vgg.{i}");
                    if m == 0 {
                        stages.push(b.pool(&name, 2, 2, &mut len)?);
                    } else {
                        stages.push(Stage::ConvRelu(b.conv(&name, ch, m * c, 3, 1, 1, 1, &mut len)?));
                        ch = m * c;
                    }
                }
                (Backbone::Convolutional(stages), ch)
            }
            Family::Resnet1d | Family::Senet1d => {
                let gated = spec.family == Family::Senet1d;
                let (widths, blocks): (&[usize], usize) = match spec.depth {
                    DepthPreset::Tiny => (&[1, 2], 1),
                    DepthPreset::Small => (&[1, 2, 4, 8], 1),
                    DepthPreset::Standard => (&[1, 2, 4, 8], 2),
                };
                let mut stages = vec![Stage::ConvRelu(b.conv("stem", CHANNELS, c, 7, 2, 3, 1, &mut len)?)];
                stages.push(b.pool("stem.pool", 3, 2, &mut len)?);
                let mut ch = c;
                for (s, &m) in widths.iter().enumerate() {
                    for k in 0..blocks {
                        let stride = if s > 0 && k == 0 { 2 } else { 1 };
                        stages.push(b.residual(&format!("stage{s}.block{k}"), ch, m * c, stride, gated, &mut len)?);
                        ch = m * c;
                    }
                }
                (Backbone::Convolutional(stages), ch)
            }
            Family::Mobilenet1d => {
                let plan: &[(usize, usize)] = match spec.depth {
                    DepthPreset::Tiny => &[(2, 2)],
                    DepthPreset::Small => &[(2, 2), (4, 2), (4, 1)],
                    DepthPreset::Standard => &[(2, 2), (4, 2), (4, 1), (8, 2), (8, 1), (8, 2), (8, 1)],
                };
                let mut stages = vec![Stage::ConvRelu(b.conv("stem", CHANNELS, c, 3, 1, 1, 1, &mut len)?)];
                let mut ch = c;
                for (i, &(m, stride)) in plan.iter().enumerate() {
                    let depthwise = b.conv(&format!("sep{i}.depthwise"), ch, ch, 3, stride, 1, ch, &mut len)?;
                    let pointwise = b.conv(&format!("sep{i}.pointwise"), ch, m * c, 1, 1, 0, 1, &mut len)?;
                    stages.push(Stage::Separable { depthwise, pointwise });
                    ch = m * c;
                }
                (Backbone::Convolutional(stages), ch)
            }
            Family::Transformer1d => {
                let (d, heads, n_layers, base_patch) = match spec.depth {
                    DepthPreset::Tiny => (8, 2, 1, 4),
                    DepthPreset::Small => (16, 2, 1, 8),
                    DepthPreset::Standard => (32, 2, 2, 16),
                };
                let patch = base_patch.max(input_len.div_ceil(512));
                let embed = b.conv("embed", CHANNELS, d, patch, patch, 0, 1, &mut len)?;
                let tokens = len;
                let layers = (0..n_layers)
                    .map(|i| {
                        let n = format!("encoder{i}");
                        EncoderLayer {
                            query: b.dense(&format!("{n}.query"), d, d),
                            key: b.dense(&format!("{n}.key"), d, d),
                            value: b.dense(&format!("{n}.value"), d, d),
                            out: b.dense(&format!("{n}.out"), d, d),
                            norm1: b.norm(&format!("{n}.norm1"), d),
                            ff1: b.dense(&format!("{n}.ff1"), d, 2 * d),
                            ff2: b.dense(&format!("{n}.ff2"), 2 * d, d),
                            norm2: b.norm(&format!("{n}.norm2"), d),
                        }
                    })
                    .collect();
                let reduced = (d / 4).max(1);
                let out_conv = b.conv("reduce", d, reduced, 3, 1, 1, 1, &mut len)?;
                let flat = reduced * tokens;
                (
                    Backbone::Transformer {
                        embed,
                        layers,
                        heads,
                        positions: positional_encoding(tokens, d),
                        out_conv,
                        flat,
                    },
                    flat,
                )
            }
        };
        let hidden_dim = spec.depth.hidden();
        let hidden = b.dense("hidden", feature_dim, hidden_dim);
        let head = b.dense("head", hidden_dim + spec.fusion.len(), 1);
        Ok(Self {
            spec,
            input_len,
            params: b.params,
            backbone,
            feature_dim,
            hidden,
            head,
        })
    }

    /// Rebuilds a model from saved parameters, checking names and shapes.
    pub fn from_params(spec: ModelSpec, input_len: usize, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Self::build(spec, input_len, 0)?;
        model.load_params(params)?;
        Ok(model)
    }

    pub fn load_params(&mut self, params: ParamStore) -> Result<(), ModelError> {
        if params.len() != self.params.len() {
            return Err(ModelError::Parameters(format!(
                "expected {} tensors, found {}",
                self.params.len(),
                params.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.params.iter().zip(params.iter()) {
            if a != b || ta.shape() != tb.shape() {
                return Err(ModelError::Parameters(format!(
                    "expected {a} {:?}, found {b} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        self.params = params;
        Ok(())
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_len(&self) -> usize {
        self.input_len
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Width of the backbone output before the hidden dense layer.
    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Exact count of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params.num_values()
    }

    /// Records a forward pass on `graph`; `vars` are this model's parameters
    /// as returned by [`ParamStore::attach`].
    pub fn forward(&self, graph: &mut Graph, vars: &[Var], accel: Var, ehr: Option<Var>) -> Result<Var, ModelError> {
        let shape = graph.value(accel).shape().to_vec();
        if shape.len() != 3 || shape[1] != CHANNELS || shape[2] != self.input_len {
            return Err(ModelError::IncompatibleLength {
                family: self.spec.family,
                len: shape.get(2).copied().unwrap_or(0),
                reason: format!("model was built for {CHANNELS}×{} windows, got {shape:?}", self.input_len),
            });
        }
        let expected = self.spec.fusion.len();
        let found = ehr.map_or(0, |e| graph.value(e).shape().last().copied().unwrap_or(0));
        if found != expected {
            return Err(ModelError::FusionLength { expected, found });
        }
        let g = graph;
        let p = |id: &ParamId| vars[id.0];
        let conv = |g: &mut Graph, x: Var, c: &Conv| g.conv1d(x, p(&c.w), Some(p(&c.b)), c.stride, c.padding, c.groups);
        let dense = |g: &mut Graph, x: Var, d: &Dense| g.linear(x, p(&d.w), Some(p(&d.b)));

        // Each channel loses its window mean, so the resting gravity offset
        // does not swamp movement.
        let accel = g.center_rows(accel)?;
        let features = match &self.backbone {
            Backbone::Convolutional(stages) => {
                let mut x = accel;
                for stage in stages {
                    x = match stage {
                        Stage::ConvRelu(c) => {
                            let y = conv(g, x, c)?;
                            g.relu(y)
                        }
                        Stage::MaxPool { kernel, stride } => g.max_pool1d(x, *kernel, *stride)?,
                        Stage::Separable { depthwise, pointwise } => {
                            let y = conv(g, x, depthwise)?;
                            let y = g.relu(y);
                            let y = conv(g, y, pointwise)?;
                            g.relu(y)
                        }
                        Stage::Residual(r) => {
                            let y = conv(g, x, &r.conv1)?;
                            let y = g.relu(y);
                            let mut y = conv(g, y, &r.conv2)?;
                            if let Some(se) = &r.gate {
                                let z = g.global_avg_pool(y)?;
                                let z = dense(g, z, &se.reduce)?;
                                let z = g.relu(z);
                                let z = dense(g, z, &se.expand)?;
                                let z = g.sigmoid(z);
                                y = g.scale_channels(y, z)?;
                            }
                            let skip = match &r.shortcut {
                                Some(s) => conv(g, x, s)?,
                                None => x,
                            };
                            let sum = g.add(y, skip)?;
                            g.relu(sum)
                        }
                    };
                }
                g.global_avg_pool(x)?
            }
            Backbone::Transformer {
                embed,
                layers,
                heads,
                positions,
                out_conv,
                flat,
            } => {
                let x = conv(g, accel, embed)?;
                let x = g.transpose12(x)?;
                let table = g.leaf(positions.clone());
                let mut x = g.add_rows(x, table)?;
                for layer in layers {
                    let q = dense(g, x, &layer.query)?;
                    let k = dense(g, x, &layer.key)?;
                    let v = dense(g, x, &layer.value)?;
                    let a = g.attention(q, k, v, *heads)?;
                    let a = dense(g, a, &layer.out)?;
                    let r = g.add(x, a)?;
                    x = g.layer_norm(r, p(&layer.norm1.gamma), p(&layer.norm1.beta))?;
                    let f = dense(g, x, &layer.ff1)?;
                    let f = g.relu(f);
                    let f = dense(g, f, &layer.ff2)?;
                    let r = g.add(x, f)?;
                    x = g.layer_norm(r, p(&layer.norm2.gamma), p(&layer.norm2.beta))?;
                }
                let x = g.transpose12(x)?;
                let x = conv(g, x, out_conv)?;
                let x = g.relu(x);
                g.reshape(x, &[shape[0], *flat])?
            }
        };
        let h = dense(g, features, &self.hidden)?;
        let h = g.relu(h);
        let fused = match ehr {
            Some(e) => g.concat(&[h, e])?,
            None => h,
        };
        Ok(dense(g, fused, &self.head)?)
    }

    /// Logits for a batch without recording gradients.
    pub fn logits(&self, accel: &Tensor, ehr: Option<&Tensor>) -> Result<Vec<f64>, ModelError> {
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g);
        let x = g.leaf(accel.clone());
        let e = ehr.map(|t| g.leaf(t.clone()));
        let out = self.forward(&mut g, &vars, x, e)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Mean BCE on a batch and its gradient for every parameter.
    pub fn loss_and_gradients(
        &self,
        accel: &Tensor,
        ehr: Option<&Tensor>,
        targets: &[f64],
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut g = Graph::new();
        let vars = self.params.attach(&mut g);
        let x = g.leaf(accel.clone());
        let e = ehr.map(|t| g.leaf(t.clone()));
        let logits = self.forward(&mut g, &vars, x, e)?;
        let loss = g.bce_with_logits(logits, targets)?;
        let grads = g.backward(loss)?;
        let value = g.value(loss).data()[0];
        let per_param = self
            .params
            .iter()
            .zip(&vars)
            .map(|((_, t), &v)| grads.get_or_zeros(v, t))
            .collect();
        Ok((value, per_param))
    }

    /// Zeroes the head weights that read the EHR block.
    pub fn zero_fusion_weights(&mut self) {
        let hidden = self.spec.depth.hidden();
        let w = self.params.get_mut(self.head.w);
        for v in &mut w.data_mut()[hidden..] {
            *v = 0.0;
        }
    }

    /// The same backbone and hidden layer with a head that ignores EHR input.
    pub fn accel_only_twin(&self) -> Self {
        let mut spec = self.spec;
        spec.fusion = FusionInputs::NONE;
        let mut twin = Self::build(spec, self.input_len, 0).expect("same stack builds again");
        let hidden = self.spec.depth.hidden();
        for (name, t) in self.params.iter() {
            let target = twin.params.by_name_mut(name).expect("same parameter names");
            if name == "head.w" {
                target.data_mut().copy_from_slice(&t.data()[..hidden]);
            } else {
                *target = t.clone();
            }
        }
        twin
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(family: Family) -> ModelSpec {
        ModelSpec::new(family).with_depth(DepthPreset::Tiny)
    }

    fn random_input(b: usize, len: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[b, CHANNELS, len], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn every_family_emits_one_logit_per_window() {
        for family in Family::ALL {
            for depth in [DepthPreset::Tiny, DepthPreset::Small] {
                let m = AcuityModel::build(ModelSpec::new(family).with_depth(depth), 256, 1).unwrap();
                let out = m.logits(&random_input(2, 256, 2), None).unwrap();
                assert_eq!(out.len(), 2, "{family} {depth:?}");
                assert!(out.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn too_short_input_is_rejected() {
        let err = AcuityModel::build(ModelSpec::new(Family::Vgg1d), 8, 0).unwrap_err();
        assert!(matches!(err, ModelError::IncompatibleLength { len: 8, .. }), "{err}");
        assert!(AcuityModel::build(tiny(Family::Transformer1d), 3, 0).is_err());
    }

    #[test]
    fn dense_layer_count() {
        let mut b = Builder {
            params: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(0),
            family: Family::Vgg1d,
            input_len: 1,
        };
        b.dense("d", 4, 2);
        assert_eq!(b.params.num_values(), 10);
    }

    #[test]
    fn separable_backbone_is_smaller_than_plain_convolutions() {
        for depth in [DepthPreset::Tiny, DepthPreset::Small, DepthPreset::Standard] {
            let vgg = AcuityModel::build(ModelSpec::new(Family::Vgg1d).with_depth(depth), 2048, 0).unwrap();
            let mobile = AcuityModel::build(ModelSpec::new(Family::Mobilenet1d).with_depth(depth), 2048, 0).unwrap();
            assert!(mobile.count_params() < vgg.count_params(), "{depth:?}");
        }
    }

    #[test]
    fn count_is_invariant_under_forward() {
        let m = AcuityModel::build(tiny(Family::Senet1d), 64, 0).unwrap();
        let before = m.count_params();
        m.logits(&random_input(1, 64, 0), None).unwrap();
        assert_eq!(before, m.count_params());
    }

    #[test]
    fn fusion_length_is_checked() {
        let fusion = FusionInputs {
            demographics: true,
            clinical: true,
        };
        assert_eq!(fusion.len(), 19);
        let m = AcuityModel::build(tiny(Family::Vgg1d).with_fusion(fusion), 64, 0).unwrap();
        let err = m.logits(&random_input(1, 64, 0), Some(&Tensor::zeros(&[1, 11]))).unwrap_err();
        assert!(matches!(err, ModelError::FusionLength { expected: 19, found: 11 }));
        assert!(matches!(
            m.logits(&random_input(1, 64, 0), None),
            Err(ModelError::FusionLength { expected: 19, found: 0 })
        ));
    }

    #[test]
    fn zeroed_fusion_head_matches_accel_only_twin() {
        let fusion = FusionInputs {
            demographics: true,
            clinical: false,
        };
        for family in Family::ALL {
            let mut m = AcuityModel::build(tiny(family).with_fusion(fusion), 64, 3).unwrap();
            let x = random_input(3, 64, 4);
            let ehr = Tensor::from_fn(&[3, 11], |i| (i as f64 * 0.3).sin());
            let fused = m.logits(&x, Some(&ehr)).unwrap();
            let mut bumped = ehr.clone();
            bumped.data_mut()[0] += 1.0;
            assert_ne!(fused, m.logits(&x, Some(&bumped)).unwrap(), "{family}");

            m.zero_fusion_weights();
            let fused = m.logits(&x, Some(&ehr)).unwrap();
            let alone = m.accel_only_twin().logits(&x, None).unwrap();
            for (a, b) in fused.iter().zip(&alone) {
                assert!((a - b).abs() < 1e-12, "{family}");
            }
        }
    }

    #[test]
    fn squeeze_excitation_gate_is_uniform_for_uniform_channels() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 4, 5], 0.7));
        let w1 = g.leaf(Tensor::full(&[1, 4], 0.5));
        let b1 = g.leaf(Tensor::zeros(&[1]));
        let w2 = g.leaf(Tensor::full(&[4, 1], -0.3));
        let b2 = g.leaf(Tensor::full(&[4], 0.1));
        let z = g.global_avg_pool(x).unwrap();
        let z = g.linear(z, w1, Some(b1)).unwrap();
        let z = g.relu(z);
        let z = g.linear(z, w2, Some(b2)).unwrap();
        let gate = g.sigmoid(z);
        let expect = crate::autodiff::sigmoid(-0.3 * (0.5 * 0.7 * 4.0) + 0.1);
        for &v in g.value(gate).data() {
            assert!((v - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn transformer_zero_input_depends_only_on_position_table() {
        let spec = tiny(Family::Transformer1d);
        let a = AcuityModel::build(spec, 64, 1).unwrap();
        let mut b = a.clone();
        for v in b.params_mut().by_name_mut("embed.w").unwrap().data_mut() {
            *v = -*v * 3.0;
        }
        let zero = Tensor::zeros(&[2, CHANNELS, 64]);
        let la = a.logits(&zero, None).unwrap();
        assert_eq!(la, b.logits(&zero, None).unwrap());
        assert_eq!(la[0], la[1]);
    }

    #[test]
    fn parameters_round_trip_through_from_params() {
        let m = AcuityModel::build(tiny(Family::Resnet1d), 64, 9).unwrap();
        let back = AcuityModel::from_params(*m.spec(), 64, m.params().clone()).unwrap();
        assert_eq!(back, m);
        let other = AcuityModel::build(tiny(Family::Vgg1d), 64, 9).unwrap();
        assert!(AcuityModel::from_params(*m.spec(), 64, other.params().clone()).is_err());
    }
}
