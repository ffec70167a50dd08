//! Network graphs: a flat, topologically ordered list of layers over named
//! weights, the RRNet builder and the executors that run it.

use std::fmt;
use std::path::Path;
use std::sync::atomic::AtomicU64;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::blocks::{
    bias_name, cdc_weight_name, decoder_weight_name, unit_weight_name, ParamTable, DISPARITY_SCALE,
    HEAD_WEIGHT_NAME,
};
use crate::config::{ConnectionMode, GraphSpec, STAGES};
use crate::error::{Error, Result};
use crate::format::{self, WeightMap};
use crate::ops::{self, Activation, ConvKind, ConvSpec};
use crate::tensor::{Element, Shape, Tensor};

/// Where a layer reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeInput {
    Image,
    Node(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerOp {
    Conv {
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
    },
    Activation(Activation),
    Upsample2x,
    Concat,
    ScaledSigmoid(f64),
}

impl LayerOp {
    pub fn type_name(&self) -> &'static str {
        match self {
            LayerOp::Conv { kind, .. } => kind.name(),
            LayerOp::Activation(a) => a.name(),
            LayerOp::Upsample2x => "upsample",
            LayerOp::Concat => "concat",
            LayerOp::ScaledSigmoid(_) => "sigmoid",
        }
    }

    /// Kernel shape of a convolution layer.
    pub fn kernel_shape(&self) -> Option<Shape> {
        match *self {
            LayerOp::Conv {
                kind, c_in, c_out, k, ..
            } => Some(match kind {
                ConvKind::Depthwise => Shape::new(c_out, 1, k, k),
                _ => Shape::new(c_out, c_in, k, k),
            }),
            _ => None,
        }
    }
}

/// One operator instance. Convolution layers own the weight named after the
/// layer, plus `<name>.bias` when biased.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNode {
    pub name: String,
    pub op: LayerOp,
    pub inputs: Vec<NodeInput>,
    pub out_channels: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Data,
    /// Condensed decoding connection into the decoder.
    Cdc,
    /// Plain encoder-to-decoder skip.
    Skip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub from: NodeInput,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Incremental, validating graph construction.
#[derive(Clone, Debug)]
pub struct GraphBuilder {
    input_channels: usize,
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
}

impl GraphBuilder {
    pub fn new(input_channels: usize) -> Self {
        GraphBuilder {
            input_channels,
            nodes: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn channels(&self, input: NodeInput) -> usize {
        match input {
            NodeInput::Image => self.input_channels,
            NodeInput::Node(i) => self.nodes[i].out_channels,
        }
    }

    fn source_name(&self, input: NodeInput) -> &str {
        match input {
            NodeInput::Image => "input",
            NodeInput::Node(i) => &self.nodes[i].name,
        }
    }

    fn check_source(&self, input: NodeInput, to: &str) -> Result<()> {
        match input {
            NodeInput::Node(i) if i >= self.nodes.len() => Err(Error::Graph {
                edge: format!("#{i} -> {to}"),
                message: "source layer does not exist yet".into(),
            }),
            _ => Ok(()),
        }
    }

    fn push(&mut self, node: LayerNode, kinds: &[EdgeKind]) -> Result<NodeInput> {
        if self.nodes.iter().any(|n| n.name == node.name) {
            return Err(Error::Graph {
                edge: node.name.clone(),
                message: "duplicate layer name".into(),
            });
        }
        for &i in &node.inputs {
            self.check_source(i, &node.name)?;
        }
        let to = self.nodes.len();
        for (&from, &kind) in node.inputs.iter().zip(kinds) {
            self.edges.push(Edge { from, to, kind });
        }
        self.nodes.push(node);
        Ok(NodeInput::Node(to))
    }

    pub fn conv(
        &mut self,
        name: &str,
        kind: ConvKind,
        input: NodeInput,
        c_out: usize,
        k: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<NodeInput> {
        self.check_source(input, name)?;
        let c_in = self.channels(input);
        let edge = || format!("{} -> {name}", self.source_name(input));
        if c_out == 0 || k.is_multiple_of(2) {
            return Err(Error::Graph {
                edge: edge(),
                message: format!("invalid layer: c_out = {c_out}, k = {k}"),
            });
        }
        if kind == ConvKind::Depthwise && c_out != c_in {
            return Err(Error::Graph {
                edge: edge(),
                message: format!("depthwise layer must keep {c_in} channels, asked for {c_out}"),
            });
        }
        if kind == ConvKind::Pointwise && (k != 1 || spec.dilation != 1) {
            return Err(Error::Graph {
                edge: edge(),
                message: "pointwise layer needs k = 1 and dilation 1".into(),
            });
        }
        let node = LayerNode {
            name: name.to_string(),
            op: LayerOp::Conv {
                kind,
                c_in,
                c_out,
                k,
                spec,
                bias,
            },
            inputs: vec![input],
            out_channels: c_out,
        };
        self.push(node, &[EdgeKind::Data])
    }

    pub fn activation(&mut self, name: &str, act: Activation, input: NodeInput) -> Result<NodeInput> {
        self.unary(name, LayerOp::Activation(act), input)
    }

    pub fn upsample(&mut self, name: &str, input: NodeInput) -> Result<NodeInput> {
        self.unary(name, LayerOp::Upsample2x, input)
    }

    pub fn scaled_sigmoid(&mut self, name: &str, input: NodeInput, scale: f64) -> Result<NodeInput> {
        self.unary(name, LayerOp::ScaledSigmoid(scale), input)
    }

    fn unary(&mut self, name: &str, op: LayerOp, input: NodeInput) -> Result<NodeInput> {
        self.check_source(input, name)?;
        let node = LayerNode {
            name: name.to_string(),
            op,
            inputs: vec![input],
            out_channels: self.channels(input),
        };
        self.push(node, &[EdgeKind::Data])
    }

    pub fn concat(&mut self, name: &str, inputs: &[(NodeInput, EdgeKind)]) -> Result<NodeInput> {
        if inputs.is_empty() {
            return Err(Error::Graph {
                edge: name.to_string(),
                message: "concatenation without inputs".into(),
            });
        }
        for &(i, _) in inputs {
            self.check_source(i, name)?;
        }
        let node = LayerNode {
            name: name.to_string(),
            op: LayerOp::Concat,
            inputs: inputs.iter().map(|&(i, _)| i).collect(),
            out_channels: inputs.iter().map(|&(i, _)| self.channels(i)).sum(),
        };
        let kinds: Vec<EdgeKind> = inputs.iter().map(|&(_, k)| k).collect();
        self.push(node, &kinds)
    }

    /// Whether every consumer of layer `i` is a rectifying activation.
    fn feeds_rectifier(&self, i: usize) -> bool {
        let mut consumers = self
            .edges
            .iter()
            .filter(|e| e.from == NodeInput::Node(i))
            .map(|e| &self.nodes[e.to].op)
            .peekable();
        consumers.peek().is_some() && consumers.all(|op| matches!(op, LayerOp::Activation(_)))
    }

    /// Finalizes the graph with fan-in scaled normal kernels and zero biases.
    /// Kernels feeding ELU/ReLU get variance `2 / fan_in`, all others (linear
    /// reductions, depthwise taps, the sigmoid head) `1 / fan_in`. Each weight
    /// is drawn from its own stream keyed by name, so its values depend only
    /// on `seed`, its name, its shape and that gain.
    pub fn finish<T: Element>(self, seed: u64, stride_factor: usize) -> Result<NetworkGraph<T>> {
        let output = match self.nodes.len() {
            0 => None,
            n => Some(n - 1),
        };
        let mut weights = WeightMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let LayerOp::Conv { c_out, bias, .. } = node.op else {
                continue;
            };
            let shape = node.op.kernel_shape().expect("conv layer");
            let gain = if self.feeds_rectifier(i) { 2.0 } else { 1.0 };
            weights.insert(node.name.clone(), he_normal(seed, &node.name, shape, gain));
            if bias {
                weights.insert(bias_name(&node.name), Tensor::zeros(Shape::new(1, c_out, 1, 1))?);
            }
        }
        Ok(NetworkGraph {
            input_channels: self.input_channels,
            nodes: self.nodes,
            edges: self.edges,
            weights,
            output,
            stride_factor: stride_factor.max(1),
            spec: None,
        })
    }
}

/// 64-bit FNV-1a, used to derive per-weight RNG streams.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn he_normal<T: Element>(seed: u64, name: &str, shape: Shape, gain: f64) -> Tensor<T> {
    let fan_in = shape.c * shape.h * shape.w;
    let std = (gain / fan_in as f64).sqrt() as f32;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name));
    let normal = Normal::new(0.0f32, std).expect("finite std");
    let data = (0..shape.numel())
        .map(|_| T::from_f64_lossy(normal.sample(&mut rng) as f64))
        .collect();
    Tensor::from_parts(shape, data)
}

/// A built network with its weights.
#[derive(Clone, Debug)]
pub struct NetworkGraph<T: Element = f32> {
    input_channels: usize,
    nodes: Vec<LayerNode>,
    edges: Vec<Edge>,
    weights: WeightMap<T>,
    output: Option<usize>,
    stride_factor: usize,
    spec: Option<GraphSpec>,
}

impl<T: Element> NetworkGraph<T> {
    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &WeightMap<T> {
        &self.weights
    }

    /// Mutable view of one weight's values; shapes stay fixed.
    pub fn weight_data_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.weights.get_mut(name).map(|t| t.data_mut())
    }

    pub fn spec(&self) -> Option<&GraphSpec> {
        self.spec.as_ref()
    }

    /// Spatial dims of the input must be multiples of this.
    pub fn stride_factor(&self) -> usize {
        self.stride_factor
    }

    pub fn node(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Total stored parameter count.
    pub fn param_count(&self) -> u64 {
        self.weights.values().map(|t| t.len() as u64).sum()
    }

    pub fn edge_name(&self, e: &Edge) -> String {
        let from = match e.from {
            NodeInput::Image => "input",
            NodeInput::Node(i) => &self.nodes[i].name,
        };
        format!("{from} -> {}", self.nodes[e.to].name)
    }

    /// CDC reduction layers, in stage order.
    pub fn reduction_layers(&self) -> Vec<&LayerNode> {
        (1..=STAGES)
            .filter_map(|s| self.node(&cdc_weight_name(s)))
            .collect()
    }

    pub fn cast<U: Element>(&self) -> NetworkGraph<U> {
        NetworkGraph {
            input_channels: self.input_channels,
            nodes: self.nodes.clone(),
            edges: self.edges.clone(),
            weights: self.weights.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
            output: self.output,
            stride_factor: self.stride_factor,
            spec: self.spec.clone(),
        }
    }

    /// Replaces all weights; names and shapes must match exactly.
    pub fn set_weights(&mut self, weights: WeightMap<T>) -> Result<()> {
        for (name, t) in &weights {
            match self.weights.get(name) {
                None => {
                    return Err(Error::Format(format!("weight `{name}` does not belong to this graph")))
                }
                Some(cur) if cur.shape() != t.shape() => {
                    return Err(Error::Format(format!(
                        "weight `{name}` has shape {}, graph expects {}",
                        t.shape(),
                        cur.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(missing) = self.weights.keys().find(|k| !weights.contains_key(*k)) {
            return Err(Error::MissingWeight(missing.clone()));
        }
        for (name, t) in weights {
            self.weights.insert(name, t);
        }
        Ok(())
    }

    pub fn save_weights(&self, path: &Path) -> Result<()> {
        format::write_weights(path, &self.weights)
    }

    pub fn load_weights(&mut self, path: &Path) -> Result<()> {
        let w = format::read_weights(path)?;
        self.set_weights(w)
    }

    /// Checks the input tensor shape against the graph.
    pub fn check_input(&self, x: Shape) -> Result<()> {
        if x.c != self.input_channels {
            return Err(Error::ShapeMismatch {
                op: "forward",
                axis: "c",
                expected: self.input_channels,
                actual: x.c,
            });
        }
        let f = self.stride_factor;
        if !x.h.is_multiple_of(f) || !x.w.is_multiple_of(f) {
            let near = |v: usize| (((v + f / 2) / f).max(1)) * f;
            return Err(Error::InvalidShape {
                op: "forward",
                message: format!(
                    "input {}x{} is not divisible by {f}; nearest valid size is {}x{}",
                    x.h,
                    x.w,
                    near(x.h),
                    near(x.w)
                ),
            });
        }
        Ok(())
    }

    /// Output shape of every layer for a given input shape.
    pub fn infer_shapes(&self, input: Shape) -> Result<Vec<Shape>> {
        self.check_input(input)?;
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let src = |i: NodeInput| match i {
                NodeInput::Image => input,
                NodeInput::Node(j) => shapes[j],
            };
            let x = src(node.inputs[0]);
            let out = match &node.op {
                LayerOp::Conv { kind, spec, bias, c_out, .. } => {
                    let kernel = node.op.kernel_shape().expect("conv");
                    ops::geometry(*kind, x, kernel, bias.then_some(*c_out), *spec)?.out_shape()
                }
                LayerOp::Upsample2x => Shape::new(x.n, x.c, x.h * 2, x.w * 2),
                LayerOp::Concat => {
                    let parts: Vec<Shape> = node.inputs.iter().map(|&i| src(i)).collect();
                    ops::concat_shape(&parts)?
                }
                LayerOp::Activation(_) | LayerOp::ScaledSigmoid(_) => x,
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    fn weight(&self, name: &str) -> Result<&Tensor<T>> {
        self.weights
            .get(name)
            .ok_or_else(|| Error::MissingWeight(name.to_string()))
    }

    fn eval_plain(
        &self,
        node: &LayerNode,
        inputs: &[&Tensor<T>],
        counter: Option<&AtomicU64>,
    ) -> Result<Tensor<T>> {
        let x = inputs[0];
        Ok(match &node.op {
            LayerOp::Conv { kind, spec, bias, .. } => {
                let w = self.weight(&node.name)?;
                let b = if *bias {
                    Some(self.weight(&bias_name(&node.name))?.data())
                } else {
                    None
                };
                let g = ops::geometry(*kind, x.shape(), w.shape(), b.map(<[T]>::len), *spec)?;
                Tensor::from_parts(g.out_shape(), ops::conv_forward(x.data(), w.data(), b, &g, counter))
            }
            LayerOp::Activation(a) => a.apply(x),
            LayerOp::Upsample2x => ops::upsample_bilinear_x2(x),
            LayerOp::Concat => ops::concat_channels(inputs)?,
            LayerOp::ScaledSigmoid(s) => ops::scaled_sigmoid(x, T::from_f64_lossy(*s)),
        })
    }

    /// Inference without recording; intermediates are dropped once consumed.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_counted(x, None)
    }

    /// As [`forward`](Self::forward), adding every visited multiply-accumulate
    /// slot of every convolution to `counter`.
    pub fn forward_counted(&self, x: &Tensor<T>, counter: Option<&AtomicU64>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let Some(output) = self.output else {
            return Ok(x.clone());
        };
        let mut uses = vec![0usize; self.nodes.len()];
        for node in &self.nodes {
            for &i in &node.inputs {
                if let NodeInput::Node(j) = i {
                    uses[j] += 1;
                }
            }
        }
        let mut values: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            let out = {
                let inputs: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&i| match i {
                        NodeInput::Image => x,
                        NodeInput::Node(j) => values[j].as_ref().expect("live input"),
                    })
                    .collect();
                self.eval_plain(node, &inputs, counter)?
            };
            for &i in &node.inputs {
                if let NodeInput::Node(j) = i {
                    uses[j] -= 1;
                    if uses[j] == 0 && j != output {
                        values[j] = None;
                    }
                }
            }
            values[idx] = Some(out);
        }
        Ok(values[output].take().expect("output computed"))
    }

    /// Registers the weights on `tape` as leaves.
    pub fn register(&self, tape: &mut Tape<T>, requires_grad: bool) -> ParamTable {
        ParamTable::register(tape, &self.weights, requires_grad)
    }

    /// Records the whole network on a tape, returning every layer's value.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, x: Var, params: &ParamTable) -> Result<Vec<Var>> {
        self.check_input(tape.value(x).shape())?;
        let mut vars: Vec<Var> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let src = |i: NodeInput| match i {
                NodeInput::Image => x,
                NodeInput::Node(j) => vars[j],
            };
            let a = src(node.inputs[0]);
            let v = match &node.op {
                LayerOp::Conv { kind, spec, .. } => {
                    let conv = params.conv(&node.name)?;
                    tape.conv(*kind, a, conv.weight, conv.bias, *spec)?
                }
                LayerOp::Activation(act) => tape.activation(*act, a),
                LayerOp::Upsample2x => tape.upsample_bilinear_x2(a),
                LayerOp::Concat => {
                    let xs: Vec<Var> = node.inputs.iter().map(|&i| src(i)).collect();
                    tape.concat_channels(&xs)?
                }
                LayerOp::ScaledSigmoid(s) => tape.scaled_sigmoid(a, T::from_f64_lossy(*s)),
            };
            vars.push(v);
        }
        Ok(vars)
    }

    /// Index of the output layer; `None` for an empty graph.
    pub fn output_index(&self) -> Option<usize> {
        self.output
    }
}

/// Bottleneck source feeding the decoder at one resolution level.
struct Connection {
    stage: usize,
    node: NodeInput,
    level: u32,
    kind: EdgeKind,
    name: String,
}

/// Builds RRNet: five RR-block stages, each paired with one decoder layer
/// at the same resolution, then a full-resolution disparity head.
pub fn build<T: Element>(spec: &GraphSpec) -> Result<NetworkGraph<T>> {
    spec.validate()?;
    let mut b = GraphBuilder::new(spec.input_channels);
    let act = spec.activation;
    let mut cur = NodeInput::Image;
    let mut level = 0u32;
    let mut connections: Vec<Connection> = Vec::new();

    for (si, st) in spec.stages.iter().enumerate() {
        let s = si + 1;
        let mut feats: Vec<(NodeInput, u32)> = Vec::with_capacity(st.r);
        for j in 1..=st.r {
            let (rs, ds) = st.unit_strides(j);
            let name = |part: &str| unit_weight_name(s, j, part);
            let reduce = b.conv(&name("reduce"), ConvKind::Pointwise, cur, st.rr, 1, ConvSpec::strided(rs), spec.bias)?;
            if rs == 2 {
                level += 1;
            }
            feats.push((reduce, level));
            let dw_spec = ConvSpec {
                stride: ds,
                dilation: st.dilation(j),
                ..ConvSpec::default()
            };
            let dw = b.conv(&name("dw"), ConvKind::Depthwise, reduce, st.rr, 3, dw_spec, spec.bias)?;
            if ds == 2 {
                level += 1;
            }
            let pw = b.conv(&name("pw"), ConvKind::Pointwise, dw, st.re, 1, ConvSpec::default(), spec.bias)?;
            cur = b.activation(&name("act"), act, pw)?;
        }
        let feat_level = feats[0].1;
        if let Some(&(node, l)) = feats.iter().find(|f| f.1 != feat_level) {
            let NodeInput::Node(i) = node else { unreachable!() };
            return Err(Error::Graph {
                edge: format!("{} -> cdc{s}", b.nodes[i].name),
                message: format!("stacked bottlenecks span resolution levels {feat_level} and {l}"),
            });
        }
        let conn = match spec.connection {
            ConnectionMode::Cdc => {
                let stack: Vec<(NodeInput, EdgeKind)> = feats.iter().map(|&(f, _)| (f, EdgeKind::Data)).collect();
                let stacked = b.concat(&format!("cdc{s}.stack"), &stack)?;
                let name = cdc_weight_name(s);
                let reduced = b.conv(
                    &name,
                    ConvKind::Pointwise,
                    stacked,
                    spec.rcn_per_stage[si],
                    1,
                    ConvSpec::default(),
                    spec.bias,
                )?;
                Connection {
                    stage: s,
                    node: reduced,
                    level: feat_level,
                    kind: EdgeKind::Cdc,
                    name,
                }
            }
            ConnectionMode::Skip => Connection {
                stage: s,
                node: feats[st.r - 1].0,
                level: feat_level,
                kind: EdgeKind::Skip,
                name: unit_weight_name(s, st.r, "reduce"),
            },
        };
        connections.push(conn);
    }

    let mut used = vec![false; connections.len()];
    for (ki, &width) in spec.decoder_widths.iter().enumerate() {
        let k = ki + 1;
        let dec = format!("dec{k}");
        if level == 0 {
            return Err(Error::Graph {
                edge: format!("{dec}.up"),
                message: "decoder would upsample beyond the input resolution".into(),
            });
        }
        let up = b.upsample(&format!("{dec}.up"), cur)?;
        level -= 1;
        let matches: Vec<usize> = (0..connections.len()).filter(|&i| connections[i].level == level).collect();
        let joined = match matches.as_slice() {
            [] => up,
            [i] => {
                used[*i] = true;
                let c = &connections[*i];
                b.concat(&format!("{dec}.concat"), &[(up, EdgeKind::Data), (c.node, c.kind)])?
            }
            [first, second, ..] => {
                return Err(Error::Graph {
                    edge: format!("{} -> {dec}.concat", connections[*second].name),
                    message: format!(
                        "stages {} and {} both feed the decoder at resolution 1/{}",
                        connections[*first].stage,
                        connections[*second].stage,
                        1u64 << level
                    ),
                })
            }
        };
        let conv = b.conv(&decoder_weight_name(k), ConvKind::Standard, joined, width, 3, ConvSpec::default(), spec.bias)?;
        cur = b.activation(&format!("{dec}.act"), act, conv)?;
    }
    if let Some(i) = used.iter().position(|u| !u) {
        let c = &connections[i];
        return Err(Error::Graph {
            edge: format!("{} -> decoder", c.name),
            message: format!("no decoder layer runs at resolution 1/{}", 1u64 << c.level),
        });
    }
    if level != 0 {
        return Err(Error::Graph {
            edge: HEAD_WEIGHT_NAME.to_string(),
            message: format!("decoder ends at resolution 1/{}", 1u64 << level),
        });
    }
    let head = b.conv(HEAD_WEIGHT_NAME, ConvKind::Standard, cur, 1, 3, ConvSpec::default(), spec.bias)?;
    b.scaled_sigmoid("head.sigmoid", head, DISPARITY_SCALE)?;

    let downsampled = spec.stages.iter().filter(|s| s.downsample).count() as u32;
    let mut g = b.finish(spec.seed, 1usize << downsampled)?;
    g.spec = Some(spec.clone());
    Ok(g)
}

/// Input shape and graph of a small random network for oracle tests.
pub struct RandomGraph<T: Element> {
    pub graph: NetworkGraph<T>,
    pub input: Shape,
}

/// Random layer sequence (at most `max_layers`) over convolutions of every
/// kind, activations, upsampling and concatenation; channel counts and
/// spatial dims never exceed `max_dim`.
pub fn random_graph<T: Element, R: Rng>(rng: &mut R, max_layers: usize, max_dim: usize) -> Result<RandomGraph<T>> {
    let max_dim = max_dim.max(2);
    let input = Shape::new(
        1,
        rng.gen_range(1..=max_dim.min(8)),
        rng.gen_range(1..=max_dim),
        rng.gen_range(1..=max_dim),
    );
    let mut b = GraphBuilder::new(input.c);
    let mut shapes: Vec<Shape> = Vec::new();
    let shape_of = |shapes: &[Shape], i: NodeInput| match i {
        NodeInput::Image => input,
        NodeInput::Node(j) => shapes[j],
    };
    let layers = rng.gen_range(1..=max_layers.max(1));
    let c_cap = max_dim.min(16);
    for i in 0..layers {
        let src = if i == 0 || rng.gen_bool(0.2) {
            if i == 0 {
                NodeInput::Image
            } else {
                NodeInput::Node(rng.gen_range(0..i))
            }
        } else {
            NodeInput::Node(i - 1)
        };
        let xs = shape_of(&shapes, src);
        let name = format!("layer{i}");
        let choice = rng.gen_range(0..6);
        let node = match choice {
            0..=2 => {
                let kind = [ConvKind::Standard, ConvKind::Depthwise, ConvKind::Pointwise][choice];
                let k = if kind == ConvKind::Pointwise { 1 } else { *[1, 3].get(rng.gen_range(0..2)).unwrap() };
                let dilation = if kind == ConvKind::Pointwise { 1 } else { rng.gen_range(1..=2) };
                let spec = ConvSpec {
                    stride: rng.gen_range(1..=2),
                    dilation,
                    ..ConvSpec::default()
                };
                let c_out = if kind == ConvKind::Depthwise { xs.c } else { rng.gen_range(1..=c_cap) };
                b.conv(&name, kind, src, c_out, k, spec, rng.gen_bool(0.5))?
            }
            3 => {
                let act = if rng.gen_bool(0.5) { Activation::Elu } else { Activation::Relu };
                b.activation(&name, act, src)?
            }
            4 if xs.h * 2 <= max_dim && xs.w * 2 <= max_dim => b.upsample(&name, src)?,
            _ => {
                let partners: Vec<NodeInput> = std::iter::once(NodeInput::Image)
                    .chain((0..i).map(NodeInput::Node))
                    .filter(|&p| {
                        let s = shape_of(&shapes, p);
                        (s.h, s.w) == (xs.h, xs.w) && s.c + xs.c <= max_dim
                    })
                    .collect();
                if partners.is_empty() {
                    b.conv(&name, ConvKind::Pointwise, src, rng.gen_range(1..=c_cap), 1, ConvSpec::default(), true)?
                } else {
                    let p = partners[rng.gen_range(0..partners.len())];
                    b.concat(&name, &[(src, EdgeKind::Data), (p, EdgeKind::Data)])?
                }
            }
        };
        let NodeInput::Node(idx) = node else { unreachable!() };
        let node = &b.nodes[idx];
        let out = match &node.op {
            LayerOp::Conv { kind, spec, .. } => {
                ops::geometry(*kind, xs, node.op.kernel_shape().expect("conv"), None, *spec)?.out_shape()
            }
            LayerOp::Upsample2x => Shape::new(xs.n, xs.c, xs.h * 2, xs.w * 2),
            LayerOp::Concat => Shape::new(xs.n, node.out_channels, xs.h, xs.w),
            _ => xs,
        };
        shapes.push(out);
    }
    let graph = b.finish(rng.gen(), 1)?;
    Ok(RandomGraph { graph, input })
}

impl fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeKind::Data => "data",
            EdgeKind::Cdc => "cdc",
            EdgeKind::Skip => "skip",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::profiler::{profile, profile_preset_sweep, REFERENCE_INPUT};

    #[test]
    fn presets_match_calibration() {
        let specs: Vec<GraphSpec> = (1..=4).map(|r| preset(&format!("rrnet-r{r}")).unwrap()).collect();
        let t = profile_preset_sweep(&specs, REFERENCE_INPUT).unwrap();
        let params: Vec<u64> = t.rows.iter().map(|r| r.params).collect();
        assert_eq!(params, vec![729_929, 842_273, 954_617, 1_066_961]);
        assert!(t.is_affine());
        assert_eq!(t.increments(), vec![112_344; 3]);
    }

    #[test]
    fn cdc_and_skip_structure() {
        let spec = preset("rrnet-r2").unwrap();
        let cdc = build::<f32>(&spec).unwrap();
        let skip = build::<f32>(&spec.with_connection(ConnectionMode::Skip)).unwrap();
        assert_eq!(cdc.reduction_layers().len(), 5);
        assert_eq!(skip.reduction_layers().len(), 0);
        assert_eq!(cdc.edges().iter().filter(|e| e.kind == EdgeKind::Cdc).count(), 5);
        assert_eq!(skip.edges().iter().filter(|e| e.kind == EdgeKind::Skip).count(), 5);
        for (name, t) in skip.weights() {
            assert_eq!(cdc.weights().get(name), Some(t), "{name}");
        }
    }

    #[test]
    fn decoder_pairs_by_stage() {
        let g = build::<f32>(&preset("rrnet-r1").unwrap()).unwrap();
        for k in 1..=5 {
            let to = g.nodes().iter().position(|n| n.name == format!("dec{k}.concat")).unwrap();
            let cdc: Vec<String> = g
                .edges()
                .iter()
                .filter(|e| e.to == to && e.kind == EdgeKind::Cdc)
                .map(|e| g.edge_name(e))
                .collect();
            assert_eq!(cdc, vec![format!("cdc{}.reduce -> dec{k}.concat", 6 - k)]);
        }
    }

    #[test]
    fn stride_first_everywhere_leaves_deepest_stage_unpaired() {
        let mut spec = preset("rrnet-r2").unwrap();
        for s in &mut spec.stages {
            s.stride_first = true;
        }
        let err = build::<f32>(&spec).unwrap_err();
        assert!(err.to_string().contains("cdc5.reduce -> decoder"), "{err}");
    }

    #[test]
    fn indivisible_input_suggests_size() {
        let g = build::<f32>(&preset("rrnet-r1").unwrap()).unwrap();
        let err = g.forward(&Tensor::zeros(Shape::new(1, 6, 60, 100)).unwrap()).unwrap_err();
        assert!(err.to_string().contains("64x96"), "{err}");
        assert!(g.forward(&Tensor::zeros(Shape::new(1, 3, 64, 64)).unwrap()).is_err());
    }

    #[test]
    fn shapes_restore_full_resolution() {
        let g = build::<f32>(&preset("rrnet-r1").unwrap()).unwrap();
        let shapes = g.infer_shapes(Shape::new(1, 6, 64, 128)).unwrap();
        assert_eq!(*shapes.last().unwrap(), Shape::new(1, 1, 64, 128));
        let deepest = shapes.iter().map(|s| s.h).min().unwrap();
        assert_eq!(deepest, 2);
        let rep = profile(&g, Shape::new(1, 6, 64, 128)).unwrap();
        assert_eq!(rep.params, g.param_count());
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let g = build::<f64>(&preset("rrnet-toy").unwrap()).unwrap();
        let shape = Shape::new(1, 6, 32, 64);
        let x = Tensor::from_vec(shape, (0..shape.numel()).map(|i| (i as f64 * 0.37).sin().abs()).collect()).unwrap();
        let plain = g.forward(&x).unwrap();
        let mut tape = Tape::new();
        let params = g.register(&mut tape, false);
        let xv = tape.leaf(x);
        let vars = g.forward_on_tape(&mut tape, xv, &params).unwrap();
        assert_eq!(tape.value(*vars.last().unwrap()), &plain);
    }

    #[test]
    fn weight_streams_depend_on_name_and_seed() {
        let a = he_normal::<f32>(1, "x", Shape::new(4, 4, 3, 3), 2.0);
        let b = he_normal::<f32>(1, "y", Shape::new(4, 4, 3, 3), 2.0);
        let c = he_normal::<f32>(2, "x", Shape::new(4, 4, 3, 3), 2.0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, he_normal::<f32>(1, "x", Shape::new(4, 4, 3, 3), 2.0));
        let wide = he_normal::<f64>(0, "w", Shape::new(256, 64, 3, 3), 2.0);
        let var = wide.data().iter().map(|v| v * v).sum::<f64>() / wide.len() as f64;
        assert!((var / (2.0 / 576.0) - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn set_weights_checks_names_and_shapes() {
        let mut g = build::<f32>(&preset("rrnet-toy").unwrap()).unwrap();
        let mut w = g.weights().clone();
        w.insert("bogus".into(), Tensor::zeros(Shape::new(1, 1, 1, 1)).unwrap());
        assert!(g.set_weights(w).is_err());
        let mut w = g.weights().clone();
        w.shift_remove("head.conv");
        assert!(matches!(g.set_weights(w), Err(Error::MissingWeight(_))));
        let w = g.weights().clone();
        g.set_weights(w).unwrap();
    }
}
