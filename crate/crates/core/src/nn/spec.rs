//! Declarative layer graphs, shape inference and the line-oriented text
//! serialization used next to checkpoints.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{OocsError, Result};
use crate::kernels::{DogParams, KernelMatrix, KernelProfile, Polarity};

/// Spatial shape of one sample: height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c }
    }

    pub fn len(&self) -> usize {
        self.h * self.w * self.c
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.h, self.w, self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Pathway {
    #[default]
    Trunk,
    On,
    Off,
}

impl fmt::Display for Pathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pathway::Trunk => "trunk",
            Pathway::On => "on",
            Pathway::Off => "off",
        })
    }
}

impl FromStr for Pathway {
    type Err = OocsError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trunk" => Ok(Pathway::Trunk),
            "on" => Ok(Pathway::On),
            "off" => Ok(Pathway::Off),
            other => Err(OocsError::Spec(format!("unknown pathway `{other}`"))),
        }
    }
}

/// Fixed on/off response added to a feature map. The response is computed
/// from the node's second input, averaged over its channels, average-pooled
/// by `downsample` and broadcast over the feature channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualSpec {
    pub kernel_size: usize,
    pub gamma: f64,
    pub polarity: Polarity,
    pub profile: KernelProfile,
    pub downsample: usize,
}

impl ResidualSpec {
    pub fn dog_params(&self) -> Result<DogParams> {
        DogParams::new(self.kernel_size, self.gamma, self.polarity)
    }

    pub fn kernel(&self) -> Result<KernelMatrix> {
        self.dog_params()?.kernel(self.profile)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input { height: usize, width: usize, channels: usize },
    /// 3x3 kernel, stride 1, same padding.
    Conv2D { filters: usize },
    MaxPool2x2,
    Dense { units: usize },
    ReLU,
    Flatten,
    Dropout { rate: f64 },
    Concat,
    FixedDogResidual(ResidualSpec),
    SoftmaxCE,
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "Input",
            LayerKind::Conv2D { .. } => "Conv2D",
            LayerKind::MaxPool2x2 => "MaxPool2x2",
            LayerKind::Dense { .. } => "Dense",
            LayerKind::ReLU => "ReLU",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dropout { .. } => "Dropout",
            LayerKind::Concat => "Concat",
            LayerKind::FixedDogResidual(_) => "FixedDogResidual",
            LayerKind::SoftmaxCE => "SoftmaxCE",
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, LayerKind::Conv2D { .. } | LayerKind::Dense { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    pub pathway: Pathway,
}

/// A layer graph listed in topological order: every node only consumes
/// nodes declared before it. The first node is the input, the last the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub nodes: Vec<Node>,
}

impl NetworkSpec {
    /// A spec holding only an input node called `input`.
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            nodes: vec![Node {
                name: "input".into(),
                kind: LayerKind::Input {
                    height,
                    width,
                    channels,
                },
                inputs: vec![],
                pathway: Pathway::Trunk,
            }],
        }
    }

    pub fn push(&mut self, name: &str, kind: LayerKind, inputs: &[&str], pathway: Pathway) -> &mut Self {
        self.nodes.push(Node {
            name: name.into(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            pathway,
        });
        self
    }

    /// Appends a trunk node fed by the previously declared node.
    pub fn chain(&mut self, name: &str, kind: LayerKind) -> &mut Self {
        let prev = self.nodes.last().map(|n| n.name.clone()).unwrap_or_default();
        self.push(name, kind, &[&prev], Pathway::Trunk)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn node(&self, name: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub fn input_shape(&self) -> Option<Shape> {
        match self.nodes.first()?.kind {
            LayerKind::Input {
                height,
                width,
                channels,
            } => Some(Shape::new(height, width, channels)),
            _ => None,
        }
    }

    /// Nodes that consume `name`, in declaration order.
    pub fn consumers(&self, name: &str) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.inputs.iter().any(|i| i == name))
            .map(|(i, _)| i)
            .collect()
    }

    /// Validates structure and attributes and infers every node's output shape.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let first = self
            .nodes
            .first()
            .ok_or_else(|| OocsError::Spec("empty network".into()))?;
        if !matches!(first.kind, LayerKind::Input { .. }) {
            return Err(OocsError::Spec("the first node must be the input".into()));
        }
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let fail = |detail: String| OocsError::Shape {
                node: node.name.clone(),
                detail,
            };
            if node.name.is_empty() || node.name.contains(char::is_whitespace) || node.name.contains(',') {
                return Err(OocsError::Spec(format!("invalid node name `{}`", node.name)));
            }
            let mut ins = Vec::with_capacity(node.inputs.len());
            for input in &node.inputs {
                let j = *index.get(input.as_str()).ok_or_else(|| {
                    OocsError::Spec(format!(
                        "node `{}` consumes `{input}`, which is not declared before it",
                        node.name
                    ))
                })?;
                ins.push(shapes[j]);
            }
            let arity = match node.kind {
                LayerKind::Input { .. } => 0..=0,
                LayerKind::Concat => 2..=usize::MAX,
                LayerKind::FixedDogResidual(_) => 2..=2,
                _ => 1..=1,
            };
            if !arity.contains(&ins.len()) {
                return Err(fail(format!("{} takes {:?} inputs, got {}", node.kind.name(), arity, ins.len())));
            }
            let shape = match &node.kind {
                LayerKind::Input {
                    height,
                    width,
                    channels,
                } => {
                    if i != 0 {
                        return Err(OocsError::Spec("only the first node may be an input".into()));
                    }
                    if *height == 0 || *width == 0 || *channels == 0 {
                        return Err(fail("input dimensions must be positive".into()));
                    }
                    Shape::new(*height, *width, *channels)
                }
                LayerKind::Conv2D { filters } => {
                    if *filters == 0 {
                        return Err(fail("filters must be at least 1".into()));
                    }
                    Shape::new(ins[0].h, ins[0].w, *filters)
                }
                LayerKind::MaxPool2x2 => {
                    if ins[0].h < 2 || ins[0].w < 2 {
                        return Err(fail(format!("cannot pool a {} map", ins[0])));
                    }
                    Shape::new(ins[0].h / 2, ins[0].w / 2, ins[0].c)
                }
                LayerKind::Dense { units } => {
                    if *units == 0 {
                        return Err(fail("units must be at least 1".into()));
                    }
                    Shape::new(1, 1, *units)
                }
                LayerKind::ReLU => ins[0],
                LayerKind::Flatten => Shape::new(1, 1, ins[0].len()),
                LayerKind::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(fail(format!("dropout rate must lie in [0, 1), got {rate}")));
                    }
                    ins[0]
                }
                LayerKind::Concat => {
                    let (h, w) = (ins[0].h, ins[0].w);
                    if let Some(bad) = ins.iter().find(|s| (s.h, s.w) != (h, w)) {
                        return Err(fail(format!("concat inputs disagree spatially: {} vs {bad}", ins[0])));
                    }
                    Shape::new(h, w, ins.iter().map(|s| s.c).sum())
                }
                LayerKind::FixedDogResidual(r) => {
                    if r.downsample == 0 {
                        return Err(fail("downsample factor must be at least 1".into()));
                    }
                    r.kernel().map_err(|e| fail(e.to_string()))?;
                    let (feat, src) = (ins[0], ins[1]);
                    if src.h / r.downsample != feat.h || src.w / r.downsample != feat.w {
                        return Err(fail(format!(
                            "source {src} pooled by {} does not match feature map {feat}",
                            r.downsample
                        )));
                    }
                    feat
                }
                LayerKind::SoftmaxCE => {
                    if i + 1 != self.nodes.len() {
                        return Err(fail("the loss must be the last node".into()));
                    }
                    if ins[0].h != 1 || ins[0].w != 1 {
                        return Err(fail(format!("expects class scores, got {}", ins[0])));
                    }
                    ins[0]
                }
            };
            if index.insert(&node.name, i).is_some() {
                return Err(OocsError::Spec(format!("duplicate node name `{}`", node.name)));
            }
            shapes.push(shape);
        }
        if !matches!(self.nodes.last().map(|n| &n.kind), Some(LayerKind::SoftmaxCE)) {
            return Err(OocsError::Spec("the last node must be SoftmaxCE".into()));
        }
        let last = self.nodes.len() - 1;
        for (i, node) in self.nodes.iter().enumerate().take(last) {
            if self.consumers(&node.name).is_empty() {
                return Err(OocsError::Spec(format!("node `{}` (#{i}) is never consumed", node.name)));
            }
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.shapes()?.last().expect("validated spec is non-empty"))
    }

    /// One node per line: `name Kind key=value ... inputs=a,b pathway=p`.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# oocs network v1\n");
        for node in &self.nodes {
            let mut fields = vec![node.name.clone(), node.kind.name().to_string()];
            match &node.kind {
                LayerKind::Input {
                    height,
                    width,
                    channels,
                } => fields.extend([
                    format!("height={height}"),
                    format!("width={width}"),
                    format!("channels={channels}"),
                ]),
                LayerKind::Conv2D { filters } => fields.push(format!("filters={filters}")),
                LayerKind::Dense { units } => fields.push(format!("units={units}")),
                LayerKind::Dropout { rate } => fields.push(format!("rate={rate}")),
                LayerKind::FixedDogResidual(r) => fields.extend([
                    format!("size={}", r.kernel_size),
                    format!("gamma={}", r.gamma),
                    format!("polarity={}", r.polarity),
                    format!("profile={}", r.profile),
                    format!("downsample={}", r.downsample),
                ]),
                LayerKind::MaxPool2x2
                | LayerKind::ReLU
                | LayerKind::Flatten
                | LayerKind::Concat
                | LayerKind::SoftmaxCE => {}
            }
            if !node.inputs.is_empty() {
                fields.push(format!("inputs={}", node.inputs.join(",")));
            }
            fields.push(format!("pathway={}", node.pathway));
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut nodes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| OocsError::Spec(format!("line {}: {msg}", lineno + 1));
            let mut tokens = line.split_whitespace();
            let name = tokens.next().ok_or_else(|| err("missing node name".into()))?;
            let kind_name = tokens.next().ok_or_else(|| err("missing layer kind".into()))?;
            let mut attrs: HashMap<&str, &str> = HashMap::new();
            for tok in tokens {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                attrs.insert(k, v);
            }
            let get = |key: &str| -> Result<&str> {
                attrs
                    .get(key)
                    .copied()
                    .ok_or_else(|| err(format!("{kind_name} needs `{key}`")))
            };
            let num = |key: &str| -> Result<usize> {
                let v = get(key)?;
                v.parse().map_err(|_| err(format!("bad integer `{v}` for `{key}`")))
            };
            let real = |key: &str| -> Result<f64> {
                let v = get(key)?;
                v.parse().map_err(|_| err(format!("bad number `{v}` for `{key}`")))
            };
            let kind = match kind_name {
                "Input" => LayerKind::Input {
                    height: num("height")?,
                    width: num("width")?,
                    channels: num("channels")?,
                },
                "Conv2D" => LayerKind::Conv2D {
                    filters: num("filters")?,
                },
                "MaxPool2x2" => LayerKind::MaxPool2x2,
                "Dense" => LayerKind::Dense { units: num("units")? },
                "ReLU" => LayerKind::ReLU,
                "Flatten" => LayerKind::Flatten,
                "Dropout" => LayerKind::Dropout { rate: real("rate")? },
                "Concat" => LayerKind::Concat,
                "FixedDogResidual" => LayerKind::FixedDogResidual(ResidualSpec {
                    kernel_size: num("size")?,
                    gamma: real("gamma")?,
                    polarity: get("polarity")?.parse()?,
                    profile: get("profile")?.parse()?,
                    downsample: num("downsample")?,
                }),
                "SoftmaxCE" => LayerKind::SoftmaxCE,
                other => return Err(err(format!("unknown layer kind `{other}`"))),
            };
            let inputs = attrs
                .get("inputs")
                .map(|s| s.split(',').map(String::from).collect())
                .unwrap_or_default();
            let pathway = attrs.get("pathway").map(|p| p.parse()).transpose()?.unwrap_or_default();
            nodes.push(Node {
                name: name.into(),
                kind,
                inputs,
                pathway,
            });
        }
        let spec = NetworkSpec { nodes };
        spec.shapes()?;
        Ok(spec)
    }

    /// First eight bytes (little-endian) of the SHA-256 of the text form.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut b = [0u8; 8];
        b.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(b)
    }
}
