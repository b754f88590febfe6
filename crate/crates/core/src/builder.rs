//! Turns a plain chain network into its on/off variant: a segment of the
//! chain is duplicated into two half-width pathways, each receives a fixed
//! center-surround response of opposite polarity, and the pathways are
//! concatenated back to the original width.

use std::fmt;

use crate::error::{OocsError, Result};
use crate::kernels::{DogParams, KernelProfile, Polarity};
use crate::nn::{param_count, LayerKind, NetworkSpec, Node, Pathway, ResidualSpec, Shape};

/// Where the fixed responses are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResponseSource {
    /// The raw network input.
    #[default]
    NetworkInput,
    /// The tensor entering the split segment.
    PathwayInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OocsConfig {
    pub split_start: String,
    pub split_end: String,
    /// Kernel size and ratio; the polarity field is ignored (each pathway
    /// gets its own).
    pub dog: DogParams,
    pub profile: KernelProfile,
    /// Base node (inside the split) after which the response is added.
    pub insertion_node: String,
    pub response_source: ResponseSource,
}

impl OocsConfig {
    /// Split exactly one segment, add the response right after `insertion`.
    pub fn new(split_start: &str, split_end: &str, insertion: &str, dog: DogParams) -> Self {
        Self {
            split_start: split_start.into(),
            split_end: split_end.into(),
            dog,
            profile: KernelProfile::Dog,
            insertion_node: insertion.into(),
            response_source: ResponseSource::NetworkInput,
        }
    }
}

pub const CONCAT_NODE: &str = "oocs_concat";

fn pathway_name(p: Pathway, base: &str) -> String {
    format!("{p}_{base}")
}

fn residual_name(p: Pathway, base: &str) -> String {
    format!("{p}_{base}_res")
}

/// Indices `start..=end` of the split segment after checking it is a plain
/// chain of Conv2D/ReLU/MaxPool nodes with even filter counts.
fn split_range(base: &NetworkSpec, cfg: &OocsConfig) -> Result<(usize, usize)> {
    let s = base
        .index_of(&cfg.split_start)
        .ok_or_else(|| OocsError::UnknownNode(cfg.split_start.clone()))?;
    let e = base
        .index_of(&cfg.split_end)
        .ok_or_else(|| OocsError::UnknownNode(cfg.split_end.clone()))?;
    if base.index_of(&cfg.insertion_node).is_none() {
        return Err(OocsError::UnknownNode(cfg.insertion_node.clone()));
    }
    if e < s {
        return Err(OocsError::NotAChain(format!(
            "`{}` comes after `{}`",
            cfg.split_start, cfg.split_end
        )));
    }
    let ins = base.index_of(&cfg.insertion_node).unwrap();
    if ins < s || ins > e {
        return Err(OocsError::NotAChain(format!(
            "insertion node `{}` is outside the split range",
            cfg.insertion_node
        )));
    }
    if s == 0 {
        return Err(OocsError::NotAChain("the input node cannot be split".into()));
    }
    for i in s..=e {
        let node = &base.nodes[i];
        match node.kind {
            LayerKind::Conv2D { filters } if filters % 2 != 0 => {
                return Err(OocsError::OddFilters {
                    node: node.name.clone(),
                    filters,
                })
            }
            LayerKind::Conv2D { .. } | LayerKind::ReLU | LayerKind::MaxPool2x2 => {}
            ref other => {
                return Err(OocsError::NotAChain(format!(
                    "`{}` is a {} node; only Conv2D, ReLU and MaxPool2x2 can be split",
                    node.name,
                    other.name()
                )))
            }
        }
        if node.inputs.len() != 1 || (i > s && node.inputs[0] != base.nodes[i - 1].name) {
            return Err(OocsError::NotAChain(format!(
                "`{}` does not read only from its predecessor",
                node.name
            )));
        }
        let consumers = base.consumers(&node.name);
        let ok = if i < e {
            consumers == [i + 1]
        } else {
            consumers.len() == 1
        };
        if !ok {
            return Err(OocsError::NotAChain(format!(
                "`{}` has {} consumers; the segment must be a plain chain",
                node.name,
                consumers.len()
            )));
        }
    }
    if !base.nodes[s..=e].iter().any(|n| matches!(n.kind, LayerKind::Conv2D { .. })) {
        return Err(OocsError::NotAChain("split range contains no Conv2D node".into()));
    }
    Ok((s, e))
}

/// Builds the on/off variant of `base` described by `cfg`.
///
/// The result's trainable parameter count equals the base count whenever the
/// segment holds a single convolution; every further convolution inside the
/// segment sees half the input channels and loses half its weights.
pub fn build_oocs_network(base: &NetworkSpec, cfg: &OocsConfig) -> Result<NetworkSpec> {
    let shapes = base.shapes()?;
    let (s, e) = split_range(base, cfg)?;
    let ins = base.index_of(&cfg.insertion_node).unwrap();
    let entry = base.nodes[s].inputs[0].clone();
    let source = match cfg.response_source {
        ResponseSource::NetworkInput => base.nodes[0].name.clone(),
        ResponseSource::PathwayInput => entry.clone(),
    };
    let src_shape = shapes[base.index_of(&source).unwrap()];
    let feat = shapes[ins];
    if feat.h == 0 || src_shape.h % feat.h != 0 || src_shape.w % feat.w != 0 || src_shape.h / feat.h != src_shape.w / feat.w {
        return Err(OocsError::Shape {
            node: cfg.insertion_node.clone(),
            detail: format!("response source {src_shape} does not pool evenly onto {feat}"),
        });
    }
    let downsample = src_shape.h / feat.h;
    // validates the kernel before any node is emitted
    let _ = cfg.dog.kernel(cfg.profile)?;

    let mut out = NetworkSpec { nodes: base.nodes[..s].to_vec() };
    let mut last = Vec::new();
    for pathway in [Pathway::On, Pathway::Off] {
        let mut prev = entry.clone();
        for node in &base.nodes[s..=e] {
            let kind = match node.kind {
                LayerKind::Conv2D { filters } => LayerKind::Conv2D { filters: filters / 2 },
                ref k => k.clone(),
            };
            let name = pathway_name(pathway, &node.name);
            out.nodes.push(Node {
                name: name.clone(),
                kind,
                inputs: vec![prev],
                pathway,
            });
            prev = name;
            if node.name == cfg.insertion_node {
                let polarity = if pathway == Pathway::On { Polarity::On } else { Polarity::Off };
                let res = residual_name(pathway, &node.name);
                out.nodes.push(Node {
                    name: res.clone(),
                    kind: LayerKind::FixedDogResidual(ResidualSpec {
                        kernel_size: cfg.dog.kernel_size,
                        gamma: cfg.dog.gamma,
                        polarity,
                        profile: cfg.profile,
                        downsample,
                    }),
                    inputs: vec![prev, source.clone()],
                    pathway,
                });
                prev = res;
            }
        }
        last.push(prev);
    }
    out.nodes.push(Node {
        name: CONCAT_NODE.into(),
        kind: LayerKind::Concat,
        inputs: last,
        pathway: Pathway::Trunk,
    });
    let end_name = &base.nodes[e].name;
    for node in &base.nodes[e + 1..] {
        let mut node = node.clone();
        for input in &mut node.inputs {
            if input == end_name {
                *input = CONCAT_NODE.into();
            }
        }
        out.nodes.push(node);
    }
    out.shapes()?;
    Ok(out)
}

/// Outcome of [`validate_equivalence`]. `failures` is empty on success.
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub base_params: usize,
    pub oocs_params: usize,
    pub base_input: Option<Shape>,
    pub oocs_input: Option<Shape>,
    pub base_output: Option<Shape>,
    pub oocs_output: Option<Shape>,
    pub on_residuals: usize,
    pub off_residuals: usize,
    pub failures: Vec<String>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for EquivalenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "params base={} oocs={}; residuals on={} off={}; ",
            self.base_params, self.oocs_params, self.on_residuals, self.off_residuals
        )?;
        if self.passed() {
            write!(f, "pass")
        } else {
            write!(f, "fail: {}", self.failures.join("; "))
        }
    }
}

/// Checks that `oocs` is a faithful on/off variant of `base`: equal parameter
/// counts, equal input and output shapes, and exactly one On and one Off
/// residual whose kernels negate each other.
pub fn validate_equivalence(base: &NetworkSpec, oocs: &NetworkSpec) -> EquivalenceReport {
    let mut failures = Vec::new();
    let mut shape_of = |spec: &NetworkSpec, label: &str| -> (usize, Option<Shape>, Option<Shape>) {
        match (param_count(spec), spec.input_shape(), spec.output_shape()) {
            (Ok(p), input, Ok(o)) => (p, input, Some(o)),
            (Err(err), ..) | (_, _, Err(err)) => {
                failures.push(format!("{label} network does not resolve: {err}"));
                (0, spec.input_shape(), None)
            }
        }
    };
    let (base_params, base_input, base_output) = shape_of(base, "base");
    let (oocs_params, oocs_input, oocs_output) = shape_of(oocs, "oocs");
    if base_params != oocs_params {
        failures.push(format!(
            "parameter counts differ: base {base_params}, oocs {oocs_params}"
        ));
    }
    if base_input != oocs_input {
        failures.push("input shapes differ".into());
    }
    if base_output != oocs_output {
        failures.push("output shapes differ".into());
    }
    let residuals: Vec<&ResidualSpec> = oocs
        .nodes
        .iter()
        .filter_map(|n| match &n.kind {
            LayerKind::FixedDogResidual(r) => Some(r),
            _ => None,
        })
        .collect();
    let on: Vec<_> = residuals.iter().filter(|r| r.polarity == Polarity::On).collect();
    let off: Vec<_> = residuals.iter().filter(|r| r.polarity == Polarity::Off).collect();
    if residuals.is_empty() {
        failures.push("missing residual nodes".into());
    } else if on.len() != 1 || off.len() != 1 {
        failures.push(format!(
            "polarity check: expected one On and one Off residual, found {} On and {} Off",
            on.len(),
            off.len()
        ));
    } else {
        match (on[0].kernel(), off[0].kernel()) {
            (Ok(a), Ok(b)) => {
                let negated = a.weights().iter().zip(b.weights()).all(|(x, y)| *x == -*y)
                    && a.size() == b.size();
                if !negated {
                    failures.push("polarity check: On and Off kernels are not negations".into());
                }
            }
            (Err(err), _) | (_, Err(err)) => failures.push(format!("residual kernel invalid: {err}")),
        }
    }
    EquivalenceReport {
        base_params,
        oocs_params,
        base_input,
        oocs_input,
        base_output,
        oocs_output,
        on_residuals: on.len(),
        off_residuals: off.len(),
        failures,
    }
}

/// The default 28x28 digit classifier.
pub fn mnist_base() -> NetworkSpec {
    let mut s = NetworkSpec::new(28, 28, 1);
    s.chain("conv1", LayerKind::Conv2D { filters: 32 })
        .chain("relu1", LayerKind::ReLU)
        .chain("conv2", LayerKind::Conv2D { filters: 32 })
        .chain("relu2", LayerKind::ReLU)
        .chain("pool1", LayerKind::MaxPool2x2)
        .chain("conv3", LayerKind::Conv2D { filters: 64 })
        .chain("relu3", LayerKind::ReLU)
        .chain("pool2", LayerKind::MaxPool2x2)
        .chain("flatten", LayerKind::Flatten)
        .chain("fc1", LayerKind::Dense { units: 128 })
        .chain("relu4", LayerKind::ReLU)
        .chain("dropout", LayerKind::Dropout { rate: 0.5 })
        .chain("fc2", LayerKind::Dense { units: 10 })
        .chain("loss", LayerKind::SoftmaxCE);
    s
}

/// Split of the first conv block of [`mnist_base`], response added after the
/// pathway ReLU.
pub fn mnist_oocs_config(kernel_size: usize, gamma: f64, profile: KernelProfile) -> Result<OocsConfig> {
    let dog = DogParams::new(kernel_size, gamma, Polarity::On)?;
    Ok(OocsConfig {
        profile,
        ..OocsConfig::new("conv1", "relu1", "relu1", dog)
    })
}

pub fn mnist_oocs(kernel_size: usize, gamma: f64, profile: KernelProfile) -> Result<NetworkSpec> {
    build_oocs_network(&mnist_base(), &mnist_oocs_config(kernel_size, gamma, profile)?)
}
