//! Twin-branch execution of a [`NetworkSpec`].
//!
//! The target image runs through the main branch and the query image through
//! the secondary branch. Backbone layers are applied to both with one set of
//! weights. An enabled joint layer convolves `query ⊕ target` (channel
//! concatenation, query first) and its output replaces the main-branch
//! feature map; the secondary branch keeps its own features. After the last
//! enabled joint layer only the main branch continues.

use rand::Rng;

use crate::arch::spec::{Head, JointPlacementMask, NetworkSpec};
use crate::error::{Error, Result};
use crate::numerics::init::kaiming_normal;
use crate::numerics::{Graph, LayerKind, ParamId, ParamStore, Tensor, Var};

/// Shape of one branch's feature map, without the batch axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureShape {
    Map { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl FeatureShape {
    pub fn channels(&self) -> usize {
        match *self {
            FeatureShape::Map { c, .. } => c,
            FeatureShape::Flat(f) => f,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            FeatureShape::Map { c, h, w } => vec![c, h, w],
            FeatureShape::Flat(f) => vec![f],
        }
    }

    fn flat_len(&self) -> usize {
        match *self {
            FeatureShape::Map { c, h, w } => c * h * w,
            FeatureShape::Flat(f) => f,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepAction {
    /// Backbone layer run on the main branch, and on the secondary branch
    /// when `secondary` is set.
    Backbone { secondary: bool },
    /// Joint layer; `last` marks the final one, after which the secondary
    /// branch is dropped.
    Joint { last: bool },
}

/// One executable layer of a planned network.
#[derive(Clone, Debug)]
pub struct Step {
    pub layer: usize,
    pub name: String,
    pub kind: LayerKind,
    pub action: StepAction,
    pub params: Option<(ParamId, ParamId)>,
    pub activate: bool,
    pub main_out: FeatureShape,
    pub secondary_out: Option<FeatureShape>,
}

/// Symbolic shape propagation through a spec under a joint mask. Fails on
/// any channel or spatial inconsistency, naming the offending layer.
pub fn plan(spec: &NetworkSpec, mask: &JointPlacementMask) -> Result<Vec<Step>> {
    let err = |layer: &str, reason: String| Error::Construction {
        layer: layer.to_string(),
        reason,
    };
    if mask.len() != spec.joint_count() {
        return Err(err(
            &spec.name,
            format!(
                "mask has {} flags for {} joint layers",
                mask.len(),
                spec.joint_count()
            ),
        ));
    }
    if !mask.any() {
        return Err(err(&spec.name, "no joint layer enabled; branches never interact".into()));
    }
    let last_joint = spec
        .layers
        .iter()
        .rposition(|l| l.joint.is_some_and(|n| mask.is_enabled(n)))
        .expect("mask has an enabled joint");
    let last_layer = spec.layers.len() - 1;

    let mut main = FeatureShape::Map {
        c: spec.in_channels,
        h: spec.target_size,
        w: spec.target_size,
    };
    let mut sec = Some(FeatureShape::Map {
        c: spec.in_channels,
        h: spec.query_size,
        w: spec.query_size,
    });
    let mut steps = Vec::new();

    for (idx, layer) in spec.layers.iter().enumerate() {
        layer.kind.validate().map_err(|r| err(&layer.name, r))?;
        if let Some(n) = layer.joint {
            if !mask.is_enabled(n) {
                continue;
            }
            let LayerKind::Conv2d { out_channels, kernel, stride, padding } = layer.kind else {
                return Err(err(&layer.name, "joint layers must be convolutions".into()));
            };
            let s = sec.ok_or_else(|| err(&layer.name, "secondary branch already merged".into()))?;
            let (FeatureShape::Map { c: mc, h: mh, w: mw }, FeatureShape::Map { c: sc, h: sh, w: sw }) =
                (main, s)
            else {
                return Err(err(&layer.name, "joint layer after flatten".into()));
            };
            if (mh, mw) != (sh, sw) {
                return Err(err(
                    &layer.name,
                    format!("branch feature maps disagree: target {mh}x{mw}, query {sh}x{sw}"),
                ));
            }
            if mc != sc {
                return Err(err(
                    &layer.name,
                    format!("branches carry {mc} and {sc} channels"),
                ));
            }
            if out_channels != mc {
                return Err(err(
                    &layer.name,
                    format!(
                        "outputs {out_channels} channels but the next backbone layer expects {mc}"
                    ),
                ));
            }
            let (ho, wo) = conv_out(&layer.name, mh, mw, kernel, stride, padding)?;
            main = FeatureShape::Map { c: out_channels, h: ho, w: wo };
            let last = idx == last_joint;
            if last {
                sec = None;
            }
            steps.push(Step {
                layer: idx,
                name: layer.name.clone(),
                kind: layer.kind,
                action: StepAction::Joint { last },
                params: None,
                activate: idx != last_layer,
                main_out: main,
                secondary_out: sec,
            });
            continue;
        }

        let apply = |shape: FeatureShape| -> Result<FeatureShape> {
            match (layer.kind, shape) {
                (
                    LayerKind::Conv2d { out_channels, kernel, stride, padding },
                    FeatureShape::Map { h, w, .. },
                ) => {
                    let (ho, wo) = conv_out(&layer.name, h, w, kernel, stride, padding)?;
                    Ok(FeatureShape::Map { c: out_channels, h: ho, w: wo })
                }
                (LayerKind::MaxPool2d { kernel, stride }, FeatureShape::Map { c, h, w }) => {
                    if kernel > h || kernel > w {
                        return Err(err(&layer.name, format!("pool {kernel} larger than {h}x{w}")));
                    }
                    let (ho, wo) = conv_out(&layer.name, h, w, kernel, stride, 0)?;
                    Ok(FeatureShape::Map { c, h: ho, w: wo })
                }
                (LayerKind::Linear { out_features }, s) => {
                    let _ = s.flat_len();
                    Ok(FeatureShape::Flat(out_features))
                }
                (kind, s) => Err(err(
                    &layer.name,
                    format!("{kind:?} cannot follow a {s:?} feature"),
                )),
            }
        };
        main = apply(main)?;
        let secondary = sec.is_some() && !layer.target_only;
        if secondary {
            sec = Some(apply(sec.expect("checked"))?);
        }
        steps.push(Step {
            layer: idx,
            name: layer.name.clone(),
            kind: layer.kind,
            action: StepAction::Backbone { secondary },
            params: None,
            activate: matches!(layer.kind, LayerKind::Conv2d { .. } | LayerKind::Linear { .. })
                && idx != last_layer,
            main_out: main,
            secondary_out: sec,
        });
    }
    Ok(steps)
}

fn conv_out(
    layer: &str,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    use crate::numerics::ops::window_out;
    match (window_out(h, kernel, stride, padding), window_out(w, kernel, stride, padding)) {
        (Some(ho), Some(wo)) => Ok((ho, wo)),
        _ => Err(Error::Construction {
            layer: layer.to_string(),
            reason: format!("{kernel}x{kernel}/{stride} pad {padding} does not fit {h}x{w}"),
        }),
    }
}

/// Per-layer shapes observed during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub name: String,
    pub main: Vec<usize>,
    pub secondary: Option<Vec<usize>>,
}

/// A built twin network: planned steps plus the parameters they reference.
#[derive(Clone, Debug)]
pub struct TwinNetwork {
    spec: NetworkSpec,
    mask: JointPlacementMask,
    steps: Vec<Step>,
    params: ParamStore,
}

impl TwinNetwork {
    pub fn build<R: Rng + ?Sized>(
        spec: &NetworkSpec,
        mask: &JointPlacementMask,
        rng: &mut R,
    ) -> Result<Self> {
        let mut steps = plan(spec, mask)?;
        let mut params = ParamStore::new();
        let mut main_in = FeatureShape::Map {
            c: spec.in_channels,
            h: spec.target_size,
            w: spec.target_size,
        };
        for step in &mut steps {
            let in_ch = match step.action {
                StepAction::Joint { .. } => 2 * main_in.channels(),
                StepAction::Backbone { .. } => main_in.channels(),
            };
            match step.kind {
                LayerKind::Conv2d { out_channels, kernel, .. } => {
                    let w = params.add(
                        format!("{}.weight", step.name),
                        kaiming_normal(&[out_channels, in_ch, kernel, kernel], rng),
                    );
                    let b = params.add(format!("{}.bias", step.name), Tensor::zeros(&[out_channels]));
                    step.params = Some((w, b));
                }
                LayerKind::Linear { out_features } => {
                    let fan_in = main_in.flat_len();
                    let w = params.add(
                        format!("{}.weight", step.name),
                        kaiming_normal(&[out_features, fan_in], rng),
                    );
                    let b = params.add(format!("{}.bias", step.name), Tensor::zeros(&[out_features]));
                    step.params = Some((w, b));
                }
                _ => {}
            }
            main_in = step.main_out;
        }
        Ok(TwinNetwork {
            spec: spec.clone(),
            mask: mask.clone(),
            steps,
            params,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mask(&self) -> &JointPlacementMask {
        &self.mask
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Every trainable parameter, each exactly once, in construction order.
    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Weight and bias ids used by `layer` on the given branch, or `None` if
    /// that branch does not run the layer.
    pub fn branch_params(&self, layer: &str, secondary: bool) -> Option<(ParamId, ParamId)> {
        let step = self.steps.iter().find(|s| s.name == layer)?;
        match step.action {
            StepAction::Backbone { secondary: runs } if secondary && !runs => None,
            StepAction::Joint { .. } if secondary => None,
            _ => step.params,
        }
    }

    fn check_input(&self, t: &Tensor, size: usize, what: &str) -> Result<usize> {
        let (n, c, h, w) = t.dims4()?;
        if c != self.spec.in_channels || h != size || w != size {
            return Err(Error::Dimension(format!(
                "{what} image must be [N, {}, {size}, {size}], got {:?}",
                self.spec.in_channels,
                t.shape()
            )));
        }
        Ok(n)
    }

    /// Records the forward pass on `graph`, returning the head output and a
    /// per-layer shape trace.
    pub fn forward_graph(
        &self,
        graph: &mut Graph,
        query: Tensor,
        target: Tensor,
    ) -> Result<(Var, Vec<TraceEntry>)> {
        let nq = self.check_input(&query, self.spec.query_size, "query")?;
        let nt = self.check_input(&target, self.spec.target_size, "target")?;
        if nq != nt {
            return Err(Error::Dimension(format!(
                "query batch {nq} differs from target batch {nt}"
            )));
        }
        let params = &self.params;
        let slope = self.spec.activation_slope;
        let mut main = graph.input(target);
        let mut sec = Some(graph.input(query));
        let mut trace = Vec::with_capacity(self.steps.len());

        let run = |g: &mut Graph, step: &Step, x: Var| -> Result<Var> {
            let y = match step.kind {
                LayerKind::Conv2d { stride, padding, .. } => {
                    let (w, b) = step.params.expect("conv has params");
                    g.conv2d(params, x, w, b, stride, padding)?
                }
                LayerKind::MaxPool2d { kernel, stride } => g.maxpool2d(x, kernel, stride)?,
                LayerKind::Linear { .. } => {
                    let (w, b) = step.params.expect("linear has params");
                    let x = if g.value(x).ndim() == 2 { x } else { g.flatten(x)? };
                    g.linear(params, x, w, b)?
                }
                other => {
                    return Err(Error::Construction {
                        layer: step.name.clone(),
                        reason: format!("{other:?} is not a table layer"),
                    })
                }
            };
            Ok(if step.activate { g.leaky_relu(y, slope) } else { y })
        };

        for step in &self.steps {
            match step.action {
                StepAction::Backbone { secondary } => {
                    main = run(graph, step, main)?;
                    if secondary {
                        let s = sec.expect("secondary branch active");
                        sec = Some(run(graph, step, s)?);
                    }
                }
                StepAction::Joint { last } => {
                    let s = sec.expect("secondary branch active at joint");
                    let cat = graph.concat_channels(s, main)?;
                    main = run(graph, step, cat)?;
                    if last {
                        sec = None;
                    }
                }
            }
            trace.push(TraceEntry {
                name: step.name.clone(),
                main: graph.value(main).shape()[1..].to_vec(),
                secondary: sec.map(|s| graph.value(s).shape()[1..].to_vec()),
            });
        }
        if self.spec.head == Head::Sigmoid {
            main = graph.sigmoid(main);
        }
        Ok((main, trace))
    }

    /// Inference-only forward pass.
    pub fn forward(&self, query: &Tensor, target: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let (out, _) = self.forward_graph(&mut g, query.clone(), target.clone())?;
        let out = g.value(out).clone();
        if !out.is_finite() {
            return Err(Error::Training("network produced non-finite output".into()));
        }
        Ok(out)
    }
}
