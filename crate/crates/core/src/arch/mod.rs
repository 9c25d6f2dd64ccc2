//! The recognizer (twin AlexNet, three joint layers) and the detector (twin
//! DarkNet19, up to five joint layers).

mod network;
mod spec;

pub use network::{plan, FeatureShape, Step, StepAction, TraceEntry, TwinNetwork};
pub use spec::{
    DetectorSpec, Head, JointPlacementMask, LayerDef, NetworkSpec, Preset, RecognizerSpec,
};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Recognizer {
    pub spec: RecognizerSpec,
    pub net: TwinNetwork,
}

impl Recognizer {
    pub fn build<R: Rng + ?Sized>(spec: &RecognizerSpec, rng: &mut R) -> Result<Self> {
        let net = TwinNetwork::build(&spec.network, &spec.mask(), rng)?;
        let last = net.steps().last().map(|s| s.main_out.dims());
        if last != Some(vec![1]) {
            return Err(Error::Construction {
                layer: spec.network.name.clone(),
                reason: format!("final layer must emit one value per pair, emits {last:?}"),
            });
        }
        Ok(Recognizer {
            spec: spec.clone(),
            net,
        })
    }

    /// Match probabilities `[N, 1]` for a batch of pairs.
    pub fn forward(&self, query: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.net.forward(query, target)
    }

    pub fn forward_graph(&self, g: &mut Graph, query: Tensor, target: Tensor) -> Result<Var> {
        Ok(self.net.forward_graph(g, query, target)?.0)
    }

    pub fn shared_parameters(&self) -> &ParamStore {
        self.net.params()
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub spec: DetectorSpec,
    pub net: TwinNetwork,
}

impl Detector {
    pub fn build<R: Rng + ?Sized>(spec: &DetectorSpec, rng: &mut R) -> Result<Self> {
        if spec.mask.len() != 5 {
            return Err(Error::Construction {
                layer: spec.network.name.clone(),
                reason: format!("detector mask needs 5 flags, got {}", spec.mask.len()),
            });
        }
        let net = TwinNetwork::build(&spec.network, &spec.mask, rng)?;
        let expected = vec![spec.anchors * 5, spec.grid, spec.grid];
        let head = net.steps().last().map(|s| s.main_out.dims());
        if head.as_ref() != Some(&expected) {
            return Err(Error::Construction {
                layer: "head".into(),
                reason: format!("head emits {head:?}, expected {expected:?}"),
            });
        }
        Ok(Detector {
            spec: spec.clone(),
            net,
        })
    }

    /// Raw predictions `[N, B*5, S, S]`.
    pub fn forward(&self, query: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.net.forward(query, target)
    }

    pub fn forward_graph(&self, g: &mut Graph, query: Tensor, target: Tensor) -> Result<Var> {
        Ok(self.net.forward_graph(g, query, target)?.0)
    }

    pub fn shared_parameters(&self) -> &ParamStore {
        self.net.params()
    }
}
