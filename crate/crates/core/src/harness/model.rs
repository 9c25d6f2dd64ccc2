use rand::Rng;

use super::config::{ModelSpec, Task};
use crate::arch::{Detector, Recognizer, TwinNetwork};
use crate::error::Result;
use crate::numerics::{Graph, ParamStore, Tensor, Var};

/// A built network for either task.
#[derive(Clone, Debug)]
pub enum Model {
    Recognizer(Recognizer),
    Detector(Detector),
}

impl Model {
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        Ok(match spec {
            ModelSpec::Recognition(s) => Model::Recognizer(Recognizer::build(s, rng)?),
            ModelSpec::Detection(s) => Model::Detector(Detector::build(s, rng)?),
        })
    }

    pub fn task(&self) -> Task {
        match self {
            Model::Recognizer(_) => Task::Recognition,
            Model::Detector(_) => Task::Detection,
        }
    }

    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Recognizer(m) => ModelSpec::Recognition(m.spec.clone()),
            Model::Detector(m) => ModelSpec::Detection(m.spec.clone()),
        }
    }

    pub fn net(&self) -> &TwinNetwork {
        match self {
            Model::Recognizer(m) => &m.net,
            Model::Detector(m) => &m.net,
        }
    }

    pub fn net_mut(&mut self) -> &mut TwinNetwork {
        match self {
            Model::Recognizer(m) => &mut m.net,
            Model::Detector(m) => &mut m.net,
        }
    }

    pub fn shared_parameters(&self) -> &ParamStore {
        self.net().params()
    }

    /// `(query, target)` input side lengths.
    pub fn input_sizes(&self) -> (usize, usize) {
        let s = self.net().spec();
        (s.query_size, s.target_size)
    }

    pub fn forward(&self, query: &Tensor, target: &Tensor) -> Result<Tensor> {
        self.net().forward(query, target)
    }

    pub fn forward_graph(&self, g: &mut Graph, query: Tensor, target: Tensor) -> Result<Var> {
        Ok(self.net().forward_graph(g, query, target)?.0)
    }
}
