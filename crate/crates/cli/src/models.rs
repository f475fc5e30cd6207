//! Builds the draft, target and PRM handles an experiment runs against.

use std::path::Path;

use anyhow::{anyhow, Context};

use specs_client::{RemoteGenerator, RemotePrm};
use specs_core::policy::SimulatedLatency;
use specs_core::{fixtures, GeneratorModel, RewardModel, ToyInstance};

use crate::config::{Endpoints, ToyLatency};

pub struct ModelSet {
    pub draft: Box<dyn GeneratorModel>,
    pub target: Box<dyn GeneratorModel>,
    pub prm: Box<dyn RewardModel>,
}

/// A bundled fixture by name (`T1`, `T2`, `LB(4)`), else an instance file.
pub fn load_instance(spec: &str) -> anyhow::Result<ToyInstance> {
    if let Some(inst) = fixtures::by_name(spec) {
        return Ok(inst);
    }
    ToyInstance::load(Path::new(spec)).with_context(|| format!("loading instance {spec:?}"))
}

impl ModelSet {
    pub fn toy(inst: &ToyInstance, latency: &ToyLatency) -> Self {
        if latency.is_zero() {
            return Self {
                draft: Box::new(inst.draft.clone()),
                target: Box::new(inst.target.clone()),
                prm: Box::new(inst.prm.clone()),
            };
        }
        Self {
            draft: Box::new(SimulatedLatency::new(inst.draft.clone(), latency.draft)),
            target: Box::new(SimulatedLatency::new(inst.target.clone(), latency.target)),
            prm: Box::new(SimulatedLatency::new(inst.prm.clone(), latency.prm)),
        }
    }

    pub fn remote(endpoints: &Endpoints) -> anyhow::Result<Self> {
        let err = |e: specs_core::ModelError| anyhow!("{e}");
        Ok(Self {
            draft: Box::new(RemoteGenerator::new(endpoints.draft.clone()).map_err(err)?),
            target: Box::new(RemoteGenerator::new(endpoints.target.clone()).map_err(err)?),
            prm: Box::new(RemotePrm::new(endpoints.prm.clone()).map_err(err)?),
        })
    }
}
