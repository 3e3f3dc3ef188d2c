//! Sliding window of received frames and assembly of the cooperative tensor.

use std::collections::VecDeque;

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// One agent's `H x W x C` feature at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub agent_id: usize,
    pub timestep: u64,
    pub data: Tensor,
}

/// `N x T x H x W x C` stack with agents in registration order and time
/// ascending. The `ego_index` slice never passed through the channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CoopTensor {
    pub data: Tensor,
    pub ego_index: usize,
}

impl CoopTensor {
    pub fn agents(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.data.shape()[1]
    }

    /// Stored frame of agent `j` at window position `t` (`H x W x C`).
    pub fn frame(&self, j: usize, t: usize) -> Result<Tensor> {
        self.data.select(0, j)?.select(0, t)
    }
}

#[derive(Debug, Clone)]
pub struct FeatureCache {
    agents: Vec<usize>,
    ego_index: usize,
    window: usize,
    dims: [usize; 3],
    // each entry holds one frame per registered agent
    frames: VecDeque<(u64, Vec<Tensor>)>,
}

impl FeatureCache {
    /// `agents` lists agent ids in registration order; `ego_id` must be one
    /// of them.
    pub fn new(agents: Vec<usize>, ego_id: usize, window: usize, dims: [usize; 3]) -> Result<Self> {
        if agents.is_empty() || window == 0 || dims.contains(&0) {
            return dim_err(format!(
                "cache needs agents, a positive window and positive dims (got {} agents, T={window}, {dims:?})",
                agents.len()
            ));
        }
        let ego_index = agents
            .iter()
            .position(|&a| a == ego_id)
            .ok_or_else(|| Error::Config(format!("ego {ego_id} is not a registered agent")))?;
        Ok(Self { agents, ego_index, window, dims, frames: VecDeque::with_capacity(window) })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.window
    }

    pub fn timesteps(&self) -> Vec<u64> {
        self.frames.iter().map(|(t, _)| *t).collect()
    }

    /// Adds one timestep. `local` is the ego's own clean map; `received`
    /// holds exactly one (already channel-corrupted) map per other agent.
    pub fn push_frame(&mut self, local: FeatureMap, received: Vec<FeatureMap>) -> Result<()> {
        let ego_id = self.agents[self.ego_index];
        if local.agent_id != ego_id {
            return Err(Error::IncompleteFrame(format!(
                "local frame is from agent {}, ego is {ego_id}",
                local.agent_id
            )));
        }
        let t = local.timestep;
        let mut slots: Vec<Option<Tensor>> = vec![None; self.agents.len()];
        slots[self.ego_index] = Some(local.data);
        for fm in received {
            let idx = self.agents.iter().position(|&a| a == fm.agent_id).ok_or_else(|| {
                Error::IncompleteFrame(format!("frame from unregistered agent {}", fm.agent_id))
            })?;
            if fm.timestep != t {
                return Err(Error::IncompleteFrame(format!(
                    "agent {} sent timestep {}, expected {t}",
                    fm.agent_id, fm.timestep
                )));
            }
            if slots[idx].replace(fm.data).is_some() {
                return Err(Error::IncompleteFrame(format!("duplicate frame for agent {}", fm.agent_id)));
            }
        }
        let mut maps = Vec::with_capacity(slots.len());
        for (slot, &id) in slots.into_iter().zip(&self.agents) {
            let map = slot.ok_or_else(|| Error::IncompleteFrame(format!("missing frame for agent {id} at t={t}")))?;
            if map.shape() != self.dims {
                return dim_err(format!(
                    "agent {id} frame has shape {:?}, scenario uses {:?}",
                    map.shape(),
                    self.dims
                ));
            }
            maps.push(map);
        }
        if self.frames.len() == self.window {
            self.frames.pop_front();
        }
        self.frames.push_back((t, maps));
        Ok(())
    }

    pub fn assemble(&self) -> Result<CoopTensor> {
        if !self.is_full() {
            return Err(Error::InsufficientHistory { have: self.frames.len(), need: self.window });
        }
        let per_agent: Vec<Tensor> = (0..self.agents.len())
            .map(|j| Tensor::stack(&self.frames.iter().map(|(_, m)| m[j].clone()).collect::<Vec<_>>()))
            .collect::<Result<_>>()?;
        Ok(CoopTensor { data: Tensor::stack(&per_agent)?, ego_index: self.ego_index })
    }
}
