//! Simulated NFVI compute nodes: integer resource accounting, the hosting
//! registry for running VNF instances, and per-instance load estimation.
//!
//! CPU/memory are abstract integer units — the point is placement and
//! conservation correctness, not isolation. Load is estimated over a
//! sliding 5-second window of 1-second buckets.

use crate::model::{DomainId, VnfType};
use crate::store::{CacheLookup, ImageStore};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

pub const LOAD_WINDOW_SECONDS: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeDescriptor {
    pub node_id: String,
    pub domain: DomainId,
    pub cpu_capacity: u32,
    pub mem_capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    pub allocation_id: String,
    pub node_id: String,
    pub instance_id: String,
    pub cpu_units: u32,
    pub mem_units: u32,
}

#[derive(Debug, thiserror::Error)]
pub enum NfviError {
    #[error("invalid node: {0}")]
    InvalidNode(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("resource requirements must be positive")]
    InvalidRequirement,
    #[error("node {node_id} cannot fit ({want_cpu},{want_mem}); free ({free_cpu},{free_mem})")]
    InsufficientCapacity { node_id: String, free_cpu: u32, free_mem: u32, want_cpu: u32, want_mem: u32 },
    #[error("unknown allocation {0}")]
    UnknownAllocation(String),
    #[error("image {image_id} not cached in domain {domain}")]
    ImageNotCached { domain: DomainId, image_id: String },
    #[error("no allocation for instance {instance_id} on node {node_id}")]
    NoAllocation { node_id: String, instance_id: String },
    #[error("instance {0} already running")]
    InstanceAlreadyRunning(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("cache registry: {0}")]
    Cache(#[from] crate::store::StoreError),
}

/// Message arrival counter over a sliding window of 1-second buckets.
#[derive(Debug, Clone, Default)]
pub struct LoadTracker {
    /// (second index, count), oldest first; at most a handful of entries.
    buckets: VecDeque<(u64, u64)>,
}

impl LoadTracker {
    pub fn record(&mut self, t_us: u64) {
        let idx = t_us / 1_000_000;
        match self.buckets.back_mut() {
            Some((last, count)) if *last == idx => *count += 1,
            Some((last, _)) if *last > idx => {
                // Out-of-order arrival (possible across sockets); fold into
                // the newest bucket rather than corrupting the order.
                self.buckets.back_mut().unwrap().1 += 1;
            }
            _ => self.buckets.push_back((idx, 1)),
        }
        let min_keep = idx.saturating_sub(LOAD_WINDOW_SECONDS + 1);
        while matches!(self.buckets.front(), Some((i, _)) if *i < min_keep) {
            self.buckets.pop_front();
        }
    }

    /// Mean arrivals/second over the last `LOAD_WINDOW_SECONDS` *complete*
    /// seconds (the current partial second is excluded).
    pub fn window_rate(&self, now_us: u64) -> f64 {
        let idx = now_us / 1_000_000;
        let lo = idx.saturating_sub(LOAD_WINDOW_SECONDS);
        let total: u64 = self
            .buckets
            .iter()
            .filter(|(i, _)| (lo..idx).contains(i))
            .map(|(_, c)| c)
            .sum();
        total as f64 / LOAD_WINDOW_SECONDS as f64
    }

    /// Arrivals in the most recently completed second — the freshest
    /// settled signal available, used for reacting to load drops quickly.
    pub fn last_second_count(&self, now_us: u64) -> u64 {
        let idx = now_us / 1_000_000;
        if idx == 0 {
            return 0;
        }
        self.buckets
            .iter()
            .find(|(i, _)| *i == idx - 1)
            .map(|(_, c)| *c)
            .unwrap_or(0)
    }
}

#[derive(Debug)]
pub struct RunningInstance {
    pub instance_id: String,
    pub vnf_type: VnfType,
    pub image_id: String,
    pub config: BTreeMap<String, String>,
    load: LoadTracker,
}

#[derive(Debug)]
struct NodeState {
    desc: NodeDescriptor,
    free_cpu: u32,
    free_mem: u32,
    allocations: BTreeMap<String, Allocation>,
    instances: BTreeMap<String, RunningInstance>,
}

/// Snapshot returned by `report_state` (the Nf-Vi surface).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStateReport {
    pub node_id: String,
    pub domain: DomainId,
    pub cpu_capacity: u32,
    pub mem_capacity: u32,
    pub free_cpu: u32,
    pub free_mem: u32,
    pub instances: Vec<InstanceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub instance_id: String,
    pub vnf_type: VnfType,
    pub image_id: String,
    pub observed_load: f64,
}

/// All NFVI nodes of one domain.
#[derive(Debug)]
pub struct Nfvi {
    domain: DomainId,
    nodes: BTreeMap<String, NodeState>,
    next_allocation: u64,
}

impl Nfvi {
    pub fn new(domain: DomainId) -> Self {
        Nfvi { domain, nodes: BTreeMap::new(), next_allocation: 1 }
    }

    pub fn domain(&self) -> DomainId {
        self.domain
    }

    pub fn add_node(&mut self, desc: NodeDescriptor) -> Result<(), NfviError> {
        if desc.cpu_capacity == 0 || desc.mem_capacity == 0 {
            return Err(NfviError::InvalidNode(format!(
                "node {} must have positive capacities",
                desc.node_id
            )));
        }
        if desc.domain != self.domain {
            return Err(NfviError::InvalidNode(format!(
                "node {} belongs to {}, not {}",
                desc.node_id, desc.domain, self.domain
            )));
        }
        if self.nodes.contains_key(&desc.node_id) {
            return Err(NfviError::InvalidNode(format!("duplicate node {}", desc.node_id)));
        }
        self.nodes.insert(
            desc.node_id.clone(),
            NodeState {
                free_cpu: desc.cpu_capacity,
                free_mem: desc.mem_capacity,
                desc,
                allocations: BTreeMap::new(),
                instances: BTreeMap::new(),
            },
        );
        Ok(())
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.nodes.keys().cloned().collect()
    }

    pub fn free_of(&self, node_id: &str) -> Option<(u32, u32)> {
        self.nodes.get(node_id).map(|n| (n.free_cpu, n.free_mem))
    }

    fn node_mut(&mut self, node_id: &str) -> Result<&mut NodeState, NfviError> {
        self.nodes.get_mut(node_id).ok_or_else(|| NfviError::UnknownNode(node_id.to_string()))
    }

    /// Reserves capacity for an instance. On success returns the recorded
    /// allocation plus the node's remaining free (cpu, mem); on failure the
    /// node is unchanged.
    pub fn allocate(
        &mut self,
        node_id: &str,
        instance_id: &str,
        cpu_units: u32,
        mem_units: u32,
    ) -> Result<(Allocation, u32, u32), NfviError> {
        if cpu_units == 0 || mem_units == 0 {
            return Err(NfviError::InvalidRequirement);
        }
        {
            let node = self
                .nodes
                .get(node_id)
                .ok_or_else(|| NfviError::UnknownNode(node_id.to_string()))?;
            if node.free_cpu < cpu_units || node.free_mem < mem_units {
                return Err(NfviError::InsufficientCapacity {
                    node_id: node_id.to_string(),
                    free_cpu: node.free_cpu,
                    free_mem: node.free_mem,
                    want_cpu: cpu_units,
                    want_mem: mem_units,
                });
            }
        }
        let allocation_id = format!("alloc-{:06}", self.next_allocation);
        self.next_allocation += 1;
        let node = self.node_mut(node_id)?;
        node.free_cpu -= cpu_units;
        node.free_mem -= mem_units;
        let alloc = Allocation {
            allocation_id: allocation_id.clone(),
            node_id: node_id.to_string(),
            instance_id: instance_id.to_string(),
            cpu_units,
            mem_units,
        };
        node.allocations.insert(allocation_id, alloc.clone());
        let free = (node.free_cpu, node.free_mem);
        Ok((alloc, free.0, free.1))
    }

    /// Returns capacity to the node, exactly inverting the allocate.
    /// Yields the released allocation plus the node's new free (cpu, mem).
    pub fn release(&mut self, allocation_id: &str) -> Result<(Allocation, u32, u32), NfviError> {
        let node_id = self
            .nodes
            .values()
            .find(|n| n.allocations.contains_key(allocation_id))
            .map(|n| n.desc.node_id.clone())
            .ok_or_else(|| NfviError::UnknownAllocation(allocation_id.to_string()))?;
        let node = self.nodes.get_mut(&node_id).expect("node just found");
        let alloc = node.allocations.remove(allocation_id).expect("allocation just found");
        node.free_cpu += alloc.cpu_units;
        node.free_mem += alloc.mem_units;
        let free = (node.free_cpu, node.free_mem);
        Ok((alloc, free.0, free.1))
    }

    /// Finds the allocation currently backing `instance_id`, if any.
    pub fn allocation_for_instance(&self, instance_id: &str) -> Option<Allocation> {
        self.nodes
            .values()
            .flat_map(|n| n.allocations.values())
            .find(|a| a.instance_id == instance_id)
            .cloned()
    }

    /// Brings a VNF instance live on a node. Requires a prior allocation
    /// for the instance on that node and the image cached in this domain.
    pub fn run_instance(
        &mut self,
        store: &ImageStore,
        node_id: &str,
        instance_id: &str,
        image_id: &str,
        vnf_type: VnfType,
        config: BTreeMap<String, String>,
    ) -> Result<(), NfviError> {
        let cached = store.cache_check(self.domain, image_id)?;
        if cached != CacheLookup::Hit {
            return Err(NfviError::ImageNotCached {
                domain: self.domain,
                image_id: image_id.to_string(),
            });
        }
        if self.nodes.values().any(|n| n.instances.contains_key(instance_id)) {
            return Err(NfviError::InstanceAlreadyRunning(instance_id.to_string()));
        }
        let node = self.node_mut(node_id)?;
        if !node.allocations.values().any(|a| a.instance_id == instance_id) {
            return Err(NfviError::NoAllocation {
                node_id: node_id.to_string(),
                instance_id: instance_id.to_string(),
            });
        }
        node.instances.insert(
            instance_id.to_string(),
            RunningInstance {
                instance_id: instance_id.to_string(),
                vnf_type,
                image_id: image_id.to_string(),
                config,
                load: LoadTracker::default(),
            },
        );
        Ok(())
    }

    /// Stops a running instance (its inbox goes dead); the allocation
    /// stays until released.
    pub fn stop_instance(&mut self, instance_id: &str) -> Result<RunningInstance, NfviError> {
        for node in self.nodes.values_mut() {
            if let Some(inst) = node.instances.remove(instance_id) {
                return Ok(inst);
            }
        }
        Err(NfviError::UnknownInstance(instance_id.to_string()))
    }

    pub fn is_running(&self, instance_id: &str) -> bool {
        self.nodes.values().any(|n| n.instances.contains_key(instance_id))
    }

    /// Replaces a running instance's handler config in one step; the old
    /// map is returned. Messages dispatched before the swap see the old
    /// config, messages after see the new one — never a mixture.
    pub fn update_config(
        &mut self,
        instance_id: &str,
        config: BTreeMap<String, String>,
    ) -> Result<BTreeMap<String, String>, NfviError> {
        for node in self.nodes.values_mut() {
            if let Some(inst) = node.instances.get_mut(instance_id) {
                return Ok(std::mem::replace(&mut inst.config, config));
            }
        }
        Err(NfviError::UnknownInstance(instance_id.to_string()))
    }

    pub fn config_of(&self, instance_id: &str) -> Option<BTreeMap<String, String>> {
        self.nodes
            .values()
            .find_map(|n| n.instances.get(instance_id))
            .map(|i| i.config.clone())
    }

    pub fn node_of_instance(&self, instance_id: &str) -> Option<String> {
        self.nodes
            .values()
            .find(|n| n.instances.contains_key(instance_id))
            .map(|n| n.desc.node_id.clone())
    }

    /// Counts one message arrival against an instance's load estimate.
    pub fn record_arrival(&mut self, instance_id: &str, t_us: u64) -> Result<(), NfviError> {
        for node in self.nodes.values_mut() {
            if let Some(inst) = node.instances.get_mut(instance_id) {
                inst.load.record(t_us);
                return Ok(());
            }
        }
        Err(NfviError::UnknownInstance(instance_id.to_string()))
    }

    pub fn observed_load(&self, instance_id: &str, now_us: u64) -> Option<f64> {
        self.nodes
            .values()
            .find_map(|n| n.instances.get(instance_id))
            .map(|i| i.load.window_rate(now_us))
    }

    pub fn last_second_count(&self, instance_id: &str, now_us: u64) -> Option<u64> {
        self.nodes
            .values()
            .find_map(|n| n.instances.get(instance_id))
            .map(|i| i.load.last_second_count(now_us))
    }

    /// Atomic snapshot of one node (the Nf-Vi `report_state` surface).
    pub fn report_state(&self, node_id: &str, now_us: u64) -> Result<NodeStateReport, NfviError> {
        let node =
            self.nodes.get(node_id).ok_or_else(|| NfviError::UnknownNode(node_id.to_string()))?;
        Ok(NodeStateReport {
            node_id: node.desc.node_id.clone(),
            domain: node.desc.domain,
            cpu_capacity: node.desc.cpu_capacity,
            mem_capacity: node.desc.mem_capacity,
            free_cpu: node.free_cpu,
            free_mem: node.free_mem,
            instances: node
                .instances
                .values()
                .map(|i| InstanceReport {
                    instance_id: i.instance_id.clone(),
                    vnf_type: i.vnf_type,
                    image_id: i.image_id.clone(),
                    observed_load: i.load.window_rate(now_us),
                })
                .collect(),
        })
    }

    pub fn report_domain(&self, now_us: u64) -> Vec<NodeStateReport> {
        self.nodes.keys().map(|id| self.report_state(id, now_us).expect("known node")).collect()
    }
}
