//! Lifecycle orchestration: instantiation on the core node, cache-aware
//! migration into provider domains, and elastic per-type scaling.
//!
//! A deployment runs one [`CoreMano`] in the gateway-provider domain and
//! one [`DomainMano`] per VWSN provider domain. Instances are born on the
//! core node, migrated on demand into a provider domain, and from then on
//! managed by that domain's orchestrator (scaling, config updates,
//! termination). Every state change goes through the pure
//! [`lifecycle_next`] table and is recorded as a `Lifecycle` trace event,
//! so a trace can be replayed against the table to audit the run.
//!
//! Migration is split into an explicit begin/complete pair because the
//! transfer takes simulated time: [`begin_migration`] reserves target
//! capacity, flips the instance to `Migrating`, and returns a
//! [`MigrationTicket`] carrying the computed delay; the caller schedules
//! [`complete_migration`] after that delay (virtual or wall clock).
//! Target capacity is reserved at *begin* rather than at completion so
//! that two transfers in flight toward the same node cannot both be
//! admitted against the same free capacity.

use crate::model::{
    lifecycle_next, DomainId, IllegalTransition, LifecycleEvent, LifecycleState, VnfDescriptor,
    VnfInstance, VnfType, ALL_VNF_TYPES,
};
use crate::nfvi::{Nfvi, NfviError};
use crate::store::{CacheLookup, ImageStore, StoreError};
use crate::trace::{CacheOutcome, TraceKind, TraceSink};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

// ---------------------------------------------------------------------------
// Migration cost model
// ---------------------------------------------------------------------------

/// Cost model for moving a VNF image (cold) or only its runtime state
/// (warm) into a provider domain.
///
/// A cold migration must transfer the full image, so its delay grows with
/// image size; a warm migration reuses the domain's cached image and pays
/// only a fixed state-transfer delay. Both then pay the boot time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationCostModel {
    pub bandwidth_bytes_per_s: u64,
    pub boot_time_ms: u64,
    pub state_transfer_ms: u64,
}

impl MigrationCostModel {
    pub fn validate(&self) -> Result<(), ManoError> {
        if self.bandwidth_bytes_per_s == 0 {
            return Err(ManoError::InvalidCostModel(
                "bandwidth_bytes_per_s must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Milliseconds to push `size_bytes` through the link, rounded up.
    pub fn transfer_ms(&self, size_bytes: u64) -> u64 {
        (size_bytes * 1000).div_ceil(self.bandwidth_bytes_per_s)
    }

    /// Full-image migration delay: transfer + boot.
    pub fn cold_cost_ms(&self, size_bytes: u64) -> u64 {
        self.transfer_ms(size_bytes) + self.boot_time_ms
    }

    /// Cached-image migration delay: state transfer + boot.
    pub fn warm_cost_ms(&self) -> u64 {
        self.state_transfer_ms + self.boot_time_ms
    }

    /// Checks that a warm migration of an image of this size is strictly
    /// cheaper than a cold one. Holds whenever the image is big enough
    /// that its transfer outweighs the state transfer
    /// (`size_bytes * 1000 > bandwidth * state_transfer_ms`); configs
    /// whose images are too small for that are rejected at load time so
    /// the cache can never look like a pessimization.
    pub fn check_warm_cheaper(&self, size_bytes: u64) -> Result<(), ManoError> {
        let warm = self.warm_cost_ms();
        let cold = self.cold_cost_ms(size_bytes);
        if warm >= cold {
            return Err(ManoError::WarmNotCheaper {
                size_bytes,
                warm_ms: warm,
                cold_ms: cold,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scaling policy
// ---------------------------------------------------------------------------

/// Elastic scaling knobs for one provider domain.
///
/// Scale-up triggers when the desired count (from windowed arrival rate)
/// exceeds running+pending for `up_window_s`; scale-down triggers when
/// fresh utilization sits below `scale_down_threshold` for
/// `down_window_s`. The gap between the two thresholds is the hysteresis
/// band in which the instance count holds steady.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPolicy {
    /// Fraction of per-instance capacity each instance should run at.
    pub util_target: f64,
    /// Utilization below which instances become scale-down candidates.
    pub scale_down_threshold: f64,
    pub up_window_s: u64,
    pub down_window_s: u64,
    pub min_instances: u32,
    pub max_instances: u32,
}

impl Default for ScalingPolicy {
    fn default() -> Self {
        ScalingPolicy {
            util_target: 0.8,
            scale_down_threshold: 0.3,
            up_window_s: 10,
            down_window_s: 30,
            min_instances: 1,
            max_instances: 10,
        }
    }
}

impl ScalingPolicy {
    pub fn validate(&self) -> Result<(), ManoError> {
        if !(self.util_target > 0.0 && self.util_target <= 1.0) {
            return Err(ManoError::InvalidPolicy("util_target must be in (0, 1]".into()));
        }
        if !(self.scale_down_threshold >= 0.0 && self.scale_down_threshold < self.util_target) {
            return Err(ManoError::InvalidPolicy(
                "scale_down_threshold must be in [0, util_target)".into(),
            ));
        }
        if self.min_instances > self.max_instances {
            return Err(ManoError::InvalidPolicy(
                "min_instances must not exceed max_instances".into(),
            ));
        }
        if self.max_instances == 0 {
            return Err(ManoError::InvalidPolicy("max_instances must be >= 1".into()));
        }
        Ok(())
    }
}

/// Instances needed to serve `arrival_rate` msgs/s at the target
/// utilization, clamped to the policy's bounds.
pub fn desired_instances(arrival_rate: f64, policy: &ScalingPolicy, desc: &VnfDescriptor) -> u32 {
    let denom = policy.util_target * desc.per_instance_capacity;
    let raw = if arrival_rate <= 0.0 || !denom.is_finite() || denom <= 0.0 {
        0.0
    } else {
        (arrival_rate / denom).ceil()
    };
    let raw = if raw.is_finite() { raw.min(u32::MAX as f64) as u32 } else { u32::MAX };
    raw.clamp(policy.min_instances, policy.max_instances)
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, thiserror::Error)]
pub enum ManoError {
    #[error("no image published under id {0}")]
    ImageNotFound(String),
    #[error("core node {node_id} cannot fit ({want_cpu},{want_mem})")]
    CoreCapacityExhausted {
        node_id: String,
        want_cpu: u32,
        want_mem: u32,
    },
    #[error("no node in {domain} can fit ({cpu},{mem})")]
    NoFeasibleNode {
        domain: DomainId,
        cpu: u32,
        mem: u32,
    },
    #[error(transparent)]
    IllegalTransition(#[from] IllegalTransition),
    #[error("transfer fault while migrating {0}")]
    TransferFault(String),
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("invalid cost model: {0}")]
    InvalidCostModel(String),
    #[error("invalid scaling policy: {0}")]
    InvalidPolicy(String),
    #[error(
        "degenerate cost model for a {size_bytes}-byte image: warm {warm_ms} ms >= cold {cold_ms} ms"
    )]
    WarmNotCheaper {
        size_bytes: u64,
        warm_ms: u64,
        cold_ms: u64,
    },
    #[error(transparent)]
    Nfvi(#[from] NfviError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

// ---------------------------------------------------------------------------
// Placement
// ---------------------------------------------------------------------------

/// First-fit placement over nodes in ascending `node_id` order: the first
/// node whose free capacity covers the descriptor's requirement wins.
/// Deterministic by construction.
pub fn place(nfvi: &Nfvi, desc: &VnfDescriptor) -> Result<String, ManoError> {
    for node_id in nfvi.node_ids() {
        if let Some((free_cpu, free_mem)) = nfvi.free_of(&node_id) {
            if free_cpu >= desc.cpu_units && free_mem >= desc.mem_units {
                return Ok(node_id);
            }
        }
    }
    Err(ManoError::NoFeasibleNode {
        domain: nfvi.domain(),
        cpu: desc.cpu_units,
        mem: desc.mem_units,
    })
}

// ---------------------------------------------------------------------------
// Shared lifecycle plumbing
// ---------------------------------------------------------------------------

/// Applies one lifecycle event to an instance record, recording the
/// transition. The single mutation point for instance state.
fn apply_transition(
    sink: &TraceSink,
    now_us: u64,
    inst: &mut VnfInstance,
    event: LifecycleEvent,
) -> Result<(), IllegalTransition> {
    let next = lifecycle_next(inst.state, event)?;
    sink.record(
        now_us,
        TraceKind::Lifecycle {
            instance_id: inst.instance_id.clone(),
            vnf_type: inst.descriptor.vnf_type,
            from: inst.state,
            event,
            to: next,
        },
    );
    inst.state = next;
    Ok(())
}

/// Everything [`complete_migration`] needs to finish a transfer that
/// [`begin_migration`] started, plus the delay the caller must wait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationTicket {
    pub instance_id: String,
    pub image_id: String,
    pub image_version: u32,
    pub target_domain: DomainId,
    pub target_node: String,
    pub cache: CacheLookup,
    pub delay_ms: u64,
}

// ---------------------------------------------------------------------------
// Core orchestrator (gateway-provider domain)
// ---------------------------------------------------------------------------

/// The gateway provider's orchestrator: owns the core node where every
/// instance is born, and drives the core-side half of migrations.
#[derive(Debug)]
pub struct CoreMano {
    nfvi: Nfvi,
    core_node: String,
    cost: MigrationCostModel,
    instances: BTreeMap<String, VnfInstance>,
    counters: BTreeMap<VnfType, u64>,
}

impl CoreMano {
    pub fn new(nfvi: Nfvi, core_node: &str, cost: MigrationCostModel) -> Result<Self, ManoError> {
        cost.validate()?;
        if nfvi.domain() != DomainId::GatewayProvider {
            return Err(ManoError::InvalidPolicy(
                "core orchestrator must manage the gateway-provider domain".into(),
            ));
        }
        if nfvi.free_of(core_node).is_none() {
            return Err(ManoError::Nfvi(NfviError::UnknownNode(core_node.to_string())));
        }
        Ok(CoreMano {
            nfvi,
            core_node: core_node.to_string(),
            cost,
            instances: BTreeMap::new(),
            counters: BTreeMap::new(),
        })
    }

    pub fn nfvi(&self) -> &Nfvi {
        &self.nfvi
    }

    pub fn cost_model(&self) -> &MigrationCostModel {
        &self.cost
    }

    pub fn core_node(&self) -> &str {
        &self.core_node
    }

    pub fn instance(&self, instance_id: &str) -> Option<&VnfInstance> {
        self.instances.get(instance_id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &VnfInstance> {
        self.instances.values()
    }

    /// Creates a new instance of the descriptor on the core node:
    /// capacity is allocated there and the instance lands in
    /// `Instantiated`, ready to be migrated out.
    pub fn instantiate(
        &mut self,
        store: &ImageStore,
        sink: &TraceSink,
        now_us: u64,
        desc: &VnfDescriptor,
    ) -> Result<VnfInstance, ManoError> {
        if !store.contains(&desc.image_id) {
            return Err(ManoError::ImageNotFound(desc.image_id.clone()));
        }
        let n = self.counters.get(&desc.vnf_type).copied().unwrap_or(0) + 1;
        let instance_id = format!("{}-{:03}", desc.vnf_type.tag().to_lowercase(), n);
        let (_, free_cpu, free_mem) = self
            .nfvi
            .allocate(&self.core_node, &instance_id, desc.cpu_units, desc.mem_units)
            .map_err(|e| match e {
                NfviError::InsufficientCapacity { node_id, want_cpu, want_mem, .. } => {
                    ManoError::CoreCapacityExhausted { node_id, want_cpu, want_mem }
                }
                other => ManoError::Nfvi(other),
            })?;
        self.counters.insert(desc.vnf_type, n);
        sink.record(
            now_us,
            TraceKind::Alloc {
                node: self.core_node.clone(),
                instance_id: instance_id.clone(),
                cpu: desc.cpu_units,
                mem: desc.mem_units,
                free_cpu,
                free_mem,
            },
        );
        let mut inst = VnfInstance::new(instance_id.clone(), desc.clone());
        apply_transition(sink, now_us, &mut inst, LifecycleEvent::InstantiateDone)
            .expect("fresh instances accept InstantiateDone");
        inst.location = Some((DomainId::GatewayProvider, self.core_node.clone()));
        self.instances.insert(instance_id, inst.clone());
        Ok(inst)
    }

    /// Core-side start of a migration toward an already-reserved target
    /// node: flips the instance to `Migrating`, frees its core-node
    /// capacity, and prices the transfer from the target domain's cache
    /// state. Use [`begin_migration`] unless you are driving the two
    /// halves over an RPC boundary yourself.
    pub fn start_migration(
        &mut self,
        store: &ImageStore,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
        target_domain: DomainId,
        target_node: &str,
    ) -> Result<MigrationTicket, ManoError> {
        let inst = self
            .instances
            .get_mut(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        lifecycle_next(inst.state, LifecycleEvent::MigrateCmd)?;
        let cache = store.cache_check(target_domain, &inst.descriptor.image_id)?;
        let delay_ms = match cache {
            CacheLookup::Miss => self.cost.cold_cost_ms(inst.descriptor.image_size_bytes),
            CacheLookup::Hit => self.cost.warm_cost_ms(),
        };
        apply_transition(sink, now_us, inst, LifecycleEvent::MigrateCmd)
            .expect("transition was pre-checked");
        let ticket = MigrationTicket {
            instance_id: instance_id.to_string(),
            image_id: inst.descriptor.image_id.clone(),
            image_version: inst.descriptor.version,
            target_domain,
            target_node: target_node.to_string(),
            cache,
            delay_ms,
        };
        if let Some(alloc) = self.nfvi.allocation_for_instance(instance_id) {
            let (alloc, free_cpu, free_mem) = self.nfvi.release(&alloc.allocation_id)?;
            sink.record(
                now_us,
                TraceKind::Release {
                    node: alloc.node_id,
                    instance_id: instance_id.to_string(),
                    cpu: alloc.cpu_units,
                    mem: alloc.mem_units,
                    free_cpu,
                    free_mem,
                },
            );
        }
        sink.record(
            now_us,
            TraceKind::MigrateStart {
                instance_id: instance_id.to_string(),
                from_node: self.core_node.clone(),
                to_node: target_node.to_string(),
                cache: match cache {
                    CacheLookup::Hit => CacheOutcome::Hit,
                    CacheLookup::Miss => CacheOutcome::Miss,
                },
                delay_us: delay_ms * 1000,
            },
        );
        Ok(ticket)
    }

    /// Hands the finished (still `Migrating`) instance record over to the
    /// target domain's orchestrator, ending core management of it.
    pub fn release_authority(&mut self, instance_id: &str) -> Result<VnfInstance, ManoError> {
        match self.instances.get(instance_id) {
            None => Err(ManoError::UnknownInstance(instance_id.to_string())),
            Some(inst) if inst.state != LifecycleState::Migrating => Err(IllegalTransition {
                state: inst.state,
                event: LifecycleEvent::MigrateDone,
            }
            .into()),
            Some(_) => Ok(self.instances.remove(instance_id).unwrap()),
        }
    }

    /// Marks an in-flight migration as lost to a transfer fault; the
    /// instance is dead (`Failed`) and stays on the core's books.
    pub fn fail_migration(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
    ) -> Result<VnfInstance, ManoError> {
        let inst = self
            .instances
            .get_mut(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        apply_transition(sink, now_us, inst, LifecycleEvent::Fault)?;
        Ok(inst.clone())
    }
}

// ---------------------------------------------------------------------------
// Domain orchestrator (one per VWSN provider domain)
// ---------------------------------------------------------------------------

/// A reconcile decision; the control plane executes it (scale-up becomes
/// a gateway request, scale-down becomes pool removal + termination).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReconcileCommand {
    ScaleUp { vnf_type: VnfType, count: u32 },
    /// Victims newest-first; the executor must stop routing to a victim
    /// before terminating it.
    ScaleDown { vnf_type: VnfType, victims: Vec<String> },
}

#[derive(Debug, Default)]
struct ScaleState {
    above_since_us: Option<u64>,
    below_since_us: Option<u64>,
    /// Scale-ups requested from the core but not yet running here.
    pending: u32,
}

/// A VWSN provider domain's orchestrator: adopts migrated instances,
/// scales them against observed load, and applies updates/termination.
#[derive(Debug)]
pub struct DomainMano {
    nfvi: Nfvi,
    policy: ScalingPolicy,
    instances: BTreeMap<String, VnfInstance>,
    /// Per type, activation order — scale-down victims come off the tail.
    members: BTreeMap<VnfType, Vec<String>>,
    scale: BTreeMap<VnfType, ScaleState>,
}

impl DomainMano {
    pub fn new(nfvi: Nfvi, policy: ScalingPolicy) -> Result<Self, ManoError> {
        policy.validate()?;
        if !nfvi.domain().is_vwsn() {
            return Err(ManoError::InvalidPolicy(
                "domain orchestrators manage VWSN provider domains".into(),
            ));
        }
        Ok(DomainMano {
            nfvi,
            policy,
            instances: BTreeMap::new(),
            members: BTreeMap::new(),
            scale: BTreeMap::new(),
        })
    }

    pub fn domain(&self) -> DomainId {
        self.nfvi.domain()
    }

    pub fn nfvi(&self) -> &Nfvi {
        &self.nfvi
    }

    pub fn nfvi_mut(&mut self) -> &mut Nfvi {
        &mut self.nfvi
    }

    pub fn policy(&self) -> &ScalingPolicy {
        &self.policy
    }

    pub fn instance(&self, instance_id: &str) -> Option<&VnfInstance> {
        self.instances.get(instance_id)
    }

    pub fn instances(&self) -> impl Iterator<Item = &VnfInstance> {
        self.instances.values()
    }

    /// Running members of one type, oldest first.
    pub fn running_members(&self, vnf_type: VnfType) -> Vec<String> {
        self.members.get(&vnf_type).cloned().unwrap_or_default()
    }

    pub fn pending_of(&self, vnf_type: VnfType) -> u32 {
        self.scale.get(&vnf_type).map(|s| s.pending).unwrap_or(0)
    }

    /// Reserves capacity for an inbound migration: first-fit placement
    /// plus allocation on the chosen node.
    pub fn admit(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
        desc: &VnfDescriptor,
    ) -> Result<String, ManoError> {
        let node_id = place(&self.nfvi, desc)?;
        let (_, free_cpu, free_mem) =
            self.nfvi
                .allocate(&node_id, instance_id, desc.cpu_units, desc.mem_units)?;
        sink.record(
            now_us,
            TraceKind::Alloc {
                node: node_id.clone(),
                instance_id: instance_id.to_string(),
                cpu: desc.cpu_units,
                mem: desc.mem_units,
                free_cpu,
                free_mem,
            },
        );
        Ok(node_id)
    }

    /// Drops the reservation made by [`admit`] (migration fault path).
    pub fn release_for_instance(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
    ) -> Result<(), ManoError> {
        let alloc = self
            .nfvi
            .allocation_for_instance(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        let (alloc, free_cpu, free_mem) = self.nfvi.release(&alloc.allocation_id)?;
        sink.record(
            now_us,
            TraceKind::Release {
                node: alloc.node_id,
                instance_id: instance_id.to_string(),
                cpu: alloc.cpu_units,
                mem: alloc.mem_units,
                free_cpu,
                free_mem,
            },
        );
        Ok(())
    }

    /// Takes over a migrated instance: completes its `Migrating →
    /// Running` transition, starts its handler on the reserved node, and
    /// begins managing it. One expected pending scale-up (if any) is
    /// considered fulfilled.
    pub fn adopt(
        &mut self,
        store: &ImageStore,
        sink: &TraceSink,
        now_us: u64,
        mut inst: VnfInstance,
        node_id: &str,
        config: BTreeMap<String, String>,
    ) -> Result<VnfInstance, ManoError> {
        apply_transition(sink, now_us, &mut inst, LifecycleEvent::MigrateDone)?;
        inst.location = Some((self.domain(), node_id.to_string()));
        self.nfvi.run_instance(
            store,
            node_id,
            &inst.instance_id,
            &inst.descriptor.image_id,
            inst.descriptor.vnf_type,
            config,
        )?;
        sink.record(
            now_us,
            TraceKind::MigrateDone {
                instance_id: inst.instance_id.clone(),
                node: node_id.to_string(),
            },
        );
        self.members
            .entry(inst.descriptor.vnf_type)
            .or_default()
            .push(inst.instance_id.clone());
        let st = self.scale.entry(inst.descriptor.vnf_type).or_default();
        st.pending = st.pending.saturating_sub(1);
        self.instances.insert(inst.instance_id.clone(), inst.clone());
        Ok(inst)
    }

    /// Stops and deallocates an instance; the record stays on the books
    /// as `Terminated`.
    pub fn terminate(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
    ) -> Result<VnfInstance, ManoError> {
        let inst = self
            .instances
            .get_mut(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        apply_transition(sink, now_us, inst, LifecycleEvent::TerminateCmd)?;
        inst.observed_load = 0.0;
        let vnf_type = inst.descriptor.vnf_type;
        if self.nfvi.is_running(instance_id) {
            self.nfvi.stop_instance(instance_id)?;
        }
        if let Some(alloc) = self.nfvi.allocation_for_instance(instance_id) {
            let (alloc, free_cpu, free_mem) = self.nfvi.release(&alloc.allocation_id)?;
            sink.record(
                now_us,
                TraceKind::Release {
                    node: alloc.node_id,
                    instance_id: instance_id.to_string(),
                    cpu: alloc.cpu_units,
                    mem: alloc.mem_units,
                    free_cpu,
                    free_mem,
                },
            );
        }
        if let Some(list) = self.members.get_mut(&vnf_type) {
            list.retain(|id| id != instance_id);
        }
        Ok(self.instances.get(instance_id).unwrap().clone())
    }

    /// Abrupt loss of a managed instance: it fails in place, its handler
    /// stops, and its capacity is released. Unlike [`terminate`], the
    /// lifecycle records a fault, not an orderly shutdown.
    ///
    /// [`terminate`]: Self::terminate
    pub fn fail(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
    ) -> Result<VnfInstance, ManoError> {
        let inst = self
            .instances
            .get_mut(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        apply_transition(sink, now_us, inst, LifecycleEvent::Fault)?;
        inst.observed_load = 0.0;
        let vnf_type = inst.descriptor.vnf_type;
        if self.nfvi.is_running(instance_id) {
            self.nfvi.stop_instance(instance_id)?;
        }
        if let Some(alloc) = self.nfvi.allocation_for_instance(instance_id) {
            let (alloc, free_cpu, free_mem) = self.nfvi.release(&alloc.allocation_id)?;
            sink.record(
                now_us,
                TraceKind::Release {
                    node: alloc.node_id,
                    instance_id: instance_id.to_string(),
                    cpu: alloc.cpu_units,
                    mem: alloc.mem_units,
                    free_cpu,
                    free_mem,
                },
            );
        }
        if let Some(list) = self.members.get_mut(&vnf_type) {
            list.retain(|id| id != instance_id);
        }
        Ok(self.instances.get(instance_id).unwrap().clone())
    }

    /// Swaps a running instance's handler config; messages processed
    /// after the swap see the new config, in-flight ones the old.
    pub fn update(
        &mut self,
        sink: &TraceSink,
        now_us: u64,
        instance_id: &str,
        config: BTreeMap<String, String>,
    ) -> Result<(), ManoError> {
        let inst = self
            .instances
            .get_mut(instance_id)
            .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
        apply_transition(sink, now_us, inst, LifecycleEvent::UpdateCmd)?;
        self.nfvi.update_config(instance_id, config)?;
        Ok(())
    }

    /// Undoes the pending bookkeeping for scale-ups that could not be
    /// carried out, so the next reconcile cycle retries them.
    pub fn scale_up_failed(&mut self, vnf_type: VnfType, count: u32) {
        let st = self.scale.entry(vnf_type).or_default();
        st.pending = st.pending.saturating_sub(count);
    }

    /// One reconcile tick (call once per second): compares the desired
    /// count per VNF type against running+pending and emits scale
    /// commands once a breach has been sustained long enough.
    ///
    /// Scale-up watches the windowed rate; scale-down watches the
    /// freshest complete second of load, so that a sharp drop is acted on
    /// within `down_window_s` of when it happened rather than when it has
    /// drained out of the averaging window.
    pub fn reconcile(&mut self, sink: &TraceSink, now_us: u64) -> Vec<ReconcileCommand> {
        let mut cmds = Vec::new();
        for vnf_type in ALL_VNF_TYPES {
            if vnf_type.serves_domain() != self.domain() {
                continue;
            }
            let member_ids = self.members.get(&vnf_type).cloned().unwrap_or_default();
            let running = member_ids.len() as u32;
            let pending = self.scale.get(&vnf_type).map(|s| s.pending).unwrap_or(0);
            sink.record(
                now_us,
                TraceKind::InstanceCount {
                    domain: self.domain(),
                    vnf_type: vnf_type.as_str().to_string(),
                    running,
                    pending,
                },
            );
            if running == 0 {
                continue;
            }
            let window_rate: f64 = member_ids
                .iter()
                .filter_map(|id| self.nfvi.observed_load(id, now_us))
                .sum();
            let fresh_count: u64 = member_ids
                .iter()
                .filter_map(|id| self.nfvi.last_second_count(id, now_us))
                .sum();
            let desc = &self.instances[&member_ids[0]].descriptor;
            let desired = desired_instances(window_rate, &self.policy, desc);
            let capacity = desc.per_instance_capacity;
            let st = self.scale.entry(vnf_type).or_default();
            let have = running + pending;

            if desired > have {
                let since = *st.above_since_us.get_or_insert(now_us);
                if now_us - since >= self.policy.up_window_s * 1_000_000 {
                    let count = desired - have;
                    st.pending += count;
                    st.above_since_us = None;
                    sink.record(
                        now_us,
                        TraceKind::ReconcileAction {
                            domain: self.nfvi.domain(),
                            vnf_type: vnf_type.as_str().to_string(),
                            action: "scale_up".into(),
                            desired,
                            running,
                            pending,
                        },
                    );
                    cmds.push(ReconcileCommand::ScaleUp { vnf_type, count });
                }
            } else {
                st.above_since_us = None;
            }

            let util_fresh = fresh_count as f64 / (running as f64 * capacity);
            if pending == 0
                && running > self.policy.min_instances
                && util_fresh < self.policy.scale_down_threshold
            {
                let since = *st.below_since_us.get_or_insert(now_us);
                if now_us - since >= self.policy.down_window_s * 1_000_000 {
                    let keep = desired.max(self.policy.min_instances);
                    if running > keep {
                        let n = (running - keep) as usize;
                        let victims: Vec<String> =
                            member_ids.iter().rev().take(n).cloned().collect();
                        st.below_since_us = None;
                        sink.record(
                            now_us,
                            TraceKind::ReconcileAction {
                                domain: self.nfvi.domain(),
                                vnf_type: vnf_type.as_str().to_string(),
                                action: "scale_down".into(),
                                desired,
                                running,
                                pending,
                            },
                        );
                        cmds.push(ReconcileCommand::ScaleDown { vnf_type, victims });
                    }
                }
            } else {
                st.below_since_us = None;
            }
        }
        cmds
    }
}

// ---------------------------------------------------------------------------
// Two-sided migration, composed
// ---------------------------------------------------------------------------

/// Starts migrating a core instance into `domain`: reserves target
/// capacity, flips the instance to `Migrating`, and returns the ticket
/// whose `delay_ms` the caller must wait before calling
/// [`complete_migration`]. A placement failure leaves every piece of
/// state untouched.
pub fn begin_migration(
    core: &mut CoreMano,
    domain: &mut DomainMano,
    store: &ImageStore,
    sink: &TraceSink,
    now_us: u64,
    instance_id: &str,
) -> Result<MigrationTicket, ManoError> {
    let inst = core
        .instance(instance_id)
        .ok_or_else(|| ManoError::UnknownInstance(instance_id.to_string()))?;
    lifecycle_next(inst.state, LifecycleEvent::MigrateCmd)?;
    let desc = inst.descriptor.clone();
    let node = domain.admit(sink, now_us, instance_id, &desc)?;
    match core.start_migration(store, sink, now_us, instance_id, domain.domain(), &node) {
        Ok(ticket) => Ok(ticket),
        Err(e) => {
            domain.release_for_instance(sink, now_us, instance_id)?;
            Err(e)
        }
    }
}

/// Finishes a migration after its delay has elapsed. On success the
/// target domain's cache gains the image (cold transfers only), the
/// handler starts with `config`, and management authority moves to the
/// domain orchestrator. With `fault` set, the transfer is treated as lost:
/// the instance fails and the target reservation is returned.
pub fn complete_migration(
    core: &mut CoreMano,
    domain: &mut DomainMano,
    store: &ImageStore,
    sink: &TraceSink,
    now_us: u64,
    ticket: &MigrationTicket,
    config: BTreeMap<String, String>,
    fault: bool,
) -> Result<VnfInstance, ManoError> {
    if fault {
        core.fail_migration(sink, now_us, &ticket.instance_id)?;
        domain.release_for_instance(sink, now_us, &ticket.instance_id)?;
        return Err(ManoError::TransferFault(ticket.instance_id.clone()));
    }
    if ticket.cache == CacheLookup::Miss {
        store.cache_insert(ticket.target_domain, &ticket.image_id)?;
        sink.record(
            now_us,
            TraceKind::CacheInsert {
                domain: ticket.target_domain,
                image_id: ticket.image_id.clone(),
                version: ticket.image_version,
            },
        );
    }
    let inst = core.release_authority(&ticket.instance_id)?;
    domain.adopt(store, sink, now_us, inst, &ticket.target_node, config)
}
