//! Event-driven simulation of one cell.
//!
//! Sessions arrive as a Poisson stream spread uniformly over the devices.
//! Each session requests its units strictly in order; unit `n + 1` is
//! dispatched when unit `n` completes. A dispatch walks the service cascade:
//! own cache, nearest neighbor holding the unit, BS cache, and finally the
//! universal source through the BS. Every mode except the first needs a radio
//! channel; when none is free the session is dropped and the energy it had
//! already spent is moved to the blocked bucket of the ledger.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{build_catalog, Catalog, CatalogConfig, ContentUnit, UnitId};
use crate::channel::{prospective_rates, ChannelParams, ChannelPool};
use crate::energy::{AvailabilityModel, EnergyLedger, EnergyModel, NeighborCount, Outcome, PowerProfile, ServiceMode, ServiceRecord};
use crate::error::{Error, Result};
use crate::policies::{self, CacheState, Candidate, InsertOutcome, OptSolver, Policy, PolicyKind};
use crate::topology::{expected_neighbor_count, sample_topology, CellConfig, DeviceId, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub c_dev_bits: f64,
    pub c_bs_bits: f64,
    pub delta_dev_bits: f64,
    pub delta_bs_bits: f64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            c_dev_bits: 150e6,
            c_bs_bits: 2.8e9,
            delta_dev_bits: 0.01e6,
            delta_bs_bits: 0.1e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub opt_solver: OptSolver,
    pub pdc_randomized: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            kind: PolicyKind::Epdc,
            opt_solver: OptSolver::default(),
            pdc_randomized: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HolderSelection {
    #[default]
    Nearest,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub duration_s: f64,
    pub arrival_rate_per_device_hz: f64,
    pub seed: u64,
    /// Services completing before this time are not counted.
    pub warmup_s: f64,
    pub neighbor_count: NeighborCount,
    pub holder_selection: HolderSelection,
    /// A device can feed at most one D2D receiver at a time.
    pub single_tx_per_device: bool,
    /// Re-check ledger, channel and cascade invariants after every event.
    pub audit: bool,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            duration_s: 400.0,
            arrival_rate_per_device_hz: 0.05,
            seed: 1,
            warmup_s: 0.0,
            neighbor_count: NeighborCount::Analytic,
            holder_selection: HolderSelection::Nearest,
            single_tx_per_device: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub catalog: CatalogConfig,
    pub topology: CellConfig,
    pub channel: ChannelParams,
    pub power: PowerProfile,
    pub cache: CacheConfig,
    pub policy: PolicyConfig,
    pub sim: SimParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.catalog.validate()?;
        self.topology.validate()?;
        self.channel.validate()?;
        self.power.validate()?;
        let c = &self.cache;
        for (field, v) in [
            ("cache.c_dev_bits", c.c_dev_bits),
            ("cache.c_bs_bits", c.c_bs_bits),
            ("cache.delta_dev_bits", c.delta_dev_bits),
            ("cache.delta_bs_bits", c.delta_bs_bits),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        let s = &self.sim;
        if !(s.duration_s > 0.0 && s.duration_s.is_finite()) {
            return Err(Error::config("sim.duration_s", "must be positive"));
        }
        if !(s.arrival_rate_per_device_hz >= 0.0 && s.arrival_rate_per_device_hz.is_finite()) {
            return Err(Error::config("sim.arrival_rate_per_device_hz", "must be non-negative"));
        }
        if !(s.warmup_s >= 0.0 && s.warmup_s < s.duration_s) {
            return Err(Error::config("sim.warmup_s", "must lie in [0, duration_s)"));
        }
        prospective_rates(&self.channel, &self.power, &self.topology)?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Independent RNG streams derived from the master seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Topology = 1,
    Arrivals = 2,
    Holder = 3,
    Policy = 4,
}

fn sub_seed(master: u64, stream: Stream) -> u64 {
    // splitmix64 finalizer
    let mut z = master ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seconds to deliver `unit` in `mode` over a link of `rate_bps`. For BS(U)
/// the backhaul stage runs first, then the BS downlink at `rate_bps`.
pub fn service_duration(unit: &ContentUnit, mode: ServiceMode, rate_bps: f64, backhaul_bps: f64) -> f64 {
    let radio = unit.size_bits / rate_bps;
    match mode {
        ServiceMode::BsU => unit.size_bits / backhaul_bps + radio,
        _ => radio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    Completion = 0,
    Arrival = 1,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    kind: EventKind,
    seq: u64,
    target: usize,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.cmp(&other.kind))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    Done,
    Dropped,
    /// Still running when the horizon was reached.
    Truncated,
}

#[derive(Debug, Clone)]
pub struct SessionState {
    pub requester: DeviceId,
    pub units: Vec<UnitId>,
    pub next: usize,
    pub delivered: Vec<(ServiceRecord, bool)>,
    pub status: SessionStatus,
}

/// Where a unit will be served from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServiceDecision {
    Local,
    D2d { holder: DeviceId, distance_m: f64 },
    Bs,
    BsU,
    Blocked { wanted: ServiceMode },
}

impl ServiceDecision {
    pub fn mode(&self) -> Option<ServiceMode> {
        match self {
            ServiceDecision::Local => Some(ServiceMode::Local),
            ServiceDecision::D2d { .. } => Some(ServiceMode::D2d),
            ServiceDecision::Bs => Some(ServiceMode::Bs),
            ServiceDecision::BsU => Some(ServiceMode::BsU),
            ServiceDecision::Blocked { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PoolId {
    Shared,
    D2d,
}

#[derive(Debug, Clone)]
struct InFlight {
    session: usize,
    unit: UnitId,
    mode: ServiceMode,
    rate_bps: f64,
    pool: Option<PoolId>,
    holder: Option<DeviceId>,
    start: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time_s: f64,
    pub event: &'static str,
    pub requester: DeviceId,
    pub unit: u32,
    pub mode: &'static str,
    pub duration_s: f64,
    pub joules: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time_s", "event", "requester", "unit", "mode", "duration_s", "joules"])?;
    for r in trace {
        w.write_record([
            r.time_s.to_string(),
            r.event.to_string(),
            r.requester.to_string(),
            r.unit.to_string(),
            r.mode.to_string(),
            r.duration_s.to_string(),
            r.joules.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Everything a run reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub config_hash: String,
    pub seed: u64,
    pub policy: PolicyKind,
    pub devices: usize,
    pub ledger: EnergyLedger,
    pub sessions_arrived: u64,
    pub sessions_completed: u64,
    pub sessions_dropped: u64,
    pub sessions_truncated: u64,
    /// Completed services per mode, in [`ServiceMode::ALL`] order.
    pub units_served: [u64; 4],
    /// Unit requests refused for lack of a channel (one per dropped session).
    pub units_blocked: u64,
    /// Pending units discarded with dropped sessions, the blocked one included.
    pub units_dropped: u64,
    /// Services cut off by the horizon.
    pub units_cancelled: u64,
    pub units_not_cached_oversize: u64,
    pub peak_channels_in_use: u32,
    pub final_channels_in_use: u32,
    pub events_processed: u64,
}

impl Metrics {
    pub fn e_total(&self) -> f64 {
        self.ledger.e_total()
    }

    /// Every numeric metric in a fixed order: energies, served bits, ledger
    /// cells, then counters.
    pub fn numeric_fields(&self) -> Vec<(String, f64)> {
        let l = &self.ledger;
        let mut out: Vec<(String, f64)> = vec![
            ("devices".into(), self.devices as f64),
            ("e_total".into(), l.e_total()),
            ("e_loc".into(), l.e_loc()),
            ("e_d2d".into(), l.e_d2d()),
            ("e_bs".into(), l.e_bs()),
            ("e_bs_u".into(), l.e_bs_u()),
            ("e_block".into(), l.e_block()),
        ];
        for mode in ServiceMode::ALL {
            out.push((format!("bits_{}", mode.name()), l.served_bits(mode)));
        }
        let total_bits: f64 = ServiceMode::ALL.iter().map(|m| l.served_bits(*m)).sum();
        out.push(("bits_total".into(), total_bits));
        out.extend(l.joule_cells().into_iter().map(|(name, v)| (format!("j_{name}"), v)));
        out.extend(l.bit_cells().into_iter().map(|(name, v)| (format!("b_{name}"), v)));
        for mode in ServiceMode::ALL {
            out.push((format!("units_{}", mode.name()), self.units_served[mode.index()] as f64));
        }
        let counters = [
            ("sessions_arrived", self.sessions_arrived),
            ("sessions_completed", self.sessions_completed),
            ("sessions_dropped", self.sessions_dropped),
            ("sessions_truncated", self.sessions_truncated),
            ("units_blocked", self.units_blocked),
            ("units_dropped", self.units_dropped),
            ("units_cancelled", self.units_cancelled),
            ("units_not_cached_oversize", self.units_not_cached_oversize),
            ("peak_channels_in_use", self.peak_channels_in_use as u64),
            ("final_channels_in_use", self.final_channels_in_use as u64),
            ("events_processed", self.events_processed),
        ];
        out.extend(counters.iter().map(|(k, v)| (k.to_string(), *v as f64)));
        out
    }

    /// Flat `(name, value)` view with a fixed order; the basis of every CSV.
    pub fn fields(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = vec![
            ("policy".into(), self.policy.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("config_hash".into(), self.config_hash.clone()),
        ];
        out.extend(self.numeric_fields().into_iter().map(|(k, v)| (k, v.to_string())));
        out
    }

    /// Two-column `metric,value` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "value"])?;
        for (k, v) in self.fields() {
            w.write_record([k, v])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
struct Counters {
    sessions_arrived: u64,
    sessions_completed: u64,
    sessions_dropped: u64,
    units_served: [u64; 4],
    units_blocked: u64,
    units_dropped: u64,
    units_not_cached_oversize: u64,
}

/// A single simulation instance. Build it, optionally script caches and
/// sessions, then call [`Simulation::run`].
pub struct Simulation {
    cfg: SimConfig,
    catalog: Catalog,
    topology: Topology,
    model: EnergyModel,
    dev_policy: Policy,
    bs_policy: Policy,
    devices: Vec<CacheState>,
    bs: CacheState,
    /// Devices caching each unit, indexed by unit id - 1.
    holders: Vec<Vec<DeviceId>>,
    bs_rate: Vec<f64>,
    shared_pool: ChannelPool,
    d2d_pool: Option<ChannelPool>,
    transmitting: Vec<bool>,
    sessions: Vec<SessionState>,
    inflight: HashMap<usize, InFlight>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    next_service: usize,
    now: f64,
    ledger: EnergyLedger,
    /// Services completed before the warm-up ends; never reported.
    warmup_ledger: EnergyLedger,
    counters: Counters,
    peak_channels: u32,
    events: u64,
    holder_rng: ChaCha8Rng,
    policy_rng: ChaCha8Rng,
    trace: Option<Vec<TraceRecord>>,
}

impl Simulation {
    /// Builds the catalog and samples the topology from the config seed.
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let topology = sample_topology(&cfg.topology, sub_seed(cfg.sim.seed, Stream::Topology))?;
        Self::with_topology(cfg, topology)
    }

    /// Uses a caller-supplied topology (its D2D radius wins over the config's).
    pub fn with_topology(cfg: &SimConfig, topology: Topology) -> Result<Self> {
        cfg.validate()?;
        let catalog = build_catalog(&cfg.catalog)?;
        let mut cell = cfg.topology.clone();
        cell.r_d2d_m = topology.r_d2d_m();
        let rates = prospective_rates(&cfg.channel, &cfg.power, &cell)?;
        let n_ngh = match cfg.sim.neighbor_count {
            NeighborCount::Analytic => expected_neighbor_count(&cell),
            NeighborCount::Rounded => expected_neighbor_count(&cell).round(),
        };
        let availability = AvailabilityModel::new(catalog.total_bits(), cfg.cache.c_dev_bits, cfg.cache.c_bs_bits, n_ngh)?;
        let model = EnergyModel::new(&catalog, &cfg.power, rates, availability)?;

        let policy = |delta| Policy {
            kind: cfg.policy.kind,
            delta_bits: delta,
            solver: cfg.policy.opt_solver,
            pdc_randomized: cfg.policy.pdc_randomized,
        };
        let bs_rate = (0..topology.len())
            .map(|d| cfg.channel.link_rate(cfg.power.p_bs_w, topology.distance_to_bs(d)?, cfg.channel.n_bs))
            .collect::<Result<Vec<f64>>>()?;
        let n = topology.len();
        let (dev_policy, bs_policy) = (policy(cfg.cache.delta_dev_bits), policy(cfg.cache.delta_bs_bits));
        Ok(Simulation {
            devices: vec![CacheState::with_order(cfg.cache.c_dev_bits, dev_policy.rank_key()); n],
            bs: CacheState::with_order(cfg.cache.c_bs_bits, bs_policy.rank_key()),
            dev_policy,
            bs_policy,
            holders: vec![Vec::new(); catalog.len()],
            bs_rate,
            shared_pool: ChannelPool::new(cfg.channel.pool_size),
            d2d_pool: cfg.channel.d2d_pool_size.map(ChannelPool::new),
            transmitting: vec![false; n],
            sessions: Vec::new(),
            inflight: HashMap::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            next_service: 0,
            now: 0.0,
            ledger: EnergyLedger::new(&cfg.power, cfg.channel.c_bsu_bps),
            warmup_ledger: EnergyLedger::new(&cfg.power, cfg.channel.c_bsu_bps),
            counters: Counters::default(),
            peak_channels: 0,
            events: 0,
            holder_rng: ChaCha8Rng::seed_from_u64(sub_seed(cfg.sim.seed, Stream::Holder)),
            policy_rng: ChaCha8Rng::seed_from_u64(sub_seed(cfg.sim.seed, Stream::Policy)),
            trace: None,
            cfg: cfg.clone(),
            catalog,
            topology,
            model,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn device_cache(&self, dev: DeviceId) -> &CacheState {
        &self.devices[dev]
    }

    pub fn bs_cache(&self) -> &CacheState {
        &self.bs
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    pub fn sessions(&self) -> &[SessionState] {
        &self.sessions
    }

    pub fn channels_in_use(&self) -> u32 {
        self.shared_pool.in_use() + self.d2d_pool.as_ref().map_or(0, |p| p.in_use())
    }

    fn unit(&self, id: UnitId) -> Result<&ContentUnit> {
        self.catalog
            .unit(id)
            .ok_or_else(|| Error::Domain(format!("unit {id} is not in the catalog")))
    }

    fn candidate(&self, id: UnitId) -> Result<Candidate> {
        let u = self.unit(id)?;
        Ok(Candidate {
            id,
            size_bits: u.size_bits,
            e_all: self.model.e_all(u),
            request_prob: self.model.request_prob(u),
        })
    }

    fn check_device(&self, dev: DeviceId) -> Result<()> {
        if dev >= self.topology.len() {
            return Err(Error::Domain(format!("unknown device {dev}")));
        }
        Ok(())
    }

    /// Places a unit in a device cache before the run, through the policy.
    pub fn preload_device(&mut self, dev: DeviceId, id: UnitId) -> Result<()> {
        self.check_device(dev)?;
        let cand = self.candidate(id)?;
        self.cache_at_device(dev, &cand)
    }

    pub fn preload_bs(&mut self, id: UnitId) -> Result<()> {
        let cand = self.candidate(id)?;
        policies::admit(&self.bs_policy, &mut self.bs, &cand, &mut self.policy_rng)?;
        Ok(())
    }

    fn push(&mut self, time: f64, kind: EventKind, target: usize) {
        self.seq += 1;
        self.queue.push(Reverse(Event {
            time,
            kind,
            seq: self.seq,
            target,
        }));
    }

    /// Queues a scripted session; returns its index.
    pub fn schedule_session(&mut self, time_s: f64, requester: DeviceId, units: Vec<UnitId>) -> Result<usize> {
        self.check_device(requester)?;
        if !(time_s >= 0.0 && time_s.is_finite()) {
            return Err(Error::Domain(format!("arrival time must be non-negative, got {time_s}")));
        }
        for id in &units {
            self.unit(*id)?;
        }
        let idx = self.sessions.len();
        self.sessions.push(SessionState {
            requester,
            units,
            next: 0,
            delivered: Vec::new(),
            status: SessionStatus::Active,
        });
        self.push(time_s, EventKind::Arrival, idx);
        Ok(idx)
    }

    /// Draws the whole arrival stream for the horizon up front: the
    /// superposition of per-device Poisson processes is a single Poisson
    /// process with a uniformly chosen requester.
    pub fn schedule_poisson_arrivals(&mut self) -> Result<usize> {
        let n = self.topology.len();
        let rate = self.cfg.sim.arrival_rate_per_device_hz * n as f64;
        if n == 0 || rate <= 0.0 {
            return Ok(0);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.sim.seed, Stream::Arrivals));
        let mut t = 0.0;
        let mut count = 0;
        loop {
            let u: f64 = rng.random();
            t += -(1.0 - u).ln() / rate;
            if t >= self.cfg.sim.duration_s {
                break;
            }
            let requester = rng.random_range(0..n);
            let session = self.catalog.sample_session(&mut rng);
            self.schedule_session(t, requester, session.units)?;
            count += 1;
        }
        Ok(count)
    }

    fn counted(&self) -> bool {
        self.now >= self.cfg.sim.warmup_s
    }

    fn log(&mut self, event: &'static str, requester: DeviceId, unit: UnitId, mode: &'static str, duration_s: f64, joules: f64) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                time_s: self.now,
                event,
                requester,
                unit: unit.0,
                mode,
                duration_s,
                joules,
            });
        }
    }

    fn nearest_holder(&mut self, requester: DeviceId, id: UnitId) -> Option<(DeviceId, f64)> {
        let radius = self.topology.r_d2d_m();
        let holders = &self.holders[id.0 as usize - 1];
        let busy = |d: DeviceId| self.cfg.sim.single_tx_per_device && self.transmitting[d];
        let mut found: Vec<(f64, DeviceId)> = Vec::new();
        if holders.len() < self.topology.d2d_neighbors(requester).len() {
            for &h in holders {
                if h == requester || busy(h) {
                    continue;
                }
                let (a, b) = (self.topology.positions()[requester], self.topology.positions()[h]);
                let (dx, dy) = (a.0 - b.0, a.1 - b.1);
                if dx * dx + dy * dy > radius * radius * (1.0 + 1e-9) {
                    continue;
                }
                let d = self.topology.distance(requester, h).ok()?;
                if d <= radius {
                    found.push((d, h));
                }
            }
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        } else {
            let nearest_only = self.cfg.sim.holder_selection == HolderSelection::Nearest;
            for nb in self.topology.d2d_neighbors(requester) {
                if self.devices[nb.device].contains(id) && !busy(nb.device) {
                    found.push((nb.distance_m, nb.device));
                    if nearest_only {
                        break;
                    }
                }
            }
        }
        if found.is_empty() {
            return None;
        }
        let pick = match self.cfg.sim.holder_selection {
            HolderSelection::Nearest => 0,
            HolderSelection::Random => self.holder_rng.random_range(0..found.len()),
        };
        Some((found[pick].1, found[pick].0))
    }

    fn acquire(&mut self, mode: ServiceMode) -> Option<PoolId> {
        let id = match (mode, self.d2d_pool.is_some()) {
            (ServiceMode::D2d, true) => PoolId::D2d,
            _ => PoolId::Shared,
        };
        let ok = match id {
            PoolId::Shared => self.shared_pool.try_acquire(),
            PoolId::D2d => self.d2d_pool.as_mut().is_some_and(|p| p.try_acquire()),
        };
        if !ok {
            return None;
        }
        self.peak_channels = self.peak_channels.max(self.channels_in_use());
        Some(id)
    }

    fn release(&mut self, pool: PoolId) -> Result<()> {
        match pool {
            PoolId::Shared => self.shared_pool.release(),
            PoolId::D2d => self
                .d2d_pool
                .as_mut()
                .ok_or_else(|| Error::Invariant("release on a missing D2D pool".into()))?
                .release(),
        }
    }

    /// Resolves the next unit of `session` through the cascade and starts
    /// the service, or drops the session when no channel is free.
    pub fn dispatch_unit(&mut self, session: usize) -> Result<ServiceDecision> {
        let s = &self.sessions[session];
        if s.status != SessionStatus::Active || s.next >= s.units.len() {
            return Err(Error::Invariant(format!("dispatch on inactive session {session}")));
        }
        let requester = s.requester;
        let id = s.units[s.next];

        let decision = if self.devices[requester].contains(id) {
            ServiceDecision::Local
        } else if let Some((holder, distance_m)) = self.nearest_holder(requester, id) {
            ServiceDecision::D2d { holder, distance_m }
        } else if self.bs.contains(id) {
            ServiceDecision::Bs
        } else {
            ServiceDecision::BsU
        };
        if self.cfg.sim.audit {
            self.audit_cascade(requester, id, &decision)?;
        }
        let mode = decision.mode().expect("cascade resolves a mode");

        let pool = if mode.needs_channel() {
            match self.acquire(mode) {
                Some(p) => Some(p),
                None => {
                    self.block_session(session, mode)?;
                    return Ok(ServiceDecision::Blocked { wanted: mode });
                }
            }
        } else {
            None
        };

        let unit = self.unit(id)?.clone();
        let (rate_bps, holder) = match decision {
            ServiceDecision::Local => (self.cfg.channel.c_loc_bps, None),
            ServiceDecision::D2d { holder, distance_m } => (
                self.cfg.channel.link_rate(self.cfg.power.p_d2d_w, distance_m, self.cfg.channel.n_d2d)?,
                Some(holder),
            ),
            _ => (self.bs_rate[requester], None),
        };
        if let Some(h) = holder {
            self.transmitting[h] = true;
        }
        let duration = service_duration(&unit, mode, rate_bps, self.cfg.channel.c_bsu_bps);
        let service = self.next_service;
        self.next_service += 1;
        self.inflight.insert(
            service,
            InFlight {
                session,
                unit: id,
                mode,
                rate_bps,
                pool,
                holder,
                start: self.now,
            },
        );
        self.push(self.now + duration, EventKind::Completion, service);
        self.log("dispatch", requester, id, mode.name(), duration, 0.0);
        Ok(decision)
    }

    fn block_session(&mut self, session: usize, wanted: ServiceMode) -> Result<()> {
        let counted = self.counted();
        let s = &mut self.sessions[session];
        s.status = SessionStatus::Dropped;
        let (requester, id) = (s.requester, s.units[s.next]);
        let remaining = (s.units.len() - s.next) as u64;
        let records: Vec<ServiceRecord> = s.delivered.iter().filter(|(_, c)| *c).map(|(r, _)| *r).collect();
        self.ledger.reclassify_failed_session(&records);
        if counted {
            self.counters.sessions_dropped += 1;
            self.counters.units_blocked += 1;
            self.counters.units_dropped += remaining;
        }
        let moved: f64 = records.iter().map(|r| r.joules).sum();
        self.log("blocked", requester, id, wanted.name(), 0.0, moved);
        Ok(())
    }

    fn cache_at_device(&mut self, dev: DeviceId, cand: &Candidate) -> Result<()> {
        let decision = policies::admit(&self.dev_policy, &mut self.devices[dev], cand, &mut self.policy_rng)?;
        for ev in &decision.evicted {
            let list = &mut self.holders[ev.0 as usize - 1];
            let pos = list
                .iter()
                .position(|&d| d == dev)
                .ok_or_else(|| Error::Invariant(format!("holder index lost unit {ev} at device {dev}")))?;
            list.swap_remove(pos);
        }
        match decision.outcome {
            InsertOutcome::Inserted => self.holders[cand.id.0 as usize - 1].push(dev),
            InsertOutcome::Oversize if self.counted() => self.counters.units_not_cached_oversize += 1,
            _ => {}
        }
        Ok(())
    }

    /// Finishes an in-flight service: frees its channel, charges the ledger,
    /// updates caches and moves the session on.
    pub fn complete_unit(&mut self, service: usize) -> Result<()> {
        let f = self
            .inflight
            .remove(&service)
            .ok_or_else(|| Error::Invariant(format!("completion for unknown service {service}")))?;
        if let Some(pool) = f.pool {
            self.release(pool)?;
        }
        if let Some(h) = f.holder {
            self.transmitting[h] = false;
        }
        let unit = self.unit(f.unit)?.clone();
        let counted = self.counted();
        let ledger = if counted { &mut self.ledger } else { &mut self.warmup_ledger };
        let record = ledger.record_service(f.mode, &unit, f.rate_bps, Outcome::Success)?;
        if counted {
            self.counters.units_served[f.mode.index()] += 1;
        }
        let requester = self.sessions[f.session].requester;
        self.log("complete", requester, f.unit, f.mode.name(), self.now - f.start, record.joules);

        let cand = self.candidate(f.unit)?;
        self.cache_at_device(requester, &cand)?;
        match f.mode {
            ServiceMode::Bs => {
                self.bs.touch(f.unit);
            }
            ServiceMode::BsU => {
                policies::admit(&self.bs_policy, &mut self.bs, &cand, &mut self.policy_rng)?;
            }
            _ => {}
        }

        let s = &mut self.sessions[f.session];
        s.delivered.push((record, counted));
        s.next += 1;
        if s.next == s.units.len() {
            s.status = SessionStatus::Done;
            if counted {
                self.counters.sessions_completed += 1;
            }
        } else {
            self.dispatch_unit(f.session)?;
        }
        Ok(())
    }

    fn audit_cascade(&self, requester: DeviceId, id: UnitId, decision: &ServiceDecision) -> Result<()> {
        let local = self.devices[requester].contains(id);
        let bs = self.bs.contains(id);
        let radius = self.topology.r_d2d_m();
        let in_range: Vec<(f64, DeviceId)> = (0..self.topology.len())
            .filter(|&d| d != requester && self.devices[d].contains(id))
            .filter(|&d| !(self.cfg.sim.single_tx_per_device && self.transmitting[d]))
            .filter_map(|d| {
                let dist = self.topology.distance(requester, d).ok()?;
                (dist <= radius).then_some((dist, d))
            })
            .collect();
        let ok = match *decision {
            ServiceDecision::Local => local,
            ServiceDecision::D2d { holder, distance_m } => {
                let nearest = in_range.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
                let valid = !local && self.devices[holder].contains(id) && distance_m <= radius;
                match self.cfg.sim.holder_selection {
                    HolderSelection::Nearest => valid && distance_m == nearest,
                    HolderSelection::Random => valid,
                }
            }
            ServiceDecision::Bs => !local && in_range.is_empty() && bs,
            ServiceDecision::BsU => !local && in_range.is_empty() && !bs,
            ServiceDecision::Blocked { .. } => true,
        };
        if !ok {
            return Err(Error::Invariant(format!(
                "cascade decision {decision:?} for unit {id} at device {requester} disagrees with cache contents"
            )));
        }
        Ok(())
    }

    fn audit_state(&self) -> Result<()> {
        let radio = self.inflight.values().filter(|f| f.pool.is_some()).count() as u32;
        if radio != self.channels_in_use() {
            return Err(Error::Invariant(format!(
                "{} channels held for {radio} radio services",
                self.channels_in_use()
            )));
        }
        if self.shared_pool.in_use() > self.shared_pool.total() {
            return Err(Error::Invariant("channel pool over-committed".into()));
        }
        let l = &self.ledger;
        let sum = l.e_loc() + l.e_d2d() + l.e_bs() + l.e_bs_u() + l.e_block();
        if l.e_total() != sum || !sum.is_finite() {
            return Err(Error::Invariant(format!("ledger total {} differs from component sum {sum}", l.e_total())));
        }
        if l.joule_cells().iter().any(|(_, v)| *v < 0.0) {
            return Err(Error::Invariant("negative ledger cell".into()));
        }
        Ok(())
    }

    /// Processes events up to the horizon, then cancels whatever is still
    /// in flight.
    pub fn run(mut self) -> Result<(Metrics, Option<Vec<TraceRecord>>)> {
        let horizon = self.cfg.sim.duration_s;
        while let Some(Reverse(ev)) = self.queue.peek().copied() {
            if ev.time > horizon {
                break;
            }
            self.queue.pop();
            if ev.time < self.now {
                return Err(Error::Invariant(format!("event time went back from {} to {}", self.now, ev.time)));
            }
            self.now = ev.time;
            self.events += 1;
            match ev.kind {
                EventKind::Arrival => {
                    if self.counted() {
                        self.counters.sessions_arrived += 1;
                    }
                    let (requester, first) = {
                        let s = &self.sessions[ev.target];
                        (s.requester, s.units.first().copied())
                    };
                    match first {
                        Some(id) => {
                            self.log("arrival", requester, id, "", 0.0, 0.0);
                            self.dispatch_unit(ev.target)?;
                        }
                        None => {
                            self.sessions[ev.target].status = SessionStatus::Done;
                            if self.counted() {
                                self.counters.sessions_completed += 1;
                            }
                        }
                    }
                }
                EventKind::Completion => self.complete_unit(ev.target)?,
            }
            if self.cfg.sim.audit {
                self.audit_state()?;
            }
        }

        self.now = horizon;
        let mut cancelled: Vec<(usize, InFlight)> = self.inflight.drain().collect();
        cancelled.sort_by_key(|c| c.0);
        let mut units_cancelled = 0;
        for (_, f) in &cancelled {
            if let Some(pool) = f.pool {
                self.release(pool)?;
            }
            if let Some(h) = f.holder {
                self.transmitting[h] = false;
            }
            self.sessions[f.session].status = SessionStatus::Truncated;
            units_cancelled += 1;
            let requester = self.sessions[f.session].requester;
            self.log("cancel", requester, f.unit, f.mode.name(), 0.0, 0.0);
        }
        if self.cfg.sim.audit {
            self.audit_state()?;
        }
        let final_in_use = self.channels_in_use();
        if final_in_use != 0 {
            return Err(Error::Invariant(format!("{final_in_use} channels still held after the horizon")));
        }
        let truncated = self
            .sessions
            .iter()
            .filter(|s| s.status == SessionStatus::Truncated)
            .count() as u64;
        let c = &self.counters;
        let metrics = Metrics {
            config_hash: self.cfg.hash(),
            seed: self.cfg.sim.seed,
            policy: self.cfg.policy.kind,
            devices: self.topology.len(),
            ledger: self.ledger.clone(),
            sessions_arrived: c.sessions_arrived,
            sessions_completed: c.sessions_completed,
            sessions_dropped: c.sessions_dropped,
            sessions_truncated: truncated,
            units_served: c.units_served,
            units_blocked: c.units_blocked,
            units_dropped: c.units_dropped,
            units_cancelled,
            units_not_cached_oversize: c.units_not_cached_oversize,
            peak_channels_in_use: self.peak_channels,
            final_channels_in_use: final_in_use,
            events_processed: self.events,
        };
        Ok((metrics, self.trace))
    }
}

/// Samples a topology and an arrival stream from `cfg` and runs to the horizon.
pub fn run(cfg: &SimConfig) -> Result<Metrics> {
    run_traced(cfg, false).map(|(m, _)| m)
}

pub fn run_traced(cfg: &SimConfig, trace: bool) -> Result<(Metrics, Option<Vec<TraceRecord>>)> {
    let mut sim = Simulation::new(cfg)?;
    if trace {
        sim.enable_trace();
    }
    sim.schedule_poisson_arrivals()?;
    sim.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Layer;

    fn small_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.catalog.contents = 3;
        cfg.catalog.chunks = 100;
        cfg.sim.duration_s = 100.0;
        cfg.sim.audit = true;
        cfg
    }

    fn sim_at(cfg: &SimConfig, positions: Vec<(f64, f64)>) -> Simulation {
        let topo = Topology::from_positions(positions, cfg.topology.cell_radius_m, cfg.topology.r_d2d_m).unwrap();
        Simulation::with_topology(cfg, topo).unwrap()
    }

    fn base(sim: &Simulation, content: u32, chunk: u32) -> UnitId {
        sim.catalog().unit_id(content, chunk, Layer::Base).unwrap()
    }

    #[test]
    fn service_duration_examples() {
        let u = ContentUnit {
            content: 1,
            chunk: 1,
            layer: Layer::Base,
            id: UnitId(1),
            size_bits: 3.22e6,
        };
        assert!((service_duration(&u, ServiceMode::Local, 50e6, 20e6) - 0.0644).abs() < 1e-15);
        let p = ChannelParams::default();
        let rate = p.link_rate(6.0, 300.0, 4.2).unwrap();
        assert!(service_duration(&u, ServiceMode::BsU, rate, 20e6) > service_duration(&u, ServiceMode::Bs, rate, 20e6));
        let near = p.link_rate(0.08, 50.0, 3.0).unwrap();
        let far = p.link_rate(0.08, 150.0, 3.0).unwrap();
        assert!(service_duration(&u, ServiceMode::D2d, near, 20e6) < service_duration(&u, ServiceMode::D2d, far, 20e6));
    }

    #[test]
    fn local_hit_hand_trace() {
        let cfg = small_cfg();
        let mut sim = sim_at(&cfg, vec![(10.0, 0.0)]);
        let u = base(&sim, 1, 1);
        sim.preload_device(0, u).unwrap();
        sim.schedule_session(1.0, 0, vec![u]).unwrap();
        let (m, _) = sim.run().unwrap();
        assert_eq!(m.units_served, [1, 0, 0, 0]);
        assert!((m.ledger.e_loc() - 2.576e-3).abs() < 1e-15, "{}", m.ledger.e_loc());
        assert_eq!(m.ledger.e_loc(), m.e_total());
        assert_eq!(m.peak_channels_in_use, 0);
        assert_eq!(m.sessions_completed, 1);
    }

    #[test]
    fn nearest_of_two_holders_serves() {
        let cfg = small_cfg();
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0), (150.0, 0.0), (50.0, 0.0)]);
        let u = base(&sim, 2, 1);
        sim.preload_device(1, u).unwrap();
        sim.preload_device(2, u).unwrap();
        sim.schedule_session(0.0, 0, vec![u]).unwrap();
        assert_eq!(sim.dispatch_unit(0).unwrap(), ServiceDecision::D2d { holder: 2, distance_m: 50.0 });
        sim.complete_unit(0).unwrap();
        let expected = 0.08 * 3.22e6 / cfg.channel.link_rate(0.08, 50.0, 3.0).unwrap();
        assert!((sim.ledger().e_d2d() - expected).abs() < 1e-15);
        assert!(sim.device_cache(0).contains(u));
        assert!(sim.device_cache(2).contains(u) && sim.device_cache(1).contains(u));
        assert!(!sim.bs_cache().contains(u));
        assert_eq!(sim.channels_in_use(), 0);
    }

    #[test]
    fn holder_beyond_radius_is_ignored() {
        let mut cfg = small_cfg();
        cfg.topology.r_d2d_m = 100.0;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0), (150.0, 0.0)]);
        let u = base(&sim, 1, 1);
        sim.preload_device(1, u).unwrap();
        sim.schedule_session(0.0, 0, vec![u]).unwrap();
        assert_eq!(sim.dispatch_unit(0).unwrap(), ServiceDecision::BsU);
    }

    #[test]
    fn bs_u_completion_caches_at_bs_and_requester() {
        let cfg = small_cfg();
        let mut sim = sim_at(&cfg, vec![(100.0, 100.0)]);
        let u = base(&sim, 3, 2);
        sim.schedule_session(0.0, 0, vec![u]).unwrap();
        assert_eq!(sim.dispatch_unit(0).unwrap(), ServiceDecision::BsU);
        assert_eq!(sim.channels_in_use(), 1);
        sim.complete_unit(0).unwrap();
        assert!(sim.bs_cache().contains(u));
        assert!(sim.device_cache(0).contains(u));
        assert_eq!(sim.sessions()[0].status, SessionStatus::Done);
        let rate = cfg.channel.link_rate(6.0, 100.0 * 2f64.sqrt(), 4.2).unwrap();
        let expected = 6.0 * 3.22e6 / rate + cfg.power.p_bsu_w() * 3.22e6 / 20e6;
        assert!((sim.ledger().e_bs_u() - expected).abs() < 1e-12);
        assert!(matches!(sim.complete_unit(0), Err(Error::Invariant(_))));
    }

    #[test]
    fn bs_hit_when_cached_at_bs_only() {
        let cfg = small_cfg();
        let mut sim = sim_at(&cfg, vec![(30.0, 40.0)]);
        let u = base(&sim, 1, 2);
        sim.preload_bs(u).unwrap();
        sim.schedule_session(0.0, 0, vec![u]).unwrap();
        assert_eq!(sim.dispatch_unit(0).unwrap(), ServiceDecision::Bs);
        sim.complete_unit(0).unwrap();
        let expected = 6.0 * 3.22e6 / cfg.channel.link_rate(6.0, 50.0, 4.2).unwrap();
        assert!((sim.ledger().e_bs() - expected).abs() < 1e-15);
    }

    #[test]
    fn exhausted_pool_drops_session_and_reclassifies() {
        let mut cfg = small_cfg();
        cfg.channel.pool_size = 1;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0), (300.0, 0.0)]);
        let (u1, u3) = (base(&sim, 1, 1), base(&sim, 1, 2));
        sim.preload_device(0, u1).unwrap();
        // device 1 takes the only channel for a long BS(U) transfer
        sim.schedule_session(0.0, 1, vec![base(&sim, 2, 1)]).unwrap();
        sim.schedule_session(0.01, 0, vec![u1, u3]).unwrap();
        let (m, trace) = {
            let mut sim = sim;
            sim.enable_trace();
            sim.run().unwrap()
        };
        assert_eq!(m.sessions_dropped, 1);
        assert_eq!(m.units_blocked, 1);
        assert_eq!(m.units_dropped, 1);
        assert_eq!(m.ledger.e_loc(), 0.0);
        assert!((m.ledger.e_block() - 2.576e-3).abs() < 1e-15);
        assert_eq!(m.ledger.joules(ServiceMode::Local, Layer::Base, Outcome::Fail), m.ledger.e_block());
        assert_eq!(m.ledger.served_bits(ServiceMode::Local), 0.0);
        assert_eq!(m.final_channels_in_use, 0);
        assert!(trace.unwrap().iter().any(|r| r.event == "blocked" && r.requester == 0));
    }

    #[test]
    fn block_on_first_unit_costs_nothing() {
        let mut cfg = small_cfg();
        cfg.channel.pool_size = 0;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0)]);
        let u = base(&sim, 1, 1);
        sim.schedule_session(0.0, 0, vec![u]).unwrap();
        let (m, _) = sim.run().unwrap();
        assert_eq!(m.sessions_dropped, 1);
        assert_eq!(m.e_total(), 0.0);
    }

    #[test]
    fn repeated_requests_become_local_with_a_large_cache() {
        let mut cfg = small_cfg();
        cfg.cache.c_dev_bits = 1e12;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0)]);
        let units: Vec<UnitId> = sim.catalog().units().iter().take(20).map(|u| u.id).collect();
        sim.schedule_session(0.0, 0, units.clone()).unwrap();
        sim.schedule_session(50.0, 0, units.clone()).unwrap();
        let (m, _) = sim.run().unwrap();
        let n = units.len() as u64;
        assert_eq!(m.units_served, [n, 0, 0, n]);
        assert_eq!(m.sessions_completed, 2);
    }

    #[test]
    fn horizon_cancels_without_energy() {
        let mut cfg = small_cfg();
        cfg.sim.duration_s = 0.05;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0)]);
        sim.schedule_session(0.0, 0, vec![base(&sim, 1, 1)]).unwrap();
        let (m, _) = sim.run().unwrap();
        assert_eq!(m.units_cancelled, 1);
        assert_eq!(m.sessions_truncated, 1);
        assert_eq!(m.e_total(), 0.0);
        assert_eq!(m.final_channels_in_use, 0);
    }

    #[test]
    fn warmup_services_are_not_reported() {
        let mut cfg = small_cfg();
        cfg.sim.warmup_s = 10.0;
        let mut sim = sim_at(&cfg, vec![(0.0, 0.0)]);
        let u = base(&sim, 1, 1);
        sim.schedule_session(1.0, 0, vec![u]).unwrap();
        sim.schedule_session(20.0, 0, vec![u]).unwrap();
        let (m, _) = sim.run().unwrap();
        assert_eq!(m.units_served, [1, 0, 0, 0]);
        assert_eq!(m.sessions_arrived, 1);
        assert_eq!(m.e_total(), m.ledger.e_loc());
    }

    #[test]
    fn zero_arrival_rate_gives_zero_metrics() {
        let mut cfg = small_cfg();
        cfg.sim.arrival_rate_per_device_hz = 0.0;
        let m = run(&cfg).unwrap();
        assert_eq!(m.e_total(), 0.0);
        assert_eq!(m.sessions_arrived, 0);
        assert_eq!(m.events_processed, 0);
        assert!(m.numeric_fields().iter().filter(|(k, _)| k != "devices").all(|(_, v)| *v == 0.0));
    }

    fn busy_cfg() -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.catalog.contents = 20;
        cfg.catalog.chunks = 10;
        cfg.topology.cell_radius_m = 200.0;
        cfg.sim.duration_s = 60.0;
        cfg.sim.arrival_rate_per_device_hz = 0.05;
        cfg.cache.c_dev_bits = 40e6;
        cfg.cache.c_bs_bits = 400e6;
        cfg.sim.audit = true;
        cfg
    }

    #[test]
    fn same_seed_same_metrics_bytes() {
        let cfg = busy_cfg();
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        assert_eq!(a, b);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
        let mut other = cfg.clone();
        other.sim.seed = 2;
        let c = run(&other).unwrap();
        assert_ne!(c.config_hash, a.config_hash);
        assert_ne!(c.e_total(), a.e_total());
    }

    #[test]
    fn audited_runs_hold_invariants_for_every_policy() {
        for kind in PolicyKind::ALL {
            for pool in [3, 1000] {
                let mut cfg = busy_cfg();
                cfg.policy.kind = kind;
                cfg.channel.pool_size = pool;
                cfg.sim.single_tx_per_device = pool == 3;
                let m = run(&cfg).unwrap();
                assert_eq!(m.final_channels_in_use, 0);
                assert!(m.peak_channels_in_use <= pool);
                let l = &m.ledger;
                assert_eq!(l.e_total(), l.e_loc() + l.e_d2d() + l.e_bs() + l.e_bs_u() + l.e_block());
                if pool == 1000 {
                    assert_eq!(m.units_blocked, 0);
                    assert_eq!(l.e_block(), 0.0);
                } else {
                    assert!(m.units_blocked > 0, "{kind}");
                }
            }
        }
    }

    #[test]
    fn variants_run_under_audit() {
        let mut cfg = busy_cfg();
        cfg.sim.holder_selection = HolderSelection::Random;
        cfg.channel.d2d_pool_size = Some(5);
        cfg.channel.pool_size = 10;
        cfg.sim.neighbor_count = NeighborCount::Rounded;
        cfg.policy.kind = PolicyKind::Pdc;
        cfg.policy.pdc_randomized = true;
        let m = run(&cfg).unwrap();
        assert!(m.peak_channels_in_use <= 15);
        assert!(m.units_served[ServiceMode::D2d.index()] > 0);
    }

    #[test]
    fn trace_replays_to_the_ledger() {
        let (m, trace) = run_traced(&busy_cfg(), true).unwrap();
        let trace = trace.unwrap();
        let spent: f64 = trace.iter().filter(|r| r.event == "complete").map(|r| r.joules).sum();
        assert!((spent - m.e_total()).abs() <= 1e-9 * m.e_total());
        let mut last = 0.0;
        for r in &trace {
            assert!(r.time_s >= last && r.time_s <= 60.0);
            last = r.time_s;
        }
        let mut buf = Vec::new();
        write_trace_csv(&trace, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("time_s,event,requester,unit,mode,duration_s,joules\n"));
    }

    #[test]
    fn invalid_config_fails_before_running() {
        let mut cfg = small_cfg();
        cfg.sim.duration_s = 0.0;
        assert!(matches!(run(&cfg), Err(Error::Config { .. })));
        let mut cfg = small_cfg();
        cfg.cache.c_dev_bits = -1.0;
        assert!(matches!(run(&cfg), Err(Error::Config { ref field, .. }) if field == "cache.c_dev_bits"));
    }

    #[test]
    fn config_toml_round_trip_and_hash() {
        let cfg = busy_cfg();
        let back = SimConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert!(SimConfig::from_toml("[sim]\nbogus = 1\n").is_err());
        let partial = SimConfig::from_toml("[cache]\nc_dev_bits = 2e8\n").unwrap();
        assert_eq!(partial.cache.c_dev_bits, 2e8);
        assert_eq!(partial.channel, ChannelParams::default());
    }

    #[test]
    fn sub_seeds_differ_per_stream() {
        let s: Vec<u64> = [Stream::Topology, Stream::Arrivals, Stream::Holder, Stream::Policy]
            .iter()
            .map(|&st| sub_seed(1, st))
            .collect();
        for i in 0..s.len() {
            for j in i + 1..s.len() {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_ne!(sub_seed(1, Stream::Topology), sub_seed(2, Stream::Topology));
    }
}
