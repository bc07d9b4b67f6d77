//! Cache replacement.
//!
//! Every policy answers the same question: the cache is too full to admit an
//! incoming unit, which residents go? The baselines rank residents by a
//! single key (recency for LRU, popularity for PDC, access count per bit for
//! SXO). EPDC ranks by prospective energy and drops the cheapest units first.
//! OPT keeps the subset with the largest total prospective energy that still
//! leaves room, solved as a 0/1 knapsack over sizes discretized in steps of
//! `delta_bits`.
//!
//! Tie-break for every ranked policy: equal keys evict the larger unit first,
//! then the smaller unit id.

pub mod knapsack;

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::UnitId;
use crate::error::{Error, Result};

/// Largest cache the exhaustive oracle accepts.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Lru,
    Pdc,
    Sxo,
    Epdc,
    Opt,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [PolicyKind::Lru, PolicyKind::Pdc, PolicyKind::Sxo, PolicyKind::Epdc, PolicyKind::Opt];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Lru => "lru",
            PolicyKind::Pdc => "pdc",
            PolicyKind::Sxo => "sxo",
            PolicyKind::Epdc => "epdc",
            PolicyKind::Opt => "opt",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::config("policy", format!("unknown policy `{s}`, expected one of lru, pdc, sxo, epdc, opt")))
    }
}

/// Which knapsack table OPT fills.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptSolver {
    /// Table over every retained-capacity value (cost grows with capacity / delta).
    Capacity,
    /// Table over the overflow only (cost grows with unit size / delta).
    #[default]
    Deficit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub delta_bits: f64,
    pub solver: OptSolver,
    pub pdc_randomized: bool,
}

impl Policy {
    pub fn new(kind: PolicyKind, delta_bits: f64) -> Self {
        Policy {
            kind,
            delta_bits,
            solver: OptSolver::default(),
            pdc_randomized: false,
        }
    }
}

impl Policy {
    /// Eviction key of the ranked policies; `None` for OPT and randomized PDC.
    pub fn rank_key(&self) -> Option<RankKey> {
        match self.kind {
            PolicyKind::Lru => Some(RankKey::Recency),
            PolicyKind::Pdc if !self.pdc_randomized => Some(RankKey::Popularity),
            PolicyKind::Sxo => Some(RankKey::AccessDensity),
            PolicyKind::Epdc => Some(RankKey::Energy),
            _ => None,
        }
    }
}

/// Quantity a ranked policy sorts residents by; the smallest goes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankKey {
    /// Last access time.
    Recency,
    /// Request probability.
    Popularity,
    /// Access count per bit.
    AccessDensity,
    /// Prospective energy.
    Energy,
}

impl RankKey {
    fn of(self, e: &CacheEntry) -> f64 {
        match self {
            RankKey::Recency => e.last_access as f64,
            RankKey::Popularity => e.request_prob,
            RankKey::AccessDensity => e.access_count as f64 / e.size_bits,
            RankKey::Energy => e.e_all,
        }
    }

    fn follows_access(self) -> bool {
        matches!(self, RankKey::Recency | RankKey::AccessDensity)
    }

    fn rank(self, e: &CacheEntry, slot: usize) -> Rank {
        Rank {
            key: self.of(e),
            size_bits: e.size_bits,
            id: e.id,
            slot,
        }
    }
}

/// What the cache needs to know about an incoming unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub id: UnitId,
    pub size_bits: f64,
    pub e_all: f64,
    pub request_prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub id: UnitId,
    pub size_bits: f64,
    pub e_all: f64,
    pub request_prob: f64,
    /// Logical time of the last insert or hit.
    pub last_access: u64,
    pub access_count: u64,
}

#[derive(Debug, Clone)]
pub struct CacheState {
    capacity_bits: f64,
    entries: Vec<CacheEntry>,
    index: HashMap<UnitId, usize>,
    used_bits: f64,
    clock: u64,
    /// Residents kept sorted by one eviction key, when requested.
    order: Option<(RankKey, BTreeSet<Rank>)>,
}

impl CacheState {
    pub fn new(capacity_bits: f64) -> Self {
        Self::with_order(capacity_bits, None)
    }

    /// A cache that maintains a sorted index for `key`, turning ranked
    /// evictions into a walk from the low end. Decisions are unchanged.
    pub fn with_order(capacity_bits: f64, key: Option<RankKey>) -> Self {
        CacheState {
            capacity_bits,
            entries: Vec::new(),
            index: HashMap::new(),
            used_bits: 0.0,
            clock: 0,
            order: key.map(|k| (k, BTreeSet::new())),
        }
    }

    pub fn capacity_bits(&self) -> f64 {
        self.capacity_bits
    }

    pub fn used_bits(&self) -> f64 {
        self.used_bits
    }

    pub fn free_bits(&self) -> f64 {
        self.capacity_bits - self.used_bits
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, id: UnitId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn entries(&self) -> &[CacheEntry] {
        &self.entries
    }

    pub fn entry(&self, id: UnitId) -> Option<&CacheEntry> {
        self.index.get(&id).map(|&i| &self.entries[i])
    }

    pub fn ids(&self) -> Vec<UnitId> {
        self.entries.iter().map(|e| e.id).collect()
    }

    /// Sum of the prospective energy of all residents.
    pub fn retained_energy(&self) -> f64 {
        self.entries.iter().map(|e| e.e_all).sum()
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Records a hit: refreshes recency and bumps the access count.
    pub fn touch(&mut self, id: UnitId) -> bool {
        let Some(&i) = self.index.get(&id) else {
            return false;
        };
        let now = self.tick();
        let e = &mut self.entries[i];
        if let Some((key, set)) = self.order.as_mut().filter(|(k, _)| k.follows_access()) {
            set.remove(&key.rank(e, 0));
            e.last_access = now;
            e.access_count += 1;
            set.insert(key.rank(e, 0));
        } else {
            e.last_access = now;
            e.access_count += 1;
        }
        true
    }

    fn remove(&mut self, id: UnitId) -> Option<CacheEntry> {
        let i = self.index.remove(&id)?;
        let entry = self.entries.swap_remove(i);
        if let Some(moved) = self.entries.get(i) {
            self.index.insert(moved.id, i);
        }
        if let Some((key, set)) = self.order.as_mut() {
            set.remove(&key.rank(&entry, 0));
        }
        Some(entry)
    }

    fn admit(&mut self, unit: &Candidate) {
        let now = self.tick();
        self.index.insert(unit.id, self.entries.len());
        self.entries.push(CacheEntry {
            id: unit.id,
            size_bits: unit.size_bits,
            e_all: unit.e_all,
            request_prob: unit.request_prob,
            last_access: now,
            access_count: 1,
        });
        if let Some((key, set)) = self.order.as_mut() {
            set.insert(key.rank(self.entries.last().expect("just pushed"), 0));
        }
    }

    fn recompute_used(&mut self) {
        self.used_bits = self.entries.iter().map(|e| e.size_bits).sum();
    }

    /// Applies a decision produced for `unit` against this cache.
    pub fn apply(&mut self, decision: &EvictionDecision, unit: &Candidate) -> Result<()> {
        if decision.inserted == Some(unit.id) {
            self.commit(&decision.evicted, unit)
        } else {
            self.commit_evictions(&decision.evicted)
        }
    }

    fn commit(&mut self, evicted: &[UnitId], unit: &Candidate) -> Result<()> {
        for id in evicted {
            self.remove(*id)
                .ok_or_else(|| Error::Invariant(format!("evicting unit {id} that is not resident")))?;
        }
        self.admit(unit);
        self.check_capacity()
    }

    fn commit_evictions(&mut self, evicted: &[UnitId]) -> Result<()> {
        for id in evicted {
            self.remove(*id)
                .ok_or_else(|| Error::Invariant(format!("evicting unit {id} that is not resident")))?;
        }
        self.check_capacity()
    }

    fn check_capacity(&mut self) -> Result<()> {
        self.recompute_used();
        if !within(self.used_bits, self.capacity_bits) {
            return Err(Error::Invariant(format!(
                "cache holds {} bits over a {} bit capacity",
                self.used_bits, self.capacity_bits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertOutcome {
    /// The unit was admitted (possibly after evictions).
    Inserted,
    /// The unit was already cached; only its metadata changed.
    AlreadyResident,
    /// The unit is larger than the whole cache and was not cached.
    Oversize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictionDecision {
    pub retained: Vec<UnitId>,
    pub evicted: Vec<UnitId>,
    pub inserted: Option<UnitId>,
    pub outcome: InsertOutcome,
}

impl EvictionDecision {
    fn keep_all(cache: &CacheState, inserted: Option<UnitId>, outcome: InsertOutcome) -> Self {
        EvictionDecision {
            retained: cache.ids(),
            evicted: Vec::new(),
            inserted,
            outcome,
        }
    }

    fn from_keep(cache: &CacheState, keep: &[bool], unit: &Candidate) -> Self {
        let (mut retained, mut evicted) = (Vec::new(), Vec::new());
        for (e, &k) in cache.entries.iter().zip(keep) {
            if k {
                retained.push(e.id);
            } else {
                evicted.push(e.id);
            }
        }
        EvictionDecision {
            retained,
            evicted,
            inserted: Some(unit.id),
            outcome: InsertOutcome::Inserted,
        }
    }

    /// Sum of `e_all` over the retained residents.
    pub fn retained_energy(&self, cache: &CacheState) -> f64 {
        self.retained.iter().filter_map(|id| cache.entry(*id)).map(|e| e.e_all).sum()
    }
}

/// Occupancy check with a relative slack of 1e-12 so that rounding in
/// running sums never forces an extra eviction or flags a full cache.
fn within(used_bits: f64, capacity_bits: f64) -> bool {
    used_bits <= capacity_bits * (1.0 + 1e-12)
}

fn fits(cache: &CacheState, unit: &Candidate) -> bool {
    within(cache.used_bits + unit.size_bits, cache.capacity_bits)
}

/// Outcome of an insert reduced to what a caller must act on.
#[derive(Debug, Clone, PartialEq)]
pub struct Admission {
    pub outcome: InsertOutcome,
    pub evicted: Vec<UnitId>,
}

/// Slots of the residents to evict.
fn victims(policy: &Policy, cache: &CacheState, unit: &Candidate, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let from_mask = |keep: Vec<bool>| keep.iter().enumerate().filter(|(_, k)| !**k).map(|(i, _)| i).collect();
    Ok(match policy.kind {
        PolicyKind::Lru => evict_ascending(cache, unit, RankKey::Recency),
        PolicyKind::Pdc if policy.pdc_randomized => from_mask(pdc_randomized_keep(cache, unit, rng)),
        PolicyKind::Pdc => evict_ascending(cache, unit, RankKey::Popularity),
        PolicyKind::Sxo => evict_ascending(cache, unit, RankKey::AccessDensity),
        PolicyKind::Epdc => evict_ascending(cache, unit, RankKey::Energy),
        PolicyKind::Opt => from_mask(opt_keep(cache, unit, policy.delta_bits, policy.solver)?),
    })
}

fn mask(n: usize, evicted: &[usize]) -> Vec<bool> {
    let mut keep = vec![true; n];
    for &i in evicted {
        keep[i] = false;
    }
    keep
}

/// Decides without mutating the cache. Handles the resident, oversize and
/// fast (no eviction needed) paths before dispatching to the policy.
pub fn decide(policy: &Policy, cache: &CacheState, unit: &Candidate, rng: &mut impl Rng) -> Result<EvictionDecision> {
    if cache.contains(unit.id) {
        return Ok(EvictionDecision::keep_all(cache, None, InsertOutcome::AlreadyResident));
    }
    if unit.size_bits > cache.capacity_bits {
        return Ok(EvictionDecision::keep_all(cache, None, InsertOutcome::Oversize));
    }
    if fits(cache, unit) {
        return Ok(EvictionDecision::keep_all(cache, Some(unit.id), InsertOutcome::Inserted));
    }
    let evicted = victims(policy, cache, unit, rng)?;
    Ok(EvictionDecision::from_keep(cache, &mask(cache.len(), &evicted), unit))
}

/// Decides and applies. A resident unit is touched instead of re-inserted.
pub fn insert(policy: &Policy, cache: &mut CacheState, unit: &Candidate, rng: &mut impl Rng) -> Result<EvictionDecision> {
    let decision = decide(policy, cache, unit, rng)?;
    match decision.outcome {
        InsertOutcome::AlreadyResident => {
            cache.touch(unit.id);
        }
        InsertOutcome::Oversize => {}
        InsertOutcome::Inserted => cache.apply(&decision, unit)?,
    }
    Ok(decision)
}

/// Same effect as [`insert`] without materializing the retained set.
pub fn admit(policy: &Policy, cache: &mut CacheState, unit: &Candidate, rng: &mut impl Rng) -> Result<Admission> {
    if cache.touch(unit.id) {
        return Ok(Admission {
            outcome: InsertOutcome::AlreadyResident,
            evicted: Vec::new(),
        });
    }
    if unit.size_bits > cache.capacity_bits {
        return Ok(Admission {
            outcome: InsertOutcome::Oversize,
            evicted: Vec::new(),
        });
    }
    let evicted = if fits(cache, unit) {
        Vec::new()
    } else {
        victims(policy, cache, unit, rng)?
            .into_iter()
            .map(|i| cache.entries[i].id)
            .collect()
    };
    cache.commit(&evicted, unit)?;
    Ok(Admission {
        outcome: InsertOutcome::Inserted,
        evicted,
    })
}

/// Eviction-order key: smaller evicts first.
#[derive(Debug, Clone, Copy)]
struct Rank {
    key: f64,
    size_bits: f64,
    id: UnitId,
    slot: usize,
}

impl Ord for Rank {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then_with(|| other.size_bits.total_cmp(&self.size_bits))
            .then_with(|| self.id.cmp(&other.id))
    }
}

impl PartialOrd for Rank {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Rank {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Rank {}

/// Evicts residents in ascending `key` order until `unit` fits. Equivalent to
/// sorting all residents and cutting from the low end. A cache carrying a
/// sorted index for `key` is walked directly; otherwise each victim is found
/// by a linear scan, falling back to a full sort for long runs.
fn evict_ascending(cache: &CacheState, unit: &Candidate, key: RankKey) -> Vec<usize> {
    const SCAN_LIMIT: usize = 8;
    let n = cache.entries.len();
    let target = cache.capacity_bits - unit.size_bits;
    let mut evicted = Vec::new();
    let mut remaining = cache.used_bits;
    if let Some((_, set)) = cache.order.as_ref().filter(|(k, _)| *k == key) {
        for victim in set {
            if within(remaining, target) {
                break;
            }
            evicted.push(cache.index[&victim.id]);
            remaining -= victim.size_bits;
        }
        return evicted;
    }
    let mut keep = vec![true; n];
    let rank = |slot: usize| key.rank(&cache.entries[slot], slot);
    while !within(remaining, target) && evicted.len() < SCAN_LIMIT {
        let Some(victim) = (0..n).filter(|&i| keep[i]).map(rank).min() else {
            return evicted;
        };
        keep[victim.slot] = false;
        evicted.push(victim.slot);
        remaining -= victim.size_bits;
    }
    if !within(remaining, target) {
        let mut rest: Vec<Rank> = (0..n).filter(|&i| keep[i]).map(rank).collect();
        rest.sort_unstable();
        for victim in rest {
            if within(remaining, target) {
                break;
            }
            evicted.push(victim.slot);
            remaining -= victim.size_bits;
        }
    }
    evicted
}

/// Evicts the least recently used residents.
pub fn lru_replace(cache: &CacheState, unit: &Candidate) -> EvictionDecision {
    EvictionDecision::from_keep(cache, &mask(cache.len(), &evict_ascending(cache, unit, RankKey::Recency)), unit)
}

/// Evicts the least popular residents (lowest `p_i * p_j * p_k`).
pub fn pdc_replace(cache: &CacheState, unit: &Candidate) -> EvictionDecision {
    EvictionDecision::from_keep(cache, &mask(cache.len(), &evict_ascending(cache, unit, RankKey::Popularity)), unit)
}

/// Randomized PDC: each victim is drawn with probability proportional to
/// `1 - p / sum(p)` over the remaining residents.
pub fn pdc_replace_randomized(cache: &CacheState, unit: &Candidate, rng: &mut impl Rng) -> EvictionDecision {
    EvictionDecision::from_keep(cache, &pdc_randomized_keep(cache, unit, rng), unit)
}

fn pdc_randomized_keep(cache: &CacheState, unit: &Candidate, rng: &mut impl Rng) -> Vec<bool> {
    let n = cache.entries.len();
    let mut keep = vec![true; n];
    let mut remaining = cache.used_bits;
    let target = cache.capacity_bits - unit.size_bits;
    while !within(remaining, target) {
        let alive: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        if alive.is_empty() {
            break;
        }
        let total_p: f64 = alive.iter().map(|&i| cache.entries[i].request_prob).sum();
        let weights: Vec<f64> = alive
            .iter()
            .map(|&i| if total_p > 0.0 { 1.0 - cache.entries[i].request_prob / total_p } else { 1.0 })
            .collect();
        let sum: f64 = weights.iter().sum();
        let pick = if sum > 0.0 {
            let mut u = rng.random::<f64>() * sum;
            let mut chosen = alive[alive.len() - 1];
            for (&slot, w) in alive.iter().zip(&weights) {
                if u < *w {
                    chosen = slot;
                    break;
                }
                u -= w;
            }
            chosen
        } else {
            // A lone resident carries all the mass; it is the only choice.
            alive[0]
        };
        keep[pick] = false;
        remaining -= cache.entries[pick].size_bits;
    }
    keep
}

/// Evicts residents with the fewest accesses per bit: large, rarely used
/// units go first.
pub fn sxo_replace(cache: &CacheState, unit: &Candidate) -> EvictionDecision {
    EvictionDecision::from_keep(cache, &mask(cache.len(), &evict_ascending(cache, unit, RankKey::AccessDensity)), unit)
}

/// Energy-prioritized replacement: with residents sorted by prospective
/// energy (largest first), units are removed from the tail until the
/// incoming unit fits.
pub fn epdc_replace(cache: &CacheState, unit: &Candidate) -> EvictionDecision {
    EvictionDecision::from_keep(cache, &mask(cache.len(), &evict_ascending(cache, unit, RankKey::Energy)), unit)
}

fn discretize(size_bits: f64, delta_bits: f64) -> u64 {
    (size_bits / delta_bits - 1e-9).ceil().max(0.0) as u64
}

/// Knapsack replacement. Sizes become `ceil(s / delta)` weight units and the
/// budget `floor((capacity - s_new) / delta)`; the retained set maximizes the
/// total prospective energy within the budget. The incoming unit is always
/// admitted.
pub fn opt_replace(cache: &CacheState, unit: &Candidate, delta_bits: f64, solver: OptSolver) -> Result<EvictionDecision> {
    if unit.size_bits > cache.capacity_bits {
        return Ok(EvictionDecision::keep_all(cache, None, InsertOutcome::Oversize));
    }
    Ok(EvictionDecision::from_keep(cache, &opt_keep(cache, unit, delta_bits, solver)?, unit))
}

fn opt_keep(cache: &CacheState, unit: &Candidate, delta_bits: f64, solver: OptSolver) -> Result<Vec<bool>> {
    if !(delta_bits > 0.0) {
        return Err(Error::config("policy.delta_bits", "discretization step must be positive"));
    }
    let room = (cache.capacity_bits - unit.size_bits).max(0.0);
    let budget = (room / delta_bits + 1e-9).floor() as u64;
    let weights: Vec<u64> = cache.entries.iter().map(|e| discretize(e.size_bits, delta_bits)).collect();
    let values: Vec<f64> = cache.entries.iter().map(|e| e.e_all).collect();
    Ok(match solver {
        OptSolver::Capacity => knapsack::keep_within_budget(&weights, &values, budget),
        OptSolver::Deficit => {
            let total: u64 = weights.iter().sum();
            knapsack::evict_to_cover(&weights, &values, total.saturating_sub(budget))
                .ok_or_else(|| Error::Invariant("knapsack deficit exceeds the whole cache".into()))?
        }
    })
}

/// Exhaustive search over all retained subsets with exact sizes. Oracle for
/// small caches only.
pub fn brute_force_replace(cache: &CacheState, unit: &Candidate) -> Result<EvictionDecision> {
    let n = cache.entries.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::Refused(format!(
            "exhaustive search over {n} residents exceeds the limit of {BRUTE_FORCE_LIMIT}"
        )));
    }
    let room = cache.capacity_bits - unit.size_bits;
    if room < 0.0 {
        return Ok(EvictionDecision::keep_all(cache, None, InsertOutcome::Oversize));
    }
    let mut best: Option<(f64, u32)> = None;
    for mask in 0u32..(1u32 << n) {
        let mut size = 0.0;
        let mut value = 0.0;
        for (i, e) in cache.entries.iter().enumerate() {
            if mask & (1 << i) != 0 {
                size += e.size_bits;
                value += e.e_all;
            }
        }
        if size <= room && best.is_none_or(|(v, _)| value > v) {
            best = Some((value, mask));
        }
    }
    let mask = best.map_or(0, |b| b.1);
    let keep: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
    Ok(EvictionDecision::from_keep(cache, &keep, unit))
}
