//! Energy accounting.
//!
//! Two halves live here. [`EnergyModel`] is the prospective model: for each
//! unit it predicts the expected energy of a future request by weighting the
//! four service scenarios (local hit, D2D, BS cache, universal source via
//! the BS) with availability probabilities derived from popularity and cache
//! capacities. That expectation is the value function of the OPT and EPDC
//! policies. [`EnergyLedger`] is the realized side: the joules actually spent
//! by each completed service, split by mode, layer and outcome.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ContentUnit, Layer};
use crate::channel::ProspectiveRates;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerProfile {
    pub p_d2d_w: f64,
    pub p_bs_w: f64,
    pub theta_loc: f64,
    pub theta_bs: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            p_d2d_w: 0.08,
            p_bs_w: 6.0,
            theta_loc: 2.0,
            theta_bs: 5.0,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("power.p_d2d_w", self.p_d2d_w), ("power.p_bs_w", self.p_bs_w)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        // theta > 1 keeps the local and BS-receive powers strictly below their parents.
        for (field, v) in [("power.theta_loc", self.theta_loc), ("power.theta_bs", self.theta_bs)] {
            if !(v > 1.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must exceed 1, got {v}")));
            }
        }
        Ok(())
    }

    /// Local-hit retrieval power.
    pub fn p_loc_w(&self) -> f64 {
        self.p_d2d_w / self.theta_loc
    }

    /// BS reception power for backhaul fetches.
    pub fn p_bsu_w(&self) -> f64 {
        self.p_bs_w / self.theta_bs
    }

    pub fn p_mode_w(&self, mode: ServiceMode) -> f64 {
        match mode {
            ServiceMode::Local => self.p_loc_w(),
            ServiceMode::D2d => self.p_d2d_w,
            ServiceMode::Bs | ServiceMode::BsU => self.p_bs_w,
        }
    }

    /// Joules to deliver `size_bits` in `mode` at `rate_bps`; BS(U) adds the
    /// backhaul reception term at `backhaul_bps`.
    pub fn service_energy(&self, mode: ServiceMode, size_bits: f64, rate_bps: f64, backhaul_bps: f64) -> Result<f64> {
        if !(rate_bps > 0.0) {
            return Err(Error::Domain(format!("service rate must be positive, got {rate_bps}")));
        }
        let radio = self.p_mode_w(mode) * size_bits / rate_bps;
        match mode {
            ServiceMode::BsU => {
                if !(backhaul_bps > 0.0) {
                    return Err(Error::Domain(format!("backhaul rate must be positive, got {backhaul_bps}")));
                }
                Ok(radio + self.p_bsu_w() * size_bits / backhaul_bps)
            }
            _ => Ok(radio),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceMode {
    Local,
    D2d,
    Bs,
    BsU,
}

impl ServiceMode {
    pub const ALL: [ServiceMode; 4] = [ServiceMode::Local, ServiceMode::D2d, ServiceMode::Bs, ServiceMode::BsU];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ServiceMode::Local => "loc",
            ServiceMode::D2d => "d2d",
            ServiceMode::Bs => "bs",
            ServiceMode::BsU => "bs_u",
        }
    }

    pub fn needs_channel(self) -> bool {
        self != ServiceMode::Local
    }
}

impl fmt::Display for ServiceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ServiceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ServiceMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown service mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Fail,
}

impl Outcome {
    pub const ALL: [Outcome; 2] = [Outcome::Success, Outcome::Fail];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn tag(self) -> &'static str {
        match self {
            Outcome::Success => "s",
            Outcome::Fail => "f",
        }
    }
}

/// How the neighbor count enters the D2D availability probability.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborCount {
    /// Real-valued mean `lambda * pi * R^2`.
    #[default]
    Analytic,
    /// Mean rounded to the nearest integer.
    Rounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityModel {
    pub f_loc_fit: f64,
    pub f_bs_fit: f64,
    pub n_ngh: f64,
}

impl AvailabilityModel {
    /// Capacities normalized by the catalog size and clamped to `[0, 1]`.
    pub fn new(total_catalog_bits: f64, c_dev_bits: f64, c_bs_bits: f64, n_ngh: f64) -> Result<Self> {
        if !(total_catalog_bits > 0.0) {
            return Err(Error::Domain("catalog size must be positive".into()));
        }
        if !(n_ngh >= 0.0) {
            return Err(Error::Domain(format!("neighbor count must be non-negative, got {n_ngh}")));
        }
        Ok(AvailabilityModel {
            f_loc_fit: (c_dev_bits / total_catalog_bits).clamp(0.0, 1.0),
            f_bs_fit: (c_bs_bits / total_catalog_bits).clamp(0.0, 1.0),
            n_ngh,
        })
    }
}

/// Probability that at least one of `n_ngh` neighbors holds a unit each
/// neighbor holds with probability `w_loc`.
pub fn d2d_availability(w_loc: f64, n_ngh: f64) -> f64 {
    1.0 - (1.0 - w_loc).powf(n_ngh)
}

/// Weights of the local / D2D / BS / BS(U) scenarios.
pub fn scenario_weights(w_loc: f64, w_d2d: f64, w_bs: f64) -> [f64; 4] {
    let miss_local = 1.0 - w_loc;
    let miss_d2d = miss_local * (1.0 - w_d2d);
    [w_loc, miss_local * w_d2d, miss_d2d * w_bs, miss_d2d * (1.0 - w_bs)]
}

/// Expected per-scenario energies of one unit, joules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeCosts {
    pub loc: f64,
    pub d2d: f64,
    pub bs: f64,
    pub bs_u: f64,
}

impl ModeCosts {
    pub fn as_array(&self) -> [f64; 4] {
        [self.loc, self.d2d, self.bs, self.bs_u]
    }
}

#[derive(Debug, Clone)]
pub struct EnergyModel {
    power: PowerProfile,
    rates: ProspectiveRates,
    availability: AvailabilityModel,
    request_prob: Vec<f64>,
    e_all: Vec<f64>,
}

impl EnergyModel {
    pub fn new(catalog: &Catalog, power: &PowerProfile, rates: ProspectiveRates, availability: AvailabilityModel) -> Result<Self> {
        power.validate()?;
        let mut model = EnergyModel {
            power: power.clone(),
            rates,
            availability,
            request_prob: catalog.units().iter().map(|u| catalog.request_prob(u)).collect(),
            e_all: Vec::new(),
        };
        model.e_all = catalog.units().iter().map(|u| model.compute_e_all(u)).collect();
        Ok(model)
    }

    pub fn availability(&self) -> &AvailabilityModel {
        &self.availability
    }

    pub fn rates(&self) -> &ProspectiveRates {
        &self.rates
    }

    pub fn power(&self) -> &PowerProfile {
        &self.power
    }

    pub fn request_prob(&self, unit: &ContentUnit) -> f64 {
        self.request_prob[unit.id.0 as usize - 1]
    }

    pub fn w_loc(&self, unit: &ContentUnit) -> f64 {
        self.request_prob(unit) * self.availability.f_loc_fit
    }

    pub fn w_bs(&self, unit: &ContentUnit) -> f64 {
        self.request_prob(unit) * self.availability.f_bs_fit
    }

    pub fn w_d2d(&self, unit: &ContentUnit) -> f64 {
        self.w_d2d_with(unit, self.availability.n_ngh)
    }

    pub fn w_d2d_with(&self, unit: &ContentUnit, n_ngh: f64) -> f64 {
        d2d_availability(self.w_loc(unit), n_ngh)
    }

    pub fn e_loc(&self, unit: &ContentUnit) -> f64 {
        self.power.p_loc_w() * unit.size_bits / self.rates.loc
    }

    pub fn e_d2d(&self, unit: &ContentUnit) -> f64 {
        self.power.p_d2d_w * unit.size_bits / self.rates.d2d
    }

    pub fn e_bs(&self, unit: &ContentUnit) -> f64 {
        self.power.p_bs_w * unit.size_bits / self.rates.bs
    }

    pub fn e_bs_u(&self, unit: &ContentUnit) -> f64 {
        self.power.p_bsu_w() * unit.size_bits / self.rates.bs_u + self.e_bs(unit)
    }

    pub fn mode_costs(&self, unit: &ContentUnit) -> ModeCosts {
        ModeCosts {
            loc: self.e_loc(unit),
            d2d: self.e_d2d(unit),
            bs: self.e_bs(unit),
            bs_u: self.e_bs_u(unit),
        }
    }

    pub fn scenario_weights(&self, unit: &ContentUnit) -> [f64; 4] {
        scenario_weights(self.w_loc(unit), self.w_d2d(unit), self.w_bs(unit))
    }

    fn compute_e_all(&self, unit: &ContentUnit) -> f64 {
        self.e_all_with(unit, self.availability.n_ngh)
    }

    /// Expected energy with an explicit neighbor count (e.g. a requester's
    /// actual neighborhood instead of the network mean).
    pub fn e_all_with(&self, unit: &ContentUnit, n_ngh: f64) -> f64 {
        let weights = scenario_weights(self.w_loc(unit), self.w_d2d_with(unit, n_ngh), self.w_bs(unit));
        let costs = self.mode_costs(unit).as_array();
        weights.iter().zip(costs).map(|(w, c)| w * c).sum()
    }

    /// Cached prospective energy of a unit.
    pub fn e_all(&self, unit: &ContentUnit) -> f64 {
        self.e_all[unit.id.0 as usize - 1]
    }
}

/// One realized service, kept by the engine so a dropped session's energy
/// can be reclassified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceRecord {
    pub mode: ServiceMode,
    pub layer: Layer,
    pub joules: f64,
    pub bits: f64,
}

type Cells = [[[f64; 2]; 2]; 4];

/// Realized energy and delivered bits, indexed by mode x layer x outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    power: PowerProfile,
    backhaul_bps: f64,
    joules: Cells,
    bits: Cells,
}

impl EnergyLedger {
    pub fn new(power: &PowerProfile, backhaul_bps: f64) -> Self {
        EnergyLedger {
            power: power.clone(),
            backhaul_bps,
            joules: Default::default(),
            bits: Default::default(),
        }
    }

    /// Charges one completed service. The energy is `P_mode * s / rate`;
    /// BS(U) also pays the BS reception term over the backhaul.
    pub fn record_service(&mut self, mode: ServiceMode, unit: &ContentUnit, rate_bps: f64, outcome: Outcome) -> Result<ServiceRecord> {
        let joules = self.power.service_energy(mode, unit.size_bits, rate_bps, self.backhaul_bps)?;
        let (m, l, o) = (mode.index(), unit.layer.index(), outcome.index());
        self.joules[m][l][o] += joules;
        if outcome == Outcome::Success {
            self.bits[m][l][o] += unit.size_bits;
        }
        Ok(ServiceRecord {
            mode,
            layer: unit.layer,
            joules,
            bits: unit.size_bits,
        })
    }

    /// Moves the energy and bits of a dropped session's delivered units from
    /// the success cells to the fail cells.
    pub fn reclassify_failed_session(&mut self, records: &[ServiceRecord]) {
        let (s, f) = (Outcome::Success.index(), Outcome::Fail.index());
        for r in records {
            let (m, l) = (r.mode.index(), r.layer.index());
            self.joules[m][l][s] = (self.joules[m][l][s] - r.joules).max(0.0);
            self.joules[m][l][f] += r.joules;
            self.bits[m][l][s] = (self.bits[m][l][s] - r.bits).max(0.0);
            self.bits[m][l][f] += r.bits;
        }
    }

    pub fn joules(&self, mode: ServiceMode, layer: Layer, outcome: Outcome) -> f64 {
        self.joules[mode.index()][layer.index()][outcome.index()]
    }

    pub fn bits(&self, mode: ServiceMode, layer: Layer, outcome: Outcome) -> f64 {
        self.bits[mode.index()][layer.index()][outcome.index()]
    }

    /// Successful energy of one mode.
    pub fn e_mode(&self, mode: ServiceMode) -> f64 {
        let cells = &self.joules[mode.index()];
        cells[0][Outcome::Success.index()] + cells[1][Outcome::Success.index()]
    }

    pub fn e_loc(&self) -> f64 {
        self.e_mode(ServiceMode::Local)
    }

    pub fn e_d2d(&self) -> f64 {
        self.e_mode(ServiceMode::D2d)
    }

    pub fn e_bs(&self) -> f64 {
        self.e_mode(ServiceMode::Bs)
    }

    pub fn e_bs_u(&self) -> f64 {
        self.e_mode(ServiceMode::BsU)
    }

    /// Energy of every service that belonged to a dropped session.
    pub fn e_block(&self) -> f64 {
        let f = Outcome::Fail.index();
        self.joules.iter().flat_map(|m| m.iter().map(move |l| l[f])).sum()
    }

    pub fn e_total(&self) -> f64 {
        self.e_loc() + self.e_d2d() + self.e_bs() + self.e_bs_u() + self.e_block()
    }

    /// Successfully delivered bits of one mode.
    pub fn served_bits(&self, mode: ServiceMode) -> f64 {
        let cells = &self.bits[mode.index()];
        cells[0][Outcome::Success.index()] + cells[1][Outcome::Success.index()]
    }

    pub fn merge(&mut self, other: &EnergyLedger) {
        for m in 0..4 {
            for l in 0..2 {
                for o in 0..2 {
                    self.joules[m][l][o] += other.joules[m][l][o];
                    self.bits[m][l][o] += other.bits[m][l][o];
                }
            }
        }
    }

    /// `(name, value)` pairs for every cell in a fixed order, e.g.
    /// `("bs_u_enh_f", joules)`.
    pub fn joule_cells(&self) -> Vec<(String, f64)> {
        self.cells(&self.joules)
    }

    pub fn bit_cells(&self) -> Vec<(String, f64)> {
        self.cells(&self.bits)
    }

    fn cells(&self, table: &Cells) -> Vec<(String, f64)> {
        let mut out = Vec::with_capacity(16);
        for mode in ServiceMode::ALL {
            for layer in Layer::ALL {
                for outcome in Outcome::ALL {
                    out.push((
                        cell_name(mode, layer, outcome),
                        table[mode.index()][layer.index()][outcome.index()],
                    ));
                }
            }
        }
        out
    }
}

pub fn cell_name(mode: ServiceMode, layer: Layer, outcome: Outcome) -> String {
    format!("{}_{}_{}", mode.name(), layer.name(), outcome.tag())
}
