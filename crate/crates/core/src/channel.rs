//! Link rates from a log-distance path-loss model fed into Shannon capacity,
//! and the finite pool of radio channels shared by the network-using modes.

use serde::{Deserialize, Serialize};

use crate::energy::PowerProfile;
use crate::error::{Error, Result};
use crate::topology::CellConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    pub bandwidth_hz: f64,
    /// Noise power spectral density.
    pub noise_dbm_hz: f64,
    pub d0_m: f64,
    pub n_d2d: f64,
    pub n_bs: f64,
    /// Channels shared by D2D, BS and BS(U) services.
    pub pool_size: u32,
    /// When set, D2D services draw from their own pool of this size and
    /// `pool_size` covers only the two BS modes.
    pub d2d_pool_size: Option<u32>,
    pub c_loc_bps: f64,
    pub c_bsu_bps: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        ChannelParams {
            bandwidth_hz: 2e6,
            noise_dbm_hz: -158.0,
            d0_m: 1.0,
            n_d2d: 3.0,
            n_bs: 4.2,
            pool_size: 200,
            d2d_pool_size: None,
            c_loc_bps: 50e6,
            c_bsu_bps: 20e6,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel.bandwidth_hz", self.bandwidth_hz),
            ("channel.d0_m", self.d0_m),
            ("channel.c_loc_bps", self.c_loc_bps),
            ("channel.c_bsu_bps", self.c_bsu_bps),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !self.noise_dbm_hz.is_finite() {
            return Err(Error::config("channel.noise_dbm_hz", "must be finite"));
        }
        for (field, v) in [("channel.n_d2d", self.n_d2d), ("channel.n_bs", self.n_bs)] {
            if !(v >= 2.0 && v.is_finite()) {
                return Err(Error::config(field, format!("path-loss exponent must be >= 2, got {v}")));
            }
        }
        Ok(())
    }

    /// Noise power over the whole band, watts.
    pub fn noise_power_w(&self) -> f64 {
        10f64.powf((self.noise_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz
    }

    /// Achievable rate in bit/s for a transmitter of `p_tx_w` watts at `d_m`
    /// metres. Distances below `d0` are clamped to `d0`.
    pub fn link_rate(&self, p_tx_w: f64, d_m: f64, path_loss_exp: f64) -> Result<f64> {
        if !(p_tx_w > 0.0) {
            return Err(Error::Domain(format!("transmit power must be positive, got {p_tx_w}")));
        }
        let d = d_m.max(self.d0_m);
        let gain = (d / self.d0_m).powf(-path_loss_exp);
        let snr = p_tx_w * gain / self.noise_power_w();
        Ok(self.bandwidth_hz * (1.0 + snr).log2())
    }
}

/// Static service rates used by the prospective energy model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProspectiveRates {
    pub loc: f64,
    pub d2d: f64,
    pub bs: f64,
    pub bs_u: f64,
}

/// Mean distance from the centre of a disc to a uniform point in it.
pub fn mean_bs_distance(cell_radius_m: f64) -> f64 {
    2.0 * cell_radius_m / 3.0
}

pub fn prospective_rates(params: &ChannelParams, power: &PowerProfile, cell: &CellConfig) -> Result<ProspectiveRates> {
    params.validate()?;
    let d2d = params.link_rate(power.p_d2d_w, cell.r_d2d_m / 2.0, params.n_d2d)?;
    let bs = params.link_rate(power.p_bs_w, mean_bs_distance(cell.cell_radius_m), params.n_bs)?;
    let rates = ProspectiveRates {
        loc: params.c_loc_bps,
        d2d,
        bs,
        bs_u: params.c_bsu_bps,
    };
    let fastest_radio = rates.d2d.max(rates.bs).max(rates.bs_u);
    if rates.loc < fastest_radio {
        return Err(Error::config(
            "channel.c_loc_bps",
            format!(
                "local retrieval rate {} bit/s must be the largest service rate (radio peaks at {fastest_radio:.0} bit/s)",
                rates.loc
            ),
        ));
    }
    Ok(rates)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPool {
    total: u32,
    in_use: u32,
}

impl ChannelPool {
    pub fn new(total: u32) -> Self {
        ChannelPool { total, in_use: 0 }
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn in_use(&self) -> u32 {
        self.in_use
    }

    /// Takes a channel if one is free. `false` means the request is blocked.
    pub fn try_acquire(&mut self) -> bool {
        if self.in_use < self.total {
            self.in_use += 1;
            true
        } else {
            false
        }
    }

    pub fn release(&mut self) -> Result<()> {
        if self.in_use == 0 {
            return Err(Error::Invariant("channel released on an empty pool".into()));
        }
        self.in_use -= 1;
        Ok(())
    }
}
