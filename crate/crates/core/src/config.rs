use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Comparator threshold as a fraction of the steady-state filtered carrier
/// amplitude.
pub const COMPARATOR_THRESHOLD_FRACTION: f64 = 0.65;

/// `COMPARATOR_THRESHOLD_FRACTION` × 1.2 V × |H(100 kHz)| for the default
/// band-pass (|H| = 0.99989). Re-derived by a unit test in `demod`.
pub const DEFAULT_COMPARATOR_THRESHOLD_V: f64 = 0.78;

/// Electrical and modulation constants shared by transmitters and receivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyConfig {
    pub v_batt_v: f64,
    pub baud_bps: f64,
    /// Dominant level driven by a transmitter, fraction of `v_batt_v`.
    pub tx_dominant_level: f64,
    /// Recessive level, fraction of `v_batt_v`.
    pub tx_recessive_level: f64,
    /// Receiver reads dominant below this fraction.
    pub rx_dominant_max: f64,
    /// Receiver reads recessive above this fraction.
    pub rx_recessive_min: f64,
    pub f_c_hz: f64,
    pub a_c_v: f64,
    pub sample_rate_hz: f64,
    pub filter_low_hz: f64,
    pub filter_high_hz: f64,
    pub comparator_threshold_v: f64,
    pub pulse_threshold: u32,
    /// First-order edge time constant; 0 gives rectangular edges.
    pub slew_tau_s: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig {
            v_batt_v: 12.0,
            baud_bps: 19_200.0,
            tx_dominant_level: 0.20,
            tx_recessive_level: 0.80,
            rx_dominant_max: 0.40,
            rx_recessive_min: 0.60,
            f_c_hz: 100_000.0,
            a_c_v: 1.2,
            sample_rate_hz: 1_920_000.0,
            filter_low_hz: 75_000.0,
            filter_high_hz: 125_000.0,
            comparator_threshold_v: DEFAULT_COMPARATOR_THRESHOLD_V,
            pulse_threshold: 3,
            slew_tau_s: 0.0,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.v_batt_v,
            self.baud_bps,
            self.tx_dominant_level,
            self.tx_recessive_level,
            self.rx_dominant_max,
            self.rx_recessive_min,
            self.f_c_hz,
            self.a_c_v,
            self.sample_rate_hz,
            self.filter_low_hz,
            self.filter_high_hz,
            self.comparator_threshold_v,
            self.slew_tau_s,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("all physical constants must be finite"));
        }
        if self.v_batt_v <= 0.0 || self.baud_bps <= 0.0 || self.sample_rate_hz <= 0.0 {
            return Err(Error::config("v_batt, baud and sample_rate must be positive"));
        }
        if !(0.0 <= self.tx_dominant_level
            && self.tx_dominant_level < self.rx_dominant_max
            && self.rx_dominant_max <= self.rx_recessive_min
            && self.rx_recessive_min < self.tx_recessive_level
            && self.tx_recessive_level <= 1.0)
        {
            return Err(Error::config(
                "levels must satisfy 0 <= tx_dominant < rx_dominant_max <= rx_recessive_min < tx_recessive <= 1",
            ));
        }
        if !(0.0 < self.filter_low_hz && self.filter_low_hz < self.f_c_hz && self.f_c_hz < self.filter_high_hz) {
            return Err(Error::config(format!(
                "need 0 < filter_low ({}) < f_c ({}) < filter_high ({})",
                self.filter_low_hz, self.f_c_hz, self.filter_high_hz
            )));
        }
        if self.sample_rate_hz < 10.0 * self.f_c_hz || self.sample_rate_hz < 10.0 * self.filter_high_hz {
            return Err(Error::config(
                "sample_rate must be at least 10x f_c and 10x filter_high",
            ));
        }
        self.samples_per_bit()?;
        if self.a_c_v < 0.0 {
            return Err(Error::config("carrier amplitude must be non-negative"));
        }
        let v = self.v_batt_v;
        if self.a_c_v >= v * (self.rx_recessive_min - self.tx_dominant_level) {
            return Err(Error::config("carrier amplitude exceeds the receiver threshold span"));
        }
        if self.tx_dominant_level * v + self.a_c_v >= self.rx_dominant_max * v
            || self.tx_recessive_level * v - self.a_c_v <= self.rx_recessive_min * v
        {
            return Err(Error::config(
                "carrier would push a driven level across a receiver threshold",
            ));
        }
        if self.comparator_threshold_v <= 0.0 {
            return Err(Error::config("comparator threshold must be positive"));
        }
        if self.pulse_threshold == 0 {
            return Err(Error::config("pulse threshold must be at least 1"));
        }
        if self.slew_tau_s < 0.0 {
            return Err(Error::config("slew time constant must be non-negative"));
        }
        Ok(())
    }

    /// Samples per LIN bit cell; sample_rate must be an integer multiple of baud.
    pub fn samples_per_bit(&self) -> Result<usize> {
        let ratio = self.sample_rate_hz / self.baud_bps;
        let rounded = ratio.round();
        if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * ratio {
            return Err(Error::config(format!(
                "sample_rate {} is not an integer multiple of baud {}",
                self.sample_rate_hz, self.baud_bps
            )));
        }
        Ok(rounded as usize)
    }

    pub fn bit_period_s(&self) -> f64 {
        1.0 / self.baud_bps
    }

    pub fn dominant_v(&self) -> f64 {
        self.tx_dominant_level * self.v_batt_v
    }

    pub fn recessive_v(&self) -> f64 {
        self.tx_recessive_level * self.v_batt_v
    }

    pub fn level_v(&self, recessive: bool) -> f64 {
        if recessive {
            self.recessive_v()
        } else {
            self.dominant_v()
        }
    }

    pub fn rx_dominant_v(&self) -> f64 {
        self.rx_dominant_max * self.v_batt_v
    }

    pub fn rx_recessive_v(&self) -> f64 {
        self.rx_recessive_min * self.v_batt_v
    }
}
