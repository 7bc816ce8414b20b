//! Slave-side LIN-MM transmitter: bit cells to voltage, plus the on-off keyed
//! carrier that carries the MAC.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::PhyConfig;
use crate::error::{Error, Result};
use crate::frame::{serialize_response_with, Bitstream, FrameLayout, ResponseFrame};
use crate::mac::{MacTag, TAG_BITS};
use crate::waveform::{superpose, Waveform};

/// Placement of the 64 MAC bits on response cells: MAC bit `i` rides on
/// cell `start_slot + i`.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MacSlotMap {
    pub start_slot: usize,
}

impl MacSlotMap {
    pub fn validate(&self, total_cells: usize) -> Result<()> {
        if self.start_slot + TAG_BITS > total_cells {
            return Err(Error::config(format!(
                "MAC slots {}..{} overflow a {}-cell response",
                self.start_slot,
                self.start_slot + TAG_BITS,
                total_cells
            )));
        }
        Ok(())
    }

    /// MAC bit index carried by `cell`, if any.
    pub fn mac_bit_at(&self, cell: usize) -> Option<usize> {
        cell.checked_sub(self.start_slot).filter(|&i| i < TAG_BITS)
    }

    pub fn end_slot(&self) -> usize {
        self.start_slot + TAG_BITS
    }
}

/// First-order edge shaping applied to a driven level sequence.
#[derive(Clone, Debug)]
pub(crate) struct Slew {
    alpha: f64,
    state: Option<f64>,
}

impl Slew {
    pub(crate) fn new(cfg: &PhyConfig) -> Self {
        let alpha = if cfg.slew_tau_s > 0.0 {
            (-1.0 / (cfg.sample_rate_hz * cfg.slew_tau_s)).exp()
        } else {
            0.0
        };
        Slew { alpha, state: None }
    }

    pub(crate) fn step(&mut self, target: f64) -> f64 {
        let y = match self.state {
            None => target,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * target,
        };
        self.state = Some(y);
        y
    }
}

pub fn bits_to_waveform(bits: &Bitstream, cfg: &PhyConfig) -> Result<Waveform> {
    bits_to_waveform_at(bits, cfg, 0.0)
}

pub fn bits_to_waveform_at(bits: &Bitstream, cfg: &PhyConfig, t0: f64) -> Result<Waveform> {
    let spb = cfg.samples_per_bit()?;
    let mut slew = Slew::new(cfg);
    let mut samples = Vec::with_capacity(bits.len() * spb);
    for recessive in bits.iter() {
        let level = cfg.level_v(recessive);
        samples.extend((0..spb).map(|_| slew.step(level)));
    }
    Ok(Waveform::new(cfg.sample_rate_hz, t0, samples))
}

/// Carrier-only waveform: `a_c·sin(2π·f_c·t)` in cells whose MAC bit is 1,
/// exactly zero elsewhere. Phase runs from the waveform start.
pub fn carrier_waveform(mac: MacTag, map: MacSlotMap, total_cells: usize, cfg: &PhyConfig) -> Result<Waveform> {
    carrier_waveform_at(mac, map, total_cells, cfg, 0.0)
}

pub fn carrier_waveform_at(
    mac: MacTag,
    map: MacSlotMap,
    total_cells: usize,
    cfg: &PhyConfig,
    t0: f64,
) -> Result<Waveform> {
    map.validate(total_cells)?;
    let spb = cfg.samples_per_bit()?;
    let mut samples = vec![0.0; total_cells * spb];
    let w = 2.0 * PI * cfg.f_c_hz / cfg.sample_rate_hz;
    for (i, bit) in mac.bits().enumerate() {
        if !bit {
            continue;
        }
        let start = (map.start_slot + i) * spb;
        for n in start..start + spb {
            samples[n] = cfg.a_c_v * (w * n as f64).sin();
        }
    }
    Ok(Waveform::new(cfg.sample_rate_hz, t0, samples))
}

/// LIN-MM slave response: the plain response waveform with the MAC carrier
/// added, MAC bit 0 on the first start bit.
pub fn synth_linmm_response(frame: &ResponseFrame, mac: MacTag, cfg: &PhyConfig) -> Result<Waveform> {
    synth_linmm_response_with(frame, mac, cfg, FrameLayout::default(), MacSlotMap::default())
}

pub fn synth_linmm_response_with(
    frame: &ResponseFrame,
    mac: MacTag,
    cfg: &PhyConfig,
    layout: FrameLayout,
    map: MacSlotMap,
) -> Result<Waveform> {
    let bits = serialize_response_with(frame, layout);
    let base = bits_to_waveform(&bits, cfg)?;
    let carrier = carrier_waveform(mac, map, bits.len(), cfg)?;
    superpose(&base, &[&carrier])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{compute_pid, ChecksumModel};

    fn cfg() -> PhyConfig {
        PhyConfig::default()
    }

    #[test]
    fn levels_per_bit() {
        let rec = bits_to_waveform(&Bitstream::from_cells(&[1]), &cfg()).unwrap();
        assert_eq!(rec.len(), 100);
        assert!(rec.samples.iter().all(|&v| (v - 9.6).abs() < 1e-12));
        let dom = bits_to_waveform(&Bitstream::from_cells(&[0]), &cfg()).unwrap();
        assert_eq!(dom.len(), 100);
        assert!(dom.samples.iter().all(|&v| (v - 2.4).abs() < 1e-12));
        assert!(bits_to_waveform(&Bitstream::new(), &cfg()).unwrap().is_empty());
    }

    #[test]
    fn non_integer_oversampling_is_rejected() {
        let bad = PhyConfig {
            sample_rate_hz: 1_930_000.0,
            ..cfg()
        };
        assert!(bits_to_waveform(&Bitstream::from_cells(&[1]), &bad).is_err());
    }

    #[test]
    fn sample_budget_is_exact() {
        let bits = Bitstream::from_cells(&[1; 90]);
        assert_eq!(bits_to_waveform(&bits, &cfg()).unwrap().len(), 9000);
        let c = carrier_waveform(MacTag::new(u64::MAX), MacSlotMap::default(), 90, &cfg()).unwrap();
        assert_eq!(c.len(), 9000);
    }

    #[test]
    fn carrier_off_for_zero_mac() {
        let c = carrier_waveform(MacTag::new(0), MacSlotMap::default(), 90, &cfg()).unwrap();
        assert!(c.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn carrier_confined_to_one_cells() {
        let mac = MacTag::new(0xA5F0_0F5A_1234_8001);
        let c = carrier_waveform(mac, MacSlotMap { start_slot: 3 }, 90, &cfg()).unwrap();
        for cell in 0..90 {
            let on = MacSlotMap { start_slot: 3 }
                .mac_bit_at(cell)
                .map_or(false, |i| mac.bit(i));
            let chunk = &c.samples[cell * 100..(cell + 1) * 100];
            let energy: f64 = chunk.iter().map(|v| v * v).sum();
            if on {
                assert!(energy > 0.0);
                let peak = chunk.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(peak <= 1.2 + 1e-12);
            } else {
                assert_eq!(energy, 0.0, "cell {cell}");
            }
        }
    }

    #[test]
    fn carrier_cycles_per_cell() {
        // f_c / baud = 100000 / 19200 = 5.208 cycles per cell.
        let c = carrier_waveform(MacTag::new(u64::MAX), MacSlotMap::default(), 64, &cfg()).unwrap();
        let rising = c.samples.windows(2).filter(|w| w[0] < 0.0 && w[1] >= 0.0).count();
        let expected = 64.0 * 100_000.0 / 19_200.0;
        assert!((rising as f64 - expected).abs() <= 1.0, "{rising} vs {expected}");
        let peak = c.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.2).abs() < 1e-3);
    }

    #[test]
    fn carrier_phase_is_continuous_within_runs() {
        let cfg = cfg();
        let c = carrier_waveform(MacTag::new(u64::MAX), MacSlotMap::default(), 64, &cfg).unwrap();
        let dphi = 2.0 * PI * cfg.f_c_hz / cfg.sample_rate_hz;
        // Max slope of a_c·sin per sample is a_c·dphi.
        let max_step = cfg.a_c_v * dphi + 1e-12;
        assert!(c.samples.windows(2).all(|w| (w[1] - w[0]).abs() <= max_step));
    }

    #[test]
    fn map_overflow() {
        assert!(carrier_waveform(MacTag::new(1), MacSlotMap { start_slot: 27 }, 90, &cfg()).is_err());
        assert!(carrier_waveform(MacTag::new(1), MacSlotMap { start_slot: 26 }, 90, &cfg()).is_ok());
    }

    #[test]
    fn superposed_levels_stay_in_bounds() {
        let pid = compute_pid(0x10).unwrap();
        let frame = ResponseFrame::new(&[0x00, 0xFF, 0x55, 0xAA, 1, 2, 3, 4], ChecksumModel::Enhanced, pid).unwrap();
        let w = synth_linmm_response(&frame, MacTag::new(u64::MAX), &cfg()).unwrap();
        assert!(w
            .samples
            .iter()
            .all(|&v| (2.4 - 1.2 - 1e-9..=9.6 + 1.2 + 1e-9).contains(&v)));
        // recessive cell with carrier
        let bits = serialize_response_with(&frame, FrameLayout::default());
        let cell = bits.iter().position(|b| b).unwrap();
        let chunk = &w.samples[cell * 100..(cell + 1) * 100];
        assert!(chunk.iter().all(|&v| (8.4 - 1e-9..=10.8 + 1e-9).contains(&v)));
        let plain = synth_linmm_response(&frame, MacTag::new(0), &cfg()).unwrap();
        assert_eq!(plain, bits_to_waveform(&bits, &cfg()).unwrap());
    }

    #[test]
    fn slew_smooths_edges() {
        let cfg = PhyConfig {
            slew_tau_s: 2e-6,
            ..cfg()
        };
        let w = bits_to_waveform(&Bitstream::from_cells(&[1, 0]), &cfg).unwrap();
        assert!((w.samples[0] - 9.6).abs() < 1e-12);
        assert!(w.samples[100] > 2.4 + 1.0);
        assert!((w.samples[199] - 2.4).abs() < 1e-3);
    }
}
