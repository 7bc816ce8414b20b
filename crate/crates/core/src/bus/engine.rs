//! Cell-stepped wired-AND bus.
//!
//! Each transmitter drives a base level; the bus base is the minimum of all
//! driven levels and the recessive pull-up. Carriers and noise add on top.
//! Monitoring transmitters compare the decoded bus level at each cell
//! midpoint with what they sent and release the bus from the next cell after
//! the first mismatch.

use serde::{Deserialize, Serialize};

use crate::config::PhyConfig;
use crate::demod::LevelDecoder;
use crate::error::{Error, Result};
use crate::frame::Bitstream;
use crate::synth::Slew;
use crate::waveform::Waveform;

use super::noise::NoiseModel;

/// Dominant wins: the bus sits at the lowest driven level.
pub fn wired_and<I: IntoIterator<Item = f64>>(recessive: f64, drives: I) -> f64 {
    drives.into_iter().fold(recessive, f64::min)
}

/// Per-sample recombination of already rendered node waveforms:
/// `min(recessive, drives...) + Σ carriers + noise`.
pub fn combine_bus(
    drives: &[Waveform],
    carriers: &[Waveform],
    noise: &NoiseModel,
    cfg: &PhyConfig,
) -> Result<Waveform> {
    let reference = drives
        .first()
        .or_else(|| carriers.first())
        .ok_or_else(|| Error::Alignment("no inputs".into()))?;
    for w in drives.iter().chain(carriers) {
        reference.check_aligned(w)?;
    }
    let n = reference.len();
    let noise = noise.generate(n, cfg.sample_rate_hz);
    let samples = (0..n)
        .map(|i| {
            wired_and(cfg.recessive_v(), drives.iter().map(|d| d.samples[i]))
                + carriers.iter().map(|c| c.samples[i]).sum::<f64>()
                + noise[i]
        })
        .collect();
    Ok(Waveform::new(reference.sample_rate, reference.t0, samples))
}

/// First cell where the observed bus differs from what was sent.
pub fn transmit_monitor(sent: &Bitstream, observed: &Bitstream) -> Option<usize> {
    sent.iter().zip(observed.iter()).position(|(s, o)| s != o)
}

#[derive(Clone, Debug)]
pub enum Drive {
    /// Logic cells rendered at the configured levels, with an optional
    /// carrier aligned to the first cell.
    Bits { bits: Bitstream, carrier: Option<Vec<f64>> },
    /// Pre-rendered base and carrier samples, e.g. a relayed or replayed
    /// waveform. Lengths are whole cells.
    Analog { base: Vec<f64>, carrier: Vec<f64> },
}

impl Drive {
    fn cells(&self, spb: usize) -> usize {
        match self {
            Drive::Bits { bits, .. } => bits.len(),
            Drive::Analog { base, .. } => base.len() / spb,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transmission {
    pub node: String,
    pub start_cell: usize,
    pub drive: Drive,
    /// Abort on the first mismatch between sent and observed cells.
    pub monitor: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub node: String,
    pub segment: String,
    /// Cell index relative to the start of the node's transmission.
    pub cell: usize,
    /// Absolute cell index on the segment.
    pub bus_cell: usize,
}

struct Active {
    tx: Transmission,
    cells: usize,
    aborted_from: Option<usize>,
    slew: Slew,
    drive: Vec<f64>,
    carrier: Vec<f64>,
}

impl Active {
    fn end_cell(&self) -> usize {
        self.tx.start_cell + self.cells
    }

    fn live_at(&self, cell: usize) -> bool {
        cell >= self.tx.start_cell && cell < self.end_cell() && self.aborted_from.map_or(true, |a| cell < a)
    }
}

/// One bus segment simulated cell by cell.
pub struct BusSegment {
    name: String,
    cfg: PhyConfig,
    spb: usize,
    total_cells: usize,
    noise: Vec<f64>,
    base: Vec<f64>,
    carrier: Vec<f64>,
    decoder: LevelDecoder,
    observed: Vec<bool>,
    active: Vec<Active>,
    collisions: Vec<CollisionEvent>,
}

impl BusSegment {
    pub fn new(name: impl Into<String>, cfg: &PhyConfig, total_cells: usize, noise: &NoiseModel) -> Result<Self> {
        let spb = cfg.samples_per_bit()?;
        let len = total_cells * spb;
        Ok(BusSegment {
            name: name.into(),
            cfg: cfg.clone(),
            spb,
            total_cells,
            noise: noise.generate(len, cfg.sample_rate_hz),
            base: Vec::with_capacity(len),
            carrier: Vec::with_capacity(len),
            decoder: LevelDecoder::new(cfg),
            observed: Vec::with_capacity(total_cells),
            active: Vec::new(),
            collisions: Vec::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cursor(&self) -> usize {
        self.observed.len()
    }

    pub fn total_cells(&self) -> usize {
        self.total_cells
    }

    pub fn samples_per_bit(&self) -> usize {
        self.spb
    }

    pub fn add(&mut self, tx: Transmission) -> Result<()> {
        if tx.start_cell < self.cursor() {
            return Err(Error::Topology(format!(
                "{} starts at cell {} but the segment is already at cell {}",
                tx.node,
                tx.start_cell,
                self.cursor()
            )));
        }
        let cells = tx.drive.cells(self.spb);
        if tx.start_cell + cells > self.total_cells {
            return Err(Error::Topology(format!("{} overruns the simulated window", tx.node)));
        }
        if let Drive::Bits { carrier: Some(c), bits } = &tx.drive {
            if c.len() != bits.len() * self.spb {
                return Err(Error::Alignment(format!("{} carrier does not span its cells", tx.node)));
            }
        }
        if let Drive::Analog { base, carrier } = &tx.drive {
            if base.len() % self.spb != 0 || carrier.len() != base.len() {
                return Err(Error::Alignment(format!("{} analog drive is not whole cells", tx.node)));
            }
        }
        let mut slew = Slew::new(&self.cfg);
        slew.step(self.cfg.recessive_v());
        let len = self.total_cells * self.spb;
        self.active.push(Active {
            tx,
            cells,
            aborted_from: None,
            slew,
            drive: vec![f64::INFINITY; len],
            carrier: vec![0.0; len],
        });
        Ok(())
    }

    /// Simulates cells up to (not including) `cell`.
    pub fn run_until(&mut self, cell: usize) {
        let cell = cell.min(self.total_cells);
        while self.cursor() < cell {
            self.step();
        }
    }

    fn step(&mut self) {
        let k = self.cursor();
        let spb = self.spb;
        let rec = self.cfg.recessive_v();
        for i in 0..spb {
            let n = k * spb + i;
            let mut carrier_sum = 0.0;
            let mut base = rec;
            for a in &mut self.active {
                if !a.live_at(k) {
                    continue;
                }
                let local_cell = k - a.tx.start_cell;
                let local = local_cell * spb + i;
                let (level, car) = match &a.tx.drive {
                    Drive::Bits { bits, carrier } => {
                        let target = self.cfg.level_v(bits.cells()[local_cell]);
                        (a.slew.step(target), carrier.as_ref().map_or(0.0, |c| c[local]))
                    }
                    Drive::Analog { base, carrier } => (base[local], carrier[local]),
                };
                a.drive[n] = level;
                a.carrier[n] = car;
                base = base.min(level);
                carrier_sum += car;
            }
            self.base.push(base);
            self.carrier.push(carrier_sum);
        }
        let mid = k * spb + spb / 2;
        let seen = self
            .decoder
            .decide(self.base[mid] + self.carrier[mid] + self.noise[mid]);
        self.observed.push(seen);

        for a in &mut self.active {
            if !a.tx.monitor || !a.live_at(k) {
                continue;
            }
            if let Drive::Bits { bits, .. } = &a.tx.drive {
                let local = k - a.tx.start_cell;
                if bits.cells()[local] != seen {
                    a.aborted_from = Some(k + 1);
                    self.collisions.push(CollisionEvent {
                        node: a.tx.node.clone(),
                        segment: self.name.clone(),
                        cell: local,
                        bus_cell: k,
                    });
                }
            }
        }
    }

    pub fn observed(&self) -> Bitstream {
        Bitstream::from_levels(self.observed.clone())
    }

    pub fn observed_range(&self, start: usize, end: usize) -> Bitstream {
        Bitstream::from_levels(self.observed[start..end.min(self.observed.len())].to_vec())
    }

    pub fn collisions(&self) -> &[CollisionEvent] {
        &self.collisions
    }

    /// Cell from which `node` stopped driving, if it aborted.
    pub fn aborted_at(&self, node: &str) -> Option<usize> {
        self.active
            .iter()
            .find(|a| a.tx.node == node)
            .and_then(|a| a.aborted_from)
    }

    fn wave(&self, samples: Vec<f64>) -> Waveform {
        Waveform::new(self.cfg.sample_rate_hz, 0.0, samples)
    }

    /// Bus voltage as seen by every receiver on the segment.
    pub fn waveform(&self) -> Waveform {
        self.wave(
            self.base
                .iter()
                .zip(&self.carrier)
                .zip(&self.noise)
                .map(|((b, c), n)| b + c + n)
                .collect(),
        )
    }

    pub fn base_waveform(&self) -> Waveform {
        self.wave(self.base.clone())
    }

    pub fn carrier_waveform(&self) -> Waveform {
        self.wave(self.carrier.clone())
    }

    /// Each transmitter's effective drive (recessive where it was not
    /// driving) and carrier, over the simulated span.
    pub fn node_waveforms(&self) -> Vec<(String, Waveform, Waveform)> {
        let n = self.base.len();
        let rec = self.cfg.recessive_v();
        self.active
            .iter()
            .map(|a| {
                let drive = a.drive[..n]
                    .iter()
                    .map(|&v| if v.is_finite() { v } else { rec })
                    .collect();
                (a.tx.node.clone(), self.wave(drive), self.wave(a.carrier[..n].to_vec()))
            })
            .collect()
    }
}
