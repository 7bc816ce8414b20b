//! Master-side receive chain.
//!
//! Two paths run over the same samples: a standard LIN threshold decoder and
//! the carrier demodulator (band-pass, threshold comparator, per-cell pulse
//! counter).

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::PhyConfig;
use crate::error::{Error, Result};
use crate::filter::BandpassFilter;
use crate::frame::{checksum, decode_characters, Bitstream, ChecksumModel, FrameLayout, Pid};
use crate::mac::{AuthMessage, Cmac, MacKey, MacTag, TAG_BITS};
use crate::synth::MacSlotMap;
use crate::waveform::{fmt_sci, Waveform};

/// Threshold decoder state: last decision, held through the dead zone.
#[derive(Copy, Clone, Debug)]
pub struct LevelDecoder {
    dominant_below: f64,
    recessive_above: f64,
    last: bool,
}

impl LevelDecoder {
    pub fn new(cfg: &PhyConfig) -> Self {
        LevelDecoder {
            dominant_below: cfg.rx_dominant_v(),
            recessive_above: cfg.rx_recessive_v(),
            last: true,
        }
    }

    pub fn decide(&mut self, v: f64) -> bool {
        if v < self.dominant_below {
            self.last = false;
        } else if v > self.recessive_above {
            self.last = true;
        }
        self.last
    }
}

/// Samples each of `cells` bit periods at its midpoint, starting at
/// `bit_clock` seconds.
pub fn standard_lin_decode(w: &Waveform, cfg: &PhyConfig, bit_clock: f64, cells: usize) -> Result<Bitstream> {
    let spb = cfg.samples_per_bit()?;
    let start = w.index_of(bit_clock);
    let end = start + (cells * spb) as i64;
    if start < 0 || end > w.len() as i64 {
        return Err(Error::Window {
            start: start.max(0) as usize,
            end: end.max(0) as usize,
            len: w.len(),
        });
    }
    let start = start as usize;
    let mut dec = LevelDecoder::new(cfg);
    Ok((0..cells)
        .map(|k| dec.decide(w.samples[start + k * spb + spb / 2]))
        .collect())
}

/// Zero-state band-pass over the whole waveform.
pub fn bandpass_filter(w: &Waveform, cfg: &PhyConfig) -> Result<Waveform> {
    let mut f = design_filter(cfg)?;
    Ok(run_filter(&mut f, w))
}

pub fn design_filter(cfg: &PhyConfig) -> Result<BandpassFilter> {
    if cfg.sample_rate_hz < 10.0 * cfg.filter_high_hz {
        return Err(Error::config("sample_rate must be at least 10x filter_high"));
    }
    BandpassFilter::design(cfg.sample_rate_hz, cfg.filter_low_hz, cfg.filter_high_hz)
}

/// Band-pass as the master runs it: state primed to the first sample, as if
/// the filter had been watching an idle bus.
pub fn receiver_filter(w: &Waveform, cfg: &PhyConfig) -> Result<Waveform> {
    let mut filter = design_filter(cfg)?;
    filter.prime(w.samples.first().copied().unwrap_or(0.0));
    Ok(run_filter(&mut filter, w))
}

fn run_filter(f: &mut BandpassFilter, w: &Waveform) -> Waveform {
    Waveform::new(w.sample_rate, w.t0, w.samples.iter().map(|&x| f.process(x)).collect())
}

/// Rising-edge comparator events, stored as sample indices of the source
/// waveform.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseEvents {
    pub sample_rate: f64,
    pub t0: f64,
    pub indices: Vec<usize>,
}

impl PulseEvents {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.indices.iter().map(|&i| self.t0 + i as f64 / self.sample_rate)
    }

    /// Events with index in `[start, end)`.
    pub fn count_in(&self, start: usize, end: usize) -> usize {
        let lo = self.indices.partition_point(|&i| i < start);
        let hi = self.indices.partition_point(|&i| i < end);
        hi - lo
    }
}

/// Streaming comparator: fires on a rising crossing of the threshold, re-arms
/// once the input falls below half the threshold, and ignores crossings for
/// half a carrier period after each event.
#[derive(Clone, Debug)]
pub struct Comparator {
    threshold: f64,
    rearm: f64,
    holdoff: usize,
    armed: bool,
    since_event: usize,
}

impl Comparator {
    pub fn new(cfg: &PhyConfig) -> Self {
        Comparator {
            threshold: cfg.comparator_threshold_v,
            rearm: 0.5 * cfg.comparator_threshold_v,
            holdoff: (cfg.sample_rate_hz / (2.0 * cfg.f_c_hz)).floor() as usize,
            armed: true,
            since_event: usize::MAX,
        }
    }

    pub fn process(&mut self, v: f64) -> bool {
        self.since_event = self.since_event.saturating_add(1);
        if !self.armed {
            if v < self.rearm {
                self.armed = true;
            }
            return false;
        }
        if v >= self.threshold && self.since_event >= self.holdoff {
            self.armed = false;
            self.since_event = 0;
            return true;
        }
        false
    }
}

pub fn comparator(w: &Waveform, cfg: &PhyConfig) -> PulseEvents {
    let mut c = Comparator::new(cfg);
    PulseEvents {
        sample_rate: w.sample_rate,
        t0: w.t0,
        indices: w
            .samples
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| c.process(v).then_some(i))
            .collect(),
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemodRecord {
    pub cell_index: usize,
    pub pulse_count: usize,
    pub mac_bit: bool,
    pub decision_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DemodTrace {
    pub records: Vec<DemodRecord>,
}

impl DemodTrace {
    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.records.iter().map(|r| r.mac_bit)
    }

    /// `cell_index,pulse_count,mac_bit,decision_time_s`
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "cell_index,pulse_count,mac_bit,decision_time_s")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{}",
                r.cell_index,
                r.pulse_count,
                u8::from(r.mac_bit),
                fmt_sci(r.decision_time_s)
            )?;
        }
        Ok(())
    }
}

/// Per-cell pulse counting. The counter resets at each cell start; the bit
/// is decided at the cell end.
pub fn reconstruct_mac(
    events: &PulseEvents,
    bit_clock: f64,
    n_bits: usize,
    cfg: &PhyConfig,
) -> Result<(MacTag, DemodTrace)> {
    let spb = cfg.samples_per_bit()?;
    let start = ((bit_clock - events.t0) * events.sample_rate).round();
    if start < 0.0 {
        return Err(Error::config("bit clock precedes the event stream"));
    }
    let start = start as usize;
    let records: Vec<DemodRecord> = (0..n_bits.min(TAG_BITS))
        .map(|k| {
            let cell_start = start + k * spb;
            let cell_end = cell_start + spb;
            let pulse_count = events.count_in(cell_start, cell_end);
            DemodRecord {
                cell_index: k,
                pulse_count,
                mac_bit: pulse_count >= cfg.pulse_threshold as usize,
                decision_time_s: events.t0 + cell_end as f64 / events.sample_rate,
            }
        })
        .collect();
    let trace = DemodTrace { records };
    Ok((MacTag::from_bits(trace.bits()), trace))
}

/// First sample at or after `from` that reads dominant and is still dominant
/// half a bit later.
pub fn detect_response_start(w: &Waveform, cfg: &PhyConfig, from: usize) -> Result<Option<usize>> {
    let spb = cfg.samples_per_bit()?;
    let th = cfg.rx_dominant_v();
    let s = &w.samples;
    Ok((from..s.len().saturating_sub(spb / 2)).find(|&i| s[i] < th && s[i + spb / 2] < th))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecksumVerdict {
    Pass,
    Fail,
    FramingError,
    NoResponse,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MacVerdict {
    Pass,
    Fail,
    /// Responder is a legacy node; no MAC expected.
    Absent,
}

#[derive(Clone, Debug)]
pub struct ReceiveOptions {
    /// Earliest time the response start bit may begin.
    pub search_from_s: f64,
    pub data_len: usize,
    pub model: ChecksumModel,
    pub layout: FrameLayout,
    pub map: MacSlotMap,
    pub counter: Option<u32>,
    /// Whether the responder is expected to be a LIN-MM node.
    pub expect_mac: bool,
}

impl ReceiveOptions {
    pub fn new(pid: Pid) -> Self {
        ReceiveOptions {
            search_from_s: 0.0,
            data_len: 8,
            model: ChecksumModel::default_for(pid.id()),
            layout: FrameLayout::default(),
            map: MacSlotMap::default(),
            counter: None,
            expect_mac: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReceivedResponse {
    pub response_start_s: Option<f64>,
    /// Raw data bytes as decoded, whatever the verdicts.
    #[serde(with = "hex_bytes")]
    pub data: Vec<u8>,
    pub checksum_byte: Option<u8>,
    pub framing_error_byte: Option<usize>,
    pub checksum: ChecksumVerdict,
    pub mac: MacVerdict,
    pub reconstructed_mac: MacTag,
    /// Time the last MAC bit was decided.
    pub mac_available_s: Option<f64>,
    pub trace: DemodTrace,
}

impl ReceivedResponse {
    /// Frame passed checksum and, for LIN-MM responders, the MAC.
    pub fn accepted(&self) -> bool {
        self.checksum == ChecksumVerdict::Pass && self.mac != MacVerdict::Fail
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Master receive path for one response window. Framing, checksum and MAC
/// outcomes are evaluated independently; the MAC is checked against the raw
/// decoded bytes even when the checksum fails.
pub fn receive_linmm_response(
    w: &Waveform,
    cfg: &PhyConfig,
    key: &MacKey,
    pid: Pid,
    opts: &ReceiveOptions,
) -> Result<ReceivedResponse> {
    let spb = cfg.samples_per_bit()?;
    let cells = opts.layout.response_cells(opts.data_len);
    if opts.expect_mac {
        opts.map.validate(cells)?;
    }

    let from = w.index_of(opts.search_from_s).max(0) as usize;
    let start = detect_response_start(w, cfg, from)?.filter(|&s| s + cells * spb <= w.len());
    let Some(start) = start else {
        return Ok(ReceivedResponse {
            response_start_s: None,
            data: Vec::new(),
            checksum_byte: None,
            framing_error_byte: None,
            checksum: ChecksumVerdict::NoResponse,
            mac: if opts.expect_mac {
                MacVerdict::Fail
            } else {
                MacVerdict::Absent
            },
            reconstructed_mac: MacTag::default(),
            mac_available_s: None,
            trace: DemodTrace::default(),
        });
    };
    let bit_clock = w.time_of(start);

    let bits = standard_lin_decode(w, cfg, bit_clock, cells)?;
    let (bytes, framing) = decode_characters(&bits, opts.data_len + 1, opts.layout)?;
    let (data, tail) = bytes.split_at(opts.data_len);
    let verdict = if framing.is_some() {
        ChecksumVerdict::FramingError
    } else if checksum(data, opts.model, pid)? == tail[0] {
        ChecksumVerdict::Pass
    } else {
        ChecksumVerdict::Fail
    };

    // Short legacy responses have no room for a tag; skip demodulation.
    let (tag, trace) = if opts.map.validate(cells).is_ok() {
        let events = comparator(&receiver_filter(w, cfg)?, cfg);
        let mac_clock = w.time_of(start + opts.map.start_slot * spb);
        reconstruct_mac(&events, mac_clock, TAG_BITS, cfg)?
    } else {
        (MacTag::default(), DemodTrace::default())
    };
    let mac = if !opts.expect_mac {
        MacVerdict::Absent
    } else if Cmac::new(key).verify(&AuthMessage::new(pid, data, opts.counter), tag) {
        MacVerdict::Pass
    } else {
        MacVerdict::Fail
    };

    Ok(ReceivedResponse {
        response_start_s: Some(bit_clock),
        data: data.to_vec(),
        checksum_byte: Some(tail[0]),
        framing_error_byte: framing,
        checksum: verdict,
        mac,
        reconstructed_mac: tag,
        mac_available_s: trace.records.last().map(|r| r.decision_time_s),
        trace,
    })
}
