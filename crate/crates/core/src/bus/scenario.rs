//! Transactions and the attacks that can be mounted against them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PhyConfig;
use crate::demod::{receive_linmm_response, ReceiveOptions, ReceivedResponse};
use crate::error::{Error, Result};
use crate::frame::{
    decode_characters, serialize_header, serialize_response_with, Bitstream, ChecksumModel, FrameId, FrameLayout,
    HeaderFrame, Pid, ResponseFrame, CELLS_PER_BYTE,
};
use crate::mac::{AuthMessage, Cmac, MacKey, MacTag};
use crate::synth::{carrier_waveform, MacSlotMap};

use super::engine::{BusSegment, CollisionEvent, Drive, Transmission};
use super::noise::NoiseModel;
use super::report::{NodeTrace, Outcome, SimReport, SimRun, Timings};
use super::{BusTiming, Network, Node, NodeRole, Payload};

const SCENARIO_STREAM: u64 = 3;
const FAR_SEGMENT_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// One master poll.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub id: FrameId,
    /// Freshness counter appended to the authenticated message.
    #[serde(default)]
    pub counter: Option<u32>,
    #[serde(default)]
    pub layout: FrameLayout,
    #[serde(default)]
    pub map: MacSlotMap,
    #[serde(default)]
    pub timing: BusTiming,
}

impl Transaction {
    pub fn new(id: FrameId) -> Self {
        Transaction {
            id,
            counter: None,
            layout: FrameLayout::default(),
            map: MacSlotMap::default(),
            timing: BusTiming::default(),
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpoofCarrier {
    /// Plain LIN response, no carrier at all.
    #[default]
    None,
    /// Carrier keyed with a guessed 64-bit tag.
    Random,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MitmMode {
    #[default]
    Passthrough,
    /// Decode, XOR the payload with a mask, fix the checksum, re-drive.
    Rewrite,
    /// Play back a response captured during an earlier poll of the same id.
    Replay,
}

/// What a rewriting MitM puts on the carrier channel.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarrierPolicy {
    #[default]
    Strip,
    /// Copy the legitimate carrier onto the rewritten frame.
    Relay,
}

/// Random choices left open (`None`) are drawn from the run seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttackScenario {
    #[default]
    None,
    /// The publisher is silenced and the attacker answers in its slot with a
    /// checksum-valid frame.
    Spoofing {
        #[serde(default)]
        data: Option<Payload>,
        #[serde(default)]
        carrier: SpoofCarrier,
    },
    /// The attacker answers together with the publisher, winning the first
    /// differing cell.
    ResponseCollision {
        #[serde(default)]
        data: Option<Payload>,
    },
    /// The attacker sends its own header on top of the master's so that the
    /// bus carries a different pid.
    HeaderCollision {
        #[serde(default)]
        redirect_id: Option<FrameId>,
    },
    /// Bus cut between master and slaves, bridged by the attacker.
    Mitm {
        #[serde(default)]
        mode: MitmMode,
        #[serde(default)]
        xor_mask: Option<Payload>,
        #[serde(default)]
        carrier: CarrierPolicy,
    },
    /// Sustained dominant level from a response cell to the end of the
    /// response window.
    Dos {
        #[serde(default)]
        start_cell: Option<usize>,
    },
}

impl AttackScenario {
    pub fn name(&self) -> &'static str {
        match self {
            AttackScenario::None => "none",
            AttackScenario::Spoofing { .. } => "spoofing",
            AttackScenario::ResponseCollision { .. } => "response_collision",
            AttackScenario::HeaderCollision { .. } => "header_collision",
            AttackScenario::Mitm { .. } => "mitm",
            AttackScenario::Dos { .. } => "dos",
        }
    }
}

/// First index where `a` and `b` differ, over their common length.
pub fn first_difference(a: &Bitstream, b: &Bitstream) -> Option<usize> {
    a.iter().zip(b.iter()).position(|(x, y)| x != y)
}

/// Cell positions of one transaction.
#[derive(Copy, Clone, Debug)]
struct Slots {
    header_start: usize,
    header_end: usize,
    response_start: usize,
    response_cells: usize,
    total: usize,
}

impl Slots {
    fn new(timing: BusTiming, header_cells: usize, response_cells: usize) -> Self {
        let header_start = timing.lead_cells;
        let header_end = header_start + header_cells;
        let response_start = header_end + timing.response_space_cells;
        Slots {
            header_start,
            header_end,
            response_start,
            response_cells,
            total: response_start + response_cells + timing.trail_cells,
        }
    }
}

/// What a slave puts on the bus for one response.
struct SlaveResponse {
    bits: Bitstream,
    carrier: Option<Vec<f64>>,
    tag: Option<MacTag>,
}

fn slave_response(node: &Node, data: &[u8], pid: Pid, tx: &Transaction, cfg: &PhyConfig) -> Result<SlaveResponse> {
    let frame = ResponseFrame::new(data, ChecksumModel::default_for(pid.id()), pid)?;
    let bits = serialize_response_with(&frame, tx.layout);
    let (tag, carrier) = match (&node.key, node.is_lin_mm()) {
        (Some(key), true) => {
            let tag = Cmac::new(key).truncated(AuthMessage::new(pid, data, tx.counter).as_bytes());
            let carrier = carrier_waveform(tag, tx.map, bits.len(), cfg)?.samples;
            (Some(tag), Some(carrier))
        }
        _ => (None, None),
    };
    Ok(SlaveResponse { bits, carrier, tag })
}

/// Checksum-valid response bits for arbitrary data, no carrier.
fn forged_bits(data: &[u8], pid: Pid, layout: FrameLayout) -> Result<Bitstream> {
    let frame = ResponseFrame::new(data, ChecksumModel::default_for(pid.id()), pid)?;
    Ok(serialize_response_with(&frame, layout))
}

fn random_bytes(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
    (0..len).map(|_| rng.gen()).collect()
}

/// Pid read back from the last character of the header window.
fn observed_pid(seg: &BusSegment, slots: &Slots) -> Option<Pid> {
    let bits = seg.observed_range(slots.header_end - CELLS_PER_BYTE, slots.header_end);
    match decode_characters(&bits, 1, FrameLayout::default()) {
        Ok((bytes, None)) => Pid::from_raw(bytes[0]),
        _ => None,
    }
}

/// Master receive on its own segment, keyed by the publisher of the pid it
/// saw on the bus.
fn master_receive(
    net: &Network,
    seg: &BusSegment,
    seen: Option<Pid>,
    requested: Pid,
    tx: &Transaction,
    slots: &Slots,
    cfg: &PhyConfig,
) -> Result<(ReceivedResponse, Option<String>)> {
    let pid = seen.unwrap_or(requested);
    let owner = net.publisher(pid.id());
    let expect_mac = net.master().is_lin_mm() && owner.map_or(true, Node::is_lin_mm);
    let fallback = MacKey::new([0; 16]);
    let key = owner.and_then(|o| o.key.as_ref()).unwrap_or(&fallback);
    let mut opts = ReceiveOptions::new(pid);
    opts.search_from_s = slots.header_end as f64 * cfg.bit_period_s();
    opts.data_len = owner.map_or(8, |o| o.data.len());
    opts.layout = tx.layout;
    opts.map = tx.map;
    opts.counter = tx.counter;
    opts.expect_mac = expect_mac;
    let rx = receive_linmm_response(&seg.waveform(), cfg, key, pid, &opts)?;
    Ok((rx, owner.map(|o| o.name.clone())))
}

/// Redirect target for a header collision: an id published by another slave
/// whose pid is dominant at the first cell where it differs from `pid`.
fn winning_redirect(net: &Network, pid: Pid, rng: &mut ChaCha8Rng) -> Result<FrameId> {
    let own = serialize_header(&HeaderFrame::new(pid))?;
    let mut candidates = Vec::new();
    for s in net.slaves() {
        for &id in &s.ids {
            let other = serialize_header(&HeaderFrame::new(Pid::from_id(id)))?;
            if let Some(k) = first_difference(&own, &other) {
                if !other.cells()[k] {
                    candidates.push(id);
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(Error::Topology(format!(
            "no published id can override pid {:#04x} in a header collision",
            pid.get()
        )));
    }
    Ok(candidates[rng.gen_range(0..candidates.len())])
}

/// Forged payload that wins the first cell where it differs from `victim`.
fn winning_forgery(
    victim: &Bitstream,
    len: usize,
    pid: Pid,
    layout: FrameLayout,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u8>> {
    loop {
        let data = random_bytes(rng, len);
        let bits = forged_bits(&data, pid, layout)?;
        if let Some(k) = first_difference(victim, &bits) {
            if !bits.cells()[k] {
                return Ok(data);
            }
        }
    }
}

fn check_inputs(net: &Network, tx: &Transaction, noise: &NoiseModel, cfg: &PhyConfig) -> Result<()> {
    cfg.validate()?;
    noise.validate()?;
    net.validate()?;
    if net.publisher(tx.id).is_none() {
        return Err(Error::Topology(format!("no slave publishes id {:#04x}", tx.id.get())));
    }
    Ok(())
}

fn scenario_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SCENARIO_STREAM);
    rng
}

/// Intermediate result shared by the single-segment and MitM paths.
struct Finished<'a> {
    net: &'a Network,
    tx: &'a Transaction,
    scenario: &'a AttackScenario,
    seed: u64,
    cfg: &'a PhyConfig,
    slots: Slots,
    near: BusSegment,
    far: Option<BusSegment>,
    seen: Option<Pid>,
    legit: Option<(Vec<u8>, Option<MacTag>)>,
    collisions: Vec<CollisionEvent>,
    influenced: bool,
}

impl Finished<'_> {
    fn into_run(self) -> Result<SimRun> {
        let requested = Pid::from_id(self.tx.id);
        let (response, responder) = master_receive(
            self.net,
            &self.near,
            self.seen,
            requested,
            self.tx,
            &self.slots,
            self.cfg,
        )?;
        let accepted = response.accepted();
        let collided = !self.collisions.is_empty();
        let dos = matches!(self.scenario, AttackScenario::Dos { .. });
        let outcome = match self.scenario {
            AttackScenario::None => Outcome::None,
            _ => Outcome::classify(dos, self.influenced, accepted, response.mac, collided),
        };
        let transmitted_mac = self.legit.as_ref().and_then(|l| l.1);
        let mac_bit_errors = match (transmitted_mac, response.response_start_s) {
            (Some(t), Some(_)) => Some(t.bit_errors(response.reconstructed_mac)),
            _ => None,
        };
        let tb = self.cfg.bit_period_s();
        let timings = Timings {
            bit_period_s: tb,
            header_start_s: self.slots.header_start as f64 * tb,
            response_slot_s: self.slots.response_start as f64 * tb,
            response_start_s: response.response_start_s,
            mac_available_s: response.mac_available_s,
            window_end_s: self.slots.total as f64 * tb,
        };
        let report = SimReport {
            scenario: self.scenario.name().to_string(),
            seed: self.seed,
            requested_id: self.tx.id.get(),
            observed_pid: self.seen.map(Pid::get),
            responder,
            transmitted_mac,
            mac_bit_errors,
            sent_data: self.legit.as_ref().map(|l| hex::encode(&l.0)),
            response,
            accepted,
            collisions: self.collisions,
            attacker_influenced: self.influenced,
            outcome,
            timings,
        };
        let master_bus = self.near.waveform();
        let mut segments = vec![(
            if self.far.is_some() { "near" } else { "bus" }.to_string(),
            master_bus.clone(),
        )];
        if let Some(far) = &self.far {
            segments.push(("far".to_string(), far.waveform()));
        }
        let nodes = std::iter::once(&self.near)
            .chain(self.far.as_ref())
            .flat_map(|seg| {
                seg.node_waveforms()
                    .into_iter()
                    .map(|(node, drive, carrier)| NodeTrace {
                        segment: seg.name().to_string(),
                        node,
                        drive,
                        carrier,
                    })
            })
            .collect();
        Ok(SimRun {
            nodes,
            report,
            master_carrier: self.near.carrier_waveform(),
            master_bus,
            segments,
        })
    }
}

/// Simulates one poll of `tx.id` under `scenario`. All randomness (noise,
/// attacker choices) derives from `noise.seed`.
pub fn run_transaction(
    net: &Network,
    tx: &Transaction,
    scenario: &AttackScenario,
    noise: &NoiseModel,
    cfg: &PhyConfig,
) -> Result<SimRun> {
    if let AttackScenario::Mitm { .. } = scenario {
        return run_mitm(net, tx, scenario, noise, cfg);
    }
    check_inputs(net, tx, noise, cfg)?;
    let mut rng = scenario_rng(noise.seed);
    let requested = Pid::from_id(tx.id);
    let header = serialize_header(&HeaderFrame::new(requested))?;
    let max_len = net.slaves().map(|s| s.data.len()).max().unwrap_or(8);
    let slots = Slots::new(tx.timing, header.len(), tx.layout.response_cells(max_len));
    for s in net.slaves().filter(|s| s.is_lin_mm()) {
        tx.map.validate(tx.layout.response_cells(s.data.len()))?;
    }

    let mut seg = BusSegment::new("bus", cfg, slots.total, noise)?;
    let master = net.master();
    seg.add(Transmission {
        node: master.name.clone(),
        start_cell: slots.header_start,
        drive: Drive::Bits {
            bits: header.clone(),
            carrier: None,
        },
        monitor: true,
    })?;
    let attacker = net.name_of(NodeRole::Attacker, "attacker");

    if let AttackScenario::HeaderCollision { redirect_id } = scenario {
        let target = match redirect_id {
            Some(id) => *id,
            None => winning_redirect(net, requested, &mut rng)?,
        };
        seg.add(Transmission {
            node: attacker.clone(),
            start_cell: slots.header_start,
            drive: Drive::Bits {
                bits: serialize_header(&HeaderFrame::new(Pid::from_id(target)))?,
                carrier: None,
            },
            monitor: false,
        })?;
    }
    seg.run_until(slots.header_end);
    let seen = observed_pid(&seg, &slots);

    let silenced = matches!(scenario, AttackScenario::Spoofing { .. });
    let publisher = seen.and_then(|p| net.publisher(p.id()).map(|n| (n, p)));
    let mut legit = None;
    let mut victim_bits = None;
    if let Some((node, pid)) = publisher {
        let resp = slave_response(node, &node.data, pid, tx, cfg)?;
        legit = Some((node.data.clone(), resp.tag));
        victim_bits = Some(resp.bits.clone());
        if !silenced {
            seg.add(Transmission {
                node: node.name.clone(),
                start_cell: slots.response_start,
                drive: Drive::Bits {
                    bits: resp.bits,
                    carrier: resp.carrier,
                },
                monitor: true,
            })?;
        }
    }

    let reply_pid = seen.unwrap_or(requested);
    let data_len = publisher.map_or(8, |(n, _)| n.data.len());
    let influenced = match scenario {
        AttackScenario::None => false,
        AttackScenario::HeaderCollision { .. } => seen != Some(requested),
        AttackScenario::Spoofing { data, carrier } => {
            let data = data
                .as_ref()
                .map_or_else(|| random_bytes(&mut rng, data_len), |d| d.0.clone());
            let bits = forged_bits(&data, reply_pid, tx.layout)?;
            let carrier = match carrier {
                SpoofCarrier::None => None,
                SpoofCarrier::Random => {
                    Some(carrier_waveform(MacTag::new(rng.gen()), tx.map, bits.len(), cfg)?.samples)
                }
            };
            seg.add(Transmission {
                node: attacker.clone(),
                start_cell: slots.response_start,
                drive: Drive::Bits { bits, carrier },
                monitor: false,
            })?;
            true
        }
        AttackScenario::ResponseCollision { data } => {
            let victim = victim_bits
                .as_ref()
                .ok_or_else(|| Error::Topology("response collision needs a responding slave".into()))?;
            let data = match data {
                Some(d) => d.0.clone(),
                None => winning_forgery(victim, data_len, reply_pid, tx.layout, &mut rng)?,
            };
            let bits = forged_bits(&data, reply_pid, tx.layout)?;
            let influenced = bits != *victim;
            seg.add(Transmission {
                node: attacker.clone(),
                start_cell: slots.response_start,
                drive: Drive::Bits { bits, carrier: None },
                monitor: false,
            })?;
            influenced
        }
        AttackScenario::Dos { start_cell } => {
            let k = match start_cell {
                Some(k) if *k < slots.response_cells => *k,
                Some(k) => return Err(Error::config(format!("dos start cell {k} outside the response window"))),
                None => rng.gen_range(0..slots.response_cells),
            };
            let mut bits = Bitstream::new();
            bits.push_repeat(false, slots.response_cells - k);
            seg.add(Transmission {
                node: attacker.clone(),
                start_cell: slots.response_start + k,
                drive: Drive::Bits { bits, carrier: None },
                monitor: false,
            })?;
            true
        }
        AttackScenario::Mitm { .. } => unreachable!("handled by run_mitm"),
    };
    seg.run_until(slots.total);

    Finished {
        net,
        tx,
        scenario,
        seed: noise.seed,
        cfg,
        slots,
        collisions: seg.collisions().to_vec(),
        near: seg,
        far: None,
        seen,
        legit,
        influenced,
    }
    .into_run()
}

fn relay_drive(seg: &BusSegment, start: usize, end: usize) -> Drive {
    let spb = seg.samples_per_bit();
    let (a, b) = (start * spb, end * spb);
    Drive::Analog {
        base: seg.base_waveform().samples[a..b].to_vec(),
        carrier: seg.carrier_waveform().samples[a..b].to_vec(),
    }
}

/// MitM on a cut bus: the master alone on the near segment, every slave on
/// the far one, the attacker bridging both.
pub fn run_mitm(
    net: &Network,
    tx: &Transaction,
    scenario: &AttackScenario,
    noise: &NoiseModel,
    cfg: &PhyConfig,
) -> Result<SimRun> {
    let AttackScenario::Mitm {
        mode,
        xor_mask,
        carrier,
    } = scenario
    else {
        return Err(Error::config("run_mitm needs a mitm scenario"));
    };
    check_inputs(net, tx, noise, cfg)?;
    let mut rng = scenario_rng(noise.seed);
    let requested = Pid::from_id(tx.id);
    let header = serialize_header(&HeaderFrame::new(requested))?;
    let max_len = net.slaves().map(|s| s.data.len()).max().unwrap_or(8);
    let slots = Slots::new(tx.timing, header.len(), tx.layout.response_cells(max_len));
    let mitm = net.name_of(NodeRole::Mitm, "mitm");

    let mut near = BusSegment::new("near", cfg, slots.total, noise)?;
    let mut far = BusSegment::new("far", cfg, slots.total, &noise.with_seed(noise.seed ^ FAR_SEGMENT_SALT))?;
    near.add(Transmission {
        node: net.master().name.clone(),
        start_cell: slots.header_start,
        drive: Drive::Bits {
            bits: header,
            carrier: None,
        },
        monitor: true,
    })?;
    near.run_until(slots.header_end);
    far.add(Transmission {
        node: mitm.clone(),
        start_cell: slots.header_start,
        drive: relay_drive(&near, slots.header_start, slots.header_end),
        monitor: false,
    })?;
    far.run_until(slots.header_end);
    let far_pid = observed_pid(&far, &slots);
    let near_pid = observed_pid(&near, &slots);

    let publisher = far_pid.and_then(|p| net.publisher(p.id()).map(|n| (n, p)));
    let mut legit = None;
    if let Some((node, pid)) = publisher {
        let resp = slave_response(node, &node.data, pid, tx, cfg)?;
        legit = Some((node.data.clone(), resp.tag));
        far.add(Transmission {
            node: node.name.clone(),
            start_cell: slots.response_start,
            drive: Drive::Bits {
                bits: resp.bits,
                carrier: resp.carrier,
            },
            monitor: true,
        })?;
    }
    far.run_until(slots.total);

    let cells = publisher.map_or(slots.response_cells, |(n, _)| tx.layout.response_cells(n.data.len()));
    let window = (slots.response_start, slots.response_start + cells);
    let (drive, influenced) = match mode {
        MitmMode::Passthrough => (relay_drive(&far, window.0, window.1), false),
        MitmMode::Rewrite => {
            let (node, pid) =
                publisher.ok_or_else(|| Error::Topology("payload rewrite needs a responding slave".into()))?;
            let len = node.data.len();
            let (bytes, _) = decode_characters(&far.observed_range(window.0, window.1), len + 1, tx.layout)?;
            let mask = match xor_mask {
                Some(m) if m.0.len() == len => m.0.clone(),
                Some(m) => {
                    return Err(Error::config(format!(
                        "xor mask has {} bytes, payload {len}",
                        m.0.len()
                    )))
                }
                None => loop {
                    let m = random_bytes(&mut rng, len);
                    if m.iter().any(|&b| b != 0) {
                        break m;
                    }
                },
            };
            let data: Vec<u8> = bytes[..len].iter().zip(&mask).map(|(b, m)| b ^ m).collect();
            let bits = forged_bits(&data, pid, tx.layout)?;
            let relayed = match carrier {
                CarrierPolicy::Strip => None,
                CarrierPolicy::Relay => {
                    let spb = far.samples_per_bit();
                    Some(far.carrier_waveform().samples[window.0 * spb..window.1 * spb].to_vec())
                }
            };
            let influenced = mask.iter().any(|&b| b != 0);
            (Drive::Bits { bits, carrier: relayed }, influenced)
        }
        MitmMode::Replay => {
            let (node, pid) = publisher.ok_or_else(|| Error::Topology("replay needs a responding slave".into()))?;
            // Earlier poll of the same id: other signal values, previous
            // counter value.
            let old_data = loop {
                let d = random_bytes(&mut rng, node.data.len());
                if d != node.data {
                    break d;
                }
            };
            let earlier = Transaction {
                counter: tx.counter.map(|c| c.wrapping_sub(1)),
                ..tx.clone()
            };
            let resp = slave_response(node, &old_data, pid, &earlier, cfg)?;
            let mut capture = BusSegment::new("capture", cfg, resp.bits.len(), &NoiseModel::quiet())?;
            capture.add(Transmission {
                node: node.name.clone(),
                start_cell: 0,
                drive: Drive::Bits {
                    bits: resp.bits,
                    carrier: resp.carrier,
                },
                monitor: false,
            })?;
            capture.run_until(capture.total_cells());
            (relay_drive(&capture, 0, capture.total_cells()), true)
        }
    };
    near.add(Transmission {
        node: mitm,
        start_cell: slots.response_start,
        drive,
        monitor: false,
    })?;
    near.run_until(slots.total);

    let mut collisions = near.collisions().to_vec();
    collisions.extend_from_slice(far.collisions());
    Finished {
        net,
        tx,
        scenario,
        seed: noise.seed,
        cfg,
        slots,
        near,
        far: Some(far),
        seen: near_pid,
        legit,
        collisions,
        influenced,
    }
    .into_run()
}
