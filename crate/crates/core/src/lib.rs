//! Sample-accurate simulation of LIN 2.x traffic with a 64-bit CMAC
//! multiplexed onto the response frame by on-off keying a 100 kHz carrier.
//!
//! Slave side: [`frame`] serializes the response, [`synth`] turns it into a
//! bus voltage and adds the MAC carrier. Master side: [`demod`] decodes the
//! LIN bytes with ordinary thresholds and recovers the MAC with a band-pass
//! filter, comparator and per-bit pulse counter. [`bus`] wires nodes
//! together on a wired-AND bus and runs attack scenarios against them.

pub mod bus;
pub mod config;
pub mod demod;
pub mod error;
pub mod filter;
pub mod frame;
pub mod mac;
pub mod synth;
pub mod waveform;

pub use bus::{
    run_mitm, run_transaction, sweep_noise, AttackScenario, BerRow, Capability, CollisionEvent, Network, Node,
    NodeRole, NoiseModel, Outcome, SimReport, SimRun, SweepSpec, Transaction,
};
pub use config::PhyConfig;
pub use demod::{
    bandpass_filter, comparator, receive_linmm_response, reconstruct_mac, standard_lin_decode, ChecksumVerdict,
    DemodRecord, DemodTrace, MacVerdict, PulseEvents, ReceiveOptions, ReceivedResponse,
};
pub use error::{Error, Result};
pub use frame::{
    checksum, compute_pid, parse_response, serialize_header, serialize_response, Bitstream, ChecksumModel, FrameId,
    FrameLayout, HeaderFrame, Pid, ResponseFrame,
};
pub use mac::{cmac_subkeys, cmac_tag, truncate_tag, verify_tag, AuthMessage, Cmac, MacKey, MacTag};
pub use synth::{bits_to_waveform, carrier_waveform, synth_linmm_response, MacSlotMap};
pub use waveform::{superpose, Waveform};
