//! Multi-node bus simulation: topology, wired-AND segments, attack
//! scenarios and noise sweeps.

mod engine;
mod noise;
mod report;
mod scenario;
mod sweep;

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::frame::{FrameId, MAX_DATA_LEN};
use crate::mac::MacKey;

pub use engine::{combine_bus, transmit_monitor, wired_and, BusSegment, CollisionEvent, Drive, Transmission};
pub use noise::{NoiseModel, Spike};
pub use report::{NodeTrace, Outcome, SimReport, SimRun, Timings};
pub use scenario::{
    first_difference, run_mitm, run_transaction, AttackScenario, CarrierPolicy, MitmMode, SpoofCarrier, Transaction,
};
pub use sweep::{sweep_noise, write_ber_csv, BerRow, SweepSpec};

/// Byte string serialized as lowercase hex.
#[derive(Clone, Default, PartialEq, Eq)]
pub struct Payload(pub Vec<u8>);

impl Payload {
    pub fn from_hex(s: &str) -> Result<Self> {
        hex::decode(s.trim())
            .map(Payload)
            .map_err(|e| Error::config(format!("bad hex payload: {e}")))
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({})", hex::encode(&self.0))
    }
}

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Payload::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    Master,
    Slave,
    Attacker,
    Mitm,
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    LegacyLin,
    #[default]
    LinMm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub role: NodeRole,
    /// Frame ids this node publishes (slaves only).
    pub ids: Vec<FrameId>,
    pub capability: Capability,
    pub key: Option<MacKey>,
    /// Current signal values published by a slave.
    pub data: Vec<u8>,
}

impl Node {
    pub fn master(name: &str, capability: Capability) -> Self {
        Node {
            name: name.into(),
            role: NodeRole::Master,
            ids: Vec::new(),
            capability,
            key: None,
            data: Vec::new(),
        }
    }

    pub fn slave(name: &str, ids: &[u8], capability: Capability, key: Option<MacKey>, data: &[u8]) -> Result<Self> {
        Ok(Node {
            name: name.into(),
            role: NodeRole::Slave,
            ids: ids.iter().map(|&i| FrameId::new(i)).collect::<Result<_>>()?,
            capability,
            key,
            data: data.to_vec(),
        })
    }

    pub fn is_lin_mm(&self) -> bool {
        self.capability == Capability::LinMm
    }
}

pub const MAX_SLAVES: usize = 15;

/// Nodes on the bus. For MitM runs the master sits alone on the near
/// segment and every slave on the far one.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub nodes: Vec<Node>,
}

impl Network {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let net = Network { nodes };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        let masters = self.nodes.iter().filter(|n| n.role == NodeRole::Master).count();
        if masters != 1 {
            return Err(Error::Topology(format!("expected exactly one master, found {masters}")));
        }
        let slaves: Vec<&Node> = self.slaves().collect();
        if slaves.len() > MAX_SLAVES {
            return Err(Error::Topology(format!(
                "{} slaves exceed the limit of {MAX_SLAVES}",
                slaves.len()
            )));
        }
        let mut names: Vec<&str> = self.nodes.iter().map(|n| n.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Topology("node names must be unique".into()));
        }
        let mut ids = Vec::new();
        for s in &slaves {
            if s.data.is_empty() || s.data.len() > MAX_DATA_LEN {
                return Err(Error::Topology(format!(
                    "{} publishes {} data bytes",
                    s.name,
                    s.data.len()
                )));
            }
            if s.is_lin_mm() && s.key.is_none() {
                return Err(Error::Topology(format!("LIN-MM slave {} has no key", s.name)));
            }
            ids.extend(s.ids.iter().copied());
        }
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Topology("a frame id is published by more than one slave".into()));
        }
        Ok(())
    }

    pub fn master(&self) -> &Node {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::Master)
            .expect("validated topology has a master")
    }

    pub fn slaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.role == NodeRole::Slave)
    }

    /// Slave publishing `id`.
    pub fn publisher(&self, id: FrameId) -> Option<&Node> {
        self.slaves().find(|n| n.ids.contains(&id))
    }

    pub fn publisher_mut(&mut self, id: FrameId) -> Option<&mut Node> {
        self.nodes
            .iter_mut()
            .find(|n| n.role == NodeRole::Slave && n.ids.contains(&id))
    }

    /// Name of the declared node with `role`, or `fallback`.
    pub fn name_of(&self, role: NodeRole, fallback: &str) -> String {
        self.nodes
            .iter()
            .find(|n| n.role == role)
            .map_or_else(|| fallback.to_string(), |n| n.name.clone())
    }
}

/// Cell budget around one transaction.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusTiming {
    /// Idle cells before the break.
    pub lead_cells: usize,
    /// Cells between the pid stop bit and the response start bit.
    pub response_space_cells: usize,
    /// Idle cells after the response window.
    pub trail_cells: usize,
}

impl Default for BusTiming {
    fn default() -> Self {
        BusTiming {
            lead_cells: 2,
            response_space_cells: 4,
            trail_cells: 2,
        }
    }
}
