//! Run configuration: a TOML document whose keys are dotted section paths,
//! e.g. `phy.f_c_hz = 100000` or `scenario.kind = "spoofing"`.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use linmm_core::bus::{BusTiming, Payload};
use linmm_core::demod::{ChecksumVerdict, MacVerdict};
use linmm_core::frame::FrameLayout;
use linmm_core::{
    AttackScenario, Capability, FrameId, MacKey, MacSlotMap, Network, Node, NodeRole, NoiseModel, Outcome, PhyConfig,
    SimReport, Transaction,
};
use serde::Deserialize;

pub const DEFAULT_KEY_HEX: &str = "2b7e151628aed2a6abf7158809cf4f3c";

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameSection {
    /// Frame id the master polls.
    pub id: u8,
    /// Payload published by the polled slave in the default topology.
    pub data: Payload,
    pub inter_byte_space: usize,
    pub mac_start_slot: usize,
}

impl Default for FrameSection {
    fn default() -> Self {
        FrameSection {
            id: 0x10,
            data: Payload(vec![0x01, 0x23, 0x45, 0x67, 0x89, 0xab, 0xcd, 0xef]),
            inter_byte_space: 0,
            mac_start_slot: 0,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacSection {
    pub key: String,
    pub freshness_counter: Option<u32>,
}

impl Default for MacSection {
    fn default() -> Self {
        MacSection {
            key: DEFAULT_KEY_HEX.into(),
            freshness_counter: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BusSection {
    pub lead_cells: usize,
    pub response_space_cells: usize,
    pub trail_cells: usize,
    pub master_capability: Capability,
    pub slave_capability: Capability,
}

impl Default for BusSection {
    fn default() -> Self {
        let t = BusTiming::default();
        BusSection {
            lead_cells: t.lead_cells,
            response_space_cells: t.response_space_cells,
            trail_cells: t.trail_cells,
            master_capability: Capability::LinMm,
            slave_capability: Capability::LinMm,
        }
    }
}

/// Explicit node list; replaces the default master + target + peer topology.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSection {
    pub name: String,
    pub role: NodeRole,
    #[serde(default)]
    pub ids: Vec<u8>,
    #[serde(default)]
    pub capability: Capability,
    /// Defaults to `mac.key` for LIN-MM slaves.
    pub key: Option<String>,
    pub data: Option<Payload>,
}

/// Verdicts the run must produce; unset fields are not checked.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpectSection {
    pub outcome: Option<Outcome>,
    pub checksum: Option<ChecksumVerdict>,
    pub mac: Option<MacVerdict>,
    pub accepted: Option<bool>,
    pub collision: Option<bool>,
}

impl ExpectSection {
    /// Human-readable list of unmet expectations.
    pub fn mismatches(&self, r: &SimReport) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |name: &str, want: String, got: String| {
            if want != got {
                out.push(format!("{name}: expected {want}, got {got}"));
            }
        };
        if let Some(o) = self.outcome {
            check("outcome", format!("{o:?}"), format!("{:?}", r.outcome));
        }
        if let Some(c) = self.checksum {
            check("checksum", format!("{c:?}"), format!("{:?}", r.response.checksum));
        }
        if let Some(m) = self.mac {
            check("mac", format!("{m:?}"), format!("{:?}", r.response.mac));
        }
        if let Some(a) = self.accepted {
            check("accepted", a.to_string(), r.accepted.to_string());
        }
        if let Some(c) = self.collision {
            check("collision", c.to_string(), (!r.collisions.is_empty()).to_string());
        }
        out
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub sigmas: Vec<f64>,
    pub trials: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            sigmas: vec![0.0, 0.5, 1.0],
            trials: 100,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub phy: PhyConfig,
    pub frame: FrameSection,
    pub mac: MacSection,
    pub bus: BusSection,
    pub nodes: Vec<NodeSection>,
    pub scenario: AttackScenario,
    pub noise: NoiseModel,
    pub expect: ExpectSection,
    pub sweep: SweepSection,
}

/// Config file contents plus the parsed form.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub raw: Vec<u8>,
    pub config: RunConfig,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let raw = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text = std::str::from_utf8(&raw).context("config is not UTF-8")?;
    let config = parse(text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(LoadedConfig { raw, config })
}

pub fn parse(text: &str) -> Result<RunConfig> {
    let config: RunConfig = toml::from_str(text)?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.phy.validate()?;
        self.noise.validate()?;
        FrameId::new(self.frame.id)?;
        MacKey::from_hex(&self.mac.key)?;
        if self.sweep.trials == 0 {
            bail!("sweep.trials must be at least 1");
        }
        self.network()?;
        Ok(())
    }

    /// Seed precedence: command line, then `seed`, then `noise.seed`.
    pub fn effective_seed(&self, cli: Option<u64>) -> u64 {
        cli.or(self.seed).unwrap_or(self.noise.seed)
    }

    pub fn noise_with_seed(&self, seed: u64) -> NoiseModel {
        self.noise.with_seed(seed)
    }

    pub fn transaction(&self) -> Result<Transaction> {
        Ok(Transaction {
            id: FrameId::new(self.frame.id)?,
            counter: self.mac.freshness_counter,
            layout: FrameLayout {
                inter_byte_space: self.frame.inter_byte_space,
            },
            map: MacSlotMap {
                start_slot: self.frame.mac_start_slot,
            },
            timing: BusTiming {
                lead_cells: self.bus.lead_cells,
                response_space_cells: self.bus.response_space_cells,
                trail_cells: self.bus.trail_cells,
            },
        })
    }

    pub fn network(&self) -> Result<Network> {
        let key = MacKey::from_hex(&self.mac.key)?;
        if self.nodes.is_empty() {
            return Ok(default_network(self, key)?);
        }
        let mut nodes = Vec::new();
        for n in &self.nodes {
            let key = match (&n.key, n.capability) {
                (Some(k), _) => Some(MacKey::from_hex(k)?),
                (None, Capability::LinMm) if n.role == NodeRole::Slave => Some(key.clone()),
                _ => None,
            };
            let mut node = match n.role {
                NodeRole::Slave => {
                    let data = n.data.clone().unwrap_or_else(|| self.frame.data.clone());
                    Node::slave(&n.name, &n.ids, n.capability, key, &data.0)?
                }
                _ => Node::master(&n.name, n.capability),
            };
            node.role = n.role;
            nodes.push(node);
        }
        Ok(Network::new(nodes)?)
    }
}

/// Master, the polled slave ("target") and, when the polled id is not 0,
/// a "peer" slave on id 0x00. Id 0x00 wins a header collision against every
/// other id, which gives the header-collision scenario a redirect target.
fn default_network(cfg: &RunConfig, key: MacKey) -> linmm_core::Result<Network> {
    let cap = cfg.bus.slave_capability;
    let key = (cap == Capability::LinMm).then_some(key);
    let mut nodes = vec![
        Node::master("master", cfg.bus.master_capability),
        Node::slave("target", &[cfg.frame.id], cap, key.clone(), &cfg.frame.data.0)?,
    ];
    if cfg.frame.id != 0 {
        nodes.push(Node::slave("peer", &[0x00], cap, key, &[0x5a; 8])?);
    }
    Network::new(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use linmm_core::bus::MitmMode;

    #[test]
    fn empty_config_is_the_baseline() {
        let c = parse("").unwrap();
        assert_eq!(c.phy, PhyConfig::default());
        assert_eq!(c.scenario, AttackScenario::None);
        assert_eq!(c.network().unwrap().nodes.len(), 3);
        assert_eq!(c.effective_seed(None), 0);
    }

    #[test]
    fn dotted_keys() {
        let c = parse(
            r#"
            seed = 9
            phy.f_c_hz = 100000
            frame.id = 0x21
            frame.data = "0011"
            mac.freshness_counter = 7
            scenario.kind = "mitm"
            scenario.mode = "replay"
            noise.gaussian_sigma_v = 0.1
            expect.outcome = "succeeded"
            "#,
        )
        .unwrap();
        assert_eq!(c.frame.id, 0x21);
        assert_eq!(c.frame.data.0, vec![0x00, 0x11]);
        assert_eq!(c.transaction().unwrap().counter, Some(7));
        assert!(matches!(
            c.scenario,
            AttackScenario::Mitm {
                mode: MitmMode::Replay,
                ..
            }
        ));
        assert_eq!(c.expect.outcome, Some(Outcome::Succeeded));
        assert_eq!(c.effective_seed(Some(3)), 3);
        assert_eq!(c.effective_seed(None), 9);
    }

    #[test]
    fn invalid_configs() {
        assert!(parse("phy.filter_low_hz = 130000").is_err());
        assert!(parse("phy.bogus = 1").is_err());
        assert!(parse("mac.key = \"00\"").is_err());
        assert!(parse("frame.id = 64").is_err());
        assert!(parse("scenario.kind = \"teleport\"").is_err());
        assert!(parse("sweep.trials = 0").is_err());
        assert!(parse("noise.gaussian_sigma_v = -1.0").is_err());
    }

    #[test]
    fn explicit_nodes() {
        let c = parse(
            r#"
            [[nodes]]
            name = "bcm"
            role = "master"

            [[nodes]]
            name = "window"
            role = "slave"
            ids = [16]
            capability = "legacy_lin"
            "#,
        )
        .unwrap();
        let net = c.network().unwrap();
        assert_eq!(net.master().name, "bcm");
        assert!(net.publisher(FrameId::new(16).unwrap()).unwrap().key.is_none());
        assert!(parse("[[nodes]]\nname = \"x\"\nrole = \"slave\"\nids = [1]").is_err());
    }
}
