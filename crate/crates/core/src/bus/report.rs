use serde::{Deserialize, Serialize};

use crate::demod::{MacVerdict, ReceivedResponse};
use crate::mac::MacTag;
use crate::waveform::Waveform;

use super::engine::CollisionEvent;

/// Attack classification from the master's point of view.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Benign traffic, or an attack that left no trace and changed nothing.
    None,
    /// Master rejected attacker-influenced data on the MAC.
    Blocked,
    /// Attack disturbed the bus and was noticed, without a MAC rejection.
    Detected,
    /// Master accepted attacker-influenced data, or a DoS kept it from
    /// accepting anything.
    Succeeded,
}

impl Outcome {
    /// Shared decision rule. `dos` switches the success criterion to
    /// "master accepted nothing".
    pub fn classify(dos: bool, influenced: bool, accepted: bool, mac: MacVerdict, collided: bool) -> Outcome {
        if dos {
            return match (accepted, collided) {
                (false, _) => Outcome::Succeeded,
                (true, true) => Outcome::Detected,
                (true, false) => Outcome::None,
            };
        }
        if !influenced {
            return Outcome::None;
        }
        if accepted {
            Outcome::Succeeded
        } else if mac == MacVerdict::Fail {
            Outcome::Blocked
        } else {
            Outcome::Detected
        }
    }
}

/// Absolute times on the master's segment, seconds from the start of the
/// simulated window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub bit_period_s: f64,
    pub header_start_s: f64,
    pub response_slot_s: f64,
    pub response_start_s: Option<f64>,
    pub mac_available_s: Option<f64>,
    pub window_end_s: f64,
}

/// Outcome of one simulated transaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scenario: String,
    pub seed: u64,
    pub requested_id: u8,
    /// Protected id the master read back from the bus after its header.
    pub observed_pid: Option<u8>,
    /// Node whose keyring entry the master used.
    pub responder: Option<String>,
    /// MAC the legitimate responder computed, when it is a LIN-MM node.
    pub transmitted_mac: Option<MacTag>,
    pub mac_bit_errors: Option<u32>,
    pub sent_data: Option<String>,
    pub response: ReceivedResponse,
    pub accepted: bool,
    pub collisions: Vec<CollisionEvent>,
    pub attacker_influenced: bool,
    pub outcome: Outcome,
    pub timings: Timings,
}

/// Report plus the waveforms a run produced.
#[derive(Clone, Debug)]
pub struct SimRun {
    pub report: SimReport,
    /// Bus voltage at the master.
    pub master_bus: Waveform,
    /// Every segment's bus voltage, by segment name.
    pub segments: Vec<(String, Waveform)>,
    /// Carrier component at the master.
    pub master_carrier: Waveform,
    pub nodes: Vec<NodeTrace>,
}

/// What one transmitter actually drove on one segment: its base level
/// (recessive while silent) and its carrier.
#[derive(Clone, Debug)]
pub struct NodeTrace {
    pub segment: String,
    pub node: String,
    pub drive: Waveform,
    pub carrier: Waveform,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_table() {
        use MacVerdict::*;
        assert_eq!(Outcome::classify(false, false, true, Pass, false), Outcome::None);
        assert_eq!(Outcome::classify(false, true, false, Fail, true), Outcome::Blocked);
        assert_eq!(Outcome::classify(false, true, true, Pass, true), Outcome::Succeeded);
        assert_eq!(Outcome::classify(false, true, false, Pass, true), Outcome::Detected);
        assert_eq!(Outcome::classify(false, true, false, Absent, false), Outcome::Detected);
        assert_eq!(Outcome::classify(true, true, false, Fail, true), Outcome::Succeeded);
        assert_eq!(Outcome::classify(true, true, true, Pass, true), Outcome::Detected);
        assert_eq!(Outcome::classify(true, true, true, Pass, false), Outcome::None);
    }
}
