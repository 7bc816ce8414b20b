use std::io::{self, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PhyConfig;
use crate::demod::{ChecksumVerdict, MacVerdict};
use crate::error::{Error, Result};
use crate::mac::TAG_BITS;
use crate::waveform::fmt_sci;

use super::noise::NoiseModel;
use super::scenario::{run_transaction, AttackScenario, Transaction};
use super::Network;

/// Noise sweep over one transaction type. `noise` supplies the non-Gaussian
/// terms; its `gaussian_sigma_v` is replaced by each sweep point.
#[derive(Clone, Debug)]
pub struct SweepSpec {
    pub net: Network,
    pub tx: Transaction,
    pub scenario: AttackScenario,
    pub noise: NoiseModel,
    pub sigmas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub sigma_v: f64,
    pub mac_ber: f64,
    pub frame_err_rate: f64,
    pub mac_fail_rate: f64,
    pub trials: usize,
}

struct TrialResult {
    bit_errors: u32,
    frame_error: bool,
    mac_fail: bool,
}

/// Seed of trial `trial` at sweep point `point`; independent of execution
/// order.
fn trial_seed(seed: u64, point: usize, trial: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(point as u64);
    rng.set_word_pos(2 * trial as u128);
    rng.next_u64()
}

fn run_trial(spec: &SweepSpec, sigma: f64, seed: u64, cfg: &PhyConfig) -> Result<TrialResult> {
    let mut net = spec.net.clone();
    let publisher = net
        .publisher_mut(spec.tx.id)
        .ok_or_else(|| Error::Topology(format!("no slave publishes id {:#04x}", spec.tx.id.get())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for b in &mut publisher.data {
        *b = rng.gen();
    }
    let sent = publisher.data.clone();
    let noise = NoiseModel {
        gaussian_sigma_v: sigma,
        seed,
        ..spec.noise.clone()
    };
    let report = run_transaction(&net, &spec.tx, &spec.scenario, &noise, cfg)?.report;
    let rx = &report.response;
    Ok(TrialResult {
        bit_errors: report.mac_bit_errors.unwrap_or(TAG_BITS as u32),
        frame_error: rx.checksum != ChecksumVerdict::Pass || rx.data != sent,
        mac_fail: rx.mac == MacVerdict::Fail,
    })
}

/// MAC bit error rate, frame error rate and MAC rejection rate per noise
/// level. Trials run in parallel; results do not depend on scheduling.
pub fn sweep_noise(spec: &SweepSpec, cfg: &PhyConfig) -> Result<Vec<BerRow>> {
    if spec.trials == 0 {
        return Err(Error::config("a sweep needs at least one trial per point"));
    }
    if spec.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::config("noise levels must be finite and non-negative"));
    }
    let publisher = spec
        .net
        .publisher(spec.tx.id)
        .ok_or_else(|| Error::Topology(format!("no slave publishes id {:#04x}", spec.tx.id.get())))?;
    if !publisher.is_lin_mm() {
        return Err(Error::config("a MAC sweep needs a LIN-MM publisher"));
    }
    let jobs: Vec<(usize, usize)> = (0..spec.sigmas.len())
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(p, t)| run_trial(spec, spec.sigmas[p], trial_seed(spec.seed, p, t), cfg))
        .collect::<Result<_>>()?;
    Ok(results
        .chunks(spec.trials)
        .zip(&spec.sigmas)
        .map(|(chunk, &sigma)| {
            let n = chunk.len() as f64;
            BerRow {
                sigma_v: sigma,
                mac_ber: chunk.iter().map(|r| r.bit_errors as f64).sum::<f64>() / (n * TAG_BITS as f64),
                frame_err_rate: chunk.iter().filter(|r| r.frame_error).count() as f64 / n,
                mac_fail_rate: chunk.iter().filter(|r| r.mac_fail).count() as f64 / n,
                trials: chunk.len(),
            }
        })
        .collect())
}

pub fn write_ber_csv<W: Write>(rows: &[BerRow], mut out: W) -> io::Result<()> {
    writeln!(out, "sigma_v,mac_ber,frame_err_rate,mac_fail_rate,trials")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sci(r.sigma_v),
            fmt_sci(r.mac_ber),
            fmt_sci(r.frame_err_rate),
            fmt_sci(r.mac_fail_rate),
            r.trials
        )?;
    }
    Ok(())
}
