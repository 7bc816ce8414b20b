use std::io::{self, Write};

use crate::error::{Error, Result};

/// Uniformly sampled voltage trace. Sample `n` sits at `t0 + n / sample_rate`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub sample_rate: f64,
    pub t0: f64,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: f64, t0: f64, samples: Vec<f64>) -> Self {
        Waveform {
            sample_rate,
            t0,
            samples,
        }
    }

    pub fn zeros(sample_rate: f64, t0: f64, len: usize) -> Self {
        Waveform::new(sample_rate, t0, vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time_of(&self, index: usize) -> f64 {
        self.t0 + index as f64 / self.sample_rate
    }

    /// Nearest sample index for time `t` (may be out of range).
    pub fn index_of(&self, t: f64) -> i64 {
        ((t - self.t0) * self.sample_rate).round() as i64
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|v| v.is_finite())
    }

    pub fn check_aligned(&self, other: &Waveform) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::Alignment(format!(
                "sample rates {} and {}",
                self.sample_rate, other.sample_rate
            )));
        }
        if (self.t0 - other.t0).abs() * self.sample_rate > 1e-6 {
            return Err(Error::Alignment(format!("start times {} and {}", self.t0, other.t0)));
        }
        if self.len() != other.len() {
            return Err(Error::Alignment(format!("lengths {} and {}", self.len(), other.len())));
        }
        Ok(())
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Waveform> {
        if start > end || end > self.len() {
            return Err(Error::Window {
                start,
                end,
                len: self.len(),
            });
        }
        Ok(Waveform::new(
            self.sample_rate,
            self.time_of(start),
            self.samples[start..end].to_vec(),
        ))
    }

    /// Writes `time_s,voltage_v` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "time_s,voltage_v")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(out, "{},{}", fmt_sci(self.time_of(i)), fmt_sci(*v))?;
        }
        Ok(())
    }
}

/// Pointwise sum. All inputs must share rate, start and length.
pub fn superpose(base: &Waveform, others: &[&Waveform]) -> Result<Waveform> {
    let mut out = base.clone();
    for w in others {
        base.check_aligned(w)?;
        for (o, s) in out.samples.iter_mut().zip(&w.samples) {
            *o += s;
        }
    }
    Ok(out)
}

/// Scientific notation with 12 significant digits; stable across platforms.
pub fn fmt_sci(v: f64) -> String {
    if v == 0.0 {
        // Avoid "-0.00000000000e0".
        return "0.00000000000e0".to_string();
    }
    format!("{v:.11e}")
}
