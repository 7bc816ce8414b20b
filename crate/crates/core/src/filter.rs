//! Fourth-order Butterworth band-pass realized as two cascaded biquads.
//!
//! Design path: second-order Butterworth low-pass prototype, low-pass to
//! band-pass transform around the prewarped corners, bilinear transform.
//! Each section gets one conjugate pole pair and the zeros {+1, -1}, so the
//! response is exactly zero at DC.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    /// Denominator with a0 normalized to 1: `[a1, a2]`.
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[0] * z_inv + self.a[1] * z2)
    }

    /// Gain at z = 1.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn is_stable(&self) -> bool {
        // Jury conditions for a monic quadratic.
        let [a1, a2] = self.a;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }
}

/// Transposed direct form II state for one section.
#[derive(Copy, Clone, Debug, Default)]
struct SectionState {
    s1: f64,
    s2: f64,
}

/// Causal band-pass filter with per-stream state.
#[derive(Clone, Debug)]
pub struct BandpassFilter {
    sections: Vec<Biquad>,
    state: Vec<SectionState>,
}

impl BandpassFilter {
    pub fn design(sample_rate: f64, low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(0.0 < low_hz && low_hz < high_hz && high_hz < sample_rate / 2.0) {
            return Err(Error::config(format!(
                "band-pass corners {low_hz}..{high_hz} Hz invalid for {sample_rate} S/s"
            )));
        }
        let fs2 = 2.0 * sample_rate;
        let wl = fs2 * (PI * low_hz / sample_rate).tan();
        let wh = fs2 * (PI * high_hz / sample_rate).tan();
        let bw = wh - wl;
        let w0_sq = wl * wh;

        // Butterworth order-2 prototype poles, upper half plane; conjugates
        // are implied by real coefficients.
        let proto = Complex64::new(-FRAC_1_SQRT_2, FRAC_1_SQRT_2);
        let pb = proto * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        let analog = [(pb + disc) / 2.0, (pb - disc) / 2.0];

        let mut sections = Vec::with_capacity(2);
        for s in analog {
            let z = (fs2 + s) / (fs2 - s);
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            });
        }
        if !sections.iter().all(Biquad::is_stable) {
            return Err(Error::config("band-pass design produced an unstable section"));
        }

        let mut filter = BandpassFilter {
            state: vec![SectionState::default(); sections.len()],
            sections,
        };
        // Unity gain at the geometric centre of the prewarped band.
        let center_hz = (w0_sq.sqrt() / fs2).atan() * sample_rate / PI;
        let g = filter.magnitude(center_hz, sample_rate);
        let scale = (1.0 / g).sqrt();
        for s in &mut filter.sections {
            for b in &mut s.b {
                *b *= scale;
            }
        }
        Ok(filter)
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn frequency_response(&self, f_hz: f64, sample_rate: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * f_hz / sample_rate);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv))
    }

    pub fn magnitude(&self, f_hz: f64, sample_rate: f64) -> f64 {
        self.frequency_response(f_hz, sample_rate).norm()
    }

    pub fn reset(&mut self) {
        self.state.fill(SectionState::default());
    }

    /// Sets the state to the steady state for a constant input `x`, as if the
    /// filter had been running on an idle bus.
    pub fn prime(&mut self, x: f64) {
        let mut input = x;
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = sec.dc_gain() * input;
            st.s2 = sec.b[2] * input - sec.a[1] * y;
            st.s1 = sec.b[1] * input - sec.a[0] * y + st.s2;
            input = y;
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let mut v = x;
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let y = sec.b[0] * v + st.s1;
            st.s1 = sec.b[1] * v - sec.a[0] * y + st.s2;
            st.s2 = sec.b[2] * v - sec.a[1] * y;
            v = y;
        }
        v
    }
}
