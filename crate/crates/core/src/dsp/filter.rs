use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    LowPass,
    HighPass,
    Peaking,
    LowShelf,
    HighShelf,
}

/// One RBJ-cookbook biquad section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiquadSpec {
    pub kind: FilterKind,
    pub freq: f64,
    pub q: f64,
    #[serde(default)]
    pub gain_db: f64,
}

impl BiquadSpec {
    pub fn new(kind: FilterKind, freq: f64, q: f64, gain_db: f64) -> Self {
        BiquadSpec { kind, freq, q, gain_db }
    }

    /// Normalized `(b0, b1, b2, a1, a2)`.
    fn coefficients(&self, sr: f64) -> [f64; 5] {
        let w = 2.0 * PI * self.freq / sr;
        let (sw, cw) = w.sin_cos();
        let alpha = sw / (2.0 * self.q);
        let a = 10f64.powf(self.gain_db / 40.0);
        let (b, den) = match self.kind {
            FilterKind::LowPass => (
                [(1.0 - cw) / 2.0, 1.0 - cw, (1.0 - cw) / 2.0],
                [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
            ),
            FilterKind::HighPass => (
                [(1.0 + cw) / 2.0, -(1.0 + cw), (1.0 + cw) / 2.0],
                [1.0 + alpha, -2.0 * cw, 1.0 - alpha],
            ),
            FilterKind::Peaking => (
                [1.0 + alpha * a, -2.0 * cw, 1.0 - alpha * a],
                [1.0 + alpha / a, -2.0 * cw, 1.0 - alpha / a],
            ),
            FilterKind::LowShelf => {
                let r = 2.0 * a.sqrt() * alpha;
                (
                    [
                        a * ((a + 1.0) - (a - 1.0) * cw + r),
                        2.0 * a * ((a - 1.0) - (a + 1.0) * cw),
                        a * ((a + 1.0) - (a - 1.0) * cw - r),
                    ],
                    [
                        (a + 1.0) + (a - 1.0) * cw + r,
                        -2.0 * ((a - 1.0) + (a + 1.0) * cw),
                        (a + 1.0) + (a - 1.0) * cw - r,
                    ],
                )
            }
            FilterKind::HighShelf => {
                let r = 2.0 * a.sqrt() * alpha;
                (
                    [
                        a * ((a + 1.0) + (a - 1.0) * cw + r),
                        -2.0 * a * ((a - 1.0) + (a + 1.0) * cw),
                        a * ((a + 1.0) + (a - 1.0) * cw - r),
                    ],
                    [
                        (a + 1.0) - (a - 1.0) * cw + r,
                        2.0 * ((a - 1.0) - (a + 1.0) * cw),
                        (a + 1.0) - (a - 1.0) * cw - r,
                    ],
                )
            }
        };
        let a0 = den[0];
        [b[0] / a0, b[1] / a0, b[2] / a0, den[1] / a0, den[2] / a0]
    }

    pub fn apply(&self, x: &mut [f64], sr: f64) {
        let [b0, b1, b2, a1, a2] = self.coefficients(sr);
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for v in x.iter_mut() {
            let y = b0 * *v + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = *v;
            y2 = y1;
            y1 = y;
            *v = y;
        }
    }

    pub(crate) fn validate(&self, sr: f64) -> Result<()> {
        if !(self.freq > 0.0 && self.freq < sr / 2.0 && self.q > 0.0) {
            return Err(Error::Parameter(format!(
                "biquad needs 0 < freq < sr/2 and q > 0 (freq {}, q {})",
                self.freq, self.q
            )));
        }
        Ok(())
    }
}
