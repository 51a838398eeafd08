use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of denoising steps per frame.
pub const DEFAULT_SPREAD_LEN: usize = 30;

/// Named spreads for a 1000-step schedule.
pub const NAMED_SPREADS: &[(&str, &[usize])] = &[
    ("10A", &[9, 8, 7, 6, 5, 4, 3, 2, 1, 0]),
    ("10B", &[18, 16, 14, 12, 10, 8, 6, 4, 2, 0]),
    ("10C", &[100, 56, 32, 18, 10, 6, 3, 2, 1, 0]),
    ("10D", &[1000, 850, 700, 550, 400, 250, 100, 10, 2, 0]),
];

/// Strictly decreasing denoising step indices ending at 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct StepSpread(Vec<usize>);

impl StepSpread {
    pub fn new(steps: Vec<usize>) -> Result<Self> {
        if steps.last() != Some(&0) {
            return Err(Error::contract(format!("spread {steps:?} must end at 0")));
        }
        if steps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::contract(format!("spread {steps:?} is not strictly decreasing")));
        }
        Ok(Self(steps))
    }

    /// Checks the spread against a schedule length.
    pub fn check(&self, t_max: usize) -> Result<()> {
        if self.0[0] > t_max {
            return Err(Error::contract(format!("spread starts at {} beyond T = {t_max}", self.0[0])));
        }
        Ok(())
    }

    /// `n` steps shaped like 10D: a linear ramp from T down to T/10, then the
    /// anchors T/100, T/500 and 0. Falls back to even spacing when the
    /// anchors collide (small T).
    pub fn with_count(n: usize, t_max: usize) -> Result<Self> {
        if n == 0 || n > t_max + 1 {
            return Err(Error::contract(format!("cannot pick {n} distinct steps from 0..={t_max}")));
        }
        let scaled = |k: f64| (t_max as f64 * k).round() as usize;
        let candidate: Vec<usize> = match n {
            1 => vec![0],
            2 => vec![t_max, 0],
            3 => vec![t_max, scaled(0.01), 0],
            _ => {
                let lo = scaled(0.1);
                let ramp = n - 3;
                let mut v: Vec<usize> = (0..ramp)
                    .map(|i| {
                        if ramp == 1 {
                            t_max
                        } else {
                            (t_max as f64 - i as f64 * (t_max - lo) as f64 / (ramp - 1) as f64).round() as usize
                        }
                    })
                    .collect();
                v.extend([scaled(0.01), scaled(0.002), 0]);
                v
            }
        };
        Self::new(candidate).or_else(|_| {
            let even = (0..n)
                .map(|i| if n == 1 { 0 } else { ((n - 1 - i) as f64 * t_max as f64 / (n - 1) as f64).round() as usize })
                .collect();
            Self::new(even)
        })
    }

    /// A named spread (`10A`..`10D`), a count (`30`) or an explicit list
    /// (`1000/850/…/0` or comma separated). Named spreads are defined for
    /// T = 1000 and rescaled otherwise.
    pub fn parse(text: &str, t_max: usize) -> Result<Self> {
        let text = text.trim();
        if let Some((_, steps)) = NAMED_SPREADS.iter().find(|(n, _)| n.eq_ignore_ascii_case(text)) {
            let v: Vec<usize> = if t_max == 1000 {
                steps.to_vec()
            } else {
                let mut v: Vec<usize> =
                    steps.iter().map(|&s| (s as f64 * t_max as f64 / 1000.0).round() as usize).collect();
                v.dedup();
                v
            };
            let s = Self::new(v)?;
            s.check(t_max)?;
            return Ok(s);
        }
        if text.contains(['/', ',']) {
            let v = text
                .split(['/', ','])
                .map(|p| p.trim().parse::<usize>().map_err(|_| Error::contract(format!("bad step {p:?} in spread"))))
                .collect::<Result<Vec<_>>>()?;
            let s = Self::new(v)?;
            s.check(t_max)?;
            return Ok(s);
        }
        let n: usize = text.parse().map_err(|_| Error::contract(format!("unknown spread {text:?}")))?;
        Self::with_count(n, t_max)
    }

    pub fn steps(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<usize>> for StepSpread {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StepSpread> for Vec<usize> {
    fn from(s: StepSpread) -> Self {
        s.0
    }
}

impl fmt::Display for StepSpread {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("/"))
    }
}
