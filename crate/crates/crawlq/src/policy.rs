//! Threshold policies: monotone maps from queue length to the active mode.
//!
//! A policy is an ordered subset of modes `m_1 > m_2 > … > m_s` (most robots
//! at the emptiest states) and cut points `t_1 < … < t_{s-1}`; mode `m_r`
//! serves queue lengths in `[t_{r-1}+1, t_r]` with `t_0 = -1`, `t_s = K`.
//! Coincident cut points squeeze a mode's range empty; construction
//! normalizes such modes away so policy identity is canonical.

use crate::error::{Error, Result};
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ThresholdPolicy {
    capacity: usize,
    modes: Vec<usize>,
    thresholds: Vec<usize>,
}

impl ThresholdPolicy {
    /// Build a policy over total capacity `K`.
    ///
    /// `modes` must be strictly decreasing positive mode indices; `thresholds`
    /// must be non-decreasing values in `0..K` with length `modes.len() - 1`.
    /// Coincident thresholds are normalized away.
    pub fn new(modes: &[usize], thresholds: &[usize], capacity: usize) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::InvalidPolicy("at least one mode is required".into()));
        }
        if modes.contains(&0) {
            return Err(Error::InvalidPolicy("mode indices are 1-based".into()));
        }
        for pair in modes.windows(2) {
            if pair[1] >= pair[0] {
                return Err(Error::InvalidPolicy(format!(
                    "modes must be strictly decreasing, got {modes:?}"
                )));
            }
        }
        if thresholds.len() + 1 != modes.len() {
            return Err(Error::InvalidPolicy(format!(
                "{} modes need {} thresholds, got {}",
                modes.len(),
                modes.len() - 1,
                thresholds.len()
            )));
        }
        for pair in thresholds.windows(2) {
            if pair[1] < pair[0] {
                return Err(Error::InvalidPolicy(format!(
                    "thresholds must be non-decreasing, got {thresholds:?}"
                )));
            }
        }
        if thresholds.iter().any(|&t| t >= capacity) {
            return Err(Error::InvalidPolicy(format!(
                "thresholds must lie in 0..{capacity}, got {thresholds:?}"
            )));
        }
        // drop modes whose occupancy range [t_{r-1}+1, t_r] is empty
        let mut kept_modes = Vec::with_capacity(modes.len());
        let mut kept_thresholds = Vec::new();
        let mut lower: i64 = -1;
        for (r, &m) in modes.iter().enumerate() {
            let upper = if r + 1 == modes.len() {
                capacity as i64
            } else {
                thresholds[r] as i64
            };
            if lower < upper {
                kept_modes.push(m);
                kept_thresholds.push(upper);
                lower = upper;
            }
        }
        kept_thresholds.pop();
        Ok(ThresholdPolicy {
            capacity,
            modes: kept_modes,
            thresholds: kept_thresholds.into_iter().map(|t| t as usize).collect(),
        })
    }

    pub fn single(mode: usize, capacity: usize) -> Self {
        ThresholdPolicy {
            capacity,
            modes: vec![mode],
            thresholds: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn thresholds(&self) -> &[usize] {
        &self.thresholds
    }

    /// Highest mode index referenced.
    pub fn max_mode(&self) -> usize {
        self.modes[0]
    }

    /// Mode active when `i` pages are in the system.
    pub fn active_mode(&self, i: usize) -> usize {
        assert!(i <= self.capacity, "queue length {i} out of 0..={}", self.capacity);
        for (r, &m) in self.modes.iter().enumerate() {
            let upper = if r + 1 == self.modes.len() {
                self.capacity
            } else {
                self.thresholds[r]
            };
            if i <= upper {
                return m;
            }
        }
        unreachable!("threshold ranges cover 0..=K");
    }

    /// Canonical ordering: fewer modes first, then lexicographic on
    /// (modes, thresholds). Used for deterministic tie-breaking.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.modes
            .len()
            .cmp(&other.modes.len())
            .then_with(|| self.modes.cmp(&other.modes))
            .then_with(|| self.thresholds.cmp(&other.thresholds))
    }
}

impl fmt::Display for ThresholdPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "modes={}",
            self.modes.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
        )?;
        if !self.thresholds.is_empty() {
            write!(
                f,
                ";thresholds={}",
                self.thresholds.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
            )?;
        }
        Ok(())
    }
}

/// Policy spec in CLI syntax, e.g. `modes=4,1;thresholds=2`. The capacity is
/// supplied separately at parse time via [`parse_policy`].
pub fn parse_policy(spec: &str, capacity: usize) -> Result<ThresholdPolicy> {
    let mut modes: Option<Vec<usize>> = None;
    let mut thresholds: Vec<usize> = Vec::new();
    for part in spec.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidPolicy(format!("expected key=value, got '{part}'")))?;
        let nums: Result<Vec<usize>> = value
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidPolicy(format!("bad number '{s}' in '{spec}'")))
            })
            .collect();
        match key.trim() {
            "modes" => modes = Some(nums?),
            "thresholds" => thresholds = nums?,
            other => {
                return Err(Error::InvalidPolicy(format!("unknown key '{other}' in policy spec")))
            }
        }
    }
    let modes = modes.ok_or_else(|| Error::InvalidPolicy("policy spec needs modes=".into()))?;
    ThresholdPolicy::new(&modes, &thresholds, capacity)
}

impl FromStr for ThresholdPolicy {
    type Err = Error;

    /// Parse `K=5;modes=4,1;thresholds=2` (capacity embedded).
    fn from_str(s: &str) -> Result<Self> {
        let mut capacity = None;
        let mut rest = Vec::new();
        for part in s.split(';') {
            if let Some(v) = part.trim().strip_prefix("K=") {
                capacity = Some(v.parse::<usize>().map_err(|_| {
                    Error::InvalidPolicy(format!("bad capacity in '{s}'"))
                })?);
            } else {
                rest.push(part);
            }
        }
        let capacity =
            capacity.ok_or_else(|| Error::InvalidPolicy("policy string needs K=".into()))?;
        parse_policy(&rest.join(";"), capacity)
    }
}

/// All policies over the given mode subset with strictly increasing threshold
/// tuples from `{0..K-1}`; the count is `C(K, s-1)`.
pub fn enumerate_policies(mode_subset: &[usize], capacity: usize) -> Vec<ThresholdPolicy> {
    let mut modes: Vec<usize> = mode_subset.to_vec();
    modes.sort_unstable_by(|a, b| b.cmp(a));
    modes.dedup();
    let s = modes.len();
    if s == 0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut tuple = vec![0usize; s - 1];
    fn rec(
        modes: &[usize],
        capacity: usize,
        tuple: &mut Vec<usize>,
        pos: usize,
        start: usize,
        out: &mut Vec<ThresholdPolicy>,
    ) {
        if pos == tuple.len() {
            if let Ok(p) = ThresholdPolicy::new(modes, tuple, capacity) {
                out.push(p);
            }
            return;
        }
        for t in start..capacity {
            tuple[pos] = t;
            rec(modes, capacity, tuple, pos + 1, t + 1, out);
        }
    }
    rec(&modes, capacity, &mut tuple, 0, 0, &mut out);
    out
}
