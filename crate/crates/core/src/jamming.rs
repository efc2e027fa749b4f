//! Whether an attempted jam actually destroys the targeted transmission.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::adversary::{Direction, SuccessProfile};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Small-scale fading on a link's power gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fading {
    /// Exponential power gain with unit mean (Rayleigh amplitude).
    Rayleigh,
    /// Gain fixed at its mean.
    Constant,
}

impl Fading {
    fn draw(self, rng: &mut SimRng) -> f64 {
        match self {
            Fading::Rayleigh => Exp1.sample(rng),
            Fading::Constant => 1.0,
        }
    }
}

/// Mean link budgets of one client, linear scale relative to unit noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinrLink {
    /// Mean received signal-to-noise ratio of the legitimate transmission.
    pub snr: f64,
    /// Mean power gain from the jammer to the receiver of this link.
    pub jammer_gain: f64,
}

/// `SINR = snr h_s / (1 + P_j g h_j)`; a jam succeeds when `SINR < threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrModel {
    pub jammer_power: f64,
    pub threshold: f64,
    pub fading: Fading,
    pub uplink: Vec<SinrLink>,
    pub downlink: Vec<SinrLink>,
}

impl SinrModel {
    fn link(&self, target: usize, direction: Direction) -> Result<&SinrLink> {
        let links = match direction {
            Direction::Uplink => &self.uplink,
            Direction::Downlink => &self.downlink,
        };
        target
            .checked_sub(1)
            .and_then(|i| links.get(i))
            .ok_or_else(|| Error::config("sinr_links", format!("no {direction} link for client {target}")))
    }

    fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold.is_finite()) {
            return Err(Error::invalid("SINR threshold must be > 0"));
        }
        if !(self.jammer_power >= 0.0 && self.jammer_power.is_finite()) {
            return Err(Error::invalid("jammer power must be >= 0"));
        }
        Ok(())
    }

    /// Monte Carlo success probability for every client and direction.
    /// Estimates are floored at `1 / n_mc` so the profile stays in (0, 1].
    pub fn profile(&self, n_mc: usize, rng: &mut SimRng) -> Result<SuccessProfile> {
        self.validate()?;
        let floor = 1.0 / n_mc.max(1) as f64;
        let mut estimate = |links: &[SinrLink]| -> Result<Vec<f64>> {
            links
                .iter()
                .map(|l| sinr_success_probability(l, self.jammer_power, self.threshold, self.fading, n_mc, rng).map(|p| p.max(floor)))
                .collect()
        };
        let up = estimate(&self.uplink)?;
        let down = estimate(&self.downlink)?;
        SuccessProfile::new(up, down)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SuccessModel {
    /// Every jam succeeds.
    Deterministic,
    /// Jam on client `i` succeeds with the listed probability.
    Table(SuccessProfile),
    /// Jam succeeds when a freshly faded SINR falls below the threshold.
    Sinr(SinrModel),
}

/// Resolves one attempted jam on `target` (1-based).
pub fn resolve_attack(target: usize, direction: Direction, model: &SuccessModel, rng: &mut SimRng) -> Result<bool> {
    match model {
        SuccessModel::Deterministic => Ok(true),
        SuccessModel::Table(profile) => {
            let p = target
                .checked_sub(1)
                .and_then(|i| profile.get(direction).get(i))
                .ok_or_else(|| Error::config("success_profile", format!("no {direction} probability for client {target}")))?;
            Ok(rng.random::<f64>() < *p)
        }
        SuccessModel::Sinr(sinr) => {
            sinr.validate()?;
            let link = sinr.link(target, direction)?;
            Ok(sample_sinr(link, sinr.jammer_power, sinr.fading, rng) < sinr.threshold)
        }
    }
}

fn sample_sinr(link: &SinrLink, jammer_power: f64, fading: Fading, rng: &mut SimRng) -> f64 {
    let hs = fading.draw(rng);
    let hj = fading.draw(rng);
    link.snr * hs / (1.0 + jammer_power * link.jammer_gain * hj)
}

/// Monte Carlo estimate of `P[SINR < threshold]` from `n_mc` draws.
pub fn sinr_success_probability(
    link: &SinrLink,
    jammer_power: f64,
    threshold: f64,
    fading: Fading,
    n_mc: usize,
    rng: &mut SimRng,
) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::invalid("SINR threshold must be > 0"));
    }
    if n_mc == 0 {
        return Err(Error::invalid("n_mc must be >= 1"));
    }
    if !(jammer_power >= 0.0) || !(link.snr >= 0.0) || !(link.jammer_gain >= 0.0) {
        return Err(Error::invalid("powers and gains must be >= 0"));
    }
    let hits = (0..n_mc)
        .filter(|_| sample_sinr(link, jammer_power, fading, rng) < threshold)
        .count();
    Ok(hits as f64 / n_mc as f64)
}

/// Reads `client_id, p_uplink, p_downlink` rows; `#` lines and blanks are
/// skipped.
pub fn parse_profile(text: &str) -> Result<SuccessProfile> {
    let (mut up, mut down) = (Vec::new(), Vec::new());
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::invalid(format!("profile line {}: expected `client_id, p_uplink, p_downlink`", lineno + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 3 {
            return Err(bad());
        }
        let id: usize = cols[0].parse().map_err(|_| bad())?;
        if id != up.len() + 1 {
            return Err(Error::invalid(format!("profile rows must list client ids 1..N in order; found {id}")));
        }
        up.push(cols[1].parse::<f64>().map_err(|_| bad())?);
        down.push(cols[2].parse::<f64>().map_err(|_| bad())?);
    }
    SuccessProfile::new(up, down)
}

pub fn load_profile(path: &Path) -> Result<SuccessProfile> {
    parse_profile(&std::fs::read_to_string(path)?)
}

pub fn format_profile(profile: &SuccessProfile) -> String {
    let mut out = String::from("# client_id, p_uplink, p_downlink\n");
    for (i, (u, d)) in profile.p_uplink.iter().zip(&profile.p_downlink).enumerate() {
        out.push_str(&format!("{}, {u}, {d}\n", i + 1));
    }
    out
}
