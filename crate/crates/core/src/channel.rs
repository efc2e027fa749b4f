//! Sensing-link synthesis: BPSK/QPSK background symbols seen by each
//! spectrum sensor through a constant-gain, phase-rotating, noisy channel,
//! reduced to 16 phases + 16 powers per sample.

use std::f64::consts::{FRAC_1_SQRT_2, TAU};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Symbols per feature sample.
pub const SYMBOLS_PER_SAMPLE: usize = 16;
/// Feature vector length: one phase and one power per symbol.
pub const FEATURE_LEN: usize = 2 * SYMBOLS_PER_SAMPLE;

/// Received SNR and phase shift of the per-client sensing links, one row per
/// client, used when the geometry is not drawn at random.
pub const DEFAULT_GEOMETRY: [(f64, f64); 10] = [
    (9.34, 1.28),
    (15.75, 0.43),
    (13.04, 5.18),
    (13.87, 1.93),
    (10.27, 4.37),
    (10.40, 3.09),
    (13.22, 5.42),
    (9.59, 0.77),
    (12.32, 2.44),
    (8.70, 9.40),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WaveformLabel {
    Bpsk = 0,
    Qpsk = 1,
}

impl WaveformLabel {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(WaveformLabel::Bpsk),
            1 => Ok(WaveformLabel::Qpsk),
            _ => Err(Error::invalid(format!("no waveform label {i}"))),
        }
    }
}

impl fmt::Display for WaveformLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveformLabel::Bpsk => f.write_str("BPSK"),
            WaveformLabel::Qpsk => f.write_str("QPSK"),
        }
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Channel parameters of one sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientGeometry {
    /// 1-based client id.
    pub client_id: usize,
    pub snr_db: f64,
    /// Always normalized into `[0, 2π)`.
    pub phase_shift: f64,
    pub distance: Option<f64>,
}

impl ClientGeometry {
    pub fn new(client_id: usize, snr_db: f64, phase_shift: f64) -> Result<Self> {
        if !snr_db.is_finite() {
            return Err(Error::invalid(format!(
                "client {client_id}: snr_db must be finite, got {snr_db}"
            )));
        }
        if !phase_shift.is_finite() {
            return Err(Error::invalid(format!(
                "client {client_id}: phase shift must be finite"
            )));
        }
        Ok(ClientGeometry {
            client_id,
            snr_db,
            phase_shift: wrap_phase(phase_shift),
            distance: None,
        })
    }

    pub fn impairment(&self) -> LinkImpairment {
        LinkImpairment::from_snr_db(self.snr_db, self.phase_shift)
    }
}

/// The default per-client table for `n` clients (rows reused cyclically when
/// `n` exceeds the table).
pub fn table_geometry(n: usize) -> Vec<ClientGeometry> {
    (0..n)
        .map(|i| {
            let (snr, phase) = DEFAULT_GEOMETRY[i % DEFAULT_GEOMETRY.len()];
            ClientGeometry::new(i + 1, snr, phase).expect("table rows are finite")
        })
        .collect()
}

/// Parameters of the random-placement geometry mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacementConfig {
    /// SNR observed at the reference distance.
    pub reference_snr_db: f64,
    pub reference_distance: f64,
    /// Sensors are placed uniformly over an annulus around the transmitter.
    pub min_distance: f64,
    pub max_distance: f64,
    pub path_loss_exponent: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            reference_snr_db: 16.0,
            reference_distance: 1.0,
            min_distance: 1.0,
            max_distance: 2.5,
            path_loss_exponent: 2.0,
        }
    }
}

/// Random sensor placement: uniform over the annulus area, log-distance path
/// loss, phase uniform in `[0, 2π)`.
pub fn random_geometry(n: usize, cfg: &PlacementConfig, rng: &mut SimRng) -> Result<Vec<ClientGeometry>> {
    if !(cfg.min_distance > 0.0 && cfg.max_distance >= cfg.min_distance) {
        return Err(Error::invalid("placement needs 0 < min_distance <= max_distance"));
    }
    let (r0, r1) = (cfg.min_distance, cfg.max_distance);
    (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let d = (r0 * r0 + u * (r1 * r1 - r0 * r0)).sqrt();
            let snr = cfg.reference_snr_db
                - 10.0 * cfg.path_loss_exponent * (d / cfg.reference_distance).log10();
            let phase = rng.random::<f64>() * TAU;
            let mut g = ClientGeometry::new(i + 1, snr, phase)?;
            g.distance = Some(d);
            Ok(g)
        })
        .collect()
}

/// Reads a `client_id, snr_db, phase_shift` table. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse_geometry_table(text: &str) -> Result<Vec<ClientGeometry>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::invalid(format!("geometry line {}: expected `client_id, snr_db, phase_shift`", lineno + 1));
        if cols.len() != 3 {
            return Err(bad());
        }
        let id: usize = cols[0].parse().map_err(|_| bad())?;
        let snr: f64 = cols[1].parse().map_err(|_| bad())?;
        let phase: f64 = cols[2].parse().map_err(|_| bad())?;
        rows.push(ClientGeometry::new(id, snr, phase)?);
    }
    for (i, g) in rows.iter().enumerate() {
        if g.client_id != i + 1 {
            return Err(Error::invalid(format!(
                "geometry rows must list client ids 1..N in order; row {} has id {}",
                i + 1,
                g.client_id
            )));
        }
    }
    Ok(rows)
}

pub fn load_geometry_table(path: &Path) -> Result<Vec<ClientGeometry>> {
    parse_geometry_table(&std::fs::read_to_string(path)?)
}

pub fn format_geometry_table(rows: &[ClientGeometry]) -> String {
    let mut out = String::from("# client_id, snr_db, phase_shift\n");
    for g in rows {
        out.push_str(&format!("{}, {}, {}\n", g.client_id, g.snr_db, g.phase_shift));
    }
    out
}

/// `r = gain * e^{j phase} * s + n`, `n ~ CN(0, noise_power)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkImpairment {
    pub gain: f64,
    pub phase: f64,
    pub noise_power: f64,
}

impl LinkImpairment {
    /// Unit noise power with the amplitude gain implied by `snr_db`.
    /// `+inf` disables noise and uses unit gain; `-inf` leaves pure noise.
    pub fn from_snr_db(snr_db: f64, phase: f64) -> Self {
        if snr_db == f64::INFINITY {
            return LinkImpairment {
                gain: 1.0,
                phase,
                noise_power: 0.0,
            };
        }
        LinkImpairment {
            gain: 10f64.powf(snr_db / 20.0),
            phase,
            noise_power: 1.0,
        }
    }

    pub fn apply(&self, symbols: &[Complex64], rng: &mut SimRng) -> Result<Vec<Complex64>> {
        if symbols.is_empty() {
            return Err(Error::invalid("apply_channel needs at least one symbol"));
        }
        if !(self.gain >= 0.0 && self.noise_power >= 0.0) {
            return Err(Error::invalid("gain and noise power must be nonnegative"));
        }
        let rot = Complex64::from_polar(self.gain, self.phase);
        let sigma = (self.noise_power / 2.0).sqrt();
        Ok(symbols
            .iter()
            .map(|&s| {
                let mut r = rot * s;
                if self.noise_power > 0.0 {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    r += Complex64::new(sigma * re, sigma * im);
                }
                r
            })
            .collect())
    }
}

/// Draws `n_symbols` unit-power constellation points.
pub fn synthesize_symbols(label: WaveformLabel, n_symbols: usize, rng: &mut SimRng) -> Result<Vec<Complex64>> {
    if n_symbols == 0 {
        return Err(Error::invalid("n_symbols must be at least 1"));
    }
    Ok((0..n_symbols)
        .map(|_| match label {
            WaveformLabel::Bpsk => {
                if rng.random::<bool>() {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(-1.0, 0.0)
                }
            }
            WaveformLabel::Qpsk => {
                let re = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                let im = if rng.random::<bool>() { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
                Complex64::new(re, im)
            }
        })
        .collect())
}

/// Passes `symbols` through the channel described by `snr_db` (unit noise
/// power) and `phase_shift`.
pub fn apply_channel(
    symbols: &[Complex64],
    snr_db: f64,
    phase_shift: f64,
    rng: &mut SimRng,
) -> Result<Vec<Complex64>> {
    LinkImpairment::from_snr_db(snr_db, phase_shift).apply(symbols, rng)
}

/// Phase in `[0, 2π)` of a received sample, with `arg(0) = 0`.
fn phase_of(r: Complex64) -> f64 {
    if r.re == 0.0 && r.im == 0.0 {
        0.0
    } else {
        wrap_phase(r.arg())
    }
}

pub fn extract_features(received: &[Complex64]) -> Result<[f64; FEATURE_LEN]> {
    if received.len() != SYMBOLS_PER_SAMPLE {
        return Err(Error::invalid(format!(
            "expected {SYMBOLS_PER_SAMPLE} received samples, got {}",
            received.len()
        )));
    }
    let mut out = [0.0; FEATURE_LEN];
    for (k, &r) in received.iter().enumerate() {
        out[k] = phase_of(r);
        out[SYMBOLS_PER_SAMPLE + k] = r.norm_sqr();
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSample {
    pub features: [f64; FEATURE_LEN],
    pub label: WaveformLabel,
}

impl FeatureSample {
    pub fn phases(&self) -> &[f64] {
        &self.features[..SYMBOLS_PER_SAMPLE]
    }

    pub fn powers(&self) -> &[f64] {
        &self.features[SYMBOLS_PER_SAMPLE..]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub samples: Vec<FeatureSample>,
    /// `None` for pooled sets drawn from several sensors.
    pub geometry: Option<ClientGeometry>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for s in &self.samples {
            c[s.label.index()] += 1;
        }
        c
    }
}

fn draw_sample(label: WaveformLabel, link: &LinkImpairment, rng: &mut SimRng) -> FeatureSample {
    let symbols = synthesize_symbols(label, SYMBOLS_PER_SAMPLE, rng).expect("nonzero symbol count");
    let received = link.apply(&symbols, rng).expect("nonempty symbols");
    FeatureSample {
        features: extract_features(&received).expect("fixed sample length"),
        label,
    }
}

/// `n_samples` fresh samples for one sensor: half BPSK, half QPSK (the extra
/// sample of an odd count is BPSK), in shuffled order.
pub fn build_client_dataset(geometry: &ClientGeometry, n_samples: usize, rng: &mut SimRng) -> Result<ClientDataset> {
    if n_samples < 2 {
        return Err(Error::invalid("a client dataset needs at least 2 samples"));
    }
    let link = geometry.impairment();
    let n_bpsk = n_samples - n_samples / 2;
    let mut labels: Vec<WaveformLabel> = (0..n_samples)
        .map(|i| if i < n_bpsk { WaveformLabel::Bpsk } else { WaveformLabel::Qpsk })
        .collect();
    labels.shuffle(rng);
    let samples = labels.into_iter().map(|l| draw_sample(l, &link, rng)).collect();
    Ok(ClientDataset {
        samples,
        geometry: Some(*geometry),
    })
}

/// Pooled evaluation set: sample `j` comes from sensor `j mod N`, and labels
/// alternate per sensor so both the whole set and each sensor's share stay
/// balanced.
pub fn build_test_dataset(geometries: &[ClientGeometry], n_samples: usize, rng: &mut SimRng) -> Result<ClientDataset> {
    if geometries.is_empty() {
        return Err(Error::invalid("test dataset needs at least one geometry"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("test dataset needs at least one sample"));
    }
    let n = geometries.len();
    let links: Vec<LinkImpairment> = geometries.iter().map(ClientGeometry::impairment).collect();
    let samples = (0..n_samples)
        .map(|j| {
            let (block, g) = (j / n, j % n);
            let label = if (block + g) % 2 == 0 { WaveformLabel::Bpsk } else { WaveformLabel::Qpsk };
            draw_sample(label, &links[g], rng)
        })
        .collect();
    Ok(ClientDataset {
        samples,
        geometry: if n == 1 { Some(geometries[0]) } else { None },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn bpsk_symbols_are_antipodal() {
        let s = synthesize_symbols(WaveformLabel::Bpsk, 4, &mut seeded(1)).unwrap();
        assert_eq!(s.len(), 4);
        for x in s {
            assert!(x == c(1.0, 0.0) || x == c(-1.0, 0.0));
        }
    }

    #[test]
    fn qpsk_symbols_have_unit_power() {
        let s = synthesize_symbols(WaveformLabel::Qpsk, 4, &mut seeded(2)).unwrap();
        for x in s {
            assert!((x.norm_sqr() - 1.0).abs() < 1e-12);
            assert!((x.re.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_symbols_rejected() {
        assert!(synthesize_symbols(WaveformLabel::Bpsk, 0, &mut seeded(0)).is_err());
    }

    #[test]
    fn bpsk_mean_is_near_zero() {
        let s = synthesize_symbols(WaveformLabel::Bpsk, 100_000, &mut seeded(3)).unwrap();
        let mean: f64 = s.iter().map(|x| x.re).sum::<f64>() / s.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn noiseless_channel_rotates() {
        let out = apply_channel(&[c(1.0, 0.0)], f64::INFINITY, FRAC_PI_2, &mut seeded(0)).unwrap();
        assert!((out[0] - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn identity_channel() {
        let s = synthesize_symbols(WaveformLabel::Qpsk, 8, &mut seeded(4)).unwrap();
        let out = apply_channel(&s, f64::INFINITY, 0.0, &mut seeded(0)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn zero_gain_leaves_unit_noise() {
        let s = vec![c(1.0, 0.0); 100_000];
        let out = apply_channel(&s, f64::NEG_INFINITY, 0.3, &mut seeded(5)).unwrap();
        let var: f64 = out.iter().map(|r| r.norm_sqr()).sum::<f64>() / out.len() as f64;
        assert!((var - 1.0).abs() < 0.02, "noise power {var}");
    }

    #[test]
    fn received_energy_matches_gain_plus_noise() {
        let snr_db = 6.0;
        let s = synthesize_symbols(WaveformLabel::Qpsk, 100_000, &mut seeded(6)).unwrap();
        let out = apply_channel(&s, snr_db, 1.0, &mut seeded(7)).unwrap();
        let p: f64 = out.iter().map(|r| r.norm_sqr()).sum::<f64>() / out.len() as f64;
        let expect = 10f64.powf(snr_db / 10.0) + 1.0;
        assert!((p / expect - 1.0).abs() < 0.02, "{p} vs {expect}");
    }

    #[test]
    fn empty_symbols_rejected() {
        assert!(apply_channel(&[], 10.0, 0.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn feature_extraction_on_axes() {
        let mut r = vec![c(1.0, 0.0); 16];
        r[1] = c(0.0, 1.0);
        r[2] = c(2.0 * FRAC_1_SQRT_2, 2.0 * FRAC_1_SQRT_2);
        r[3] = c(0.0, 0.0);
        r[4] = c(0.0, -1.0);
        let f = extract_features(&r).unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[16], 1.0);
        assert!((f[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((f[17] - 1.0).abs() < 1e-15);
        assert!((f[2] - PI / 4.0).abs() < 1e-15);
        assert!((f[18] - 4.0).abs() < 1e-12);
        assert_eq!(f[3], 0.0);
        assert_eq!(f[19], 0.0);
        assert!((f[4] - 3.0 * FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn feature_extraction_rejects_wrong_length() {
        assert!(extract_features(&[c(1.0, 0.0); 15]).is_err());
    }

    #[test]
    fn bpsk_phases_concentrate_on_two_modes() {
        let theta = 5.18;
        let g = ClientGeometry::new(1, 40.0, theta).unwrap();
        let mut rng = seeded(8);
        let link = g.impairment();
        let modes = [wrap_phase(theta), wrap_phase(theta + PI)];
        for _ in 0..200 {
            let s = draw_sample(WaveformLabel::Bpsk, &link, &mut rng);
            for &ph in s.phases() {
                let near = modes.iter().any(|&m| {
                    let d = (ph - m).abs();
                    d.min(TAU - d) < 0.05
                });
                assert!(near, "phase {ph} off both modes");
            }
        }
    }

    #[test]
    fn client_dataset_is_balanced_and_reproducible() {
        let g = table_geometry(10)[2];
        let a = build_client_dataset(&g, 1000, &mut seeded(9)).unwrap();
        let b = build_client_dataset(&g, 1000, &mut seeded(9)).unwrap();
        assert_eq!(a.label_counts(), [500, 500]);
        assert_eq!(a, b);
        assert!(build_client_dataset(&g, 1, &mut seeded(9)).is_err());
    }

    #[test]
    fn test_dataset_round_robin() {
        let geo = table_geometry(10);
        let t = build_test_dataset(&geo, 1000, &mut seeded(10)).unwrap();
        assert_eq!(t.len(), 1000);
        assert_eq!(t.label_counts(), [500, 500]);
        assert!(build_test_dataset(&[], 10, &mut seeded(0)).is_err());
    }

    #[test]
    fn table_phase_is_normalized() {
        let g = table_geometry(10);
        assert!((g[9].phase_shift - (9.40 - TAU)).abs() < 1e-12);
        assert!(g.iter().all(|g| (0.0..TAU).contains(&g.phase_shift)));
    }

    #[test]
    fn geometry_table_roundtrip() {
        let g = table_geometry(4);
        let parsed = parse_geometry_table(&format_geometry_table(&g)).unwrap();
        assert_eq!(parsed, g);
        assert!(parse_geometry_table("1, 2.0\n").is_err());
        assert!(parse_geometry_table("2, 2.0, 0.1\n").is_err());
    }

    #[test]
    fn random_geometry_respects_path_loss() {
        let cfg = PlacementConfig::default();
        let g = random_geometry(50, &cfg, &mut seeded(11)).unwrap();
        for x in &g {
            let d = x.distance.unwrap();
            assert!((cfg.min_distance..=cfg.max_distance).contains(&d));
            assert!((x.snr_db - (16.0 - 20.0 * d.log10())).abs() < 1e-9);
        }
    }
}
