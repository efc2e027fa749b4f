//! Scenario configuration: flat `key = value` text, `#` comments, lists
//! separated by commas. Unknown keys and malformed values are reported with
//! the offending key.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversary::Benchmark;
use crate::channel::PlacementConfig;
use crate::error::{Error, Result};
use crate::federation::AggregationMode;
use crate::jamming::Fading;
use crate::model::{InputMap, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryMode {
    Table,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackType {
    None,
    Uplink,
    Downlink,
    Both,
}

impl AttackType {
    pub fn has_uplink(self) -> bool {
        matches!(self, AttackType::Uplink | AttackType::Both)
    }

    pub fn has_downlink(self) -> bool {
        matches!(self, AttackType::Downlink | AttackType::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Selection from true local accuracies of a no-attack reference run.
    Ideal,
    /// Overhear at round `S`, rank by divergence, attack a fixed set.
    Practical,
    /// Up to `K` per round, `M` on average, among the top `K`.
    Dynamic,
    SpeedAware,
    ProbAware,
    Benchmark(Benchmark),
    /// A fixed random set of `floor(M)` clients per direction.
    Random,
    /// The clients listed in `targets`, from round 1.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Overheard model weights.
    Models,
    /// Spectrum-access decisions on probe events.
    Actions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuccessKind {
    Deterministic,
    Table,
    Sinr,
}

macro_rules! keyword_enum {
    ($t:ty, $what:literal, { $($name:literal => $val:expr),+ $(,)? }) => {
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> std::result::Result<Self, String> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok($val),)+
                    _ => Err(format!(concat!("unknown ", $what, " `{}`; expected one of: {}"), s, [$($name),+].join(", "))),
                }
            }
        }
    };
}

keyword_enum!(GeometryMode, "geometry mode", { "table" => GeometryMode::Table, "random" => GeometryMode::Random });
keyword_enum!(AttackType, "attack type", {
    "none" => AttackType::None,
    "uplink" => AttackType::Uplink,
    "downlink" => AttackType::Downlink,
    "both" => AttackType::Both,
});
keyword_enum!(Observation, "observation", { "models" => Observation::Models, "actions" => Observation::Actions });
keyword_enum!(SuccessKind, "success model", {
    "deterministic" => SuccessKind::Deterministic,
    "table" => SuccessKind::Table,
    "sinr" => SuccessKind::Sinr,
});
keyword_enum!(Fading, "fading", { "rayleigh" => Fading::Rayleigh, "constant" => Fading::Constant });

impl FromStr for Scheme {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "ideal" => Scheme::Ideal,
            "practical" => Scheme::Practical,
            "dynamic" => Scheme::Dynamic,
            "speed_aware" => Scheme::SpeedAware,
            "prob_aware" => Scheme::ProbAware,
            "random" => Scheme::Random,
            "fixed" => Scheme::Fixed,
            other => Benchmark::parse(other).map(Scheme::Benchmark).ok_or_else(|| {
                format!("unknown scheme `{s}`; expected one of: ideal, practical, dynamic, speed_aware, prob_aware, random, fixed, A1..A7")
            })?,
        })
    }
}

fn aggregation_from_str(s: &str) -> std::result::Result<AggregationMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "per_round" => Ok(AggregationMode::PerRound),
        "cached" => Ok(AggregationMode::Cached),
        _ => Err(format!("unknown aggregation `{s}`; expected one of: per_round, cached")),
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackType::None => "none",
            AttackType::Uplink => "uplink",
            AttackType::Downlink => "downlink",
            AttackType::Both => "both",
        })
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Ideal => f.write_str("ideal"),
            Scheme::Practical => f.write_str("practical"),
            Scheme::Dynamic => f.write_str("dynamic"),
            Scheme::SpeedAware => f.write_str("speed_aware"),
            Scheme::ProbAware => f.write_str("prob_aware"),
            Scheme::Benchmark(b) => write!(f, "{b}"),
            Scheme::Random => f.write_str("random"),
            Scheme::Fixed => f.write_str("fixed"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_clients: usize,
    pub samples_per_client: usize,
    pub test_samples: usize,
    pub rounds: usize,
    /// Rounds the adversary listens before attacking.
    pub observe_rounds: usize,
    pub geometry: GeometryMode,
    pub geometry_file: Option<PathBuf>,
    pub placement: PlacementConfig,
    pub attack_type: AttackType,
    pub scheme: Scheme,
    pub budget_m: f64,
    /// Defaults to `ceil(M)`.
    pub budget_k: Option<usize>,
    /// Client ids attacked by the `fixed` scheme.
    pub targets: Vec<usize>,
    /// Re-rank from the latest overheard models before every attacked round.
    pub replan: bool,
    pub observation: Observation,
    pub probe_count: usize,
    /// Rounds per local update for each client; empty means all 1.
    pub speeds: Vec<usize>,
    pub success_model: SuccessKind,
    pub profile_file: Option<PathBuf>,
    pub jammer_power: f64,
    pub sinr_threshold: f64,
    pub fading: Fading,
    pub jammer_gain: f64,
    pub sinr_samples: usize,
    /// `None` picks `per_round` for equal speeds and `cached` otherwise.
    pub aggregation: Option<AggregationMode>,
    /// Preprocessing of the 32 phase/power features before the network.
    pub input_map: InputMap,
    pub train: TrainConfig,
    pub reset_optimizer_on_sync: bool,
    pub local_eval_every: usize,
    pub seeds: Vec<u64>,
    pub output: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_clients: 10,
            samples_per_client: 1000,
            test_samples: 1000,
            rounds: 100,
            observe_rounds: 3,
            geometry: GeometryMode::Table,
            geometry_file: None,
            placement: PlacementConfig::default(),
            attack_type: AttackType::None,
            scheme: Scheme::Practical,
            budget_m: 1.0,
            budget_k: None,
            targets: Vec::new(),
            replan: false,
            observation: Observation::Models,
            probe_count: 200,
            speeds: Vec::new(),
            success_model: SuccessKind::Deterministic,
            profile_file: None,
            jammer_power: 10.0,
            sinr_threshold: 1.0,
            fading: Fading::Rayleigh,
            jammer_gain: 1.0,
            sinr_samples: 100_000,
            aggregation: None,
            input_map: InputMap::Squared,
            train: TrainConfig::default(),
            reset_optimizer_on_sync: false,
            local_eval_every: 0,
            seeds: vec![1, 2, 3, 4, 5],
            output: None,
        }
    }
}

impl ScenarioConfig {
    pub fn speeds(&self) -> Vec<usize> {
        if self.speeds.is_empty() {
            vec![1; self.n_clients]
        } else {
            self.speeds.clone()
        }
    }

    pub fn aggregation(&self) -> AggregationMode {
        self.aggregation.unwrap_or(if self.speeds().iter().all(|&s| s == 1) {
            AggregationMode::PerRound
        } else {
            AggregationMode::Cached
        })
    }

    pub fn budget_k(&self) -> usize {
        self.budget_k.unwrap_or(self.budget_m.ceil().max(1.0) as usize)
    }

    /// Whole clients the budget pays for when every target costs one jam per round.
    pub fn whole_budget(&self) -> usize {
        self.budget_m.floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: usize, field: &str| if v == 0 { Err(Error::config(field, "must be >= 1")) } else { Ok(()) };
        positive(self.n_clients, "n_clients")?;
        if self.samples_per_client < 2 {
            return Err(Error::config("samples_per_client", "must be >= 2"));
        }
        positive(self.test_samples, "test_samples")?;
        positive(self.observe_rounds, "observe_rounds")?;
        positive(self.probe_count, "probe_count")?;
        positive(self.sinr_samples, "sinr_samples")?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if !self.speeds.is_empty() {
            if self.speeds.len() != self.n_clients {
                return Err(Error::config("speeds", format!("expected {} entries, got {}", self.n_clients, self.speeds.len())));
            }
            if self.speeds.contains(&0) {
                return Err(Error::config("speeds", "every speed must be >= 1"));
            }
        }
        self.train.validate()?;
        if self.attack_type == AttackType::None {
            return Ok(());
        }
        if !(self.budget_m.is_finite() && self.budget_m > 0.0 && self.budget_m <= self.n_clients as f64) {
            return Err(Error::config("M", format!("must lie in (0, {}]", self.n_clients)));
        }
        let k = self.budget_k();
        if (k as f64) < self.budget_m.ceil() || k > self.n_clients {
            return Err(Error::config("K", format!("must satisfy ceil(M) <= K <= {}", self.n_clients)));
        }
        if self.scheme == Scheme::Fixed {
            if self.targets.is_empty() || self.targets.iter().any(|&t| t == 0 || t > self.n_clients) {
                return Err(Error::config("targets", format!("need client ids in 1..={}", self.n_clients)));
            }
            return Ok(());
        }
        let fractional_ok = matches!(self.scheme, Scheme::Dynamic | Scheme::SpeedAware)
            || matches!(self.scheme, Scheme::Benchmark(b) if matches!(b, Benchmark::A2 | Benchmark::A3 | Benchmark::A4 | Benchmark::A7));
        if !fractional_ok && self.whole_budget() == 0 {
            return Err(Error::config("M", format!("scheme {} needs M >= 1", self.scheme)));
        }
        if self.replan && !matches!(self.scheme, Scheme::Practical | Scheme::Dynamic | Scheme::ProbAware | Scheme::SpeedAware) {
            return Err(Error::config("replan", format!("not supported for scheme {}", self.scheme)));
        }
        if self.scheme == Scheme::Ideal && self.observation == Observation::Actions {
            return Err(Error::config("observation", "the ideal scheme reads accuracies directly"));
        }
        if self.geometry == GeometryMode::Random && self.geometry_file.is_some() {
            return Err(Error::config("geometry_file", "only valid with geometry = table"));
        }
        if self.success_model == SuccessKind::Sinr {
            if !(self.sinr_threshold > 0.0) {
                return Err(Error::config("sinr_threshold", "must be > 0"));
            }
            if !(self.jammer_power >= 0.0 && self.jammer_gain >= 0.0) {
                return Err(Error::config("jammer_power", "powers and gains must be >= 0"));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Parses and validates. Keys not present keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: BTreeMap<String, String> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}", lineno + 1), format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::config(key, "given more than once"));
            }
        }
        let mut cfg = ScenarioConfig::default();
        for (key, value) in &entries {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| Error::config(key, format!("cannot parse `{value}`: {e}")))
        }
        fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
        where
            T::Err: fmt::Display,
        {
            if value.is_empty() {
                return Ok(Vec::new());
            }
            value.split(',').map(|v| parse(key, v.trim())).collect()
        }
        let path = |v: &str| if v.is_empty() { None } else { Some(PathBuf::from(v)) };
        match key {
            "n_clients" => self.n_clients = parse(key, value)?,
            "samples_per_client" => self.samples_per_client = parse(key, value)?,
            "test_samples" => self.test_samples = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "observe_rounds" => self.observe_rounds = parse(key, value)?,
            "geometry" => self.geometry = parse(key, value)?,
            "geometry_file" => self.geometry_file = path(value),
            "reference_snr_db" => self.placement.reference_snr_db = parse(key, value)?,
            "min_distance" => self.placement.min_distance = parse(key, value)?,
            "max_distance" => self.placement.max_distance = parse(key, value)?,
            "path_loss_exponent" => self.placement.path_loss_exponent = parse(key, value)?,
            "attack_type" => self.attack_type = parse(key, value)?,
            "scheme" => self.scheme = parse(key, value)?,
            "M" => self.budget_m = parse(key, value)?,
            "K" => self.budget_k = Some(parse(key, value)?),
            "targets" => self.targets = list(key, value)?,
            "replan" => self.replan = parse(key, value)?,
            "observation" => self.observation = parse(key, value)?,
            "probe_count" => self.probe_count = parse(key, value)?,
            "speeds" => self.speeds = list(key, value)?,
            "success_model" => self.success_model = parse(key, value)?,
            "profile_file" => self.profile_file = path(value),
            "jammer_power" => self.jammer_power = parse(key, value)?,
            "sinr_threshold" => self.sinr_threshold = parse(key, value)?,
            "fading" => self.fading = parse(key, value)?,
            "jammer_gain" => self.jammer_gain = parse(key, value)?,
            "sinr_samples" => self.sinr_samples = parse(key, value)?,
            "aggregation" => {
                self.aggregation = if value == "auto" {
                    None
                } else {
                    Some(aggregation_from_str(value).map_err(|e| Error::config(key, e))?)
                }
            }
            "input_map" => self.input_map = InputMap::parse(value).map_err(|e| Error::config(key, e.to_string()))?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "rms_decay" => self.train.rms_decay = parse(key, value)?,
            "epsilon" => self.train.epsilon = parse(key, value)?,
            "dropout_rate" => self.train.dropout_rate = parse(key, value)?,
            "epochs_per_round" => self.train.epochs_per_round = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "reset_optimizer_on_sync" => self.reset_optimizer_on_sync = parse(key, value)?,
            "local_eval_every" => self.local_eval_every = parse(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "output" => self.output = path(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }
}
