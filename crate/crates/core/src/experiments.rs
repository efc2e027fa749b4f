//! Named sweeps that regenerate each published table and figure as CSV.
//!
//! Every sweep writes `<name>.csv`, a grid of median final accuracies shaped
//! like the published artifact, and `<name>_runs.csv`, one summary row per
//! run and seed.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use crate::adversary::Benchmark;
use crate::config::{AttackType, ScenarioConfig, Scheme, SuccessKind};
use crate::error::{Error, Result};
use crate::harness::{median, run_training, SummaryRow, TrainingRun, SUMMARY_HEADER};

pub const EXPERIMENTS: [&str; 12] = [
    "table2", "table3", "table4", "table6", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9",
];

/// Memoizes runs by (scenario, seed) so overlapping sweeps train once.
#[derive(Default)]
pub struct RunCache {
    runs: HashMap<(String, u64), Rc<TrainingRun>>,
}

fn cache_key(cfg: &ScenarioConfig) -> String {
    let mut c = cfg.clone();
    c.seeds.clear();
    c.output = None;
    format!("{c:?}")
}

impl RunCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn run(&mut self, cfg: &ScenarioConfig, seed: u64) -> Result<Rc<TrainingRun>> {
        let key = (cache_key(cfg), seed);
        if let Some(r) = self.runs.get(&key) {
            return Ok(Rc::clone(r));
        }
        cfg.validate()?;
        let run = Rc::new(run_training(cfg, seed)?);
        self.runs.insert(key, Rc::clone(&run));
        Ok(run)
    }

    /// Runs every seed of `cfg.seeds`.
    pub fn runs(&mut self, cfg: &ScenarioConfig) -> Result<Vec<Rc<TrainingRun>>> {
        cfg.seeds.iter().map(|&s| self.run(cfg, s)).collect()
    }

    pub fn final_accuracies(&mut self, cfg: &ScenarioConfig) -> Result<Vec<f64>> {
        Ok(self.runs(cfg)?.iter().map(|r| r.final_accuracy).collect())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReproduceOptions {
    /// Base scenario; sweeps override the attack fields only.
    pub base: ScenarioConfig,
    /// Budget axis for the figure sweeps; `None` uses each figure's default.
    pub budgets: Option<Vec<f64>>,
}

/// Speeds of the heterogeneous study: clients 1 to 6 update every other round.
pub fn heterogeneous_speeds(n: usize) -> Vec<usize> {
    (1..=n).map(|i| if i <= 6 { 2 } else { 1 }).collect()
}

pub fn attack(base: &ScenarioConfig, attack_type: AttackType, scheme: Scheme, m: f64, k: Option<usize>) -> ScenarioConfig {
    let mut c = base.clone();
    c.attack_type = attack_type;
    c.scheme = scheme;
    c.budget_m = m;
    c.budget_k = k;
    c
}

const DIRECTIONS: [AttackType; 3] = [AttackType::Uplink, AttackType::Downlink, AttackType::Both];

struct Sweep<'a> {
    cache: &'a mut RunCache,
    rows: Vec<SummaryRow>,
}

impl Sweep<'_> {
    fn median(&mut self, cfg: &ScenarioConfig) -> Result<f64> {
        let runs = self.cache.runs(cfg)?;
        self.rows.extend(runs.iter().map(|r| SummaryRow::new(cfg, r)));
        Ok(median(&runs.iter().map(|r| r.final_accuracy).collect::<Vec<_>>()))
    }
}

fn grid(header: &[String], rows: &[(String, Vec<f64>)]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (label, vals) in rows {
        out.push_str(label);
        for v in vals {
            let _ = write!(out, ",{v:.4}");
        }
        out.push('\n');
    }
    out
}

fn budgets(opts: &ReproduceOptions, default: &[f64]) -> Vec<f64> {
    opts.budgets.clone().unwrap_or_else(|| default.to_vec())
}

fn clients_header(first: &str, n: usize) -> Vec<String> {
    std::iter::once(first.to_string()).chain((1..=n).map(|i| format!("client_{i}"))).collect()
}

/// Runs the named sweep and writes its CSVs into `out_dir`, returning the
/// paths written.
pub fn reproduce_experiment(name: &str, opts: &ReproduceOptions, cache: &mut RunCache, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if !EXPERIMENTS.contains(&name) {
        return Err(Error::invalid(format!("unknown experiment `{name}`; expected one of: {}", EXPERIMENTS.join(", "))));
    }
    opts.base.validate()?;
    let base = &opts.base;
    let n = base.n_clients;
    let mut sweep = Sweep { cache, rows: Vec::new() };
    let text = match name {
        "table2" => {
            let runs = sweep.cache.runs(base)?;
            sweep.rows.extend(runs.iter().map(|r| SummaryRow::new(base, r)));
            let col = |f: &dyn Fn(&TrainingRun, usize) -> f64| -> Vec<f64> {
                (0..n).map(|i| median(&runs.iter().map(|r| f(r, i)).collect::<Vec<_>>())).collect()
            };
            grid(
                &clients_header("quantity", n),
                &[
                    ("snr_db".into(), col(&|r, i| r.geometry[i].snr_db)),
                    ("phase_shift".into(), col(&|r, i| r.geometry[i].phase_shift)),
                    ("local_accuracy".into(), col(&|r, i| r.final_local_accuracies[i])),
                ],
            )
        }
        "table3" => {
            let mut rows = Vec::new();
            for dir in [AttackType::Uplink, AttackType::Downlink] {
                let mut vals = Vec::with_capacity(n);
                for id in 1..=n {
                    let mut c = attack(base, dir, Scheme::Fixed, 1.0, None);
                    c.targets = vec![id];
                    vals.push(sweep.median(&c)?);
                }
                rows.push((dir.to_string(), vals));
            }
            grid(&clients_header("attack_type", n), &rows)
        }
        "table4" | "table6" => {
            let pairs: [(f64, usize); 5] = [(1.0, 1), (1.0, 2), (2.0, 2), (2.0, 3), (2.0, 4)];
            let mut header = vec!["attack_type".to_string()];
            header.extend(pairs.iter().map(|(m, k)| format!("M{m}_K{k}")));
            if name == "table6" {
                header.extend(["each_round_M1".to_string(), "each_round_M2".to_string()]);
            }
            let mut rows = Vec::new();
            for dir in DIRECTIONS {
                let mut vals = Vec::new();
                for &(m, k) in &pairs {
                    vals.push(sweep.median(&attack(base, dir, Scheme::Dynamic, m, Some(k)))?);
                }
                if name == "table6" {
                    for m in [1.0, 2.0] {
                        let mut c = attack(base, dir, Scheme::Practical, m, None);
                        c.replan = true;
                        vals.push(sweep.median(&c)?);
                    }
                }
                rows.push((dir.to_string(), vals));
            }
            grid(&header, &rows)
        }
        "fig2" => {
            let mut header = vec!["M".to_string()];
            header.extend(DIRECTIONS.iter().map(|d| d.to_string()));
            header.extend(DIRECTIONS.iter().map(|d| format!("random_{d}")));
            let mut rows = Vec::new();
            for m in budgets(opts, &[1.0, 2.0, 3.0, 4.0, 5.0]) {
                let mut vals = Vec::new();
                for scheme in [Scheme::Practical, Scheme::Random] {
                    for dir in DIRECTIONS {
                        vals.push(sweep.median(&attack(base, dir, scheme, m, None))?);
                    }
                }
                rows.push((format!("{m}"), vals));
            }
            grid(&header, &rows)
        }
        _ => {
            let (designed, bench, default_budgets) = match name {
                "fig3" => (Scheme::SpeedAware, Benchmark::A1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                "fig4" => (Scheme::SpeedAware, Benchmark::A2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                "fig5" => (Scheme::SpeedAware, Benchmark::A3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                "fig6" => (Scheme::SpeedAware, Benchmark::A4, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
                "fig7" => (Scheme::ProbAware, Benchmark::A5, vec![1.0, 3.0, 5.0, 7.0, 9.0]),
                "fig8" => (Scheme::ProbAware, Benchmark::A6, vec![1.0, 3.0, 5.0, 7.0, 9.0]),
                _ => (Scheme::ProbAware, Benchmark::A7, vec![1.0, 3.0, 5.0, 7.0, 9.0]),
            };
            let mut scenario = base.clone();
            if designed == Scheme::SpeedAware {
                scenario.speeds = heterogeneous_speeds(n);
            } else {
                scenario.success_model = SuccessKind::Table;
            }
            let mut header = vec!["M".to_string()];
            for label in ["designed".to_string(), bench.to_string()] {
                header.extend(DIRECTIONS.iter().map(|d| format!("{label}_{d}")));
            }
            let mut rows = Vec::new();
            for m in budgets(opts, &default_budgets) {
                let mut vals = Vec::new();
                for scheme in [designed, Scheme::Benchmark(bench)] {
                    for dir in DIRECTIONS {
                        vals.push(sweep.median(&attack(&scenario, dir, scheme, m, None))?);
                    }
                }
                rows.push((format!("{m}"), vals));
            }
            grid(&header, &rows)
        }
    };
    std::fs::create_dir_all(out_dir)?;
    let main = out_dir.join(format!("{name}.csv"));
    let runs = out_dir.join(format!("{name}_runs.csv"));
    std::fs::write(&main, text)?;
    let mut log = format!("{SUMMARY_HEADER}\n");
    for r in &sweep.rows {
        log.push_str(&r.to_csv());
        log.push('\n');
    }
    std::fs::write(&runs, log)?;
    Ok(vec![main, runs])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ReproduceOptions {
        let base = ScenarioConfig::parse("n_clients = 10\nsamples_per_client = 30\ntest_samples = 30\nrounds = 5\nseeds = 1, 2").unwrap();
        ReproduceOptions { base, budgets: Some(vec![1.0]) }
    }

    fn read(p: &Path) -> Vec<String> {
        std::fs::read_to_string(p).unwrap().lines().map(str::to_string).collect()
    }

    #[test]
    fn unknown_name_lists_choices() {
        let dir = tempfile::tempdir().unwrap();
        let err = reproduce_experiment("table5", &small(), &mut RunCache::new(), dir.path()).unwrap_err();
        assert!(err.to_string().contains("table2, table3"));
    }

    #[test]
    fn table3_is_two_by_n() {
        let dir = tempfile::tempdir().unwrap();
        let files = reproduce_experiment("table3", &small(), &mut RunCache::new(), dir.path()).unwrap();
        let grid = read(&files[0]);
        assert_eq!(grid.len(), 3);
        assert!(grid[0].starts_with("attack_type,client_1,"));
        assert!(grid[1].starts_with("uplink,") && grid[2].starts_with("downlink,"));
        assert_eq!(grid[1].split(',').count(), 11);
        assert_eq!(read(&files[1]).len(), 1 + 20 * 2);
    }

    #[test]
    fn fig_sweep_shape_and_cache_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let mut cache = RunCache::new();
        let files = reproduce_experiment("fig3", &small(), &mut cache, dir.path()).unwrap();
        let grid = read(&files[0]);
        assert_eq!(grid[0], "M,designed_uplink,designed_downlink,designed_both,A1_uplink,A1_downlink,A1_both");
        assert_eq!(grid.len(), 2);
        let before = cache.len();
        reproduce_experiment("fig3", &small(), &mut cache, dir.path()).unwrap();
        assert_eq!(cache.len(), before);
    }

    #[test]
    fn outputs_are_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        reproduce_experiment("table6", &small(), &mut RunCache::new(), a.path()).unwrap();
        reproduce_experiment("table6", &small(), &mut RunCache::new(), b.path()).unwrap();
        for f in ["table6.csv", "table6_runs.csv"] {
            assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        }
        let grid = read(&a.path().join("table6.csv"));
        assert_eq!(grid[0], "attack_type,M1_K1,M1_K2,M2_K2,M2_K3,M2_K4,each_round_M1,each_round_M2");
    }
}
