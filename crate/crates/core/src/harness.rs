//! End-to-end runs: build the deployment from a scenario and seed, let the
//! adversary observe and plan, run the rounds, and write CSV results.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::adversary::{
    estimate_rank_from_actions, observe_and_rank, plan_benchmark, plan_dynamic, plan_speed_aware, select_downlink,
    select_downlink_prob, select_idealized, select_uplink, select_uplink_prob, speed_aware_start, ActionLog, AttackBudget,
    AttackPlan, BenchmarkContext, Direction, DivergenceRanking, SuccessProfile,
};
use crate::channel::{
    build_client_dataset, build_test_dataset, format_geometry_table, load_geometry_table, random_geometry, table_geometry,
    ClientGeometry,
};
use crate::config::{AttackType, GeometryMode, Observation, ScenarioConfig, Scheme, SuccessKind};
use crate::error::{Error, Result};
use crate::federation::{ClientSet, ClientState, Federation, FederationConfig, RoundJamming};
use crate::jamming::{format_profile, load_profile, resolve_attack, SinrLink, SinrModel, SuccessModel};
use crate::model::{argmax, init_weights, predict_proba, Architecture, DesignMatrix, ModelWeights};
use crate::rng::{substream, substream2, SimRng, Stream};

/// Sub-index of the data stream used for the shared test set.
const TEST_SET_INDEX: u64 = 1 << 32;
/// Sub-index of the adversary stream used for probe events.
const PROBE_INDEX: u64 = 1 << 33;

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global_accuracy: f64,
    pub local_accuracies: Option<Vec<f64>>,
    /// Ready clients whose upload was destroyed.
    pub uplink_jammed: ClientSet,
    /// Ready clients that missed the broadcast.
    pub downlink_jammed: ClientSet,
    /// Jams attempted this round.
    pub budget_spent: usize,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub seed: u64,
    pub geometry: Vec<ClientGeometry>,
    pub records: Vec<RoundRecord>,
    pub final_weights: ModelWeights,
    /// Global accuracy after the last round (of the initial model when no
    /// rounds run).
    pub final_accuracy: f64,
    /// Every client's latest local model on the test set after the last round.
    pub final_local_accuracies: Vec<f64>,
    /// Ranking the adversary formed at the end of its listening window, if
    /// the run got that far.
    pub observed_ranking: Option<DivergenceRanking>,
    /// Targets per round, as attacked.
    pub plan: AttackPlan,
    /// Mean jams per round over the attack window.
    pub mean_budget: f64,
}

/// The sensing geometry for `seed`.
pub fn scenario_geometry(cfg: &ScenarioConfig, seed: u64) -> Result<Vec<ClientGeometry>> {
    match cfg.geometry {
        GeometryMode::Table => match &cfg.geometry_file {
            Some(path) => {
                let rows = load_geometry_table(path)?;
                if rows.len() != cfg.n_clients {
                    return Err(Error::config("geometry_file", format!("{} rows for {} clients", rows.len(), cfg.n_clients)));
                }
                Ok(rows)
            }
            None => Ok(table_geometry(cfg.n_clients)),
        },
        GeometryMode::Random => random_geometry(cfg.n_clients, &cfg.placement, &mut substream(seed, Stream::Geometry, 0)),
    }
}

/// How jams resolve in this scenario.
pub fn success_model(cfg: &ScenarioConfig, geometry: &[ClientGeometry]) -> Result<SuccessModel> {
    Ok(match cfg.success_model {
        SuccessKind::Deterministic => SuccessModel::Deterministic,
        SuccessKind::Table => SuccessModel::Table(table_profile(cfg)?),
        SuccessKind::Sinr => {
            let links: Vec<SinrLink> = geometry
                .iter()
                .map(|g| SinrLink {
                    snr: 10f64.powf(g.snr_db / 10.0),
                    jammer_gain: cfg.jammer_gain,
                })
                .collect();
            SuccessModel::Sinr(SinrModel {
                jammer_power: cfg.jammer_power,
                threshold: cfg.sinr_threshold,
                fading: cfg.fading,
                uplink: links.clone(),
                downlink: links,
            })
        }
    })
}

fn table_profile(cfg: &ScenarioConfig) -> Result<SuccessProfile> {
    let profile = match &cfg.profile_file {
        Some(path) => load_profile(path)?,
        None => SuccessProfile::reference(cfg.n_clients),
    };
    if profile.len() != cfg.n_clients {
        return Err(Error::config("profile_file", format!("{} rows for {} clients", profile.len(), cfg.n_clients)));
    }
    Ok(profile)
}

/// Success probabilities as known to the adversary.
fn adversary_profile(cfg: &ScenarioConfig, model: &SuccessModel, seed: u64) -> Result<SuccessProfile> {
    match model {
        SuccessModel::Deterministic => SuccessProfile::uniform(cfg.n_clients, 1.0),
        SuccessModel::Table(p) => Ok(p.clone()),
        SuccessModel::Sinr(s) => s.profile(cfg.sinr_samples, &mut substream(seed, Stream::Adversary, PROBE_INDEX + 1)),
    }
}

/// Round at whose end the adversary forms its ranking.
pub fn observation_round(cfg: &ScenarioConfig) -> usize {
    speed_aware_start(cfg.observe_rounds, &cfg.speeds()) - 1
}

/// First attacked round.
pub fn attack_start(cfg: &ScenarioConfig) -> usize {
    if matches!(cfg.scheme, Scheme::Ideal | Scheme::Fixed) {
        1
    } else {
        observation_round(cfg) + 1
    }
}

fn build_federation(cfg: &ScenarioConfig, seed: u64, geometry: &[ClientGeometry]) -> Result<Federation> {
    let arch = Architecture::sensing_classifier_with(cfg.input_map);
    let global = init_weights(&arch, &mut substream(seed, Stream::Init, 0));
    let speeds = cfg.speeds();
    let clients = geometry
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let data = build_client_dataset(g, cfg.samples_per_client, &mut substream(seed, Stream::Data, i as u64))?;
            ClientState::new(i + 1, global.clone(), data, speeds[i], substream(seed, Stream::Training, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    let test = build_test_dataset(geometry, cfg.test_samples, &mut substream(seed, Stream::Data, TEST_SET_INDEX))?;
    let fed_cfg = FederationConfig {
        train: cfg.train.clone(),
        aggregation: cfg.aggregation(),
        reset_optimizer_on_sync: cfg.reset_optimizer_on_sync,
        local_eval_every: cfg.local_eval_every,
    };
    let mut fed = Federation::new(clients, global, &test, fed_cfg)?;
    fed.set_planned_rounds(cfg.rounds);
    Ok(fed)
}

/// The adversary's ranking from what it can observe right now.
fn observe(cfg: &ScenarioConfig, fed: &Federation, probes: Option<&DesignMatrix>) -> Result<DivergenceRanking> {
    match (cfg.observation, probes) {
        (Observation::Actions, Some(probes)) => {
            let decisions = fed
                .local_models()
                .iter()
                .map(|m| predict_proba(m, &probes.x.view()).rows().into_iter().map(|r| argmax(r.iter().copied())).collect())
                .collect();
            let log = ActionLog {
                truth: probes.y.clone(),
                decisions,
            };
            estimate_rank_from_actions(&log, cfg.probe_count)?.as_ranking()
        }
        _ => observe_and_rank(&fed.local_models().into_iter().map(Some).collect::<Vec<_>>()),
    }
}

struct PlanInputs<'a> {
    ranking: Option<&'a DivergenceRanking>,
    reference_accuracies: Option<&'a [f64]>,
    speeds: &'a [usize],
    profile: &'a SuccessProfile,
}

fn plan_direction(
    cfg: &ScenarioConfig,
    direction: Direction,
    inputs: &PlanInputs<'_>,
    rng: &mut SimRng,
    start: usize,
    rounds: usize,
) -> Result<AttackPlan> {
    let n = cfg.n_clients;
    let ranking = || inputs.ranking.ok_or_else(|| Error::config("scheme", "needs an observed ranking"));
    let whole = cfg.whole_budget().min(n);
    let fixed = |set: ClientSet| AttackPlan::periodic(set, inputs.speeds, direction, start, rounds);
    match cfg.scheme {
        Scheme::Ideal => {
            let acc = inputs
                .reference_accuracies
                .ok_or_else(|| Error::config("scheme", "ideal selection needs reference accuracies"))?;
            Ok(fixed(select_idealized(acc, whole, direction)?))
        }
        Scheme::Practical => {
            let set = match direction {
                Direction::Uplink => select_uplink(ranking()?, whole)?,
                Direction::Downlink => select_downlink(ranking()?, whole)?,
            };
            Ok(fixed(set))
        }
        Scheme::ProbAware => {
            let set = match direction {
                Direction::Uplink => select_uplink_prob(ranking()?, inputs.profile, whole)?,
                Direction::Downlink => select_downlink_prob(ranking()?, inputs.profile, whole)?,
            };
            Ok(fixed(set))
        }
        Scheme::Fixed => Ok(fixed(cfg.targets.iter().copied().collect())),
        Scheme::Random => {
            let mut ids: Vec<usize> = (1..=n).collect();
            ids.shuffle(rng);
            Ok(fixed(ids[..whole].iter().copied().collect()))
        }
        Scheme::Dynamic => {
            let budget = AttackBudget::new(cfg.budget_m, cfg.budget_k(), n)?;
            plan_dynamic(ranking()?, budget, direction, start, rounds, rng)
        }
        Scheme::SpeedAware => plan_speed_aware(ranking()?, inputs.speeds, cfg.budget_m, direction, start, rounds),
        Scheme::Benchmark(kind) => {
            let ctx = BenchmarkContext {
                ranking: inputs.ranking,
                speeds: Some(inputs.speeds),
                profile: Some(inputs.profile),
                rng: Some(rng),
                n_clients: n,
                start_round: start,
                rounds,
            };
            plan_benchmark(kind, ctx, cfg.budget_m, direction)
        }
    }
}

fn plan_attack(cfg: &ScenarioConfig, inputs: &PlanInputs<'_>, rng: &mut SimRng, start: usize, rounds: usize) -> Result<AttackPlan> {
    let up = if cfg.attack_type.has_uplink() {
        plan_direction(cfg, Direction::Uplink, inputs, rng, start, rounds)?
    } else {
        AttackPlan::idle(rounds)
    };
    let down = if cfg.attack_type.has_downlink() {
        plan_direction(cfg, Direction::Downlink, inputs, rng, start, rounds)?
    } else {
        AttackPlan::idle(rounds)
    };
    AttackPlan::combine(up, down)
}

/// Runs one seeded simulation of `cfg`.
pub fn run_training(cfg: &ScenarioConfig, seed: u64) -> Result<TrainingRun> {
    cfg.validate()?;
    let geometry = scenario_geometry(cfg, seed)?;
    let model = success_model(cfg, &geometry)?;
    let attacking = cfg.attack_type != AttackType::None;
    let reference_accuracies = if attacking && cfg.scheme == Scheme::Ideal {
        let reference = ScenarioConfig {
            attack_type: AttackType::None,
            ..cfg.clone()
        };
        Some(run_training(&reference, seed)?.final_local_accuracies)
    } else {
        None
    };
    let profile = adversary_profile(cfg, &model, seed)?;
    let speeds = cfg.speeds();
    let probes = match cfg.observation {
        Observation::Actions => {
            let probe_set = build_test_dataset(&geometry, cfg.probe_count, &mut substream(seed, Stream::Adversary, PROBE_INDEX))?;
            Some(DesignMatrix::from_dataset(&probe_set, cfg.input_map))
        }
        Observation::Models => None,
    };

    let mut fed = build_federation(cfg, seed, &geometry)?;
    let mut adv_rng = substream(seed, Stream::Adversary, 0);
    let rounds = cfg.rounds;
    let observe_at = observation_round(cfg);
    let start = attack_start(cfg);
    let mut observed_ranking = None;
    let mut plan = AttackPlan::idle(rounds);
    if attacking && matches!(cfg.scheme, Scheme::Ideal | Scheme::Fixed) {
        let inputs = PlanInputs {
            ranking: None,
            reference_accuracies: reference_accuracies.as_deref(),
            speeds: &speeds,
            profile: &profile,
        };
        plan = plan_attack(cfg, &inputs, &mut adv_rng, start, rounds)?;
    }
    let (mut realized_up, mut realized_down) = (vec![ClientSet::new(); rounds], vec![ClientSet::new(); rounds]);
    let mut records = Vec::with_capacity(rounds);

    for t in 1..=rounds {
        let (up, down) = if !attacking || t < start {
            (ClientSet::new(), ClientSet::new())
        } else if cfg.replan && t > start {
            let ranking = observe(cfg, &fed, probes.as_ref())?;
            let inputs = PlanInputs {
                ranking: Some(&ranking),
                reference_accuracies: None,
                speeds: &speeds,
                profile: &profile,
            };
            let step = plan_attack(cfg, &inputs, &mut adv_rng, t, t)?;
            (step.uplink_targets(t).clone(), step.downlink_targets(t).clone())
        } else {
            (plan.uplink_targets(t).clone(), plan.downlink_targets(t).clone())
        };
        let mut jamming = RoundJamming::none();
        for (targets, direction, attempted, jammed, code) in [
            (&up, Direction::Uplink, &mut jamming.uplink_attempted, &mut jamming.uplink_jammed, 0),
            (&down, Direction::Downlink, &mut jamming.downlink_attempted, &mut jamming.downlink_jammed, 1),
        ] {
            for &id in targets {
                attempted.insert(id);
                let mut rng = substream2(seed, Stream::Jamming, t as u64, 2 * id as u64 + code);
                if resolve_attack(id, direction, &model, &mut rng)? {
                    jammed.insert(id);
                }
            }
        }
        realized_up[t - 1] = up;
        realized_down[t - 1] = down;

        let outcome = fed.run_round(&jamming)?;
        records.push(RoundRecord {
            round: t,
            global_accuracy: outcome.global_accuracy,
            local_accuracies: outcome.local_accuracies,
            uplink_jammed: outcome.uplink_jammed,
            downlink_jammed: outcome.downlink_jammed,
            budget_spent: outcome.budget_spent,
        });

        if t == observe_at {
            let ranking = observe(cfg, &fed, probes.as_ref())?;
            if attacking && !matches!(cfg.scheme, Scheme::Ideal | Scheme::Fixed) {
                let inputs = PlanInputs {
                    ranking: Some(&ranking),
                    reference_accuracies: None,
                    speeds: &speeds,
                    profile: &profile,
                };
                plan = plan_attack(cfg, &inputs, &mut adv_rng, start, rounds)?;
            }
            observed_ranking = Some(ranking);
        }
    }

    let mut realized = AttackPlan::from_rounds(start.min(rounds + 1), realized_up, realized_down, plan.committed_budget)?;
    if !cfg.replan {
        realized.selected_uplink = plan.selected_uplink.clone();
        realized.selected_downlink = plan.selected_downlink.clone();
    }
    let final_local_accuracies = fed.local_accuracies()?;
    Ok(TrainingRun {
        seed,
        geometry,
        final_accuracy: records.last().map(|r| r.global_accuracy).map_or_else(|| fed.global_accuracy(), Ok)?,
        final_weights: fed.global.clone(),
        final_local_accuracies,
        observed_ranking,
        mean_budget: if attacking { realized.mean_actions() } else { 0.0 },
        plan: realized,
        records,
    })
}

fn join_ids(s: &ClientSet) -> String {
    s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Round log: `round, global_acc, local_acc_1..N, uplink_jammed_ids,
/// downlink_jammed_ids, budget_spent`. Local accuracies are blank in rounds
/// where they were not evaluated; ids are `;`-separated.
pub fn format_round_log(records: &[RoundRecord], n_clients: usize) -> String {
    let mut out = String::from("round,global_acc");
    for i in 1..=n_clients {
        let _ = write!(out, ",local_acc_{i}");
    }
    out.push_str(",uplink_jammed_ids,downlink_jammed_ids,budget_spent\n");
    for r in records {
        let _ = write!(out, "{},{}", r.round, r.global_accuracy);
        match &r.local_accuracies {
            Some(acc) => acc.iter().for_each(|a| {
                let _ = write!(out, ",{a}");
            }),
            None => out.push_str(&",".repeat(n_clients)),
        }
        let _ = writeln!(out, ",{},{},{}", join_ids(&r.uplink_jammed), join_ids(&r.downlink_jammed), r.budget_spent);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scheme: String,
    pub attack_type: String,
    pub m: f64,
    pub k: usize,
    pub seed: u64,
    pub final_accuracy: f64,
    pub mean_budget: f64,
}

pub const SUMMARY_HEADER: &str = "scheme,attack_type,M,K,seed,final_accuracy,mean_budget";

impl SummaryRow {
    pub fn new(cfg: &ScenarioConfig, run: &TrainingRun) -> Self {
        let attacking = cfg.attack_type != AttackType::None;
        SummaryRow {
            scheme: if attacking { cfg.scheme.to_string() } else { "none".into() },
            attack_type: cfg.attack_type.to_string(),
            m: match (attacking, cfg.scheme) {
                (false, _) => 0.0,
                (true, Scheme::Fixed) => cfg.targets.len() as f64,
                (true, _) => cfg.budget_m,
            },
            k: match (attacking, cfg.scheme) {
                (false, _) => 0,
                (true, Scheme::Fixed) => cfg.targets.len(),
                (true, _) => cfg.budget_k(),
            },
            seed: run.seed,
            final_accuracy: run.final_accuracy,
            mean_budget: run.mean_budget,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6}",
            self.scheme, self.attack_type, self.m, self.k, self.seed, self.final_accuracy, self.mean_budget
        )
    }
}

pub fn format_summary(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&r.to_csv());
        out.push('\n');
    }
    out
}

/// Runs every configured seed, writing per-seed round logs, plan dumps and
/// geometry tables plus `summary.csv` into `out_dir`.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<Vec<SummaryRow>> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let run = run_training(cfg, seed)?;
        std::fs::write(out_dir.join(format!("round_log_seed{seed}.csv")), format_round_log(&run.records, cfg.n_clients))?;
        std::fs::write(out_dir.join(format!("geometry_seed{seed}.txt")), format_geometry_table(&run.geometry))?;
        if cfg.attack_type != AttackType::None {
            std::fs::write(out_dir.join(format!("plan_seed{seed}.txt")), run.plan.dump())?;
        }
        if cfg.success_model != SuccessKind::Deterministic {
            let model = success_model(cfg, &run.geometry)?;
            let profile = adversary_profile(cfg, &model, seed)?;
            std::fs::write(out_dir.join(format!("profile_seed{seed}.txt")), format_profile(&profile))?;
        }
        rows.push(SummaryRow::new(cfg, &run));
    }
    std::fs::write(out_dir.join("summary.csv"), format_summary(&rows))?;
    Ok(rows)
}

/// Size of the difference between the first `k` entries of two orderings of
/// the same ids.
pub fn compare_rankings(a: &[usize], b: &[usize], k: usize) -> Result<usize> {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_unstable();
    sb.sort_unstable();
    if sa != sb || sa.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::invalid("rankings must be permutations of the same ids"));
    }
    if k == 0 || k >= a.len() {
        return Err(Error::invalid(format!("k must lie in 1..={}", a.len().saturating_sub(1))));
    }
    let prefix: ClientSet = b[..k].iter().copied().collect();
    Ok(a[..k].iter().filter(|id| !prefix.contains(id)).count())
}

/// Reads client ids separated by commas, whitespace or newlines; `#` starts
/// a comment.
pub fn parse_ranking(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<usize>().map_err(|_| Error::invalid(format!("bad client id `{t}`"))))
        .collect()
}

/// Ids ordered from worst to best accuracy, ties by id.
pub fn worst_to_best(accuracies: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..=accuracies.len()).collect();
    ids.sort_by(|&a, &b| accuracies[a - 1].total_cmp(&accuracies[b - 1]).then(a.cmp(&b)));
    ids
}

/// Ids ordered from best to worst accuracy, ties by id.
pub fn best_to_worst(accuracies: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..=accuracies.len()).collect();
    ids.sort_by(|&a, &b| accuracies[b - 1].total_cmp(&accuracies[a - 1]).then(a.cmp(&b)));
    ids
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::{prop_assert_eq, proptest};

    fn tiny(extra: &str) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::parse("n_clients = 4\nsamples_per_client = 40\ntest_samples = 40\nrounds = 6\nseeds = 1").unwrap();
        for line in extra.lines() {
            let (k, v) = line.split_once('=').unwrap();
            cfg.set(k.trim(), v.trim()).unwrap();
        }
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn zero_rounds_give_empty_log() {
        let cfg = tiny("rounds = 0");
        let run = run_training(&cfg, 1).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.final_weights, init_weights(&Architecture::sensing_classifier(), &mut substream(1, Stream::Init, 0)));
        assert_eq!(format_round_log(&run.records, 4).lines().count(), 1);
    }

    #[test]
    fn no_attack_has_no_jams() {
        let run = run_training(&tiny(""), 1).unwrap();
        assert_eq!(run.records.len(), 6);
        assert!(run.records.iter().all(|r| r.budget_spent == 0 && r.uplink_jammed.is_empty()));
        assert_eq!(run.mean_budget, 0.0);
        assert!(run.observed_ranking.is_some());
        assert!(run.records.last().unwrap().local_accuracies.is_some());
    }

    #[test]
    fn practical_downlink_attacks_the_closest_client() {
        let run = run_training(&tiny("attack_type = downlink\nM = 1"), 2).unwrap();
        let ranking = run.observed_ranking.clone().unwrap();
        let target = ranking.ascending()[0];
        for r in &run.records {
            if r.round <= 3 {
                assert!(r.downlink_jammed.is_empty() && r.budget_spent == 0);
            } else {
                assert_eq!(r.downlink_jammed, [target].into());
                assert_eq!(r.budget_spent, 1);
            }
        }
        assert_eq!(run.mean_budget, 1.0);
    }

    #[test]
    fn both_directions_spend_budget_on_each() {
        let run = run_training(&tiny("attack_type = both\nM = 2\nscheme = random"), 3).unwrap();
        for r in &run.records[3..] {
            assert_eq!(r.budget_spent, 4);
            assert_eq!(r.uplink_jammed.len(), 2);
            assert_eq!(r.downlink_jammed.len(), 2);
        }
    }

    #[test]
    fn fixed_targets_from_round_one() {
        let run = run_training(&tiny("attack_type = uplink\nscheme = fixed\ntargets = 3"), 4).unwrap();
        assert!(run.records.iter().all(|r| r.uplink_jammed == [3].into()));
        assert_eq!(SummaryRow::new(&tiny("attack_type = uplink\nscheme = fixed\ntargets = 3"), &run).m, 1.0);
    }

    #[test]
    fn ideal_attack_starts_at_round_one() {
        let cfg = tiny("attack_type = uplink\nscheme = ideal\nM = 1");
        let reference = run_training(&tiny(""), 4).unwrap();
        let run = run_training(&cfg, 4).unwrap();
        let worst = worst_to_best(&reference.final_local_accuracies)[0];
        assert!(run.records.iter().all(|r| r.uplink_jammed == [worst].into()));
    }

    #[test]
    fn speed_aware_attacks_only_ready_rounds() {
        let cfg = tiny("attack_type = uplink\nscheme = speed_aware\nM = 1.5\nspeeds = 2,2,1,1\nrounds = 12");
        let run = run_training(&cfg, 5).unwrap();
        assert_eq!(attack_start(&cfg), 7);
        let speeds = cfg.speeds();
        let committed: f64 = run.plan.selected_uplink.iter().map(|&i| 1.0 / speeds[i - 1] as f64).sum();
        assert!(committed <= 1.5 + 1e-12);
        for r in &run.records {
            assert_eq!(r.budget_spent > 0, r.round >= 7 && !run.plan.uplink_targets(r.round).is_empty());
            for &id in &r.uplink_jammed {
                assert_eq!(r.round % speeds[id - 1], 0);
            }
        }
        assert!(run.plan.dump().starts_with("# start_round 7"));
    }

    #[test]
    fn table_success_model_can_miss() {
        let dir = tempfile::tempdir().unwrap();
        let profile = dir.path().join("p.txt");
        std::fs::write(&profile, "1, 0.01, 0.01\n2, 0.01, 0.01\n3, 0.01, 0.01\n4, 0.01, 0.01\n").unwrap();
        let cfg = tiny(&format!(
            "attack_type = uplink\nM = 2\nsuccess_model = table\nprofile_file = {}\nrounds = 10",
            profile.display()
        ));
        let run = run_training(&cfg, 6).unwrap();
        let attempted: usize = run.records.iter().map(|r| r.budget_spent).sum();
        let landed: usize = run.records.iter().map(|r| r.uplink_jammed.len()).sum();
        assert_eq!(attempted, 14);
        assert!(landed < attempted);
    }

    #[test]
    fn replan_follows_latest_ranking() {
        let run = run_training(&tiny("attack_type = downlink\nM = 1\nreplan = true\nrounds = 8"), 7).unwrap();
        for r in &run.records[3..] {
            assert_eq!(r.budget_spent, 1);
        }
    }

    #[test]
    fn action_observation_yields_a_ranking() {
        let run = run_training(&tiny("attack_type = uplink\nM = 1\nobservation = actions\nprobe_count = 30"), 8).unwrap();
        assert_eq!(run.observed_ranking.unwrap().len(), 4);
    }

    #[test]
    fn scenario_writes_all_files_and_is_reproducible() {
        let cfg = tiny("attack_type = both\nM = 1\nseeds = 1,2\nrounds = 4");
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let rows = run_scenario(&cfg, a.path()).unwrap();
        run_scenario(&cfg, b.path()).unwrap();
        assert_eq!(rows.len(), 2);
        for f in ["summary.csv", "round_log_seed1.csv", "plan_seed2.txt", "geometry_seed1.txt"] {
            let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
            assert_eq!(x, y, "{f}");
        }
        let summary = std::fs::read_to_string(a.path().join("summary.csv")).unwrap();
        assert!(summary.starts_with(SUMMARY_HEADER));
        let log = std::fs::read_to_string(a.path().join("round_log_seed1.csv")).unwrap();
        assert!(log.starts_with("round,global_acc,local_acc_1,local_acc_2,local_acc_3,local_acc_4,uplink_jammed_ids,downlink_jammed_ids,budget_spent"));
    }

    #[test]
    fn ranking_difference_examples() {
        assert_eq!(compare_rankings(&[1, 2, 3, 4], &[4, 3, 2, 1], 2).unwrap(), 2);
        assert_eq!(compare_rankings(&[1, 2, 3, 4], &[1, 2, 3, 4], 3).unwrap(), 0);
        assert!(compare_rankings(&[1, 2, 3], &[1, 2, 4], 1).is_err());
        assert!(compare_rankings(&[1, 2, 3], &[1, 2, 3], 3).is_err());
        assert!(compare_rankings(&[1, 1, 3], &[1, 1, 3], 1).is_err());
        assert_eq!(parse_ranking("3, 1\n2 # tail\n").unwrap(), vec![3, 1, 2]);
        assert!(parse_ranking("3, x").is_err());
    }

    proptest! {
        #[test]
        fn ranking_difference_matches_oracle(n in 2usize..12, s1 in 0u64..1000, s2 in 0u64..1000) {
            let mut a: Vec<usize> = (1..=n).collect();
            let mut b = a.clone();
            a.shuffle(&mut seeded(s1));
            b.shuffle(&mut seeded(s2 + 5000));
            for k in 1..n {
                let oracle = a[..k].iter().filter(|x| !b[..k].contains(x)).count();
                prop_assert_eq!(compare_rankings(&a, &b, k).unwrap(), oracle);
                prop_assert_eq!(compare_rankings(&b, &a, k).unwrap(), oracle);
            }
        }
    }

    #[test]
    fn accuracy_orders() {
        assert_eq!(worst_to_best(&[0.9, 0.5, 0.9, 0.7]), vec![2, 4, 1, 3]);
        assert_eq!(best_to_worst(&[0.9, 0.5, 0.9, 0.7]), vec![1, 3, 4, 2]);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
