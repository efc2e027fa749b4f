//! Client selection for a jammer with a limited per-round budget.
//!
//! The adversary overhears client uploads, averages them into its own estimate
//! of the global model and ranks clients by how far each upload is from that
//! estimate. Far-off clients hurt the average least when removed from the
//! uplink, close clients carry the most useful model and are the best
//! downlink targets. Client ids are 1-based everywhere; ties go to the lower
//! id.

use std::fmt::{self, Write as _};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::federation::{fedavg, ClientSet};
use crate::model::{weight_distance, ModelWeights};
use crate::rng::SimRng;

/// Slack used when comparing accumulated fractional budgets.
const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Uplink,
    Downlink,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        })
    }
}

/// Client ids (1-based) sorted by `key` ascending, ties by id.
fn sorted_ids(scores: &[f64], descending: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (1..=scores.len()).collect();
    ids.sort_by(|&a, &b| {
        let (x, y) = (scores[a - 1], scores[b - 1]);
        let ord = if descending { y.total_cmp(&x) } else { x.total_cmp(&y) };
        ord.then(a.cmp(&b))
    });
    ids
}

fn check_count(m: usize, n: usize) -> Result<()> {
    if m == 0 || m > n {
        return Err(Error::invalid(format!("budget {m} must lie in 1..={n}")));
    }
    Ok(())
}

/// Per-client divergence and the clients ordered by it, largest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRanking {
    d: Vec<f64>,
    order: Vec<usize>,
}

impl DivergenceRanking {
    pub fn from_scores(d: Vec<f64>) -> Result<Self> {
        if d.is_empty() {
            return Err(Error::invalid("ranking needs at least one client"));
        }
        if d.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("divergences must be finite and >= 0"));
        }
        let order = sorted_ids(&d, true);
        Ok(DivergenceRanking { d, order })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    /// Largest divergence first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Smallest divergence first, ties by id.
    pub fn ascending(&self) -> Vec<usize> {
        sorted_ids(&self.d, false)
    }

    /// The walk order used for `direction`.
    pub fn order_for(&self, direction: Direction) -> Vec<usize> {
        match direction {
            Direction::Uplink => self.order.clone(),
            Direction::Downlink => self.ascending(),
        }
    }
}

/// Ranks clients by the distance of their overheard model from the FedAvg
/// of all overheard models. Every client must have been overheard.
pub fn observe_and_rank(overheard: &[Option<&ModelWeights>]) -> Result<DivergenceRanking> {
    let models = overheard
        .iter()
        .enumerate()
        .map(|(i, m)| m.ok_or(Error::IncompleteObservation(i + 1)))
        .collect::<Result<Vec<_>>>()?;
    let center = fedavg(&models)?;
    let d = models
        .iter()
        .map(|m| weight_distance(m, &center))
        .collect::<Result<Vec<_>>>()?;
    DivergenceRanking::from_scores(d)
}

/// The `m` clients with the largest divergence.
pub fn select_uplink(ranking: &DivergenceRanking, m: usize) -> Result<ClientSet> {
    check_count(m, ranking.len())?;
    Ok(ranking.order[..m].iter().copied().collect())
}

/// The `m` clients with the smallest divergence.
pub fn select_downlink(ranking: &DivergenceRanking, m: usize) -> Result<ClientSet> {
    check_count(m, ranking.len())?;
    Ok(ranking.ascending()[..m].iter().copied().collect())
}

/// Selection from known local accuracies: the least accurate clients on the
/// uplink, the most accurate on the downlink.
pub fn select_idealized(local_accuracies: &[f64], m: usize, direction: Direction) -> Result<ClientSet> {
    check_count(m, local_accuracies.len())?;
    if local_accuracies.iter().any(|a| !a.is_finite()) {
        return Err(Error::invalid("accuracies must be finite"));
    }
    let order = sorted_ids(local_accuracies, direction == Direction::Downlink);
    Ok(order[..m].iter().copied().collect())
}

/// Probability that a jam on each client's link succeeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuccessProfile {
    pub p_uplink: Vec<f64>,
    pub p_downlink: Vec<f64>,
}

/// Per-client uplink success probabilities of the reference deployment.
pub const DEFAULT_SUCCESS: [f64; 10] = [0.8269, 0.9695, 0.9528, 0.8510, 0.8991, 0.8899, 0.9303, 0.9577, 0.8188, 0.8057];

impl SuccessProfile {
    pub fn new(p_uplink: Vec<f64>, p_downlink: Vec<f64>) -> Result<Self> {
        if p_uplink.len() != p_downlink.len() {
            return Err(Error::invalid("uplink and downlink profiles differ in length"));
        }
        if let Some(p) = p_uplink.iter().chain(&p_downlink).find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::invalid(format!("success probability {p} outside (0, 1]")));
        }
        Ok(SuccessProfile { p_uplink, p_downlink })
    }

    /// The reference profile for the first `n` clients (repeating past ten),
    /// same values on both directions.
    pub fn reference(n: usize) -> Self {
        let p: Vec<f64> = (0..n).map(|i| DEFAULT_SUCCESS[i % DEFAULT_SUCCESS.len()]).collect();
        SuccessProfile {
            p_uplink: p.clone(),
            p_downlink: p,
        }
    }

    pub fn uniform(n: usize, p: f64) -> Result<Self> {
        Self::new(vec![p; n], vec![p; n])
    }

    pub fn len(&self) -> usize {
        self.p_uplink.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_uplink.is_empty()
    }

    pub fn get(&self, direction: Direction) -> &[f64] {
        match direction {
            Direction::Uplink => &self.p_uplink,
            Direction::Downlink => &self.p_downlink,
        }
    }
}

fn check_profile(ranking: &DivergenceRanking, profile: &SuccessProfile) -> Result<()> {
    if profile.len() != ranking.len() {
        return Err(Error::config(
            "success_profile",
            format!("{} probabilities for {} clients", profile.len(), ranking.len()),
        ));
    }
    Ok(())
}

/// Expected drop in mean divergence of the surviving uploads when client `i`
/// is jammed: `p_i (d_i - mean(d))`, one entry per client.
pub fn uplink_prob_scores(ranking: &DivergenceRanking, profile: &SuccessProfile) -> Result<Vec<f64>> {
    check_profile(ranking, profile)?;
    let mean = ranking.d.iter().sum::<f64>() / ranking.len() as f64;
    Ok(ranking.d.iter().zip(&profile.p_uplink).map(|(d, p)| p * (d - mean)).collect())
}

/// Top `m` clients by [`uplink_prob_scores`].
pub fn select_uplink_prob(ranking: &DivergenceRanking, profile: &SuccessProfile, m: usize) -> Result<ClientSet> {
    check_count(m, ranking.len())?;
    let scores = uplink_prob_scores(ranking, profile)?;
    Ok(sorted_ids(&scores, true)[..m].iter().copied().collect())
}

/// Bottom `m` clients by `d_i / p_i`.
pub fn select_downlink_prob(ranking: &DivergenceRanking, profile: &SuccessProfile, m: usize) -> Result<ClientSet> {
    check_count(m, ranking.len())?;
    check_profile(ranking, profile)?;
    let ratio: Vec<f64> = ranking.d.iter().zip(&profile.p_downlink).map(|(d, p)| d / p).collect();
    Ok(sorted_ids(&ratio, false)[..m].iter().copied().collect())
}

/// Average jams per round `m` and the per-round cap `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackBudget {
    pub m: f64,
    pub k: usize,
}

impl AttackBudget {
    pub fn new(m: f64, k: usize, n_clients: usize) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::config("M", "must be > 0"));
        }
        if (k as f64) < m.ceil() || k > n_clients {
            return Err(Error::config("K", format!("must satisfy ceil(M) <= K <= {n_clients}")));
        }
        Ok(AttackBudget { m, k })
    }
}

/// Per-round jamming targets over the rounds `1..=rounds()`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackPlan {
    /// First round in which any target may be attacked.
    pub start_round: usize,
    uplink: Vec<ClientSet>,
    downlink: Vec<ClientSet>,
    /// Clients the planner committed to, per direction.
    pub selected_uplink: ClientSet,
    pub selected_downlink: ClientSet,
    /// Average jams per round the planner committed to (sum of `1/s_i` over
    /// selected clients for speed-aware planning).
    pub committed_budget: f64,
}

fn empty_schedule(rounds: usize) -> Vec<ClientSet> {
    vec![ClientSet::new(); rounds]
}

impl AttackPlan {
    pub fn idle(rounds: usize) -> Self {
        AttackPlan {
            start_round: rounds + 1,
            uplink: empty_schedule(rounds),
            downlink: empty_schedule(rounds),
            ..Default::default()
        }
    }

    /// Attacks `set` in `direction` in every round from `start_round`.
    pub fn fixed(set: ClientSet, direction: Direction, start_round: usize, rounds: usize) -> Self {
        Self::periodic(set, &[], direction, start_round, rounds)
    }

    /// Attacks each client of `set` from `start_round` on, but only in rounds
    /// where it transmits: client `i` with speed `s_i` is active in rounds
    /// that are multiples of `s_i`. An empty `speeds` means all ones.
    pub fn periodic(set: ClientSet, speeds: &[usize], direction: Direction, start_round: usize, rounds: usize) -> Self {
        let speed = |id: usize| speeds.get(id - 1).copied().unwrap_or(1).max(1);
        let mut schedule = empty_schedule(rounds);
        for (t, slot) in schedule.iter_mut().enumerate().map(|(i, s)| (i + 1, s)) {
            if t >= start_round {
                *slot = set.iter().copied().filter(|&id| t % speed(id) == 0).collect();
            }
        }
        let committed = set.iter().map(|&id| 1.0 / speed(id) as f64).sum();
        Self::from_schedule(schedule, set, direction, start_round, committed)
    }

    fn from_schedule(schedule: Vec<ClientSet>, selected: ClientSet, direction: Direction, start_round: usize, committed: f64) -> Self {
        let rounds = schedule.len();
        let mut plan = AttackPlan {
            start_round,
            committed_budget: committed,
            ..Self::idle(rounds)
        };
        plan.start_round = start_round;
        match direction {
            Direction::Uplink => {
                plan.uplink = schedule;
                plan.selected_uplink = selected;
            }
            Direction::Downlink => {
                plan.downlink = schedule;
                plan.selected_downlink = selected;
            }
        }
        plan
    }

    /// A plan from explicit per-round target sets (index 0 is round 1).
    pub fn from_rounds(start_round: usize, uplink: Vec<ClientSet>, downlink: Vec<ClientSet>, committed_budget: f64) -> Result<Self> {
        if uplink.len() != downlink.len() {
            return Err(Error::invalid("uplink and downlink schedules differ in length"));
        }
        let union = |s: &[ClientSet]| s.iter().flatten().copied().collect::<ClientSet>();
        Ok(AttackPlan {
            start_round,
            selected_uplink: union(&uplink),
            selected_downlink: union(&downlink),
            uplink,
            downlink,
            committed_budget,
        })
    }

    /// Merges an uplink-only and a downlink-only plan over the same horizon.
    pub fn combine(uplink: AttackPlan, downlink: AttackPlan) -> Result<Self> {
        if uplink.rounds() != downlink.rounds() {
            return Err(Error::invalid("plans cover different horizons"));
        }
        Ok(AttackPlan {
            start_round: uplink.start_round.min(downlink.start_round),
            committed_budget: uplink.committed_budget + downlink.committed_budget,
            uplink: uplink.uplink,
            downlink: downlink.downlink,
            selected_uplink: uplink.selected_uplink,
            selected_downlink: downlink.selected_downlink,
        })
    }

    pub fn rounds(&self) -> usize {
        self.uplink.len()
    }

    pub fn uplink_targets(&self, round: usize) -> &ClientSet {
        &self.uplink[round - 1]
    }

    pub fn downlink_targets(&self, round: usize) -> &ClientSet {
        &self.downlink[round - 1]
    }

    /// Jams attempted in `round`.
    pub fn actions(&self, round: usize) -> usize {
        self.uplink[round - 1].len() + self.downlink[round - 1].len()
    }

    /// Mean attempted jams per round over the attack window
    /// `start_round..=rounds()`; zero when the window is empty.
    pub fn mean_actions(&self) -> f64 {
        let window: Vec<usize> = (self.start_round.max(1)..=self.rounds()).collect();
        if window.is_empty() {
            return 0.0;
        }
        window.iter().map(|&t| self.actions(t)).sum::<usize>() as f64 / window.len() as f64
    }

    /// Audit listing: a comment header then `round,uplink,downlink,budget`
    /// with ids joined by `;`.
    pub fn dump(&self) -> String {
        let ids = |s: &ClientSet| s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";");
        let mut out = format!(
            "# start_round {} committed_budget {} selected_uplink {} selected_downlink {}\nround,uplink_targets,downlink_targets,budget\n",
            self.start_round,
            self.committed_budget,
            if self.selected_uplink.is_empty() { "-".into() } else { ids(&self.selected_uplink) },
            if self.selected_downlink.is_empty() { "-".into() } else { ids(&self.selected_downlink) },
        );
        for t in 1..=self.rounds() {
            let _ = writeln!(out, "{t},{},{},{}", ids(&self.uplink[t - 1]), ids(&self.downlink[t - 1]), self.actions(t));
        }
        out
    }
}

/// Dynamic budget: every round each of the top-`k` clients (in the
/// direction's order) is attacked independently with probability `m / k`.
pub fn plan_dynamic(
    ranking: &DivergenceRanking,
    budget: AttackBudget,
    direction: Direction,
    start_round: usize,
    rounds: usize,
    rng: &mut SimRng,
) -> Result<AttackPlan> {
    if budget.m > budget.k as f64 {
        return Err(Error::invalid("M must not exceed K"));
    }
    check_count(budget.k, ranking.len())?;
    let top: Vec<usize> = ranking.order_for(direction)[..budget.k].to_vec();
    let q = budget.m / budget.k as f64;
    let mut schedule = empty_schedule(rounds);
    for (t, slot) in schedule.iter_mut().enumerate().map(|(i, s)| (i + 1, s)) {
        if t >= start_round {
            // Draw for every candidate so that the stream position does not
            // depend on earlier outcomes.
            *slot = top.iter().copied().filter(|_| rng.random::<f64>() < q).collect();
        }
    }
    Ok(AttackPlan::from_schedule(schedule, top.into_iter().collect(), direction, start_round, budget.m))
}

/// Greedy walk over `order`: client `i` joins while the running sum of
/// `1/s_i` stays within `m`; a client that does not fit is skipped and the
/// walk continues. Returns the chosen set and its budget.
pub fn greedy_by_speed(order: &[usize], speeds: &[usize], m: f64) -> Result<(ClientSet, f64)> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::invalid("budget M must be > 0"));
    }
    if let Some(&id) = order.iter().find(|&&id| id == 0 || id > speeds.len()) {
        return Err(Error::invalid(format!("client {id} has no speed")));
    }
    if speeds.contains(&0) {
        return Err(Error::invalid("speeds must be >= 1"));
    }
    let mut chosen = ClientSet::new();
    let mut used = 0.0;
    for &id in order {
        let cost = 1.0 / speeds[id - 1] as f64;
        if used + cost <= m + BUDGET_TOL {
            chosen.insert(id);
            used += cost;
        }
    }
    Ok((chosen, used))
}

/// First round of attack for speed-aware planning: `s * max(speeds) + 1`.
pub fn speed_aware_start(observe_rounds: usize, speeds: &[usize]) -> usize {
    observe_rounds * speeds.iter().copied().max().unwrap_or(1) + 1
}

/// Speed-aware selection: greedy over the direction's ranking with cost
/// `1/s_i`; selected clients are attacked only when they transmit.
pub fn plan_speed_aware(
    ranking: &DivergenceRanking,
    speeds: &[usize],
    m: f64,
    direction: Direction,
    start_round: usize,
    rounds: usize,
) -> Result<AttackPlan> {
    if speeds.len() != ranking.len() {
        return Err(Error::invalid("one speed per client required"));
    }
    let (set, _) = greedy_by_speed(&ranking.order_for(direction), speeds, m)?;
    Ok(AttackPlan::periodic(set, speeds, direction, start_round, rounds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Benchmark {
    /// Speed-unaware: top `floor(M)` ranked clients jammed every round.
    A1,
    /// Fast clients first, then slow, each group in ranking order.
    A2,
    /// Slow clients first, then fast.
    A3,
    /// Random order, speed-aware accounting.
    A4,
    /// Divergence only, ignoring success probabilities.
    A5,
    /// Highest success probability only.
    A6,
    /// Random clients.
    A7,
}

impl Benchmark {
    pub const ALL: [Benchmark; 7] = [
        Benchmark::A1,
        Benchmark::A2,
        Benchmark::A3,
        Benchmark::A4,
        Benchmark::A5,
        Benchmark::A6,
        Benchmark::A7,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.to_string().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Inputs a benchmark planner may need.
pub struct BenchmarkContext<'a> {
    pub ranking: Option<&'a DivergenceRanking>,
    pub speeds: Option<&'a [usize]>,
    pub profile: Option<&'a SuccessProfile>,
    pub rng: Option<&'a mut SimRng>,
    pub n_clients: usize,
    pub start_round: usize,
    pub rounds: usize,
}

fn need<T>(v: Option<T>, field: &str) -> Result<T> {
    v.ok_or_else(|| Error::config(field, "required by this benchmark"))
}

/// Plans one direction of a benchmark attack with average budget `m`.
pub fn plan_benchmark(kind: Benchmark, ctx: BenchmarkContext<'_>, m: f64, direction: Direction) -> Result<AttackPlan> {
    if !(m.is_finite() && m > 0.0) {
        return Err(Error::config("M", "must be > 0"));
    }
    let n = ctx.n_clients;
    let ones = vec![1usize; n];
    let speeds: &[usize] = ctx.speeds.unwrap_or(&ones);
    if speeds.len() != n {
        return Err(Error::config("speeds", format!("expected {n} entries")));
    }
    let whole = (m.floor() as usize).min(n);
    let (start, rounds) = (ctx.start_round, ctx.rounds);
    match kind {
        Benchmark::A1 => {
            let ranking = need(ctx.ranking, "ranking")?;
            let set: ClientSet = ranking.order_for(direction)[..whole].iter().copied().collect();
            Ok(AttackPlan::periodic(set, &[], direction, start, rounds))
        }
        Benchmark::A2 | Benchmark::A3 => {
            let ranking = need(ctx.ranking, "ranking")?;
            need(ctx.speeds, "speeds")?;
            let order = ranking.order_for(direction);
            let fast_first = kind == Benchmark::A2;
            let (mut first, second): (Vec<usize>, Vec<usize>) =
                order.into_iter().partition(|&id| (speeds[id - 1] == 1) == fast_first);
            first.extend(second);
            let (set, _) = greedy_by_speed(&first, speeds, m)?;
            Ok(AttackPlan::periodic(set, speeds, direction, start, rounds))
        }
        Benchmark::A4 | Benchmark::A7 => {
            let rng = need(ctx.rng, "rng")?;
            let mut order: Vec<usize> = (1..=n).collect();
            order.shuffle(rng);
            let (set, _) = greedy_by_speed(&order, speeds, m)?;
            Ok(AttackPlan::periodic(set, speeds, direction, start, rounds))
        }
        Benchmark::A5 => {
            let ranking = need(ctx.ranking, "ranking")?;
            let set: ClientSet = ranking.order_for(direction)[..whole].iter().copied().collect();
            Ok(AttackPlan::periodic(set, speeds, direction, start, rounds))
        }
        Benchmark::A6 => {
            let profile = need(ctx.profile, "success_profile")?;
            if profile.len() != n {
                return Err(Error::config("success_profile", format!("expected {n} entries")));
            }
            let set: ClientSet = sorted_ids(profile.get(direction), true)[..whole].iter().copied().collect();
            Ok(AttackPlan::periodic(set, speeds, direction, start, rounds))
        }
    }
}

/// Spectrum-access decisions of every client on shared probe events, with
/// the true channel state of each event.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLog {
    pub truth: Vec<usize>,
    /// `decisions[i][e]`: client `i + 1`'s decision on event `e`.
    pub decisions: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyEstimate {
    /// Agreement rate with the truth per client.
    pub rates: Vec<f64>,
    /// Client ids, highest rate first.
    pub order: Vec<usize>,
}

impl AccuracyEstimate {
    /// Turns estimated accuracies into a divergence-style ranking (`1 - rate`)
    /// so that the usual selectors apply.
    pub fn as_ranking(&self) -> Result<DivergenceRanking> {
        DivergenceRanking::from_scores(self.rates.iter().map(|r| 1.0 - r).collect())
    }
}

/// Estimates each client's accuracy from its first `probe_count` decisions.
pub fn estimate_rank_from_actions(log: &ActionLog, probe_count: usize) -> Result<AccuracyEstimate> {
    if probe_count == 0 {
        return Err(Error::invalid("probe_count must be >= 1"));
    }
    if log.truth.len() < probe_count {
        return Err(Error::invalid(format!("only {} probe events recorded", log.truth.len())));
    }
    let mut rates = Vec::with_capacity(log.decisions.len());
    for (i, d) in log.decisions.iter().enumerate() {
        if d.len() < probe_count {
            return Err(Error::IncompleteObservation(i + 1));
        }
        let hits = d[..probe_count].iter().zip(&log.truth).filter(|(a, b)| a == b).count();
        rates.push(hits as f64 / probe_count as f64);
    }
    let order = sorted_ids(&rates, true);
    Ok(AccuracyEstimate { rates, order })
}
