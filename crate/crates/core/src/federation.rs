//! FedAvg rounds over a wireless link where individual uplink and downlink
//! transmissions can be destroyed by a jammer.
//!
//! Round `t` (1-based):
//! 1. every ready client trains one local round from its current weights;
//! 2. ready clients upload; jammed uploads never reach the server;
//! 3. the server aggregates what it has (see [`AggregationMode`]); with
//!    nothing to aggregate the previous global model is kept;
//! 4. the server broadcasts to the clients that just uploaded; a client whose
//!    downlink is jammed keeps its own local model.
//!
//! A client with speed `s` is ready once every `s` rounds (first at round `s`).

use std::collections::BTreeSet;

use crate::channel::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, train_round, DesignMatrix, ModelWeights, RmsProp, TrainConfig};
use crate::rng::SimRng;

pub type ClientSet = BTreeSet<usize>;

/// Elementwise arithmetic mean.
pub fn fedavg(models: &[&ModelWeights]) -> Result<ModelWeights> {
    let first = models
        .first()
        .ok_or_else(|| Error::invalid("fedavg of an empty collection"))?;
    let mut acc = vec![0.0; first.param_count()];
    for m in models {
        if m.architecture() != first.architecture() {
            return Err(Error::invalid("fedavg over mismatched architectures"));
        }
        for (a, &p) in acc.iter_mut().zip(m.as_slice()) {
            *a += p;
        }
    }
    let n = models.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    ModelWeights::from_flat(first.architecture().clone(), acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    /// Average only the models received this round.
    PerRound,
    /// Average the most recent model received from every client so far.
    Cached,
}

#[derive(Debug)]
pub struct ClientState {
    /// 1-based.
    pub client_id: usize,
    /// Working weights the next local round starts from.
    pub weights: ModelWeights,
    /// Output of the most recent local training.
    pub local_model: ModelWeights,
    pub dataset: ClientDataset,
    design: DesignMatrix,
    /// Rounds per local update.
    pub speed: usize,
    pub rounds_until_ready: usize,
    pub optimizer: RmsProp,
    rng: SimRng,
}

impl ClientState {
    pub fn new(client_id: usize, weights: ModelWeights, dataset: ClientDataset, speed: usize, rng: SimRng) -> Result<Self> {
        if speed == 0 {
            return Err(Error::invalid(format!("client {client_id}: speed must be >= 1")));
        }
        if dataset.is_empty() {
            return Err(Error::invalid(format!("client {client_id}: empty dataset")));
        }
        let design = DesignMatrix::from_dataset(&dataset, weights.architecture().input_map());
        Ok(ClientState {
            client_id,
            optimizer: RmsProp::new(weights.param_count()),
            local_model: weights.clone(),
            weights,
            dataset,
            design,
            speed,
            rounds_until_ready: speed - 1,
            rng,
        })
    }

    pub fn is_ready(&self) -> bool {
        self.rounds_until_ready == 0
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub train: TrainConfig,
    pub aggregation: AggregationMode,
    /// Zero the RMSprop state whenever a client adopts the global model.
    pub reset_optimizer_on_sync: bool,
    /// Evaluate every client's local model every this many rounds; 0 means
    /// only after the last round.
    pub local_eval_every: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            train: TrainConfig::default(),
            aggregation: AggregationMode::PerRound,
            reset_optimizer_on_sync: false,
            local_eval_every: 0,
        }
    }
}

/// Jamming actions of one round and whether each succeeded.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundJamming {
    pub uplink_attempted: ClientSet,
    pub downlink_attempted: ClientSet,
    pub uplink_jammed: ClientSet,
    pub downlink_jammed: ClientSet,
}

impl RoundJamming {
    pub fn none() -> Self {
        Self::default()
    }

    /// Every attempted jam succeeds.
    pub fn certain(uplink: ClientSet, downlink: ClientSet) -> Self {
        RoundJamming {
            uplink_jammed: uplink.clone(),
            downlink_jammed: downlink.clone(),
            uplink_attempted: uplink,
            downlink_attempted: downlink,
        }
    }

    pub fn actions(&self) -> usize {
        self.uplink_attempted.len() + self.downlink_attempted.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub round_index: usize,
    pub ready: ClientSet,
    pub uplink_delivered: ClientSet,
    pub downlink_delivered: ClientSet,
    pub uplink_jammed: ClientSet,
    pub downlink_jammed: ClientSet,
    pub global_weights: ModelWeights,
    pub global_accuracy: f64,
    /// Accuracy of each client's latest local model on the test set, in
    /// client order, when evaluated this round.
    pub local_accuracies: Option<Vec<f64>>,
    /// Jamming actions spent this round.
    pub budget_spent: usize,
}

pub struct Federation {
    pub clients: Vec<ClientState>,
    pub global: ModelWeights,
    cache: Vec<Option<ModelWeights>>,
    test: DesignMatrix,
    cfg: FederationConfig,
    round: usize,
    planned_rounds: Option<usize>,
}

impl Federation {
    pub fn new(clients: Vec<ClientState>, global: ModelWeights, test: &ClientDataset, cfg: FederationConfig) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("federation needs at least one client"));
        }
        for (i, c) in clients.iter().enumerate() {
            if c.client_id != i + 1 {
                return Err(Error::invalid("clients must be ordered by id starting at 1"));
            }
        }
        if test.is_empty() {
            return Err(Error::invalid("empty test set"));
        }
        cfg.train.validate()?;
        let n = clients.len();
        let test = DesignMatrix::from_dataset(test, global.architecture().input_map());
        Ok(Federation {
            clients,
            global,
            cache: vec![None; n],
            test,
            cfg,
            round: 0,
            planned_rounds: None,
        })
    }

    /// Lets the federation know when the last round is, so local accuracies
    /// get evaluated there.
    pub fn set_planned_rounds(&mut self, rounds: usize) {
        self.planned_rounds = Some(rounds);
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    pub fn test_set(&self) -> &DesignMatrix {
        &self.test
    }

    /// Clients that will train and upload in the next round.
    pub fn ready_clients(&self) -> ClientSet {
        self.clients.iter().filter(|c| c.is_ready()).map(|c| c.client_id).collect()
    }

    pub fn speeds(&self) -> Vec<usize> {
        self.clients.iter().map(|c| c.speed).collect()
    }

    /// The most recent local model of every client.
    pub fn local_models(&self) -> Vec<&ModelWeights> {
        self.clients.iter().map(|c| &c.local_model).collect()
    }

    pub fn local_accuracies(&self) -> Result<Vec<f64>> {
        self.clients.iter().map(|c| evaluate(&c.local_model, &self.test)).collect()
    }

    pub fn global_accuracy(&self) -> Result<f64> {
        evaluate(&self.global, &self.test)
    }

    /// Executes one round under the given jamming outcome.
    pub fn run_round(&mut self, jamming: &RoundJamming) -> Result<RoundOutcome> {
        self.round += 1;
        let ready = self.ready_clients();

        for c in self.clients.iter_mut().filter(|c| c.is_ready()) {
            c.local_model = train_round(&c.weights, &c.design, &self.cfg.train, &mut c.optimizer, &mut c.rng)?;
        }

        let uplink_delivered: ClientSet = ready.difference(&jamming.uplink_jammed).copied().collect();
        match self.cfg.aggregation {
            AggregationMode::PerRound => {
                let received: Vec<&ModelWeights> = uplink_delivered
                    .iter()
                    .map(|&id| &self.clients[id - 1].local_model)
                    .collect();
                if !received.is_empty() {
                    self.global = fedavg(&received)?;
                }
            }
            AggregationMode::Cached => {
                for &id in &uplink_delivered {
                    self.cache[id - 1] = Some(self.clients[id - 1].local_model.clone());
                }
                if !uplink_delivered.is_empty() {
                    let cached: Vec<&ModelWeights> = self.cache.iter().flatten().collect();
                    self.global = fedavg(&cached)?;
                }
            }
        }

        let downlink_delivered: ClientSet = ready.difference(&jamming.downlink_jammed).copied().collect();
        for c in self.clients.iter_mut() {
            if c.is_ready() {
                if downlink_delivered.contains(&c.client_id) {
                    c.weights = self.global.clone();
                    if self.cfg.reset_optimizer_on_sync {
                        c.optimizer = RmsProp::new(c.weights.param_count());
                    }
                } else {
                    c.weights = c.local_model.clone();
                }
                c.rounds_until_ready = c.speed - 1;
            } else {
                c.rounds_until_ready -= 1;
            }
        }

        let evaluate_locals = match (self.cfg.local_eval_every, self.planned_rounds) {
            (0, Some(r)) => self.round == r,
            (0, None) => false,
            (k, Some(r)) => self.round.is_multiple_of(k) || self.round == r,
            (k, None) => self.round.is_multiple_of(k),
        };
        Ok(RoundOutcome {
            round_index: self.round,
            uplink_jammed: ready.intersection(&jamming.uplink_jammed).copied().collect(),
            downlink_jammed: ready.intersection(&jamming.downlink_jammed).copied().collect(),
            ready,
            uplink_delivered,
            downlink_delivered,
            global_weights: self.global.clone(),
            global_accuracy: self.global_accuracy()?,
            local_accuracies: if evaluate_locals { Some(self.local_accuracies()?) } else { None },
            budget_spent: jamming.actions(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_client_dataset, build_test_dataset, table_geometry};
    use crate::model::{init_weights, Architecture};
    use crate::rng::{seeded, substream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_model(arch: &Architecture, rng: &mut SimRng) -> ModelWeights {
        let params = (0..arch.param_count()).map(|_| rng.random_range(-3.0..3.0)).collect();
        ModelWeights::from_flat(arch.clone(), params).unwrap()
    }

    fn small_federation(n: usize, speeds: &[usize], aggregation: AggregationMode) -> Federation {
        let arch = Architecture::sensing_classifier();
        let geo = table_geometry(n);
        let global = init_weights(&arch, &mut seeded(1));
        let clients = geo
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let data = build_client_dataset(g, 40, &mut substream(7, Stream::Data, i as u64)).unwrap();
                ClientState::new(i + 1, global.clone(), data, speeds[i], substream(7, Stream::Training, i as u64)).unwrap()
            })
            .collect();
        let test = build_test_dataset(&geo, 40, &mut seeded(2)).unwrap();
        let cfg = FederationConfig {
            aggregation,
            ..FederationConfig::default()
        };
        Federation::new(clients, global, &test, cfg).unwrap()
    }

    #[test]
    fn fedavg_closed_forms() {
        let arch = Architecture::new(vec![3, 2]).unwrap();
        let a = random_model(&arch, &mut seeded(1));
        assert_eq!(fedavg(&[&a, &a, &a]).unwrap(), a);
        let zero = ModelWeights::zeros(arch.clone());
        let two = ModelWeights::from_flat(arch.clone(), vec![2.0; 8]).unwrap();
        assert_eq!(fedavg(&[&zero, &two]).unwrap().as_slice(), &[1.0; 8]);
        assert!(fedavg(&[]).is_err());
        let other = ModelWeights::zeros(Architecture::new(vec![2, 2]).unwrap());
        assert!(fedavg(&[&zero, &other]).is_err());
    }

    #[test]
    fn fedavg_matches_elementwise_oracle() {
        let arch = Architecture::sensing_classifier();
        let mut rng = seeded(5);
        let ms: Vec<ModelWeights> = (0..3).map(|_| random_model(&arch, &mut rng)).collect();
        let avg = fedavg(&[&ms[0], &ms[1], &ms[2]]).unwrap();
        for i in 0..arch.param_count() {
            let oracle = (ms[0].as_slice()[i] + ms[1].as_slice()[i] + ms[2].as_slice()[i]) / 3.0;
            assert!((avg.as_slice()[i] - oracle).abs() <= 1e-12 * oracle.abs().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn fedavg_is_permutation_invariant(seed in 0u64..1000, k in 1usize..6, shift in 0usize..6) {
            let arch = Architecture::new(vec![4, 3, 2]).unwrap();
            let mut rng = seeded(seed);
            let ms: Vec<ModelWeights> = (0..k).map(|_| random_model(&arch, &mut rng)).collect();
            let fwd: Vec<&ModelWeights> = ms.iter().collect();
            let mut rot = fwd.clone();
            rot.rotate_left(shift % k);
            rot.reverse();
            let (a, b) = (fedavg(&fwd).unwrap(), fedavg(&rot).unwrap());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_attack_round_syncs_everyone() {
        let mut fed = small_federation(4, &[1; 4], AggregationMode::PerRound);
        let out = fed.run_round(&RoundJamming::none()).unwrap();
        assert_eq!(out.uplink_delivered.len(), 4);
        assert_eq!(out.downlink_delivered.len(), 4);
        let expected = fedavg(&fed.local_models()).unwrap();
        assert_eq!(fed.global, expected);
        assert!(fed.clients.iter().all(|c| c.weights == fed.global));
        assert_eq!(out.budget_spent, 0);
    }

    #[test]
    fn all_uplinks_jammed_keeps_global() {
        let mut fed = small_federation(3, &[1; 3], AggregationMode::PerRound);
        let before = fed.global.clone();
        let all: ClientSet = (1..=3).collect();
        let out = fed.run_round(&RoundJamming::certain(all, ClientSet::new())).unwrap();
        assert!(out.uplink_delivered.is_empty());
        assert_eq!(out.global_weights, before);
        assert_eq!(out.budget_spent, 3);
    }

    #[test]
    fn downlink_jam_leaves_client_on_local_model() {
        let mut fed = small_federation(4, &[1; 4], AggregationMode::PerRound);
        let out = fed.run_round(&RoundJamming::certain(ClientSet::new(), [2].into())).unwrap();
        assert_eq!(out.downlink_jammed, [2].into());
        for c in &fed.clients {
            if c.client_id == 2 {
                assert_eq!(c.weights, c.local_model);
                assert_ne!(c.weights, fed.global);
            } else {
                assert_eq!(c.weights, fed.global);
            }
        }
    }

    #[test]
    fn slow_clients_contribute_every_s_rounds() {
        let speeds = [2, 3, 1];
        let mut fed = small_federation(3, &speeds, AggregationMode::Cached);
        let rounds = 13;
        let mut counts = [0usize; 3];
        for _ in 0..rounds {
            for id in fed.run_round(&RoundJamming::none()).unwrap().uplink_delivered {
                counts[id - 1] += 1;
            }
            assert!(fed.clients.iter().all(|c| c.rounds_until_ready < c.speed));
        }
        for (c, s) in counts.iter().zip(speeds) {
            assert_eq!(*c, rounds / s);
        }
    }

    #[test]
    fn cached_mode_reuses_stale_uploads() {
        let mut fed = small_federation(3, &[1; 3], AggregationMode::Cached);
        fed.run_round(&RoundJamming::none()).unwrap();
        let stale = fed.clients[0].local_model.clone();
        fed.run_round(&RoundJamming::certain([1].into(), ClientSet::new())).unwrap();
        let expected = fedavg(&[&stale, &fed.clients[1].local_model, &fed.clients[2].local_model]).unwrap();
        assert_eq!(fed.global, expected);
    }

    #[test]
    fn rounds_are_reproducible() {
        let run = || {
            let mut fed = small_federation(3, &[1; 3], AggregationMode::PerRound);
            (0..3).map(|_| fed.run_round(&RoundJamming::none()).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn local_accuracies_reported_on_schedule() {
        let mut fed = small_federation(2, &[1; 2], AggregationMode::PerRound);
        fed.set_planned_rounds(3);
        let outs: Vec<_> = (0..3).map(|_| fed.run_round(&RoundJamming::none()).unwrap()).collect();
        assert!(outs[0].local_accuracies.is_none());
        assert_eq!(outs[2].local_accuracies.as_ref().unwrap().len(), 2);
    }
}
