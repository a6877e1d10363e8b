//! Federated round mechanics: client sampling, local SGD, weighted
//! aggregation, and the server update rule.
//!
//! The delta convention is `delta = initial - final`, so the server applies
//! an aggregate with `w <- w - delta` and moves toward the client optima.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, ModelParams, ModelSpec, WeightDelta};
use crate::partition::ClientDataset;
use crate::rng;

/// Local training settings for every client.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub batch_size: usize,
    pub local_epochs: usize,
    pub learning_rate: f64,
}

impl ClientConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size < 1 {
            bad.push(format!(
                "client.batch_size: must be >= 1, got {}",
                self.batch_size
            ));
        }
        if self.local_epochs < 1 {
            bad.push(format!(
                "client.local_epochs: must be >= 1, got {}",
                self.local_epochs
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!(
                "client.learning_rate: must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        Error::check_config(bad)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServerOptKind {
    Plain,
    Momentum,
    Nesterov,
}

impl std::fmt::Display for ServerOptKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            ServerOptKind::Plain => "plain",
            ServerOptKind::Momentum => "momentum",
            ServerOptKind::Nesterov => "nesterov",
        };
        f.write_str(name)
    }
}

/// Server-side optimizer settings. `beta` is the momentum decay; the server
/// learning rate defaults to 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerOptimizerConfig {
    pub kind: ServerOptKind,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_server_lr")]
    pub server_lr: f64,
}

fn default_server_lr() -> f64 {
    1.0
}

impl ServerOptimizerConfig {
    pub fn plain() -> Self {
        ServerOptimizerConfig {
            kind: ServerOptKind::Plain,
            beta: 0.0,
            server_lr: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            bad.push(format!(
                "server.beta: must satisfy 0 <= beta < 1, got {}",
                self.beta
            ));
        }
        if self.kind == ServerOptKind::Plain && self.beta != 0.0 {
            bad.push(format!(
                "server.beta: kind = plain requires beta = 0, got {}",
                self.beta
            ));
        }
        if !(self.server_lr > 0.0 && self.server_lr.is_finite()) {
            bad.push(format!(
                "server.server_lr: must be finite and > 0, got {}",
                self.server_lr
            ));
        }
        Error::check_config(bad)
    }
}

/// Global model state carried across rounds. The momentum buffer starts at
/// zero and keeps the same layout as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub params: ModelParams,
    pub velocity: WeightDelta,
    pub round: u64,
}

impl ServerState {
    pub fn new(params: ModelParams) -> Self {
        let velocity = WeightDelta::zeros(params.len());
        ServerState {
            params,
            velocity,
            round: 0,
        }
    }
}

/// Chooses `round(fraction * n_clients)` distinct client ids for a round,
/// uniformly without replacement, deterministic in `(seed, round)`.
/// Ids are returned in ascending order, the canonical aggregation order.
pub fn sample_clients(
    n_clients: usize,
    fraction: f64,
    round: u64,
    seed: u64,
) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "run.fraction: must satisfy 0 < C <= 1, got {fraction}"
        )));
    }
    let count = (fraction * n_clients as f64).round() as usize;
    if count == 0 {
        return Err(Error::InvalidConfig(format!(
            "run.fraction: C = {fraction} of {n_clients} clients rounds to zero participants"
        )));
    }
    let mut ids: Vec<usize> = (0..n_clients).collect();
    let mut stream = rng::stream(rng::derive_seed(&[seed, round]));
    let (selected, _) = ids.partial_shuffle(&mut stream, count);
    let mut selected = selected.to_vec();
    selected.sort_unstable();
    Ok(selected)
}

/// What one client reports back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub delta: WeightDelta,
    pub num_examples: usize,
    pub mean_loss: f64,
}

/// Shuffled minibatch plan for one epoch: positions `0..n` permuted and cut
/// into `batch_size` chunks, keeping the final partial chunk.
pub(crate) fn epoch_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut positions: Vec<usize> = (0..n).collect();
    positions.shuffle(rng);
    positions.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Runs `local_epochs` of minibatch SGD from `global` on one client's data
/// and returns `delta = global - local` along with the example count.
///
/// A non-finite loss or parameter aborts with [`Error::Diverged`].
pub fn client_update<R: Rng + ?Sized>(
    spec: &ModelSpec,
    global: &ModelParams,
    dataset: &Dataset,
    client: &ClientDataset,
    cfg: &ClientConfig,
    rng: &mut R,
) -> Result<ClientUpdate> {
    cfg.validate()?;
    if client.is_empty() {
        return Err(Error::InvalidData(format!(
            "client {} holds no examples",
            client.client_id
        )));
    }

    let mut params = global.clone();
    let mut loss_sum = 0.0;
    let mut steps = 0usize;
    let mut batch_indices = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.local_epochs {
        for positions in epoch_batches(client.len(), cfg.batch_size, rng) {
            batch_indices.clear();
            batch_indices.extend(positions.iter().map(|&p| client.example_indices[p]));
            let batch = dataset.gather_batch(&batch_indices);
            let (loss, grad) = loss_and_grad(spec, &params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    context: format!(
                        "client {} epoch {epoch} step {steps}: loss = {loss}",
                        client.client_id
                    ),
                });
            }
            params.step(cfg.learning_rate, &grad);
            loss_sum += loss;
            steps += 1;
        }
    }
    let delta = global.sub(&params);
    if !delta.all_finite() {
        return Err(Error::Diverged {
            context: format!(
                "client {}: non-finite parameters after local training",
                client.client_id
            ),
        });
    }
    Ok(ClientUpdate {
        client_id: client.client_id,
        delta,
        num_examples: client.len(),
        mean_loss: loss_sum / steps as f64,
    })
}

/// Example-count weighted average of client deltas.
///
/// Updates are reduced in ascending client-id order regardless of input
/// order, so the result is bitwise reproducible under any scheduling.
pub fn aggregate(updates: &[ClientUpdate]) -> Result<WeightDelta> {
    if updates.is_empty() {
        return Err(Error::InvalidData(
            "cannot aggregate zero client updates".into(),
        ));
    }
    let len = updates[0].delta.len();
    if let Some(bad) = updates.iter().find(|u| u.delta.len() != len) {
        return Err(Error::DimensionMismatch(format!(
            "client {} delta has length {}, expected {len}",
            bad.client_id,
            bad.delta.len()
        )));
    }
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&i| updates[i].client_id);
    for pair in order.windows(2) {
        if updates[pair[0]].client_id == updates[pair[1]].client_id {
            return Err(Error::InvalidData(format!(
                "duplicate client id {} in aggregation",
                updates[pair[0]].client_id
            )));
        }
    }
    let total: usize = updates.iter().map(|u| u.num_examples).sum();
    if total == 0 {
        return Err(Error::InvalidData("aggregation weights sum to zero".into()));
    }
    let mut result = WeightDelta::zeros(len);
    for &i in &order {
        let weight = updates[i].num_examples as f64 / total as f64;
        result.scaled_add(weight, &updates[i].delta);
    }
    Ok(result)
}

/// Applies one aggregated delta to the server state.
///
/// * plain:    `w <- w - lr * d`
/// * momentum: `v <- beta v + d;  w <- w - lr * v`
/// * nesterov: `v <- beta v + d;  w <- w - lr * (beta v + d)` (look-ahead)
pub fn server_step(
    state: &ServerState,
    delta: &WeightDelta,
    cfg: &ServerOptimizerConfig,
) -> Result<ServerState> {
    cfg.validate()?;
    if delta.len() != state.params.len() {
        return Err(Error::DimensionMismatch(format!(
            "delta length {} does not match parameter length {}",
            delta.len(),
            state.params.len()
        )));
    }
    let mut params = state.params.clone();
    let mut velocity = state.velocity.clone();
    match cfg.kind {
        ServerOptKind::Plain => {
            params.step(cfg.server_lr, delta);
        }
        ServerOptKind::Momentum => {
            velocity.scale(cfg.beta);
            velocity.scaled_add(1.0, delta);
            params.step(cfg.server_lr, &velocity);
        }
        ServerOptKind::Nesterov => {
            velocity.scale(cfg.beta);
            velocity.scaled_add(1.0, delta);
            let mut lookahead = velocity.clone();
            lookahead.scale(cfg.beta);
            lookahead.scaled_add(1.0, delta);
            params.step(cfg.server_lr, &lookahead);
        }
    }
    if !params.all_finite() || !velocity.all_finite() {
        return Err(Error::Diverged {
            context: format!(
                "round {}: non-finite server state after update",
                state.round + 1
            ),
        });
    }
    Ok(ServerState {
        params,
        velocity,
        round: state.round + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::model::init_params;
    use crate::partition::{synthesize_population, PriorDistribution};

    fn task() -> (ModelSpec, Dataset, ClientDataset) {
        let spec = ModelSpec {
            input_dim: 6,
            num_classes: 3,
            hidden_dim: 0,
            weight_decay: 0.0,
        };
        let synth = SyntheticSpec {
            num_classes: 3,
            input_dim: 6,
            train_per_class: 40,
            test_per_class: 10,
            separation: 2.0,
            noise: 1.0,
            seed: 3,
            pair_angle_degrees: 90.0,
        };
        let (train, _) = generate_synthetic(&synth).unwrap();
        let prior = PriorDistribution::uniform(3);
        let pop = synthesize_population(train.labels(), 1, 120, 1.0, &prior, 4).unwrap();
        (spec, train, pop.clients.into_iter().next().unwrap())
    }

    #[test]
    fn sampling_returns_expected_counts() {
        let ids = sample_clients(100, 0.05, 3, 9).unwrap();
        assert_eq!(ids.len(), 5);
        let mut unique = ids.clone();
        unique.dedup();
        assert_eq!(unique.len(), 5);

        let all = sample_clients(100, 1.0, 0, 9).unwrap();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_is_deterministic_per_round() {
        let a = sample_clients(50, 0.2, 7, 123).unwrap();
        let b = sample_clients(50, 0.2, 7, 123).unwrap();
        assert_eq!(a, b);
        let c = sample_clients(50, 0.2, 8, 123).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sampling_rejects_empty_rounds() {
        assert!(sample_clients(100, 0.001, 0, 0).is_err());
        assert!(sample_clients(100, 0.0, 0, 0).is_err());
        assert!(sample_clients(100, 1.5, 0, 0).is_err());
    }

    #[test]
    fn epoch_batches_cover_all_positions_with_partial_tail() {
        let mut stream = rng::stream(0);
        let batches = epoch_batches(500, 64, &mut stream);
        assert_eq!(batches.len(), 8);
        let sizes: Vec<usize> = batches.iter().map(|b| b.len()).collect();
        assert_eq!(sizes, vec![64, 64, 64, 64, 64, 64, 64, 52]);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..500).collect::<Vec<_>>());
    }

    #[test]
    fn zero_learning_rate_gives_zero_delta() {
        let (spec, train, client) = task();
        let global = init_params(&spec, 5).unwrap();
        let cfg = ClientConfig {
            batch_size: 32,
            local_epochs: 2,
            learning_rate: 0.0,
        };
        let mut stream = rng::stream(6);
        let update = client_update(&spec, &global, &train, &client, &cfg, &mut stream).unwrap();
        assert!(update.delta.values.iter().all(|&v| v == 0.0));
        assert_eq!(update.num_examples, 120);
    }

    #[test]
    fn single_step_delta_matches_scaled_gradient() {
        let (spec, train, client) = task();
        let global = init_params(&spec, 8).unwrap();
        // One epoch, one full batch: delta must equal lr * grad(global).
        let cfg = ClientConfig {
            batch_size: 200,
            local_epochs: 1,
            learning_rate: 0.05,
        };
        let mut stream = rng::stream(9);
        let update = client_update(&spec, &global, &train, &client, &cfg, &mut stream).unwrap();

        let batch = train.gather_batch(&client.example_indices);
        let (_, grad) = loss_and_grad(&spec, &global, &batch).unwrap();
        for (d, g) in update.delta.values.iter().zip(&grad.values) {
            assert!((d - 0.05 * g).abs() < 1e-12, "{d} vs {}", 0.05 * g);
        }
    }

    #[test]
    fn divergence_is_reported_as_such() {
        let (spec, train, client) = task();
        let global = init_params(&spec, 8).unwrap();
        let cfg = ClientConfig {
            batch_size: 16,
            local_epochs: 3,
            learning_rate: 1e12,
        };
        let mut stream = rng::stream(10);
        match client_update(&spec, &global, &train, &client, &cfg, &mut stream) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    fn scalar_update(id: usize, value: f64, n: usize) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            delta: WeightDelta {
                values: vec![value],
            },
            num_examples: n,
            mean_loss: 0.0,
        }
    }

    #[test]
    fn aggregate_single_client_is_identity() {
        let update = scalar_update(3, 1.75, 10);
        let agg = aggregate(std::slice::from_ref(&update)).unwrap();
        assert_eq!(agg, update.delta);
    }

    #[test]
    fn aggregate_weighted_mean_example() {
        let agg = aggregate(&[scalar_update(0, 1.0, 300), scalar_update(1, 2.0, 100)]).unwrap();
        assert_eq!(agg.values, vec![1.25]);
    }

    #[test]
    fn aggregate_of_equal_deltas_is_that_delta() {
        let updates: Vec<ClientUpdate> = (0..5).map(|i| scalar_update(i, -0.375, 13 + i)).collect();
        let agg = aggregate(&updates).unwrap();
        assert!((agg.values[0] - (-0.375)).abs() < 1e-12);
    }

    #[test]
    fn aggregate_canonicalizes_input_order() {
        let a = scalar_update(0, 0.1, 7);
        let b = scalar_update(1, 0.9, 11);
        let c = scalar_update(2, -0.4, 5);
        let forward = aggregate(&[a.clone(), b.clone(), c.clone()]).unwrap();
        let permuted = aggregate(&[c, a, b]).unwrap();
        assert_eq!(forward.values[0].to_bits(), permuted.values[0].to_bits());
    }

    #[test]
    fn aggregate_rejects_bad_input() {
        assert!(aggregate(&[]).is_err());
        let a = scalar_update(0, 0.1, 7);
        let mut b = scalar_update(0, 0.2, 8); // duplicate id
        assert!(aggregate(&[a.clone(), b.clone()]).is_err());
        b.client_id = 1;
        b.delta = WeightDelta::zeros(2); // layout mismatch
        assert!(aggregate(&[a, b]).is_err());
    }

    fn unit_state(n: usize) -> ServerState {
        ServerState::new(ModelParams {
            values: vec![0.0; n],
        })
    }

    fn unit_delta(v: f64) -> WeightDelta {
        WeightDelta { values: vec![v] }
    }

    #[test]
    fn beta_zero_collapses_every_kind_to_plain() {
        let delta = unit_delta(0.625);
        let plain = ServerOptimizerConfig::plain();
        let momentum = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta: 0.0,
            server_lr: 1.0,
        };
        let nesterov = ServerOptimizerConfig {
            kind: ServerOptKind::Nesterov,
            beta: 0.0,
            server_lr: 1.0,
        };
        let mut states = [unit_state(1), unit_state(1), unit_state(1)];
        for _ in 0..50 {
            states[0] = server_step(&states[0], &delta, &plain).unwrap();
            states[1] = server_step(&states[1], &delta, &momentum).unwrap();
            states[2] = server_step(&states[2], &delta, &nesterov).unwrap();
            let w0 = states[0].params.values[0].to_bits();
            assert_eq!(w0, states[1].params.values[0].to_bits());
            assert_eq!(w0, states[2].params.values[0].to_bits());
        }
    }

    #[test]
    fn momentum_recurrence_first_two_rounds() {
        let cfg = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta: 0.9,
            server_lr: 1.0,
        };
        let s0 = unit_state(1);
        let s1 = server_step(&s0, &unit_delta(1.0), &cfg).unwrap();
        assert_eq!(s1.params.values[0], -1.0); // step of 1.0
        assert_eq!(s1.velocity.values[0], 1.0);
        let s2 = server_step(&s1, &unit_delta(1.0), &cfg).unwrap();
        assert!((s2.velocity.values[0] - 1.9).abs() < 1e-15);
        assert!((s2.params.values[0] - (-2.9)).abs() < 1e-15); // second step of 1.9
        assert_eq!(s2.round, 2);
    }

    #[test]
    fn nesterov_first_step_uses_lookahead() {
        let cfg = ServerOptimizerConfig {
            kind: ServerOptKind::Nesterov,
            beta: 0.9,
            server_lr: 1.0,
        };
        let s0 = unit_state(1);
        let s1 = server_step(&s0, &unit_delta(1.0), &cfg).unwrap();
        // v1 = 1; step = 0.9 * 1 + 1 = 1.9.
        assert!((s1.params.values[0] - (-1.9)).abs() < 1e-15);
        assert_eq!(s1.velocity.values[0], 1.0);
    }

    #[test]
    fn momentum_buffer_stays_within_geometric_bound() {
        // With |delta| <= G the buffer satisfies |v| <= G / (1 - beta).
        let beta = 0.9;
        let cfg = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta,
            server_lr: 1.0,
        };
        let mut state = unit_state(1);
        for _ in 0..200 {
            state = server_step(&state, &unit_delta(1.0), &cfg).unwrap();
            assert!(state.velocity.l2_norm() <= 1.0 / (1.0 - beta) + 1e-9);
        }
        assert!((state.velocity.values[0] - 10.0).abs() < 1e-6);
    }

    #[test]
    fn server_step_flags_divergence() {
        let cfg = ServerOptimizerConfig::plain();
        let state = unit_state(1);
        match server_step(&state, &unit_delta(f64::INFINITY), &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_bad_momentum() {
        let bad = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta: 1.0,
            server_lr: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = ServerOptimizerConfig {
            kind: ServerOptKind::Plain,
            beta: 0.5,
            server_lr: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta: 0.5,
            server_lr: 0.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_client_full_batch_round_equals_centralized_step() {
        let (spec, train, client) = task();
        let global = init_params(&spec, 17).unwrap();
        let cfg = ClientConfig {
            batch_size: client.len(),
            local_epochs: 1,
            learning_rate: 0.1,
        };
        let mut stream = rng::stream(18);
        let update = client_update(&spec, &global, &train, &client, &cfg, &mut stream).unwrap();
        let agg = aggregate(&[update]).unwrap();
        let state = ServerState::new(global.clone());
        let next = server_step(&state, &agg, &ServerOptimizerConfig::plain()).unwrap();

        // Centralized step on the same examples.
        let batch = train.gather_batch(&client.example_indices);
        let (_, grad) = loss_and_grad(&spec, &global, &batch).unwrap();
        let mut centralized = global.clone();
        centralized.step(0.1, &grad);
        for (a, b) in next.params.values.iter().zip(&centralized.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
