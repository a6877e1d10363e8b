//! Multi-round experiment driver.
//!
//! One experiment: synthesize or load a population, then repeat
//! sample -> local train -> aggregate -> server step for a fixed number of
//! rounds, evaluating on the test set at a fixed cadence. Every random
//! choice derives from the training seed, the round, and the client id, so
//! results are identical no matter how many worker threads run the clients.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{evaluate, init_params, ModelParams, ModelSpec};
use crate::partition::Population;
use crate::protocol::{
    aggregate, client_update, sample_clients, server_step, ClientConfig, ClientUpdate,
    ServerOptimizerConfig, ServerState,
};
use crate::rng;

// Sub-stream tags hung off the training seed.
const INIT_TAG: u64 = 0x11;
const SAMPLE_TAG: u64 = 0x22;
const CLIENT_TAG: u64 = 0x33;

/// Round-loop settings independent of model and optimizer shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// Reporting fraction C: the share of clients sampled each round.
    pub fraction: f64,
    pub rounds: u64,
    pub eval_every: u64,
    pub training_seed: u64,
    /// Record wall-clock time per round. Off by default so that repeated
    /// runs produce byte-identical metrics files.
    #[serde(default)]
    pub timings: bool,
}

/// Everything needed to run one experiment on a prepared population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub client: ClientConfig,
    pub server: ServerOptimizerConfig,
    pub run: RunSettings,
}

fn collect_violations(out: &mut Vec<String>, result: Result<()>) {
    if let Err(Error::InvalidConfig(msg)) = result {
        out.extend(msg.lines().map(str::to_owned));
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        collect_violations(&mut bad, self.model.validate());
        collect_violations(&mut bad, self.client.validate());
        collect_violations(&mut bad, self.server.validate());
        if self.run.rounds < 1 {
            bad.push(format!("run.rounds: must be >= 1, got {}", self.run.rounds));
        }
        if self.run.eval_every < 1 {
            bad.push(format!(
                "run.eval_every: must be >= 1, got {}",
                self.run.eval_every
            ));
        }
        if !(self.run.fraction > 0.0 && self.run.fraction <= 1.0) {
            bad.push(format!(
                "run.fraction: must satisfy 0 < C <= 1, got {}",
                self.run.fraction
            ));
        }
        Error::check_config(bad)
    }
}

/// Per-round record emitted by `run_experiment`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    /// Mean of the sampled clients' mean training losses; `None` for the
    /// round-0 snapshot.
    pub train_loss: Option<f64>,
    /// Test accuracy, present at round 0, every `eval_every` rounds, and at
    /// the final round.
    pub test_accuracy: Option<f64>,
    pub selected: Vec<usize>,
    pub wall_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reports: Vec<RoundReport>,
    pub final_params: ModelParams,
    pub diverged: bool,
    pub divergence_context: Option<String>,
}

impl ExperimentOutput {
    /// Accuracy at the last evaluation, if any round was evaluated.
    pub fn final_accuracy(&self) -> Option<f64> {
        self.reports.iter().rev().find_map(|r| r.test_accuracy)
    }

    /// Mean of the last `window` evaluated accuracies; a smoother summary
    /// for volatile low-alpha runs.
    pub fn smoothed_accuracy(&self, window: usize) -> Option<f64> {
        let evals: Vec<f64> = self
            .reports
            .iter()
            .filter_map(|r| r.test_accuracy)
            .collect();
        if evals.is_empty() {
            return None;
        }
        let tail = &evals[evals.len().saturating_sub(window)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

fn eval_due(round: u64, total: u64, eval_every: u64) -> bool {
    round.is_multiple_of(eval_every) || round == total
}

/// Runs the federated round loop to completion or divergence.
///
/// Divergence (a non-finite loss or parameter) is not an `Err`: the report
/// list is truncated at the failing round and `diverged` is set, matching
/// how sweeps score failed cells.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    population: &Population,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    if population.clients.is_empty() {
        return Err(Error::InvalidData("population has no clients".into()));
    }
    if population.clients.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidData(
            "population contains an empty client".into(),
        ));
    }
    if population.num_classes() != train.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "population has {} classes, training data {}",
            population.num_classes(),
            train.num_classes()
        )));
    }
    if cfg.model.num_classes != train.num_classes() {
        return Err(Error::DimensionMismatch(format!(
            "model has {} classes, training data {}",
            cfg.model.num_classes,
            train.num_classes()
        )));
    }
    population.validate_against(train.labels())?;

    let seed = cfg.run.training_seed;
    let mut state = ServerState::new(init_params(
        &cfg.model,
        rng::derive_seed(&[seed, INIT_TAG]),
    )?);
    let sample_seed = rng::derive_seed(&[seed, SAMPLE_TAG]);
    let n_clients = population.clients.len();

    let mut reports = Vec::with_capacity(cfg.run.rounds as usize + 1);
    let t0 = Instant::now();
    let (initial_accuracy, _) = evaluate(&cfg.model, &state.params, test)?;
    reports.push(RoundReport {
        round: 0,
        train_loss: None,
        test_accuracy: Some(initial_accuracy),
        selected: Vec::new(),
        wall_ms: cfg.run.timings.then(|| t0.elapsed().as_millis() as u64),
    });

    let mut diverged = false;
    let mut divergence_context = None;
    for round in 1..=cfg.run.rounds {
        let round_start = Instant::now();
        let selected = sample_clients(n_clients, cfg.run.fraction, round, sample_seed)?;

        let updates: Vec<Result<ClientUpdate>> = selected
            .par_iter()
            .map(|&client_id| {
                let mut stream = rng::stream(rng::derive_seed(&[
                    seed,
                    CLIENT_TAG,
                    round,
                    client_id as u64,
                ]));
                client_update(
                    &cfg.model,
                    &state.params,
                    train,
                    &population.clients[client_id],
                    &cfg.client,
                    &mut stream,
                )
            })
            .collect();

        let mut round_updates = Vec::with_capacity(updates.len());
        let mut failure = None;
        for result in updates {
            match result {
                Ok(u) => round_updates.push(u),
                Err(Error::Diverged { context }) => {
                    failure = Some(format!("round {round}: {context}"));
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(context) = failure {
            diverged = true;
            divergence_context = Some(context);
            break;
        }

        let delta = aggregate(&round_updates)?;
        state = match server_step(&state, &delta, &cfg.server) {
            Ok(next) => next,
            Err(Error::Diverged { context }) => {
                diverged = true;
                divergence_context = Some(context);
                break;
            }
            Err(e) => return Err(e),
        };

        let train_loss =
            round_updates.iter().map(|u| u.mean_loss).sum::<f64>() / round_updates.len() as f64;
        let test_accuracy = if eval_due(round, cfg.run.rounds, cfg.run.eval_every) {
            Some(evaluate(&cfg.model, &state.params, test)?.0)
        } else {
            None
        };
        reports.push(RoundReport {
            round,
            train_loss: Some(train_loss),
            test_accuracy,
            selected,
            wall_ms: cfg
                .run
                .timings
                .then(|| round_start.elapsed().as_millis() as u64),
        });
    }

    Ok(ExperimentOutput {
        reports,
        final_params: state.params,
        diverged,
        divergence_context,
    })
}

fn push_opt_f64(line: &mut String, value: Option<f64>) {
    if let Some(v) = value {
        line.push_str(&format!("{v}"));
    }
}

/// Renders reports as the metrics CSV: a commented header embedding the
/// fully-resolved configuration, then one row per round.
///
/// Columns: `round,train_loss,test_accuracy,n_sampled,wall_ms`. Floats use
/// shortest round-trip formatting, so identical runs give identical bytes.
pub fn metrics_csv(config_echo: &str, output: &ExperimentOutput) -> String {
    let mut out = String::from("# fedsim metrics v1\n");
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("round,train_loss,test_accuracy,n_sampled,wall_ms\n");
    for report in &output.reports {
        let mut line = format!("{},", report.round);
        push_opt_f64(&mut line, report.train_loss);
        line.push(',');
        push_opt_f64(&mut line, report.test_accuracy);
        line.push(',');
        line.push_str(&format!("{}", report.selected.len()));
        line.push(',');
        if let Some(ms) = report.wall_ms {
            line.push_str(&format!("{ms}"));
        }
        out.push_str(&line);
        out.push('\n');
    }
    if output.diverged {
        let context = output.divergence_context.as_deref().unwrap_or("unknown");
        out.push_str(&format!("# diverged: {context}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::partition::{synthesize_population, PriorDistribution};
    use crate::protocol::ServerOptKind;

    fn small_task() -> (Dataset, Dataset, Population) {
        let synth = SyntheticSpec {
            num_classes: 4,
            input_dim: 8,
            train_per_class: 60,
            test_per_class: 25,
            separation: 2.5,
            noise: 1.0,
            seed: 100,
            pair_angle_degrees: 90.0,
        };
        let (train, test) = generate_synthetic(&synth).unwrap();
        let prior = PriorDistribution::uniform(4);
        let pop = synthesize_population(train.labels(), 12, 20, 1e6, &prior, 101).unwrap();
        (train, test, pop)
    }

    fn config(rounds: u64, lr: f64) -> ExperimentConfig {
        ExperimentConfig {
            model: ModelSpec {
                input_dim: 8,
                num_classes: 4,
                hidden_dim: 0,
                weight_decay: 0.0,
            },
            client: ClientConfig {
                batch_size: 10,
                local_epochs: 1,
                learning_rate: lr,
            },
            server: ServerOptimizerConfig::plain(),
            run: RunSettings {
                fraction: 0.25,
                rounds,
                eval_every: 5,
                training_seed: 7,
                timings: false,
            },
        }
    }

    #[test]
    fn zero_rounds_is_rejected() {
        let (train, test, pop) = small_task();
        let cfg = config(0, 0.1);
        assert!(run_experiment(&cfg, &train, &test, &pop).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_initial_accuracy() {
        let (train, test, pop) = small_task();
        let cfg = config(1, 0.0);
        let output = run_experiment(&cfg, &train, &test, &pop).unwrap();
        let first = output.reports[0].test_accuracy.unwrap();
        let last = output.reports[1].test_accuracy.unwrap();
        assert_eq!(first.to_bits(), last.to_bits());
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let (train, test, pop) = small_task();
        let cfg = config(20, 0.1);
        let a = run_experiment(&cfg, &train, &test, &pop).unwrap();
        let b = run_experiment(&cfg, &train, &test, &pop).unwrap();
        assert_eq!(a, b);
        let echo = toml::to_string(&cfg).unwrap();
        assert_eq!(metrics_csv(&echo, &a), metrics_csv(&echo, &b));
    }

    #[test]
    fn beta_zero_momentum_matches_plain_accuracy_series() {
        let (train, test, pop) = small_task();
        let plain_cfg = config(15, 0.1);
        let mut momentum_cfg = plain_cfg.clone();
        momentum_cfg.server = ServerOptimizerConfig {
            kind: ServerOptKind::Momentum,
            beta: 0.0,
            server_lr: 1.0,
        };
        let a = run_experiment(&plain_cfg, &train, &test, &pop).unwrap();
        let b = run_experiment(&momentum_cfg, &train, &test, &pop).unwrap();
        assert_eq!(a.final_params, b.final_params);
        let acc_a: Vec<Option<f64>> = a.reports.iter().map(|r| r.test_accuracy).collect();
        let acc_b: Vec<Option<f64>> = b.reports.iter().map(|r| r.test_accuracy).collect();
        assert_eq!(acc_a, acc_b);
    }

    #[test]
    fn report_cadence_matches_eval_every() {
        let (train, test, pop) = small_task();
        let cfg = config(20, 0.1);
        let output = run_experiment(&cfg, &train, &test, &pop).unwrap();
        assert_eq!(output.reports.len(), 21);
        let evals = output
            .reports
            .iter()
            .filter(|r| r.test_accuracy.is_some())
            .count();
        assert_eq!(evals, 20 / 5 + 1);
    }

    #[test]
    fn divergent_run_truncates_with_flag() {
        let (train, test, pop) = small_task();
        let cfg = config(50, 1e12);
        let output = run_experiment(&cfg, &train, &test, &pop).unwrap();
        assert!(output.diverged);
        assert!(output.divergence_context.is_some());
        assert!(output.reports.len() < 51);
        let csv = metrics_csv("", &output);
        assert!(csv.contains("# diverged"));
    }

    #[test]
    fn metrics_csv_shape() {
        let (train, test, pop) = small_task();
        let cfg = config(10, 0.1);
        let output = run_experiment(&cfg, &train, &test, &pop).unwrap();
        let echo = toml::to_string(&cfg).unwrap();
        let csv = metrics_csv(&echo, &output);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "# fedsim metrics v1");
        // Echo embeds the resolved config.
        assert!(csv.contains("# training_seed = 7"));
        let header = csv.lines().find(|l| !l.starts_with('#')).unwrap();
        assert_eq!(header, "round,train_loss,test_accuracy,n_sampled,wall_ms");
        // 1 header + 11 rows + config comments.
        let data_rows = csv.lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(data_rows, 1 + 11);
        // Round-0 row has an empty loss cell and a populated accuracy.
        let row0 = csv.lines().find(|l| l.starts_with("0,")).unwrap();
        assert!(row0.starts_with("0,,"));
    }
}
