//! Hyperparameter sweeps over (alpha, C, E, eta, beta).
//!
//! Each grid cell runs `repeats` experiments on freshly synthesized
//! populations (one population and training seed pair per (alpha, repeat),
//! shared across cells so that settings are compared on identical
//! populations). Divergent runs score chance accuracy. Selection averages
//! over repeats first and only then maximizes.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{run_experiment, ExperimentConfig, RunSettings};
use crate::model::ModelSpec;
use crate::partition::{synthesize_population, Population, PriorDistribution};
use crate::protocol::{ClientConfig, ServerOptKind, ServerOptimizerConfig};
use crate::rng;

/// `eta_eff = eta / (1 - beta)`, the scale-equivalent learning rate of a
/// momentum-driven update stream.
pub fn effective_learning_rate(eta: f64, beta: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidConfig(format!(
            "beta: must satisfy 0 <= beta < 1, got {beta}"
        )));
    }
    Ok(eta / (1.0 - beta))
}

/// Client learning-rate grid: `1e-4` to `3e-1` in 1-3 steps.
pub fn default_learning_rates() -> Vec<f64> {
    vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1, 3e-1]
}

/// Server momentum grid.
pub fn default_betas() -> Vec<f64> {
    vec![0.0, 0.7, 0.9, 0.97, 0.99, 0.997]
}

/// Eight concentration values spanning one-class clients to identical
/// distributions.
pub fn default_alphas() -> Vec<f64> {
    vec![1e-3, 1e-2, 1e-1, 0.5, 1.0, 10.0, 100.0, 1e6]
}

/// Reporting fractions 0.05..0.4.
pub fn default_fractions() -> Vec<f64> {
    vec![0.05, 0.1, 0.2, 0.4]
}

pub fn default_local_epochs() -> Vec<usize> {
    vec![1, 5]
}

/// Grid axes of a sweep. Omitted axes fall back to the default grids above.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    #[serde(default = "default_local_epochs")]
    pub local_epochs: Vec<usize>,
    #[serde(default = "default_learning_rates")]
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            alphas: default_alphas(),
            fractions: default_fractions(),
            local_epochs: default_local_epochs(),
            learning_rates: default_learning_rates(),
            betas: default_betas(),
        }
    }
}

impl SweepGrid {
    pub fn num_cells(&self) -> usize {
        self.alphas.len()
            * self.fractions.len()
            * self.local_epochs.len()
            * self.learning_rates.len()
            * self.betas.len()
    }

    fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if self.alphas.is_empty()
            || self.fractions.is_empty()
            || self.local_epochs.is_empty()
            || self.learning_rates.is_empty()
            || self.betas.is_empty()
        {
            bad.push("sweep: every grid axis needs at least one value".to_string());
        }
        if let Some(&a) = self.alphas.iter().find(|&&a| a.is_nan() || a <= 0.0) {
            bad.push(format!("sweep.alphas: must be positive (or inf), got {a}"));
        }
        if let Some(&c) = self.fractions.iter().find(|&&c| !(c > 0.0 && c <= 1.0)) {
            bad.push(format!("sweep.fractions: must satisfy 0 < C <= 1, got {c}"));
        }
        if let Some(&e) = self.local_epochs.iter().find(|&&e| e < 1) {
            bad.push(format!("sweep.local_epochs: must be >= 1, got {e}"));
        }
        if let Some(&lr) = self
            .learning_rates
            .iter()
            .find(|&&lr| !(lr > 0.0 && lr.is_finite()))
        {
            bad.push(format!(
                "sweep.learning_rates: must be finite and > 0, got {lr}"
            ));
        }
        if let Some(&b) = self.betas.iter().find(|&&b| !(0.0..1.0).contains(&b)) {
            bad.push(format!("sweep.betas: must satisfy 0 <= beta < 1, got {b}"));
        }
        bad
    }
}

/// Full sweep description over a fixed base task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub model: ModelSpec,
    pub batch_size: usize,
    pub rounds: u64,
    pub eval_every: u64,
    pub clients: usize,
    pub client_size: usize,
    /// Momentum family used for cells with beta > 0.
    pub kind: ServerOptKind,
    pub repeats: usize,
    pub population_seed: u64,
    pub training_seed: u64,
    /// Summarize each run by the mean of its last five evaluations instead
    /// of the final one.
    #[serde(default)]
    pub smoothed: bool,
    #[serde(default)]
    pub grid: SweepGrid,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if let Err(Error::InvalidConfig(msg)) = self.model.validate() {
            bad.extend(msg.lines().map(str::to_owned));
        }
        if self.batch_size < 1 {
            bad.push(format!(
                "sweep.batch_size: must be >= 1, got {}",
                self.batch_size
            ));
        }
        if self.rounds < 1 {
            bad.push(format!("sweep.rounds: must be >= 1, got {}", self.rounds));
        }
        if self.eval_every < 1 {
            bad.push(format!(
                "sweep.eval_every: must be >= 1, got {}",
                self.eval_every
            ));
        }
        if self.clients < 1 {
            bad.push(format!("sweep.clients: must be >= 1, got {}", self.clients));
        }
        if self.client_size < 1 {
            bad.push(format!(
                "sweep.client_size: must be >= 1, got {}",
                self.client_size
            ));
        }
        if self.repeats < 1 {
            bad.push(format!("sweep.repeats: must be >= 1, got {}", self.repeats));
        }
        if self.kind == ServerOptKind::Plain && self.grid.betas.iter().any(|&b| b > 0.0) {
            bad.push("sweep.kind: plain cannot sweep nonzero betas".to_string());
        }
        bad.extend(self.grid.validate());
        Error::check_config(bad)
    }
}

/// One grid cell with its per-repeat outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub alpha: f64,
    pub fraction: f64,
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub beta: f64,
    /// Final accuracy per repeat; chance accuracy for diverged runs, NaN
    /// for repeats whose population could not be synthesized.
    pub accuracies: Vec<f64>,
    pub diverged: Vec<bool>,
    pub note: Option<String>,
}

impl SweepCell {
    /// Mean over valid repeats; NaN when none are valid.
    pub fn mean_accuracy(&self) -> f64 {
        let valid: Vec<f64> = self
            .accuracies
            .iter()
            .copied()
            .filter(|a| a.is_finite())
            .collect();
        if valid.is_empty() {
            f64::NAN
        } else {
            valid.iter().sum::<f64>() / valid.len() as f64
        }
    }

    pub fn eff_lr(&self) -> f64 {
        self.learning_rate / (1.0 - self.beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub kind: ServerOptKind,
    pub repeats: usize,
    pub num_classes: usize,
    pub cells: Vec<SweepCell>,
}

/// Runs every cell of the grid. Cells and repeats execute in parallel;
/// results are merged in grid order, so the outcome is deterministic.
pub fn run_sweep(cfg: &SweepConfig, train: &Dataset, test: &Dataset) -> Result<SweepResult> {
    cfg.validate()?;
    let num_classes = train.num_classes();
    let prior = PriorDistribution::uniform(num_classes);
    let chance = 1.0 / num_classes as f64;

    // One population per (alpha, repeat), shared by every cell under that
    // alpha. Synthesis failures poison only the cells that use them.
    let mut populations: Vec<Vec<Result<Population>>> = Vec::with_capacity(cfg.grid.alphas.len());
    for (alpha_idx, &alpha) in cfg.grid.alphas.iter().enumerate() {
        let mut per_repeat = Vec::with_capacity(cfg.repeats);
        for rep in 0..cfg.repeats {
            let seed = rng::derive_seed(&[cfg.population_seed, alpha_idx as u64, rep as u64]);
            per_repeat.push(synthesize_population(
                train.labels(),
                cfg.clients,
                cfg.client_size,
                alpha,
                &prior,
                seed,
            ));
        }
        populations.push(per_repeat);
    }

    struct CellKey {
        alpha_idx: usize,
        alpha: f64,
        fraction: f64,
        local_epochs: usize,
        learning_rate: f64,
        beta: f64,
    }
    let mut keys = Vec::with_capacity(cfg.grid.num_cells());
    for (alpha_idx, &alpha) in cfg.grid.alphas.iter().enumerate() {
        for &fraction in &cfg.grid.fractions {
            for &local_epochs in &cfg.grid.local_epochs {
                for &learning_rate in &cfg.grid.learning_rates {
                    for &beta in &cfg.grid.betas {
                        keys.push(CellKey {
                            alpha_idx,
                            alpha,
                            fraction,
                            local_epochs,
                            learning_rate,
                            beta,
                        });
                    }
                }
            }
        }
    }

    let jobs: Vec<(usize, usize)> = (0..keys.len())
        .flat_map(|cell| (0..cfg.repeats).map(move |rep| (cell, rep)))
        .collect();

    let outcomes: Vec<Result<(f64, bool, Option<String>)>> = jobs
        .par_iter()
        .map(|&(cell_idx, rep)| {
            let key = &keys[cell_idx];
            let population = match &populations[key.alpha_idx][rep] {
                Ok(p) => p,
                Err(e) => return Ok((f64::NAN, false, Some(format!("population: {e}")))),
            };
            let server = if key.beta == 0.0 {
                ServerOptimizerConfig::plain()
            } else {
                ServerOptimizerConfig {
                    kind: cfg.kind,
                    beta: key.beta,
                    server_lr: 1.0,
                }
            };
            let experiment = ExperimentConfig {
                model: cfg.model,
                client: ClientConfig {
                    batch_size: cfg.batch_size,
                    local_epochs: key.local_epochs,
                    learning_rate: key.learning_rate,
                },
                server,
                run: RunSettings {
                    fraction: key.fraction,
                    rounds: cfg.rounds,
                    eval_every: cfg.eval_every,
                    training_seed: rng::derive_seed(&[
                        cfg.training_seed,
                        key.alpha_idx as u64,
                        rep as u64,
                    ]),
                    timings: false,
                },
            };
            let output = run_experiment(&experiment, train, test, population)?;
            if output.diverged {
                Ok((chance, true, output.divergence_context))
            } else {
                let acc = if cfg.smoothed {
                    output.smoothed_accuracy(5)
                } else {
                    output.final_accuracy()
                };
                Ok((
                    acc.expect("rounds >= 1 guarantees at least one evaluation"),
                    false,
                    None,
                ))
            }
        })
        .collect();

    let mut cells: Vec<SweepCell> = keys
        .iter()
        .map(|k| SweepCell {
            alpha: k.alpha,
            fraction: k.fraction,
            local_epochs: k.local_epochs,
            learning_rate: k.learning_rate,
            beta: k.beta,
            accuracies: Vec::with_capacity(cfg.repeats),
            diverged: Vec::with_capacity(cfg.repeats),
            note: None,
        })
        .collect();
    for (&(cell_idx, _), outcome) in jobs.iter().zip(outcomes) {
        let (accuracy, diverged, note) = outcome?;
        let cell = &mut cells[cell_idx];
        cell.accuracies.push(accuracy);
        cell.diverged.push(diverged);
        if cell.note.is_none() {
            cell.note = note;
        }
    }

    Ok(SweepResult {
        kind: cfg.kind,
        repeats: cfg.repeats,
        num_classes,
        cells,
    })
}

/// Grid axis identifiers for grouping and optimizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Alpha,
    Fraction,
    LocalEpochs,
    LearningRate,
    Beta,
}

pub const ALL_AXES: [Axis; 5] = [
    Axis::Alpha,
    Axis::Fraction,
    Axis::LocalEpochs,
    Axis::LearningRate,
    Axis::Beta,
];

impl Axis {
    pub fn name(&self) -> &'static str {
        match self {
            Axis::Alpha => "alpha",
            Axis::Fraction => "fraction",
            Axis::LocalEpochs => "local_epochs",
            Axis::LearningRate => "learning_rate",
            Axis::Beta => "beta",
        }
    }

    fn value(&self, cell: &SweepCell) -> f64 {
        match self {
            Axis::Alpha => cell.alpha,
            Axis::Fraction => cell.fraction,
            Axis::LocalEpochs => cell.local_epochs as f64,
            Axis::LearningRate => cell.learning_rate,
            Axis::Beta => cell.beta,
        }
    }
}

/// The winning optimize-axes setting for one group of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct BestRow {
    pub key: Vec<(Axis, f64)>,
    pub choice: Vec<(Axis, f64)>,
    pub mean_accuracy: f64,
    /// Accuracies of the winning cell, one per repeat.
    pub per_repeat: Vec<f64>,
    /// True when no cell in the group produced a valid accuracy.
    pub missing: bool,
}

/// For each setting of `cell_axes`, picks the `optimize_axes` values with
/// the highest mean accuracy.
///
/// Means are taken over repeats before the argmax; ties break toward the
/// smaller effective learning rate, then smaller beta, then smaller eta.
pub fn select_best(
    result: &SweepResult,
    cell_axes: &[Axis],
    optimize_axes: &[Axis],
) -> Result<Vec<BestRow>> {
    let mut covered = Vec::new();
    covered.extend_from_slice(cell_axes);
    covered.extend_from_slice(optimize_axes);
    for axis in ALL_AXES {
        match covered.iter().filter(|&&a| a == axis).count() {
            1 => {}
            0 => {
                return Err(Error::InvalidConfig(format!(
                    "select_best: axis {} is neither grouped nor optimized",
                    axis.name()
                )))
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "select_best: axis {} appears more than once",
                    axis.name()
                )))
            }
        }
    }

    // Group key ordering uses the raw bit patterns; all axis values are
    // non-negative so bit order agrees with numeric order.
    let mut groups: BTreeMap<Vec<u64>, Vec<&SweepCell>> = BTreeMap::new();
    for cell in &result.cells {
        let key: Vec<u64> = cell_axes.iter().map(|a| a.value(cell).to_bits()).collect();
        groups.entry(key).or_default().push(cell);
    }

    let mut rows = Vec::with_capacity(groups.len());
    for (_, cells) in groups {
        let key: Vec<(Axis, f64)> = cell_axes.iter().map(|&a| (a, a.value(cells[0]))).collect();
        let mut best: Option<&SweepCell> = None;
        for cell in cells {
            let mean = cell.mean_accuracy();
            if !mean.is_finite() {
                continue;
            }
            best = Some(match best {
                None => cell,
                Some(current) => {
                    let cur_mean = current.mean_accuracy();
                    if mean > cur_mean {
                        cell
                    } else if mean == cur_mean {
                        let (a, b) = (cell.eff_lr(), current.eff_lr());
                        if a < b
                            || (a == b && cell.beta < current.beta)
                            || (a == b
                                && cell.beta == current.beta
                                && cell.learning_rate < current.learning_rate)
                        {
                            cell
                        } else {
                            current
                        }
                    } else {
                        current
                    }
                }
            });
        }
        match best {
            Some(cell) => rows.push(BestRow {
                key,
                choice: optimize_axes.iter().map(|&a| (a, a.value(cell))).collect(),
                mean_accuracy: cell.mean_accuracy(),
                per_repeat: cell.accuracies.clone(),
                missing: false,
            }),
            None => rows.push(BestRow {
                key,
                choice: optimize_axes.iter().map(|&a| (a, f64::NAN)).collect(),
                mean_accuracy: f64::NAN,
                per_repeat: Vec::new(),
                missing: true,
            }),
        }
    }
    Ok(rows)
}

/// Renders the sweep as CSV: one row per (cell x repeat) plus a commented
/// header carrying the sweep-level fields needed to parse it back.
pub fn sweep_csv(config_echo: &str, result: &SweepResult) -> String {
    let mut out = String::from("# fedsim sweep v1\n");
    out.push_str(&format!("# fedsim.kind = {}\n", result.kind));
    out.push_str(&format!("# fedsim.repeats = {}\n", result.repeats));
    out.push_str(&format!("# fedsim.num_classes = {}\n", result.num_classes));
    for line in config_echo.lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str(
        "alpha,fraction,local_epochs,learning_rate,beta,eff_lr,repeat,accuracy,diverged\n",
    );
    for cell in &result.cells {
        for (rep, (&acc, &diverged)) in cell.accuracies.iter().zip(&cell.diverged).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                cell.alpha,
                cell.fraction,
                cell.local_epochs,
                cell.learning_rate,
                cell.beta,
                cell.eff_lr(),
                rep,
                acc,
                diverged
            ));
        }
    }
    out
}

/// Renders the winning cells per (alpha, fraction, local_epochs) group.
pub fn best_csv(result: &SweepResult) -> Result<String> {
    let rows = select_best(
        result,
        &[Axis::Alpha, Axis::Fraction, Axis::LocalEpochs],
        &[Axis::LearningRate, Axis::Beta],
    )?;
    let mut out = String::from(
        "alpha,fraction,local_epochs,best_learning_rate,best_beta,best_eff_lr,mean_accuracy,missing\n",
    );
    for row in rows {
        let get = |axes: &[(Axis, f64)], axis: Axis| {
            axes.iter()
                .find(|(a, _)| *a == axis)
                .map(|(_, v)| *v)
                .unwrap_or(f64::NAN)
        };
        let alpha = get(&row.key, Axis::Alpha);
        let fraction = get(&row.key, Axis::Fraction);
        let epochs = get(&row.key, Axis::LocalEpochs);
        let lr = get(&row.choice, Axis::LearningRate);
        let beta = get(&row.choice, Axis::Beta);
        let eff = if row.missing {
            f64::NAN
        } else {
            lr / (1.0 - beta)
        };
        out.push_str(&format!(
            "{alpha},{fraction},{epochs},{lr},{beta},{eff},{},{}\n",
            row.mean_accuracy, row.missing
        ));
    }
    Ok(out)
}

/// Parses a CSV produced by [`sweep_csv`] back into a `SweepResult`.
pub fn parse_sweep_csv(text: &str) -> Result<SweepResult> {
    let parse_err = |detail: String| Error::Parse {
        what: "sweep csv".into(),
        detail,
    };
    let mut kind = None;
    let mut repeats = None;
    let mut num_classes = None;
    let mut cells: Vec<SweepCell> = Vec::new();
    let mut index: BTreeMap<[u64; 5], usize> = BTreeMap::new();
    let mut saw_header = false;

    for (no, line) in text.lines().enumerate() {
        let line_no = no + 1;
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("fedsim.kind = ") {
                kind = Some(match v {
                    "plain" => ServerOptKind::Plain,
                    "momentum" => ServerOptKind::Momentum,
                    "nesterov" => ServerOptKind::Nesterov,
                    other => {
                        return Err(parse_err(format!("line {line_no}: unknown kind `{other}`")))
                    }
                });
            } else if let Some(v) = rest.strip_prefix("fedsim.repeats = ") {
                repeats = v.parse::<usize>().ok();
            } else if let Some(v) = rest.strip_prefix("fedsim.num_classes = ") {
                num_classes = v.parse::<usize>().ok();
            }
            continue;
        }
        if !saw_header {
            if line
                != "alpha,fraction,local_epochs,learning_rate,beta,eff_lr,repeat,accuracy,diverged"
            {
                return Err(parse_err(format!(
                    "line {line_no}: unexpected header `{line}`"
                )));
            }
            saw_header = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(parse_err(format!(
                "line {line_no}: expected 9 fields, got {}",
                fields.len()
            )));
        }
        let f = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| parse_err(format!("line {line_no}: bad number `{}`", fields[i])))
        };
        let alpha = f(0)?;
        let fraction = f(1)?;
        let local_epochs: usize = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("line {line_no}: bad epoch count `{}`", fields[2])))?;
        let learning_rate = f(3)?;
        let beta = f(4)?;
        let accuracy = f(7)?;
        let diverged = match fields[8] {
            "true" => true,
            "false" => false,
            other => return Err(parse_err(format!("line {line_no}: bad flag `{other}`"))),
        };
        let key = [
            alpha.to_bits(),
            fraction.to_bits(),
            local_epochs as u64,
            learning_rate.to_bits(),
            beta.to_bits(),
        ];
        let idx = *index.entry(key).or_insert_with(|| {
            cells.push(SweepCell {
                alpha,
                fraction,
                local_epochs,
                learning_rate,
                beta,
                accuracies: Vec::new(),
                diverged: Vec::new(),
                note: None,
            });
            cells.len() - 1
        });
        cells[idx].accuracies.push(accuracy);
        cells[idx].diverged.push(diverged);
    }

    if !saw_header {
        return Err(parse_err("missing column header".into()));
    }
    Ok(SweepResult {
        kind: kind.ok_or_else(|| parse_err("missing `# fedsim.kind = ...` line".into()))?,
        repeats: repeats
            .ok_or_else(|| parse_err("missing `# fedsim.repeats = ...` line".into()))?,
        num_classes: num_classes
            .ok_or_else(|| parse_err("missing `# fedsim.num_classes = ...` line".into()))?,
        cells,
    })
}

/// Figure-style reshapes of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureKind {
    /// Best accuracy against alpha, one series per (C, E).
    AccuracyVsAlpha,
    /// Momentum and no-momentum best accuracy against alpha, two series per
    /// (C, E).
    MomentumVsAlpha,
}

impl std::str::FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy-vs-alpha" => Ok(FigureKind::AccuracyVsAlpha),
            "momentum-vs-alpha" => Ok(FigureKind::MomentumVsAlpha),
            other => Err(Error::Parse {
                what: "figure kind".into(),
                detail: format!(
                    "unknown figure `{other}`; expected accuracy-vs-alpha or momentum-vs-alpha"
                ),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub series: String,
    pub x: f64,
    pub y: f64,
}

fn best_rows_filtered(
    result: &SweepResult,
    filter: impl Fn(&SweepCell) -> bool,
) -> Result<Vec<BestRow>> {
    let filtered = SweepResult {
        kind: result.kind,
        repeats: result.repeats,
        num_classes: result.num_classes,
        cells: result.cells.iter().filter(|c| filter(c)).cloned().collect(),
    };
    select_best(
        &filtered,
        &[Axis::Alpha, Axis::Fraction, Axis::LocalEpochs],
        &[Axis::LearningRate, Axis::Beta],
    )
}

/// Long-format rows (`series,x,y`) for the requested figure.
pub fn plot_rows(result: &SweepResult, figure: FigureKind) -> Result<Vec<PlotRow>> {
    let get = |axes: &[(Axis, f64)], axis: Axis| {
        axes.iter()
            .find(|(a, _)| *a == axis)
            .map(|(_, v)| *v)
            .unwrap_or(f64::NAN)
    };
    let mut rows = Vec::new();
    let mut extend = |best: Vec<BestRow>, label: Option<&str>| {
        for row in best {
            if row.missing {
                continue;
            }
            let c = get(&row.key, Axis::Fraction);
            let e = get(&row.key, Axis::LocalEpochs);
            let series = match label {
                Some(l) => format!("{l} C={c} E={e}"),
                None => format!("C={c} E={e}"),
            };
            rows.push(PlotRow {
                series,
                x: get(&row.key, Axis::Alpha),
                y: row.mean_accuracy,
            });
        }
    };
    match figure {
        FigureKind::AccuracyVsAlpha => {
            extend(best_rows_filtered(result, |_| true)?, None);
        }
        FigureKind::MomentumVsAlpha => {
            extend(
                best_rows_filtered(result, |c| c.beta == 0.0)?,
                Some("fedavg"),
            );
            extend(
                best_rows_filtered(result, |c| c.beta > 0.0)?,
                Some("fedavgm"),
            );
        }
    }
    rows.sort_by(|a, b| a.series.cmp(&b.series).then(a.x.partial_cmp(&b.x).unwrap()));
    Ok(rows)
}

pub fn plot_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from("series,x,y\n");
    for row in rows {
        out.push_str(&format!("{},{},{}\n", row.series, row.x, row.y));
    }
    out
}
