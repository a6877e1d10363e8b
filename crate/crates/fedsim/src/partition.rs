//! Client population synthesis with tunable label skew.
//!
//! Each client's label distribution `q` is drawn from `Dir(alpha * p)` where
//! `p` is a prior over classes and `alpha` controls identicalness: large
//! `alpha` makes every client match the prior, small `alpha` collapses each
//! client onto a single random class. `alpha = +inf` is accepted as an exact
//! no-sampling-noise marker. A sort-and-partition splitter provides the
//! classic shard baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng;

const SIMPLEX_TOL: f64 = 1e-12;

fn check_simplex(q: &[f64], what: &str) -> Result<()> {
    if q.is_empty() {
        return Err(Error::InvalidData(format!(
            "{what}: empty probability vector"
        )));
    }
    if let Some(&v) = q.iter().find(|&&v| !v.is_finite() || v < 0.0) {
        return Err(Error::InvalidData(format!(
            "{what}: component {v} is not a finite probability"
        )));
    }
    let sum: f64 = q.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidData(format!(
            "{what}: components sum to {sum}, not 1"
        )));
    }
    Ok(())
}

/// A single client's label distribution over `N` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        check_simplex(&q, "label distribution")?;
        Ok(LabelDistribution(q))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The population-level class distribution clients are drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorDistribution(Vec<f64>);

impl PriorDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        check_simplex(&p, "prior distribution")?;
        Ok(PriorDistribution(p))
    }

    pub fn uniform(num_classes: usize) -> Self {
        PriorDistribution(vec![1.0 / num_classes as f64; num_classes])
    }

    /// The empirical class distribution of a label vector.
    pub fn empirical(labels: &[u8], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidData(
                "cannot take an empirical prior of no labels".into(),
            ));
        }
        let mut counts = vec![0usize; num_classes];
        for &l in labels {
            if l as usize >= num_classes {
                return Err(Error::InvalidData(format!(
                    "label {l} out of range for {num_classes} classes"
                )));
            }
            counts[l as usize] += 1;
        }
        let n = labels.len() as f64;
        Ok(PriorDistribution(
            counts.into_iter().map(|c| c as f64 / n).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How a population's client index sets were produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    /// Label distributions drawn from `Dir(alpha * prior)`;
    /// `alpha = +inf` assigns the prior exactly.
    Dirichlet { alpha: f64 },
    /// Sort by label, cut into equal contiguous shards, deal
    /// `shards_per_client` shards to each client at random.
    SortShards { shards_per_client: usize },
}

impl PartitionScheme {
    pub fn alpha(&self) -> Option<f64> {
        match self {
            PartitionScheme::Dirichlet { alpha } => Some(*alpha),
            PartitionScheme::SortShards { .. } => None,
        }
    }
}

/// One client's shard of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub example_indices: Vec<usize>,
    pub class_counts: Vec<usize>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.example_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.example_indices.is_empty()
    }

    /// Per-class histogram normalized to sum 1.
    pub fn histogram(&self) -> Vec<f64> {
        let n = self.len().max(1) as f64;
        self.class_counts.iter().map(|&c| c as f64 / n).collect()
    }
}

/// A synthesized client population.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub clients: Vec<ClientDataset>,
    pub scheme: PartitionScheme,
    pub prior: PriorDistribution,
    pub seed: u64,
}

impl Population {
    pub fn num_classes(&self) -> usize {
        self.prior.len()
    }

    pub fn total_examples(&self) -> usize {
        self.clients.iter().map(|c| c.len()).sum()
    }

    /// Checks index disjointness and count/label consistency against the
    /// label vector the population was built from.
    pub fn validate_against(&self, labels: &[u8]) -> Result<()> {
        let n_classes = self.num_classes();
        let mut seen = vec![false; labels.len()];
        for client in &self.clients {
            if client.class_counts.len() != n_classes {
                return Err(Error::Partition(format!(
                    "client {} has {} class counts, expected {n_classes}",
                    client.client_id,
                    client.class_counts.len()
                )));
            }
            let mut counts = vec![0usize; n_classes];
            for &idx in &client.example_indices {
                if idx >= labels.len() {
                    return Err(Error::Partition(format!(
                        "client {} references example {idx} outside the dataset",
                        client.client_id
                    )));
                }
                if seen[idx] {
                    return Err(Error::Partition(format!("example {idx} assigned twice")));
                }
                seen[idx] = true;
                counts[labels[idx] as usize] += 1;
            }
            if counts != client.class_counts {
                return Err(Error::Partition(format!(
                    "client {} class counts disagree with its labels",
                    client.client_id
                )));
            }
        }
        Ok(())
    }
}

/// Log of a `Gamma(shape, 1)` draw.
///
/// For `shape < 1` the draw is boosted through `Gamma(shape + 1)` and scaled
/// by `U^(1/shape)` in log space, which survives shapes as small as 1e-8
/// where a direct draw would underflow to zero.
fn log_gamma_sample<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("valid shape").sample(rng);
        g.max(f64::MIN_POSITIVE).ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0)
            .expect("valid shape")
            .sample(rng);
        let u: f64 = rng.random();
        g.max(f64::MIN_POSITIVE).ln() + u.max(f64::MIN_POSITIVE).ln() / shape
    }
}

/// Draws `q ~ Dir(alpha * prior)`. Components with zero prior mass get
/// exactly zero.
pub fn sample_dirichlet<R: Rng + ?Sized>(
    alpha: f64,
    prior: &PriorDistribution,
    rng: &mut R,
) -> Result<LabelDistribution> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "alpha: must be a finite positive real, got {alpha}"
        )));
    }
    let p = prior.as_slice();
    let mut logs = vec![f64::NEG_INFINITY; p.len()];
    for (log, &pi) in logs.iter_mut().zip(p) {
        if pi > 0.0 {
            *log = log_gamma_sample(rng, alpha * pi);
        }
    }
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "prior has at least one positive component");
    let mut q: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = q.iter().sum();
    for v in &mut q {
        *v /= sum;
    }
    Ok(LabelDistribution(q))
}

/// One categorical draw proportional to `weights` (not necessarily
/// normalized; total must be positive).
fn categorical<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0);
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (idx, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            last_positive = idx;
            if u < w {
                return idx;
            }
            u -= w;
        }
    }
    // Floating-point slack on the final boundary.
    last_positive
}

/// Largest-remainder rounding of `total * p` to integers summing to `total`.
fn largest_remainder(total: usize, p: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = p
        .iter()
        .map(|&pi| (total as f64 * pi).floor() as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = p
        .iter()
        .enumerate()
        .map(|(i, &pi)| (i, total as f64 * pi - (total as f64 * pi).floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for (i, _) in remainders.into_iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Integer class counts for one client: a multinomial realization of `q`
/// clamped by per-class availability, with any shortfall redistributed by
/// re-drawing over classes that still have stock.
fn draw_counts<R: Rng + ?Sized>(
    q: &[f64],
    client_size: usize,
    available: &[usize],
    rng: &mut R,
) -> Vec<usize> {
    let n_classes = q.len();
    let mut wanted = vec![0usize; n_classes];
    for _ in 0..client_size {
        wanted[categorical(q, rng)] += 1;
    }
    let mut take: Vec<usize> = wanted
        .iter()
        .zip(available)
        .map(|(&w, &a)| w.min(a))
        .collect();
    let mut shortfall = client_size - take.iter().sum::<usize>();
    let mut weights = vec![0.0; n_classes];
    while shortfall > 0 {
        let mut total_q = 0.0;
        let mut total_stock = 0usize;
        for c in 0..n_classes {
            let stock = available[c] - take[c];
            if stock > 0 {
                total_q += q[c];
                total_stock += stock;
            }
        }
        debug_assert!(total_stock > 0, "caller guarantees total supply >= demand");
        if total_q > 0.0 {
            // Re-draw one example from q renormalized over in-stock classes.
            for c in 0..n_classes {
                weights[c] = if available[c] > take[c] { q[c] } else { 0.0 };
            }
            let c = categorical(&weights, rng);
            take[c] += 1;
            shortfall -= 1;
        } else {
            // q has no mass left on any in-stock class (the one-class limit
            // with an exhausted pool). Pick a single backup class
            // proportional to stock and fill from it, keeping the client as
            // concentrated as the pools allow.
            for c in 0..n_classes {
                weights[c] = (available[c] - take[c]) as f64;
            }
            let c = categorical(&weights, rng);
            let fill = shortfall.min(available[c] - take[c]);
            take[c] += fill;
            shortfall -= fill;
        }
    }
    take
}

/// Synthesizes a population of `n_clients` clients holding `client_size`
/// examples each, with label skew controlled by `alpha`.
///
/// Clients are processed in a seeded random order; each draws `q` from
/// `Dir(alpha * prior)` (or copies the prior exactly when `alpha` is
/// infinite), realizes integer counts, and takes examples uniformly without
/// replacement from the per-class pools. When `n_clients * client_size`
/// equals the dataset size, the clients exactly cover it.
pub fn synthesize_population(
    labels: &[u8],
    n_clients: usize,
    client_size: usize,
    alpha: f64,
    prior: &PriorDistribution,
    seed: u64,
) -> Result<Population> {
    let n_classes = prior.len();
    if n_clients == 0 || client_size == 0 {
        return Err(Error::InvalidConfig(format!(
            "population: need n_clients >= 1 and client_size >= 1, got {n_clients} x {client_size}"
        )));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "alpha: must be positive, got {alpha}"
        )));
    }
    check_simplex(prior.as_slice(), "prior distribution")?;
    let demand = n_clients * client_size;
    if demand > labels.len() {
        return Err(Error::Partition(format!(
            "demand {n_clients} x {client_size} = {demand} exceeds the {} available examples",
            labels.len()
        )));
    }

    let mut stream = rng::stream(seed);

    // Per-class pools, pre-shuffled so popping from the back is a uniform
    // without-replacement draw.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (idx, &label) in labels.iter().enumerate() {
        if label as usize >= n_classes {
            return Err(Error::Partition(format!(
                "label {label} at example {idx} out of range for {n_classes} classes"
            )));
        }
        pools[label as usize].push(idx);
    }
    for pool in &mut pools {
        pool.shuffle(&mut stream);
    }

    let fixed_counts = if alpha.is_infinite() {
        let counts = largest_remainder(client_size, prior.as_slice());
        for (c, (&per_client, pool)) in counts.iter().zip(&pools).enumerate() {
            if per_client * n_clients > pool.len() {
                return Err(Error::Partition(format!(
                    "alpha = inf needs {} examples of class {c} ({} per client) but only {} exist",
                    per_client * n_clients,
                    per_client,
                    pool.len()
                )));
            }
        }
        Some(counts)
    } else {
        None
    };

    let mut order: Vec<usize> = (0..n_clients).collect();
    order.shuffle(&mut stream);

    let mut available: Vec<usize> = pools.iter().map(|p| p.len()).collect();
    let mut clients: Vec<Option<ClientDataset>> = vec![None; n_clients];
    for &client_id in &order {
        let counts = match &fixed_counts {
            Some(c) => c.clone(),
            None => {
                let q = sample_dirichlet(alpha, prior, &mut stream)?;
                draw_counts(q.as_slice(), client_size, &available, &mut stream)
            }
        };
        let mut example_indices = Vec::with_capacity(client_size);
        for (c, &take) in counts.iter().enumerate() {
            available[c] -= take;
            let pool = &mut pools[c];
            example_indices.extend(pool.drain(pool.len() - take..));
        }
        example_indices.sort_unstable();
        clients[client_id] = Some(ClientDataset {
            client_id,
            example_indices,
            class_counts: counts,
        });
    }

    Ok(Population {
        clients: clients
            .into_iter()
            .map(|c| c.expect("all clients assigned"))
            .collect(),
        scheme: PartitionScheme::Dirichlet { alpha },
        prior: prior.clone(),
        seed,
    })
}

/// The classic shard baseline: sort examples by label, cut into
/// `n_clients * shards_per_client` contiguous shards, deal shards to clients
/// uniformly at random without replacement.
pub fn sort_and_partition(
    labels: &[u8],
    num_classes: usize,
    n_clients: usize,
    shards_per_client: usize,
    seed: u64,
) -> Result<Population> {
    if n_clients == 0 || shards_per_client == 0 {
        return Err(Error::InvalidConfig(format!(
            "sort-and-partition: need n_clients >= 1 and shards_per_client >= 1, got {n_clients} x {shards_per_client}"
        )));
    }
    let n_shards = n_clients * shards_per_client;
    if labels.is_empty() || !labels.len().is_multiple_of(n_shards) {
        return Err(Error::Partition(format!(
            "{} examples cannot be cut into {n_shards} equal shards",
            labels.len()
        )));
    }
    let shard_size = labels.len() / n_shards;

    let mut sorted: Vec<usize> = (0..labels.len()).collect();
    sorted.sort_by_key(|&i| labels[i]); // stable: ties keep index order

    let mut shard_ids: Vec<usize> = (0..n_shards).collect();
    let mut stream = rng::stream(seed);
    shard_ids.shuffle(&mut stream);

    let prior = PriorDistribution::empirical(labels, num_classes)?;
    let mut clients = Vec::with_capacity(n_clients);
    for client_id in 0..n_clients {
        let mut example_indices = Vec::with_capacity(shards_per_client * shard_size);
        for &shard in &shard_ids[client_id * shards_per_client..(client_id + 1) * shards_per_client]
        {
            example_indices
                .extend_from_slice(&sorted[shard * shard_size..(shard + 1) * shard_size]);
        }
        example_indices.sort_unstable();
        let mut class_counts = vec![0usize; num_classes];
        for &idx in &example_indices {
            class_counts[labels[idx] as usize] += 1;
        }
        clients.push(ClientDataset {
            client_id,
            example_indices,
            class_counts,
        });
    }

    Ok(Population {
        clients,
        scheme: PartitionScheme::SortShards { shards_per_client },
        prior,
        seed,
    })
}

/// Divergence summary of a population relative to its prior.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationStats {
    /// Per-client normalized label histograms.
    pub histograms: Vec<Vec<f64>>,
    /// Mean L1 distance to the prior (earth mover's distance under a unit
    /// ground metric between classes). One-hot vs uniform over 10 classes
    /// gives 1.8.
    pub mean_emd: f64,
    /// Mean KL(client || prior) in nats. One-hot vs uniform gives ln 10.
    pub mean_kl: f64,
    pub min_class_count: usize,
    pub max_class_count: usize,
}

fn emd(q: &[f64], p: &[f64]) -> f64 {
    q.iter().zip(p).map(|(a, b)| (a - b).abs()).sum()
}

fn kl(q: &[f64], p: &[f64]) -> f64 {
    q.iter()
        .zip(p)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum()
}

pub fn population_stats(pop: &Population) -> PopulationStats {
    let p = pop.prior.as_slice();
    let histograms: Vec<Vec<f64>> = pop.clients.iter().map(|c| c.histogram()).collect();
    let n = histograms.len().max(1) as f64;
    let mean_emd = histograms.iter().map(|h| emd(h, p)).sum::<f64>() / n;
    let mean_kl = histograms.iter().map(|h| kl(h, p)).sum::<f64>() / n;
    let mut min_class_count = usize::MAX;
    let mut max_class_count = 0;
    for client in &pop.clients {
        for &c in &client.class_counts {
            min_class_count = min_class_count.min(c);
            max_class_count = max_class_count.max(c);
        }
    }
    if pop.clients.is_empty() {
        min_class_count = 0;
    }
    PopulationStats {
        histograms,
        mean_emd,
        mean_kl,
        min_class_count,
        max_class_count,
    }
}
