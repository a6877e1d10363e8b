use fedsim::*;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn paired_data(theta_deg: f64, scale: f64, seed: u64) -> (Dataset, Dataset) {
    let (d, k) = (32usize, 10usize);
    let sep = 3.3 / (2.0 * (theta_deg.to_radians() / 2.0).sin()) * scale;
    let theta = theta_deg.to_radians();
    let (cos_h, sin_h) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let centers: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            let mut v = vec![0.0; d];
            let pair = c / 2;
            v[2 * pair] = sep * cos_h;
            v[2 * pair + 1] = if c % 2 == 0 {
                sep * sin_h
            } else {
                -sep * sin_h
            };
            v
        })
        .collect();
    let make = |per: usize, tag: u64, split| {
        let mut stream = rng::stream(rng::derive_seed(&[seed, tag]));
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                for &mu in center {
                    let eps: f64 = StandardNormal.sample(&mut stream);
                    features.push(mu + scale * eps);
                }
                labels.push(c as u8);
            }
        }
        Dataset::new(features, labels, d, k, split).unwrap()
    };
    (make(400, 1, Split::Train), make(200, 2, Split::Test))
}

fn main() {
    let model = ModelSpec {
        input_dim: 32,
        num_classes: 10,
        hidden_dim: 0,
        weight_decay: 0.0,
    };
    let (train, test) = paired_data(10.0, 0.3, 2024);
    for fraction in [0.25, 0.1] {
        let t = Instant::now();
        let sweep_cfg = SweepConfig {
            model,
            batch_size: 20,
            rounds: 300,
            eval_every: 50,
            clients: 20,
            client_size: 200,
            kind: ServerOptKind::Nesterov,
            repeats: 5,
            population_seed: 71,
            training_seed: 72,
            smoothed: false,
            grid: SweepGrid {
                alphas: vec![1e-2],
                fractions: vec![fraction],
                local_epochs: vec![1],
                learning_rates: sweep::default_learning_rates(),
                betas: sweep::default_betas(),
            },
        };
        let result = run_sweep(&sweep_cfg, &train, &test).unwrap();
        // FedAvg: best over eta among beta == 0; FedAvgM: best over (eta, beta > 0).
        let fedavg = result
            .cells
            .iter()
            .filter(|c| c.beta == 0.0)
            .map(|c| c.mean_accuracy())
            .fold(f64::NAN, f64::max);
        let best_m = result
            .cells
            .iter()
            .filter(|c| c.beta > 0.0)
            .max_by(|a, b| a.mean_accuracy().partial_cmp(&b.mean_accuracy()).unwrap())
            .unwrap();
        println!(
            "C={fraction}: fedavg={fedavg:.4} fedavgm={:.4} (lr={} beta={}) margin={:.4} [{:?}]",
            best_m.mean_accuracy(),
            best_m.learning_rate,
            best_m.beta,
            best_m.mean_accuracy() - fedavg,
            t.elapsed()
        );
        for beta in [0.0, 0.7, 0.9, 0.97, 0.99, 0.997] {
            let line: Vec<String> = result
                .cells
                .iter()
                .filter(|c| c.beta == beta)
                .map(|c| format!("{:.3}", c.mean_accuracy()))
                .collect();
            println!("  beta={beta}: {}", line.join(" "));
        }
    }
}
