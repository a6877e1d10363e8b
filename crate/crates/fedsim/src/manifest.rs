//! Partition manifest files.
//!
//! A manifest records everything needed to rebuild a `Population` without
//! re-sampling: the seed, the scheme, the prior, and each client's example
//! indices and class counts. Floats are written in shortest round-trip
//! decimal form, so write-then-read reproduces the population exactly.
//!
//! ```text
//! fedsim-manifest v1
//! seed 42
//! scheme dirichlet 0.5        # or: scheme sort-shards 2
//! classes 10
//! prior 0.1 0.1 ... 0.1
//! clients 100
//! client 0
//! counts 50 43 ... 61
//! indices 5 9 14 ...
//! client 1
//! ...
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::partition::{ClientDataset, PartitionScheme, Population, PriorDistribution};

const HEADER: &str = "fedsim-manifest v1";

pub fn to_string(pop: &Population) -> String {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    out.push_str(&format!("seed {}\n", pop.seed));
    match pop.scheme {
        PartitionScheme::Dirichlet { alpha } => {
            out.push_str(&format!("scheme dirichlet {alpha}\n"));
        }
        PartitionScheme::SortShards { shards_per_client } => {
            out.push_str(&format!("scheme sort-shards {shards_per_client}\n"));
        }
    }
    out.push_str(&format!("classes {}\n", pop.num_classes()));
    out.push_str("prior");
    for v in pop.prior.as_slice() {
        out.push_str(&format!(" {v}"));
    }
    out.push('\n');
    out.push_str(&format!("clients {}\n", pop.clients.len()));
    for client in &pop.clients {
        out.push_str(&format!(
            "client {} size {}\n",
            client.client_id,
            client.len()
        ));
        out.push_str("counts");
        for c in &client.class_counts {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
        out.push_str("indices");
        for i in &client.example_indices {
            out.push_str(&format!(" {i}"));
        }
        out.push('\n');
    }
    out
}

pub fn write(pop: &Population, path: &Path) -> Result<()> {
    fs::write(path, to_string(pop)).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self, expected: &str) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(n, l)| (n + 1, l))
            .ok_or_else(|| parse_err(format!("unexpected end of file, expected {expected}")))
    }
}

fn parse_err(detail: impl Into<String>) -> Error {
    Error::Parse {
        what: "partition manifest".into(),
        detail: detail.into(),
    }
}

fn expect_keyword<'a>(line: &'a str, keyword: &str, line_no: usize) -> Result<&'a str> {
    line.strip_prefix(keyword).map(str::trim).ok_or_else(|| {
        parse_err(format!(
            "line {line_no}: expected `{keyword} ...`, got `{line}`"
        ))
    })
}

fn parse_number<T: std::str::FromStr>(token: &str, what: &str, line_no: usize) -> Result<T> {
    token.parse().map_err(|_| {
        parse_err(format!(
            "line {line_no}: cannot parse {what} from `{token}`"
        ))
    })
}

fn parse_vec<T: std::str::FromStr>(rest: &str, what: &str, line_no: usize) -> Result<Vec<T>> {
    rest.split_whitespace()
        .map(|t| parse_number(t, what, line_no))
        .collect()
}

pub fn from_str(text: &str) -> Result<Population> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };

    let (n, header) = lines.next_line("header")?;
    if header.trim() != HEADER {
        return Err(parse_err(format!(
            "line {n}: unrecognized header `{header}`"
        )));
    }

    let (n, line) = lines.next_line("seed")?;
    let seed: u64 = parse_number(expect_keyword(line, "seed", n)?, "seed", n)?;

    let (n, line) = lines.next_line("scheme")?;
    let rest = expect_keyword(line, "scheme", n)?;
    let mut parts = rest.split_whitespace();
    let scheme = match (parts.next(), parts.next()) {
        (Some("dirichlet"), Some(alpha)) => PartitionScheme::Dirichlet {
            alpha: parse_number(alpha, "alpha", n)?,
        },
        (Some("sort-shards"), Some(k)) => PartitionScheme::SortShards {
            shards_per_client: parse_number(k, "shards", n)?,
        },
        _ => return Err(parse_err(format!("line {n}: unrecognized scheme `{rest}`"))),
    };

    let (n, line) = lines.next_line("classes")?;
    let num_classes: usize = parse_number(expect_keyword(line, "classes", n)?, "class count", n)?;

    let (n, line) = lines.next_line("prior")?;
    let prior_values: Vec<f64> = parse_vec(expect_keyword(line, "prior", n)?, "prior weight", n)?;
    if prior_values.len() != num_classes {
        return Err(parse_err(format!(
            "line {n}: prior has {} entries, expected {num_classes}",
            prior_values.len()
        )));
    }
    let prior =
        PriorDistribution::new(prior_values).map_err(|e| parse_err(format!("line {n}: {e}")))?;

    let (n, line) = lines.next_line("clients")?;
    let n_clients: usize = parse_number(expect_keyword(line, "clients", n)?, "client count", n)?;

    let mut clients = Vec::with_capacity(n_clients);
    for expected_id in 0..n_clients {
        let (n, line) = lines.next_line("client")?;
        let rest = expect_keyword(line, "client", n)?;
        let mut parts = rest.split_whitespace();
        let client_id: usize = parse_number(parts.next().unwrap_or(""), "client id", n)?;
        if client_id != expected_id {
            return Err(parse_err(format!(
                "line {n}: client records out of order: got {client_id}, expected {expected_id}"
            )));
        }
        let size: usize = match (parts.next(), parts.next()) {
            (Some("size"), Some(tok)) => parse_number(tok, "client size", n)?,
            _ => {
                return Err(parse_err(format!(
                    "line {n}: expected `client {client_id} size N`"
                )))
            }
        };

        let (n, line) = lines.next_line("counts")?;
        let class_counts: Vec<usize> = parse_vec(expect_keyword(line, "counts", n)?, "count", n)?;
        if class_counts.len() != num_classes {
            return Err(parse_err(format!(
                "line {n}: {} counts, expected {num_classes}",
                class_counts.len()
            )));
        }

        let (n, line) = lines.next_line("indices")?;
        let example_indices: Vec<usize> =
            parse_vec(expect_keyword(line, "indices", n)?, "index", n)?;
        if example_indices.len() != size {
            return Err(parse_err(format!(
                "line {n}: {} indices, header said {size}",
                example_indices.len()
            )));
        }
        if class_counts.iter().sum::<usize>() != size {
            return Err(parse_err(format!(
                "line {n}: counts sum to {}, header said {size}",
                class_counts.iter().sum::<usize>()
            )));
        }
        clients.push(ClientDataset {
            client_id,
            example_indices,
            class_counts,
        });
    }

    Ok(Population {
        clients,
        scheme,
        prior,
        seed,
    })
}

pub fn read(path: &Path) -> Result<Population> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{sort_and_partition, synthesize_population};
    use crate::rng;
    use rand::seq::SliceRandom;

    fn sample_population(alpha: f64) -> Population {
        let mut labels: Vec<u8> = (0..2_000).map(|i| (i % 10) as u8).collect();
        labels.shuffle(&mut rng::stream(5));
        let prior = PriorDistribution::uniform(10);
        synthesize_population(&labels, 10, 200, alpha, &prior, 42).unwrap()
    }

    #[test]
    fn round_trip_reproduces_population_exactly() {
        for alpha in [0.05, 1.0, f64::INFINITY] {
            let pop = sample_population(alpha);
            let text = to_string(&pop);
            let back = from_str(&text).unwrap();
            assert_eq!(pop, back);
        }
    }

    #[test]
    fn round_trip_preserves_sort_shards_scheme() {
        let labels: Vec<u8> = (0..1_000).map(|i| (i / 100) as u8).collect();
        let pop = sort_and_partition(&labels, 10, 5, 2, 7).unwrap();
        let back = from_str(&to_string(&pop)).unwrap();
        assert_eq!(pop, back);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pop.manifest");
        let pop = sample_population(0.3);
        write(&pop, &path).unwrap();
        assert_eq!(read(&path).unwrap(), pop);
    }

    #[test]
    fn rejects_malformed_manifests() {
        assert!(from_str("").is_err());
        assert!(from_str("not a manifest\n").is_err());

        let pop = sample_population(1.0);
        let text = to_string(&pop);
        // Corrupt the counts line of the first client.
        let corrupted = text.replacen("counts", "conuts", 1);
        let err = from_str(&corrupted).unwrap_err().to_string();
        assert!(err.contains("counts"), "{err}");

        // Inconsistent size header.
        let corrupted = text.replacen("size 200", "size 199", 1);
        assert!(from_str(&corrupted).is_err());
    }
}
