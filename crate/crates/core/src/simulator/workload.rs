use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterShape, LoadMatrix};
use crate::router::csv_err;

const TRACE_HEADER: [&str; 4] = ["microbatch", "expert", "gpu", "tokens"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadSource {
    Zipf { s: f64, seed: u64, tokens_per_gpu: u64 },
    Trace { path: String },
}

/// Ordered per-micro-batch load matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub micro_batches: Vec<LoadMatrix>,
    pub source: WorkloadSource,
}

impl Workload {
    pub fn len(&self) -> usize {
        self.micro_batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.micro_batches.is_empty()
    }

    pub fn check_shape(&self, shape: &ClusterShape) -> Result<()> {
        for (i, mb) in self.micro_batches.iter().enumerate() {
            mb.check_dims(shape.num_experts, shape.num_gpus)
                .map_err(|e| Error::Dimension(format!("micro-batch {i}: {e}")))?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_HEADER).map_err(csv_err)?;
        for (i, mb) in self.micro_batches.iter().enumerate() {
            for e in 0..mb.num_experts() {
                for g in 0..mb.num_gpus() {
                    w.write_record([i.to_string(), e.to_string(), g.to_string(), mb.get(e, g).to_string()])
                        .map_err(csv_err)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

/// Normalized Zipf shares by rank: rank `i` (0-based) gets `(i + 1)^-s`.
pub fn zipf_shares(num_experts: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=num_experts).map(|i| (i as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Expert id at each popularity rank, drawn once per seed.
pub fn zipf_ranking(num_experts: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranking: Vec<usize> = (0..num_experts).collect();
    ranking.shuffle(&mut rng);
    ranking
}

pub fn gen_zipf_workload(
    shape: &ClusterShape,
    s: f64,
    tokens_per_gpu: u64,
    n_microbatches: usize,
    seed: u64,
) -> Result<Workload> {
    shape.validate()?;
    if !(s >= 0.0 && s.is_finite()) {
        return Err(Error::InvalidOption(format!(
            "zipf exponent must be finite and >= 0, got {s}"
        )));
    }
    let shares = zipf_shares(shape.num_experts, s);
    let ranking = zipf_ranking(shape.num_experts, seed);
    // suffix[k] is the probability mass of ranks k.. .
    let mut suffix = vec![0.0; shares.len() + 1];
    for k in (0..shares.len()).rev() {
        suffix[k] = suffix[k + 1] + shares[k];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut micro_batches = Vec::with_capacity(n_microbatches);
    for _ in 0..n_microbatches {
        let mut mb = LoadMatrix::zeros(shape.num_experts, shape.num_gpus);
        for g in 0..shape.num_gpus {
            // Multinomial draw as a chain of conditional binomials.
            let mut remaining = tokens_per_gpu;
            for (k, &expert) in ranking.iter().enumerate() {
                if remaining == 0 {
                    break;
                }
                let count = if k + 1 == ranking.len() {
                    remaining
                } else {
                    let p = (shares[k] / suffix[k]).clamp(0.0, 1.0);
                    Binomial::new(remaining, p)
                        .map_err(|e| Error::InvalidOption(e.to_string()))?
                        .sample(&mut rng)
                };
                mb.set(expert, g, count);
                remaining -= count;
            }
        }
        micro_batches.push(mb);
    }
    Ok(Workload {
        micro_batches,
        source: WorkloadSource::Zipf {
            s,
            seed,
            tokens_per_gpu,
        },
    })
}

/// Parses a trace CSV. Missing entries are zero; micro-batch ids run from 0
/// to the largest id present.
pub fn parse_trace<R: Read>(reader: R, shape: &ClusterShape) -> Result<Workload> {
    shape.validate()?;
    parse_trace_dims(reader, shape.num_experts, shape.num_gpus)
}

/// [`parse_trace`] against bare dimensions.
pub fn parse_trace_dims<R: Read>(reader: R, num_experts: usize, num_gpus: usize) -> Result<Workload> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header {}, got {}",
                TRACE_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut micro_batches: Vec<LoadMatrix> = Vec::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let cells = num_experts * num_gpus;
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize, name: &str| -> Result<u64> {
            let raw = record.get(i).ok_or_else(|| Error::Parse {
                line,
                message: format!("missing column {name}"),
            })?;
            raw.parse::<u64>().map_err(|_| Error::Parse {
                line,
                message: format!("{name} must be a non-negative integer, got {raw:?}"),
            })
        };
        if record.len() != TRACE_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected 4 columns, got {}", record.len()),
            });
        }
        let mb = field(0, "microbatch")? as usize;
        let expert = field(1, "expert")? as usize;
        let gpu = field(2, "gpu")? as usize;
        let tokens = field(3, "tokens")?;
        if expert >= num_experts || gpu >= num_gpus {
            return Err(Error::Parse {
                line,
                message: format!("entry ({expert}, {gpu}) outside {num_experts} experts x {num_gpus} GPUs"),
            });
        }
        while micro_batches.len() <= mb {
            micro_batches.push(LoadMatrix::zeros(num_experts, num_gpus));
            seen.push(vec![false; cells]);
        }
        let cell = expert * num_gpus + gpu;
        if seen[mb][cell] {
            return Err(Error::Parse {
                line,
                message: format!("duplicate entry for micro-batch {mb}, expert {expert}, gpu {gpu}"),
            });
        }
        seen[mb][cell] = true;
        micro_batches[mb].set(expert, gpu, tokens);
    }
    Ok(Workload {
        micro_batches,
        source: WorkloadSource::Trace { path: String::new() },
    })
}

pub fn load_trace(path: &Path, shape: &ClusterShape) -> Result<Workload> {
    let mut workload = parse_trace(File::open(path)?, shape)?;
    workload.source = WorkloadSource::Trace {
        path: path.display().to_string(),
    };
    Ok(workload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape() -> ClusterShape {
        ClusterShape::new(8, 32, 2, 8).unwrap()
    }

    #[test]
    fn harmonic_shares() {
        let s = zipf_shares(4, 1.0);
        let expected = [12.0 / 25.0, 6.0 / 25.0, 4.0 / 25.0, 3.0 / 25.0];
        for (a, b) in s.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(zipf_shares(5, 0.0).iter().all(|&p| (p - 0.2).abs() < 1e-12));
    }

    #[test]
    fn rows_sum_to_tokens_per_gpu() {
        let w = gen_zipf_workload(&shape(), 1.2, 2048, 5, 3).unwrap();
        assert_eq!(w.len(), 5);
        for mb in &w.micro_batches {
            assert_eq!(mb.source_totals(), vec![2048; 8]);
        }
        w.check_shape(&shape()).unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let a = gen_zipf_workload(&shape(), 0.8, 512, 3, 9).unwrap();
        let b = gen_zipf_workload(&shape(), 0.8, 512, 3, 9).unwrap();
        let c = gen_zipf_workload(&shape(), 0.8, 512, 3, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.micro_batches, c.micro_batches);
    }

    #[test]
    fn ranking_persists_across_micro_batches() {
        let w = gen_zipf_workload(&shape(), 2.0, 4096, 4, 5).unwrap();
        let top = zipf_ranking(32, 5)[0];
        for mb in &w.micro_batches {
            let totals = mb.expert_totals();
            let argmax = (0..32).max_by_key(|&e| totals[e]).unwrap();
            assert_eq!(argmax, top);
        }
    }

    #[test]
    fn negative_exponent_rejected() {
        assert!(gen_zipf_workload(&shape(), -0.5, 10, 1, 0).is_err());
    }

    #[test]
    fn trace_roundtrip() {
        let w = gen_zipf_workload(&shape(), 1.0, 256, 3, 1).unwrap();
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = parse_trace(buf.as_slice(), &shape()).unwrap();
        assert_eq!(back.micro_batches, w.micro_batches);
    }

    #[test]
    fn empty_body_gives_no_micro_batches() {
        let w = parse_trace("microbatch,expert,gpu,tokens\n".as_bytes(), &shape()).unwrap();
        assert!(w.is_empty());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "microbatch,expert,gpu,tokens\n0,0,0,5\n0,1,0,-3\n";
        match parse_trace(text.as_bytes(), &shape()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("tokens"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let text = "microbatch,expert,gpu,tokens\n0,40,0,5\n";
        assert!(matches!(
            parse_trace(text.as_bytes(), &shape()),
            Err(Error::Parse { line: 2, .. })
        ));
        let text = "microbatch,expert,gpu,tokens\n0,1,0,5\n0,1,0,6\n";
        assert!(matches!(
            parse_trace(text.as_bytes(), &shape()),
            Err(Error::Parse { line: 3, .. })
        ));
        let text = "mb,expert,gpu,tokens\n";
        assert!(matches!(
            parse_trace(text.as_bytes(), &shape()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
