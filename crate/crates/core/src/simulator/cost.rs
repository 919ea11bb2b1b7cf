use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::router::TransferPlan;

/// Abstract simulated-time constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostModel {
    /// Compute time per token.
    pub t_token: f64,
    /// Transfer time per token between GPUs of one node.
    pub alpha_intra: f64,
    /// Transfer time per token between nodes.
    pub alpha_inter: f64,
    /// Scheduling latency per micro-batch.
    pub t_schedule: f64,
    /// Hide scheduling entirely behind preceding work.
    pub overlap_schedule: bool,
    /// Fraction of tokens in the scheduled part under pipelining.
    pub pipeline_ratio: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            t_token: 1.0,
            alpha_intra: 0.1,
            alpha_inter: 1.0,
            t_schedule: 100.0,
            overlap_schedule: false,
            pipeline_ratio: 1.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("t_token", self.t_token),
            ("alpha_intra", self.alpha_intra),
            ("alpha_inter", self.alpha_inter),
            ("t_schedule", self.t_schedule),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                problems.push(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.pipeline_ratio > 0.0 && self.pipeline_ratio <= 1.0) {
            problems.push(format!("pipeline_ratio must be in (0, 1], got {}", self.pipeline_ratio));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidOption(problems.join("; ")))
        }
    }

    /// All-to-all time: the slowest GPU, each link class bounded by the
    /// larger of its send and receive volume.
    pub fn comm_time(&self, transfer: &TransferPlan) -> f64 {
        (0..transfer.num_gpus)
            .map(|g| {
                let intra = transfer.send_intra[g].max(transfer.recv_intra[g]) as f64;
                let inter = transfer.send_inter[g].max(transfer.recv_inter[g]) as f64;
                self.alpha_intra * intra + self.alpha_inter * inter
            })
            .fold(0.0, f64::max)
    }
}

/// Per-micro-batch time split of one MoE layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerBreakdown {
    pub compute: f64,
    pub dispatch: f64,
    pub combine: f64,
    /// Scheduling latency not covered by overlap.
    pub schedule: f64,
    pub migration: f64,
}

impl LayerBreakdown {
    pub fn total(&self) -> f64 {
        self.compute + self.dispatch + self.combine + self.schedule + self.migration
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Topology;
    use crate::router::{build_transfer_plan, RouteRange, RoutingTable};

    #[test]
    fn defaults_validate() {
        CostModel::default().validate().unwrap();
        let bad = CostModel {
            t_token: -1.0,
            pipeline_ratio: 0.0,
            ..CostModel::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("t_token") && msg.contains("pipeline_ratio"));
    }

    #[test]
    fn comm_time_takes_slowest_gpu() {
        let topo = Topology::new(4, 2).unwrap();
        let table = RoutingTable {
            ranges: vec![
                RouteRange {
                    expert: 0,
                    src: 0,
                    dst: 1,
                    count: 10,
                },
                RouteRange {
                    expert: 0,
                    src: 0,
                    dst: 2,
                    count: 3,
                },
                RouteRange {
                    expert: 1,
                    src: 3,
                    dst: 3,
                    count: 50,
                },
            ],
        };
        let plan = build_transfer_plan(&table, &topo).unwrap();
        let cost = CostModel::default();
        assert!((cost.comm_time(&plan) - (0.1 * 10.0 + 3.0)).abs() < 1e-12);
    }

    #[test]
    fn breakdown_sums() {
        let b = LayerBreakdown {
            compute: 1.0,
            dispatch: 2.0,
            combine: 2.0,
            schedule: 0.5,
            migration: 10.0,
        };
        assert_eq!(b.total(), 15.5);
    }
}
