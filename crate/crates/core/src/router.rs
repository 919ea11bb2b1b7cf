//! Turning replica loads into concrete token ranges.
//!
//! Routing works on contiguous token ranges per (expert, source GPU), never
//! on individual tokens. Local tokens are served first; the rest are swept
//! in ascending source order against the expert's EDP group in list order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LoadMatrix, Placement, ReplicaLoadPlan, Topology};

/// `count` tokens of `expert` travel from `src` to its replica on `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RouteRange {
    pub expert: usize,
    pub src: usize,
    pub dst: usize,
    pub count: u64,
}

/// Ranges ordered by (expert, src); within one (expert, src) they appear in
/// token sequence order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoutingTable {
    pub ranges: Vec<RouteRange>,
}

impl RoutingTable {
    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Tokens served on the GPU they originate from.
    pub fn local_volume(&self) -> u64 {
        self.ranges.iter().filter(|r| r.src == r.dst).map(|r| r.count).sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["expert", "src", "dst", "count"]).map_err(csv_err)?;
        for r in &self.ranges {
            w.serialize((r.expert, r.src, r.dst, r.count)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["expert", "src", "dst", "count"] {
            return Err(Error::Parse {
                line: 1,
                message: "expected header expert,src,dst,count".into(),
            });
        }
        let mut ranges = Vec::new();
        for (i, record) in rdr.deserialize::<(usize, usize, usize, u64)>().enumerate() {
            let (expert, src, dst, count) = record.map_err(|e| Error::Parse {
                line: i + 2,
                message: e.to_string(),
            })?;
            ranges.push(RouteRange {
                expert,
                src,
                dst,
                count,
            });
        }
        Ok(Self { ranges })
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

/// Integer replica loads per expert in EDP-group order, checked against the input.
fn integral_targets(placement: &Placement, loads: &LoadMatrix, plan: &ReplicaLoadPlan) -> Result<Vec<Vec<u64>>> {
    loads.check_dims(placement.num_experts(), placement.num_gpus())?;
    if plan.num_experts() != placement.num_experts() {
        return Err(Error::Contract(format!(
            "plan covers {} experts, placement has {}",
            plan.num_experts(),
            placement.num_experts()
        )));
    }
    let mut targets = Vec::with_capacity(placement.num_experts());
    for e in 0..placement.num_experts() {
        let group = placement.group(e);
        let entries = plan.expert(e);
        if entries.len() != group.len() || entries.iter().zip(group).any(|(&(g, _), &q)| g != q) {
            return Err(Error::Contract(format!(
                "plan entries of expert {e} do not follow its EDP group"
            )));
        }
        let mut row = Vec::with_capacity(group.len());
        for &(g, x) in entries {
            if x < 0.0 || x.fract() != 0.0 {
                return Err(Error::Contract(format!(
                    "replica load {x} of expert {e} on GPU {g} is not a non-negative integer"
                )));
            }
            row.push(x as u64);
        }
        let planned: u64 = row.iter().sum();
        let input: u64 = loads.row(e).iter().sum();
        if planned != input {
            return Err(Error::Contract(format!(
                "expert {e}: plan assigns {planned} tokens but the input has {input}"
            )));
        }
        targets.push(row);
    }
    Ok(targets)
}

/// Locality-first routing: same-GPU, then the sweep.
pub fn route_tokens(placement: &Placement, loads: &LoadMatrix, plan: &ReplicaLoadPlan) -> Result<RoutingTable> {
    route(placement, loads, plan, None)
}

/// Three-phase routing: same-GPU, then same-node, then cross-node.
pub fn route_topology_aware(
    placement: &Placement,
    loads: &LoadMatrix,
    plan: &ReplicaLoadPlan,
    topology: &Topology,
) -> Result<RoutingTable> {
    if topology.num_gpus != placement.num_gpus() {
        return Err(Error::Dimension(format!(
            "topology has {} GPUs, placement has {}",
            topology.num_gpus,
            placement.num_gpus()
        )));
    }
    route(placement, loads, plan, Some(topology))
}

fn route(
    placement: &Placement,
    loads: &LoadMatrix,
    plan: &ReplicaLoadPlan,
    topology: Option<&Topology>,
) -> Result<RoutingTable> {
    let targets = integral_targets(placement, loads, plan)?;
    let g_count = placement.num_gpus();
    let mut ranges = Vec::new();
    for (e, target) in targets.iter().enumerate() {
        let group = placement.group(e);
        let mut remain_in: Vec<u64> = loads.row(e).to_vec();
        let mut remain_x = target.clone();
        // Per source, ranges in the order they were cut.
        let mut per_src: Vec<Vec<RouteRange>> = vec![Vec::new(); g_count];
        let mut emit = |src: usize, p: usize, remain_in: &mut [u64], remain_x: &mut [u64]| {
            let t = remain_in[src].min(remain_x[p]);
            if t > 0 {
                remain_in[src] -= t;
                remain_x[p] -= t;
                per_src[src].push(RouteRange {
                    expert: e,
                    src,
                    dst: group[p],
                    count: t,
                });
            }
        };

        let mut local_order: Vec<usize> = (0..group.len()).collect();
        local_order.sort_by_key(|&p| group[p]);
        for p in local_order {
            emit(group[p], p, &mut remain_in, &mut remain_x);
        }
        if let Some(topo) = topology {
            for src in 0..g_count {
                for (p, &dst) in group.iter().enumerate() {
                    if topo.same_node(src, dst) {
                        emit(src, p, &mut remain_in, &mut remain_x);
                    }
                }
            }
        }
        for src in 0..g_count {
            for p in 0..group.len() {
                emit(src, p, &mut remain_in, &mut remain_x);
            }
        }
        ranges.extend(per_src.into_iter().flatten());
    }
    Ok(RoutingTable { ranges })
}

/// Aggregated all-to-all traffic of a routing table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub num_gpus: usize,
    /// Row-major `num_gpus x num_gpus`; entry `(src, dst)` is the token count.
    pub pairs: Vec<u64>,
    pub send: Vec<u64>,
    pub recv: Vec<u64>,
    pub local: Vec<u64>,
    pub send_intra: Vec<u64>,
    pub send_inter: Vec<u64>,
    pub recv_intra: Vec<u64>,
    pub recv_inter: Vec<u64>,
}

impl TransferPlan {
    pub fn pair(&self, src: usize, dst: usize) -> u64 {
        self.pairs[src * self.num_gpus + dst]
    }

    pub fn total_local(&self) -> u64 {
        self.local.iter().sum()
    }

    pub fn total_intra(&self) -> u64 {
        self.send_intra.iter().sum()
    }

    pub fn total_inter(&self) -> u64 {
        self.send_inter.iter().sum()
    }
}

pub fn build_transfer_plan(table: &RoutingTable, topology: &Topology) -> Result<TransferPlan> {
    let n = topology.num_gpus;
    let mut plan = TransferPlan {
        num_gpus: n,
        pairs: vec![0; n * n],
        send: vec![0; n],
        recv: vec![0; n],
        local: vec![0; n],
        send_intra: vec![0; n],
        send_inter: vec![0; n],
        recv_intra: vec![0; n],
        recv_inter: vec![0; n],
    };
    for r in &table.ranges {
        if r.src >= n || r.dst >= n {
            return Err(Error::Contract(format!(
                "range {}->{} outside the {n}-GPU topology",
                r.src, r.dst
            )));
        }
        plan.pairs[r.src * n + r.dst] += r.count;
        if r.src == r.dst {
            plan.local[r.src] += r.count;
            continue;
        }
        plan.send[r.src] += r.count;
        plan.recv[r.dst] += r.count;
        if topology.same_node(r.src, r.dst) {
            plan.send_intra[r.src] += r.count;
            plan.recv_intra[r.dst] += r.count;
        } else {
            plan.send_inter[r.src] += r.count;
            plan.recv_inter[r.dst] += r.count;
        }
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_expert(
        group: Vec<usize>,
        num_gpus: usize,
        input: Vec<u64>,
        x: Vec<(usize, f64)>,
    ) -> (Placement, LoadMatrix, ReplicaLoadPlan) {
        let p = Placement::new(num_gpus, 2, vec![group], vec![0]).unwrap();
        let loads = LoadMatrix::from_rows(vec![input]).unwrap();
        let plan = ReplicaLoadPlan::from_entries(num_gpus, vec![x]);
        (p, loads, plan)
    }

    #[test]
    fn all_local_single_range() {
        let (p, l, plan) = one_expert(vec![0, 1], 2, vec![4, 0], vec![(0, 4.0), (1, 0.0)]);
        let t = route_tokens(&p, &l, &plan).unwrap();
        assert_eq!(
            t.ranges,
            vec![RouteRange {
                expert: 0,
                src: 0,
                dst: 0,
                count: 4
            }]
        );
    }

    #[test]
    fn remote_source_sweeps_in_group_order() {
        let (p, l, plan) = one_expert(vec![0, 1], 3, vec![0, 0, 4], vec![(0, 3.0), (1, 1.0)]);
        let t = route_tokens(&p, &l, &plan).unwrap();
        assert_eq!(
            t.ranges,
            vec![
                RouteRange {
                    expert: 0,
                    src: 2,
                    dst: 0,
                    count: 3
                },
                RouteRange {
                    expert: 0,
                    src: 2,
                    dst: 1,
                    count: 1
                },
            ]
        );
    }

    #[test]
    fn topology_prefers_same_node() {
        let (p, l, plan) = one_expert(vec![2, 1], 4, vec![4, 0, 0, 0], vec![(2, 2.0), (1, 2.0)]);
        let topo = Topology::new(4, 2).unwrap();
        let t = route_topology_aware(&p, &l, &plan, &topo).unwrap();
        assert_eq!(
            t.ranges,
            vec![
                RouteRange {
                    expert: 0,
                    src: 0,
                    dst: 1,
                    count: 2
                },
                RouteRange {
                    expert: 0,
                    src: 0,
                    dst: 2,
                    count: 2
                },
            ]
        );
        // The plain sweep follows list order instead.
        assert_eq!(route_tokens(&p, &l, &plan).unwrap().ranges[0].dst, 2);
    }

    #[test]
    fn single_node_topology_matches_plain() {
        let (p, l, plan) = one_expert(vec![0, 2], 4, vec![1, 2, 3, 4], vec![(0, 5.0), (2, 5.0)]);
        let a = route_tokens(&p, &l, &plan).unwrap();
        let b = route_topology_aware(&p, &l, &plan, &Topology::single_node(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_loads_give_empty_table() {
        let (p, l, plan) = one_expert(vec![0, 1], 2, vec![0, 0], vec![(0, 0.0), (1, 0.0)]);
        assert!(route_tokens(&p, &l, &plan).unwrap().is_empty());
    }

    #[test]
    fn rejects_inconsistent_plan() {
        let (p, l, plan) = one_expert(vec![0, 1], 2, vec![4, 0], vec![(0, 3.0), (1, 0.0)]);
        assert!(matches!(route_tokens(&p, &l, &plan), Err(Error::Contract(_))));
        let (p, l, plan) = one_expert(vec![0, 1], 2, vec![4, 0], vec![(0, 3.5), (1, 0.5)]);
        assert!(matches!(route_tokens(&p, &l, &plan), Err(Error::Contract(_))));
    }

    #[test]
    fn transfer_plan_symmetric_swap() {
        let table = RoutingTable {
            ranges: vec![
                RouteRange {
                    expert: 0,
                    src: 0,
                    dst: 1,
                    count: 3,
                },
                RouteRange {
                    expert: 1,
                    src: 1,
                    dst: 0,
                    count: 3,
                },
            ],
        };
        let tp = build_transfer_plan(&table, &Topology::single_node(2)).unwrap();
        assert_eq!(tp.send, vec![3, 3]);
        assert_eq!(tp.recv, vec![3, 3]);
        assert_eq!(tp.pair(0, 1), 3);
        assert_eq!(tp.total_inter(), 0);
    }

    #[test]
    fn csv_roundtrip() {
        let table = RoutingTable {
            ranges: vec![RouteRange {
                expert: 1,
                src: 2,
                dst: 3,
                count: 7,
            }],
        };
        let text = table.to_csv();
        assert_eq!(text, "expert,src,dst,count\n1,2,3,7\n");
        assert_eq!(RoutingTable::read_csv(text.as_bytes()).unwrap(), table);
    }
}
