//! Symmetric two-replica placements from Cayley graphs of abelian groups.
//!
//! Every family below is a union of Cayley graphs `Cay(Γ, {±g})` on
//! `2^p` vertices. Edges generated by one `±g` class form a perfect matching
//! (when `2g = 0`) or disjoint even cycles, which gives a proper edge
//! coloring with one or two colors per class. Colors become local slot
//! indices, so slot consistency holds by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterShape, Placement};

/// `2^p` GPUs hosting `2^q` experts each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CayleyShape {
    pub p: u32,
    pub q: u32,
}

impl CayleyShape {
    pub fn from_cluster(shape: &ClusterShape) -> Result<Self> {
        shape.validate()?;
        let g = shape.num_gpus;
        if shape.d != 2 {
            return Err(Error::Construction(format!(
                "Cayley placements need d = 2, got d = {}; {}",
                shape.d,
                supported_cayley_shapes()
            )));
        }
        if !g.is_power_of_two() || g < 2 {
            return Err(Error::Construction(format!(
                "Cayley placements need a power-of-two GPU count, got {g}; {}",
                supported_cayley_shapes()
            )));
        }
        let replicas = shape.total_replicas();
        if !replicas.is_multiple_of(g) || !(replicas / g).is_power_of_two() {
            return Err(Error::Construction(format!(
                "Cayley placements need a power-of-two number of experts per GPU, got {replicas}/{g}; {}",
                supported_cayley_shapes()
            )));
        }
        Ok(Self {
            p: g.trailing_zeros(),
            q: (replicas / g).trailing_zeros(),
        })
    }

    pub fn cluster(&self, gpus_per_node: usize) -> Result<ClusterShape> {
        let g = 1usize << self.p;
        ClusterShape::new(g, (g << self.q) / 2, 2, gpus_per_node)
    }

    fn family(&self) -> Option<Family> {
        let g = 1usize << self.p;
        let degree = 1usize << self.q;
        if degree + 1 >= g {
            return Some(Family::Complete {
                copies: degree / (g - 1),
                residual: degree % (g - 1),
            });
        }
        match (self.p, self.q) {
            (_, 0) => Some(Family::Regular(1)),
            (_, 1) => Some(Family::Regular(2)),
            (3, 2) => Some(Family::Regular(4)),
            (p, 2) if p >= 4 => Some(Family::Regular(4)),
            _ => None,
        }
    }

    pub fn description(&self) -> Option<String> {
        let g = 1usize << self.p;
        self.family().map(|f| match f {
            Family::Complete { copies, residual } => {
                let base = if copies == 1 {
                    format!("complete graph K{g}")
                } else {
                    format!("{copies} copies of K{g}")
                };
                if residual == 0 {
                    base
                } else {
                    format!(
                        "{base} plus a {residual}-regular residual ({})",
                        regular_name(g, residual)
                    )
                }
            }
            Family::Regular(k) => regular_name(g, k),
        })
    }
}

#[derive(Clone, Copy, Debug)]
enum Family {
    Complete { copies: usize, residual: usize },
    Regular(usize),
}

fn regular_name(g: usize, k: usize) -> String {
    match k {
        1 => "perfect matching".into(),
        2 => format!("{g}-cycle"),
        4 if g == 8 => "K4,4 from Z2 x Z4".into(),
        4 => {
            let (a, b) = torus_dims(g);
            format!("{a}x{b} torus")
        }
        _ => format!("{k} XOR matchings"),
    }
}

pub fn supported_cayley_shapes() -> String {
    "supported Cayley shapes (d = 2, 2^p GPUs, 2^q experts per GPU): \
     q = 0 (perfect matching); q = 1, p >= 2 (cycle); q = 2, p = 3 (K4,4); \
     q = 2, p >= 4 (torus); 2^q >= 2^p - 1 (complete graphs plus residual matchings)"
        .into()
}

fn torus_dims(g: usize) -> (usize, usize) {
    let p = g.trailing_zeros();
    (1 << (p / 2), 1 << (p - p / 2))
}

/// Finite abelian group `Z_{m1} x ... x Z_{mk}`, elements indexed in mixed
/// radix with the last coordinate fastest.
struct Group {
    dims: Vec<usize>,
}

impl Group {
    fn order(&self) -> usize {
        self.dims.iter().product()
    }

    fn coords(&self, mut idx: usize) -> Vec<usize> {
        let mut c = vec![0; self.dims.len()];
        for (i, &m) in self.dims.iter().enumerate().rev() {
            c[i] = idx % m;
            idx /= m;
        }
        c
    }

    fn index(&self, c: &[usize]) -> usize {
        c.iter().zip(&self.dims).fold(0, |acc, (&x, &m)| acc * m + x)
    }

    fn add(&self, v: usize, g: &[usize]) -> usize {
        let c: Vec<usize> = self
            .coords(v)
            .iter()
            .zip(g)
            .zip(&self.dims)
            .map(|((&a, &b), &m)| (a + b) % m)
            .collect();
        self.index(&c)
    }
}

/// Edges `(u, v, color)` and the next unused color.
type ColoredEdges = (Vec<(usize, usize, usize)>, usize);

/// Edges `(u, v, color)` of `Cay(group, {±g : g in gens})`; colors start at `first_color`.
fn cayley_edges(group: &Group, gens: &[Vec<usize>], first_color: usize) -> Result<ColoredEdges> {
    let n = group.order();
    let mut edges = Vec::new();
    let mut color = first_color;
    for g in gens {
        let involution = (0..n).all(|v| group.add(group.add(v, g), g) == v);
        if involution {
            for v in 0..n {
                let w = group.add(v, g);
                if v < w {
                    edges.push((v, w, color));
                }
            }
            color += 1;
            continue;
        }
        let mut visited = vec![false; n];
        for start in 0..n {
            if visited[start] {
                continue;
            }
            let mut w = start;
            let mut i = 0;
            loop {
                visited[w] = true;
                let next = group.add(w, g);
                edges.push((w.min(next), w.max(next), color + i % 2));
                i += 1;
                w = next;
                if w == start {
                    break;
                }
            }
            if i % 2 != 0 {
                return Err(Error::Construction(format!("generator {g:?} has odd order {i}")));
            }
        }
        color += 2;
    }
    Ok((edges, color))
}

fn xor_group(g: usize) -> Group {
    Group {
        dims: vec![2; g.trailing_zeros() as usize],
    }
}

fn bits(group: &Group, j: usize) -> Vec<usize> {
    group.coords(j)
}

fn regular_edges(g: usize, k: usize, first_color: usize) -> Result<ColoredEdges> {
    match k {
        0 => Ok((Vec::new(), first_color)),
        2 if g >= 4 => cayley_edges(&Group { dims: vec![g] }, &[vec![1]], first_color),
        4 if g == 8 => cayley_edges(&Group { dims: vec![2, 4] }, &[vec![0, 1], vec![1, 1]], first_color),
        4 if g >= 16 => {
            let (a, b) = torus_dims(g);
            cayley_edges(&Group { dims: vec![a, b] }, &[vec![1, 0], vec![0, 1]], first_color)
        }
        _ => {
            let group = xor_group(g);
            let gens: Vec<Vec<usize>> = (1..=k).map(|j| bits(&group, j)).collect();
            cayley_edges(&group, &gens, first_color)
        }
    }
}

/// Symmetric placement for `d = 2` on `2^p` GPUs with `2^q` experts each.
pub fn cayley_symmetric(shape: &ClusterShape) -> Result<Placement> {
    let cs = CayleyShape::from_cluster(shape)?;
    let Some(family) = cs.family() else {
        return Err(Error::Construction(format!(
            "no catalogued construction for p = {}, q = {}; {}",
            cs.p,
            cs.q,
            supported_cayley_shapes()
        )));
    };
    let g = shape.num_gpus;
    let mut edges = Vec::new();
    let mut color = 0;
    match family {
        Family::Complete { copies, residual } => {
            let group = xor_group(g);
            let gens: Vec<Vec<usize>> = (1..g).map(|j| bits(&group, j)).collect();
            for _ in 0..copies {
                let (e, c) = cayley_edges(&group, &gens, color)?;
                edges.extend(e);
                color = c;
            }
            let (e, _) = regular_edges(g, residual, color)?;
            edges.extend(e);
        }
        Family::Regular(k) => {
            let (e, _) = regular_edges(g, k, 0)?;
            edges.extend(e);
        }
    }
    edges.sort_unstable_by_key(|&(u, v, c)| (c, u, v));
    let groups = edges.iter().map(|&(u, v, _)| vec![u, v]).collect();
    let slots = edges.iter().map(|&(_, _, c)| c).collect();
    Placement::new(g, 2, groups, slots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::validate_uniform_placement;

    fn build(p: u32, q: u32) -> (ClusterShape, Placement) {
        let shape = CayleyShape { p, q }.cluster(1 << p).unwrap();
        let placement = cayley_symmetric(&shape).unwrap();
        (shape, placement)
    }

    fn degrees(p: &Placement) -> Vec<usize> {
        p.replicas_per_gpu()
    }

    fn is_bipartite(p: &Placement) -> bool {
        let n = p.num_gpus();
        let mut side = vec![usize::MAX; n];
        let mut adj = vec![Vec::new(); n];
        for grp in p.edp_groups() {
            adj[grp[0]].push(grp[1]);
            adj[grp[1]].push(grp[0]);
        }
        for s in 0..n {
            if side[s] != usize::MAX {
                continue;
            }
            side[s] = 0;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &v in &adj[u] {
                    if side[v] == usize::MAX {
                        side[v] = 1 - side[u];
                        stack.push(v);
                    } else if side[v] == side[u] {
                        return false;
                    }
                }
            }
        }
        true
    }

    #[test]
    fn eight_cycle() {
        let (shape, p) = build(3, 1);
        assert_eq!(p.num_experts(), 8);
        assert_eq!(degrees(&p), vec![2; 8]);
        assert!(validate_uniform_placement(&p, &shape).is_empty());
        // One cycle: walking edges from GPU 0 visits all 8 GPUs.
        let mut seen = [false; 8];
        let (mut prev, mut cur) = (usize::MAX, 0);
        for _ in 0..8 {
            seen[cur] = true;
            let next = p
                .edp_groups()
                .iter()
                .filter(|g| g.contains(&cur))
                .map(|g| if g[0] == cur { g[1] } else { g[0] })
                .find(|&v| v != prev)
                .unwrap();
            prev = cur;
            cur = next;
        }
        assert!(seen.iter().all(|&s| s));
        assert_eq!(cur, 0);
    }

    #[test]
    fn k44_is_bipartite_and_four_regular() {
        let (shape, p) = build(3, 2);
        assert_eq!(p.num_experts(), 16);
        assert_eq!(degrees(&p), vec![4; 8]);
        assert!(is_bipartite(&p));
        assert!(validate_uniform_placement(&p, &shape).is_empty());
        let mut pairs = p.edp_groups().to_vec();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 16, "K4,4 is simple");
    }

    #[test]
    fn torus_has_girth_four() {
        let (shape, p) = build(4, 2);
        assert_eq!(p.num_experts(), 32);
        assert_eq!(degrees(&p), vec![4; 16]);
        assert!(validate_uniform_placement(&p, &shape).is_empty());
        let has: std::collections::HashSet<(usize, usize)> = p
            .edp_groups()
            .iter()
            .map(|g| (g[0].min(g[1]), g[0].max(g[1])))
            .collect();
        let edge = |a: usize, b: usize| has.contains(&(a.min(b), a.max(b)));
        let triangle = (0..16).any(|a| (0..16).any(|b| (0..16).any(|c| edge(a, b) && edge(b, c) && edge(a, c))));
        assert!(!triangle);
        let square = (0..16).any(|a| {
            (0..16).any(|b| {
                (0..16)
                    .any(|c| (0..16).any(|d| a != c && b != d && edge(a, b) && edge(b, c) && edge(c, d) && edge(d, a)))
            })
        });
        assert!(square);
    }

    #[test]
    fn complete_plus_residual() {
        let (shape, p) = build(3, 3);
        assert_eq!(p.num_experts(), 32);
        assert_eq!(degrees(&p), vec![8; 8]);
        assert!(validate_uniform_placement(&p, &shape).is_empty());
        let (shape, p) = build(3, 5);
        assert_eq!(p.num_experts(), 128);
        assert_eq!(degrees(&p), vec![32; 8]);
        assert!(validate_uniform_placement(&p, &shape).is_empty());
    }

    #[test]
    fn unsupported_shape_lists_catalog() {
        let shape = CayleyShape { p: 4, q: 3 }.cluster(16).unwrap();
        let err = cayley_symmetric(&shape).unwrap_err().to_string();
        assert!(err.contains("supported Cayley shapes"), "{err}");
        let odd = ClusterShape::new(6, 6, 2, 6).unwrap();
        assert!(cayley_symmetric(&odd).is_err());
    }

    #[test]
    fn small_shapes() {
        for (p, q) in [(1, 0), (1, 2), (2, 0), (2, 1), (2, 2), (3, 0), (5, 1), (5, 2), (2, 4)] {
            let (shape, placement) = build(p, q);
            assert!(validate_uniform_placement(&placement, &shape).is_empty(), "p={p} q={q}");
        }
    }
}
