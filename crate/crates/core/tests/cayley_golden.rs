//! Checked-in Cayley placements. Run with `UPDATE_GOLDENS=1` to regenerate.

use std::path::PathBuf;

use harmony_core::placement::{adjacency_listing, cayley_symmetric, CayleyShape};

pub const GOLDEN_SHAPES: [(u32, u32); 5] = [(3, 1), (4, 2), (3, 2), (3, 3), (3, 5)];

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn render(p: u32, q: u32) -> (String, String) {
    let shape = CayleyShape { p, q }.cluster(1 << p).unwrap();
    let placement = cayley_symmetric(&shape).unwrap();
    let mut json = placement.to_json();
    json.push('\n');
    (adjacency_listing(&placement).unwrap(), json)
}

#[test]
fn cayley_placements_match_goldens() {
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();
    let dir = golden_dir();
    for (p, q) in GOLDEN_SHAPES {
        let (adj, json) = render(p, q);
        let adj_path = dir.join(format!("cayley_p{p}_q{q}.adj"));
        let json_path = dir.join(format!("cayley_p{p}_q{q}.json"));
        if update {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&adj_path, &adj).unwrap();
            std::fs::write(&json_path, &json).unwrap();
            continue;
        }
        let want_adj = std::fs::read_to_string(&adj_path).unwrap_or_else(|e| panic!("{}: {e}", adj_path.display()));
        let want_json = std::fs::read_to_string(&json_path).unwrap_or_else(|e| panic!("{}: {e}", json_path.display()));
        assert_eq!(adj, want_adj, "({p}, {q}) adjacency");
        assert_eq!(json, want_json, "({p}, {q}) placement");
    }
}

#[test]
fn goldens_are_regular_multigraphs() {
    for (p, q) in GOLDEN_SHAPES {
        let (adj, _) = render(p, q);
        for line in adj.lines() {
            let (_, nbrs) = line.split_once(": ").unwrap();
            assert_eq!(nbrs.split(' ').count(), 1 << q, "({p}, {q}) line {line}");
        }
    }
}
