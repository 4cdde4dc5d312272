use std::collections::VecDeque;

use super::CsrGraph;
use crate::error::{Error, Result};

/// Exact hop distance from each node to its nearest source; `None` for
/// unreachable nodes.
pub fn multi_source_bfs(g: &CsrGraph, sources: &[usize]) -> Result<Vec<Option<usize>>> {
    if sources.is_empty() {
        return Err(Error::Config("multi_source_bfs needs at least one source".into()));
    }
    let mut dist = vec![None; g.num_nodes()];
    let mut queue = VecDeque::new();
    for &s in sources {
        if s >= g.num_nodes() {
            return Err(Error::Index(format!("source {s} >= {} nodes", g.num_nodes())));
        }
        if dist[s].is_none() {
            dist[s] = Some(0);
            queue.push_back(s);
        }
    }
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have distances");
        for &v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(dist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphstore::build_csr;
    use crate::rng::substream_rng;
    use rand::Rng;

    #[test]
    fn path_graph_examples() {
        let g = build_csr(4, &[(0, 1), (1, 2), (2, 3)], true).unwrap();
        let d = multi_source_bfs(&g, &[0]).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), Some(2), Some(3)]);

        let d = multi_source_bfs(&g, &[0, 3]).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), Some(1), Some(0)]);

        assert!(matches!(multi_source_bfs(&g, &[]), Err(Error::Config(_))));
        assert!(matches!(multi_source_bfs(&g, &[9]), Err(Error::Index(_))));
    }

    #[test]
    fn unreachable_nodes_are_none() {
        let g = build_csr(3, &[(0, 1)], true).unwrap();
        let d = multi_source_bfs(&g, &[0]).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), None]);
    }

    #[test]
    fn equals_per_source_minimum() {
        let mut rng = substream_rng(31, "test-bfs", &[]);
        let n = 100;
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < 0.03 {
                    edges.push((u, v));
                }
            }
        }
        let g = build_csr(n, &edges, true).unwrap();
        let sources = [3usize, 17, 64];
        let multi = multi_source_bfs(&g, &sources).unwrap();
        for v in 0..n {
            let best = sources.iter().filter_map(|&s| multi_source_bfs(&g, &[s]).unwrap()[v]).min();
            assert_eq!(multi[v], best, "node {v}");
        }
    }
}
