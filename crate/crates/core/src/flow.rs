//! Min-cost flow by successive shortest paths with real-valued capacities.
//!
//! Shortest paths use Bellman-Ford over the residual graph, scanning nodes
//! and edges in insertion order and accepting only strict improvements, so
//! equal-cost alternatives resolve toward lower node indices.

const EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct MinCostFlow {
    graph: Vec<Vec<Edge>>,
}

/// Handle to a forward edge, used to read its flow after solving.
#[derive(Debug, Clone, Copy)]
pub struct EdgeRef {
    from: usize,
    idx: usize,
}

impl MinCostFlow {
    pub fn new(nodes: usize) -> Self {
        Self { graph: vec![Vec::new(); nodes] }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) -> EdgeRef {
        let idx = self.graph[from].len();
        let rev = self.graph[to].len() + usize::from(from == to);
        self.graph[from].push(Edge { to, cap, cost, rev });
        self.graph[to].push(Edge { to: from, cap: 0.0, cost: -cost, rev: idx });
        EdgeRef { from, idx }
    }

    /// Flow currently carried by a forward edge.
    pub fn flow(&self, e: EdgeRef) -> f64 {
        let edge = &self.graph[e.from][e.idx];
        self.graph[edge.to][edge.rev].cap
    }

    /// Pushes up to `limit` units from `source` to `sink` at minimum cost.
    /// Returns `(flow, cost)`.
    pub fn solve(&mut self, source: usize, sink: usize, limit: f64) -> (f64, f64) {
        let n = self.graph.len();
        let mut flow = 0.0;
        let mut cost = 0.0;
        while flow < limit - EPS {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
            dist[source] = 0.0;
            for _ in 0..n {
                let mut changed = false;
                for u in 0..n {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for (i, e) in self.graph[u].iter().enumerate() {
                        if e.cap > EPS && dist[u] + e.cost < dist[e.to] - EPS {
                            dist[e.to] = dist[u] + e.cost;
                            prev[e.to] = Some((u, i));
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[sink].is_infinite() {
                break;
            }
            let mut push = limit - flow;
            let mut v = sink;
            while let Some((u, i)) = prev[v] {
                push = push.min(self.graph[u][i].cap);
                v = u;
            }
            let mut v = sink;
            while let Some((u, i)) = prev[v] {
                let rev = self.graph[u][i].rev;
                self.graph[u][i].cap -= push;
                self.graph[v][rev].cap += push;
                v = u;
            }
            flow += push;
            cost += push * dist[sink];
        }
        (flow, cost)
    }
}
