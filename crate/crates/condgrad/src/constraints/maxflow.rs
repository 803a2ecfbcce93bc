//! Dinic max-flow on real-valued capacities, used to decide transshipment
//! feasibility for the TV-ball machinery.

use std::collections::VecDeque;

const FLOW_EPS: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: f64,
    rev: usize,
}

#[derive(Debug, Clone)]
pub struct Dinic {
    graph: Vec<Vec<Arc>>,
}

impl Dinic {
    pub fn new(n: usize) -> Self {
        Self {
            graph: vec![Vec::new(); n],
        }
    }

    pub fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        let rev_from = self.graph[to].len();
        let rev_to = self.graph[from].len();
        self.graph[from].push(Arc {
            to,
            cap,
            rev: rev_from,
        });
        self.graph[to].push(Arc {
            to: from,
            cap: 0.0,
            rev: rev_to,
        });
    }

    fn bfs(&self, s: usize, t: usize, level: &mut [i32]) -> bool {
        level.fill(-1);
        level[s] = 0;
        let mut queue = VecDeque::new();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for arc in &self.graph[u] {
                if arc.cap > FLOW_EPS && level[arc.to] == -1 {
                    level[arc.to] = level[u] + 1;
                    queue.push_back(arc.to);
                }
            }
        }
        level[t] != -1
    }

    fn dfs(&mut self, u: usize, t: usize, pushed: f64, level: &[i32], iter: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while iter[u] < self.graph[u].len() {
            let i = iter[u];
            let (to, cap, rev) = {
                let a = &self.graph[u][i];
                (a.to, a.cap, a.rev)
            };
            if cap > FLOW_EPS && level[to] == level[u] + 1 {
                let d = self.dfs(to, t, pushed.min(cap), level, iter);
                if d > FLOW_EPS {
                    self.graph[u][i].cap -= d;
                    self.graph[to][rev].cap += d;
                    return d;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let n = self.graph.len();
        let mut flow = 0.0;
        let mut level = vec![-1i32; n];
        while self.bfs(s, t, &mut level) {
            let mut iter = vec![0usize; n];
            loop {
                let f = self.dfs(s, t, f64::INFINITY, &level, &mut iter);
                if f <= FLOW_EPS {
                    break;
                }
                flow += f;
            }
        }
        flow
    }
}
