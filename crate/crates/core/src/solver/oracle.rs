//! Exhaustive vertex enumeration of the semicoupling polytope.
//!
//! Basic solutions of the transportation problem with an overflow sink are
//! the spanning trees of the bipartite graph sources × (targets + sink); the
//! tree determines the flows by peeling leaves. Every tree is visited, so this
//! is an independent check on [`super::solve_semicoupling`] for tiny inputs.

use crate::cost::ConcaveCost;
use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

use super::{PlanEntry, TransportPlan};

/// `(source, target, mass)` on a real arc.
type Flow = (usize, usize, f64);

/// Minimum cost together with every distinct minimizing vertex.
#[derive(Clone, Debug)]
pub struct OracleResult {
    pub cost: f64,
    pub optimal_plans: Vec<TransportPlan>,
    /// Number of feasible bases visited (degenerate duplicates included).
    pub feasible_bases: usize,
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

pub fn brute_force_oracle(
    mu: &DiscreteMeasure,
    nu: &DiscreteMeasure,
    theta: &ConcaveCost,
    limit: usize,
) -> Result<OracleResult> {
    if mu.domain() != nu.domain() {
        return Err(Error::DomainMismatch);
    }
    let (m, n) = (mu.len(), nu.len());
    if m + n > limit {
        return Err(Error::InstanceTooLarge { atoms: m + n, limit });
    }
    let total_mu = mu.total_mass();
    let total_nu = nu.total_mass();
    if total_mu + 1e-12 * total_mu.max(1.0) < total_nu {
        return Err(Error::Infeasible {
            source_mass: total_mu,
            target_mass: total_nu,
        });
    }
    if n == 0 {
        return Ok(OracleResult {
            cost: 0.0,
            optimal_plans: vec![TransportPlan::new(mu.clone(), nu.clone(), Vec::new())],
            feasible_bases: 1,
        });
    }

    let domain = mu.domain();
    let sink = m + n;
    // arcs: (source, column) with column n meaning the sink
    let arcs: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|i| {
            (0..=n).map(move |j| {
                let c = if j == n {
                    0.0
                } else {
                    theta
                        .eval(domain.distance(mu.location(i), nu.location(j)))
                        .expect("distances are nonnegative")
                };
                (i, j, c)
            })
        })
        .collect();
    let mut balance0 = vec![0.0; m + n + 1];
    balance0[..m].copy_from_slice(mu.masses());
    for j in 0..n {
        balance0[m + j] = -nu.mass(j);
    }
    balance0[sink] = total_nu - total_mu;
    let scale = total_mu.max(1.0);
    let node_of = |col: usize| if col == n { sink } else { m + col };

    let k = m + n;
    let mut best = f64::INFINITY;
    let mut candidates: Vec<(f64, Vec<Flow>)> = Vec::new();
    let mut feasible_bases = 0;
    let mut idx: Vec<usize> = (0..k).collect();
    let total_arcs = arcs.len();
    if k > total_arcs {
        return Err(Error::InsufficientData("no basis exists".into()));
    }
    loop {
        if let Some(flows) = basis_flows(&idx, &arcs, &balance0, m + n + 1, &node_of) {
            if flows.iter().all(|f| f.1 >= -1e-12 * scale) {
                feasible_bases += 1;
                let cost: f64 = flows.iter().map(|&(e, f)| f * arcs[e].2).sum();
                if cost < best + 1e-12 * (1.0 + best.abs().min(1e300)) {
                    best = best.min(cost);
                    let plan: Vec<(usize, usize, f64)> = flows
                        .iter()
                        .filter(|&&(e, f)| arcs[e].1 != n && f > 1e-12 * scale)
                        .map(|&(e, f)| (arcs[e].0, arcs[e].1, f))
                        .collect();
                    candidates.push((cost, plan));
                }
            }
        }
        // next k-combination of 0..total_arcs
        let mut p = k;
        while p > 0 && idx[p - 1] == total_arcs - k + p - 1 {
            p -= 1;
        }
        if p == 0 {
            break;
        }
        idx[p - 1] += 1;
        for q in p..k {
            idx[q] = idx[q - 1] + 1;
        }
    }
    if !best.is_finite() {
        return Err(Error::Infeasible {
            source_mass: total_mu,
            target_mass: total_nu,
        });
    }

    let tie = 1e-12 * (1.0 + best.abs());
    let mut distinct: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    for (cost, mut plan) in candidates {
        if cost > best + tie {
            continue;
        }
        plan.sort_by_key(|a| (a.0, a.1));
        let seen = distinct.iter().any(|p| {
            p.len() == plan.len()
                && p.iter()
                    .zip(&plan)
                    .all(|(a, b)| a.0 == b.0 && a.1 == b.1 && (a.2 - b.2).abs() <= 1e-9 * scale)
        });
        if !seen {
            distinct.push(plan);
        }
    }
    let optimal_plans = distinct
        .into_iter()
        .map(|p| {
            let entries = p
                .into_iter()
                .map(|(source, target, mass)| PlanEntry { source, target, mass })
                .collect();
            TransportPlan::new(mu.clone(), nu.clone(), entries)
        })
        .collect();
    Ok(OracleResult {
        cost: best,
        optimal_plans,
        feasible_bases,
    })
}

/// Flows `(arc, flow)` of the basis `idx`, or `None` if it contains a cycle.
fn basis_flows(
    idx: &[usize],
    arcs: &[(usize, usize, f64)],
    balance0: &[f64],
    num_nodes: usize,
    node_of: &dyn Fn(usize) -> usize,
) -> Option<Vec<(usize, f64)>> {
    let mut uf = UnionFind((0..num_nodes).collect());
    for &e in idx {
        let (i, col, _) = arcs[e];
        if !uf.union(i, node_of(col)) {
            return None;
        }
    }
    let mut degree = vec![0usize; num_nodes];
    for &e in idx {
        let (i, col, _) = arcs[e];
        degree[i] += 1;
        degree[node_of(col)] += 1;
    }
    let mut balance = balance0.to_vec();
    let mut done = vec![false; idx.len()];
    let mut flows = Vec::with_capacity(idx.len());
    let mut remaining = idx.len();
    while remaining > 0 {
        let mut progressed = false;
        for (slot, &e) in idx.iter().enumerate() {
            if done[slot] {
                continue;
            }
            let (i, col, _) = arcs[e];
            let t = node_of(col);
            // arc i -> t; a leaf endpoint fixes its flow
            let flow = if degree[i] == 1 {
                balance[i]
            } else if degree[t] == 1 {
                -balance[t]
            } else {
                continue;
            };
            balance[i] -= flow;
            balance[t] += flow;
            degree[i] -= 1;
            degree[t] -= 1;
            done[slot] = true;
            remaining -= 1;
            progressed = true;
            flows.push((e, flow));
        }
        if !progressed {
            return None;
        }
    }
    Some(flows)
}
