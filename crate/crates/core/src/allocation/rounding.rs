//! Rounding an optimal plan to a whole-atom map.
//!
//! The support of a basic plan is a forest. Sources with a single target
//! keep it; sources spread over several targets are assigned by dynamic
//! programming over each tree so that `Σ_j |ν_j − received_j|` is minimal
//! among maps that only use plan edges.

use std::collections::VecDeque;

use crate::error::Result;
use crate::solver::TransportPlan;

use super::bijection::{DisplacementBijection, DisplacementCode};
use super::threshold::nearest;

/// Children per target above which subsets are not enumerated.
const MAX_ENUMERATED: usize = 12;

#[derive(Default)]
pub(crate) struct SplitStats {
    pub sources: usize,
    pub mass: f64,
}

impl SplitStats {
    pub fn absorb(&mut self, other: SplitStats) {
        self.sources += other.sources;
        self.mass += other.mass;
    }
}

struct Edge {
    target: usize,
    mass: f64,
    code: DisplacementCode,
}

/// Target index for every source atom of `plan`.
pub(crate) fn round_plan(plan: &TransportPlan, g: &dyn DisplacementBijection) -> Result<(Vec<usize>, SplitStats)> {
    let src = plan.source();
    let tgt = plan.target();
    let dom = src.domain();
    let (m, n) = (src.len(), tgt.len());

    let mut edges: Vec<Vec<Edge>> = (0..m).map(|_| Vec::new()).collect();
    for e in plan.entries() {
        edges[e.source].push(Edge {
            target: e.target,
            mass: e.mass,
            code: g.code(dom, &plan.displacement(e))?,
        });
    }
    let mut assigned: Vec<Option<usize>> = vec![None; m];
    let mut base = vec![0.0; n];
    let mut split_of_target: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..m {
        match edges[i].len() {
            0 => {
                let j = nearest(tgt, src.location(i), g)?;
                assigned[i] = Some(j);
                base[j] += src.mass(i);
            }
            1 => {
                let j = edges[i][0].target;
                assigned[i] = Some(j);
                base[j] += src.mass(i);
            }
            _ => {
                for e in &edges[i] {
                    split_of_target[e.target].push(i);
                }
            }
        }
    }

    // costs closer than this are ties, so summation order cannot decide
    let tol = 1e-12 * src.total_mass().max(tgt.total_mass());
    let code_of = |i: usize, j: usize| edges[i].iter().find(|e| e.target == j).map(|e| e.code);
    let plan_mass = |i: usize, j: usize| edges[i].iter().find(|e| e.target == j).map_or(0.0, |e| e.mass);

    // g0/g1: subtree cost of a target without/with its parent source
    let mut g0 = vec![0.0; n];
    let mut g1 = vec![0.0; n];
    let mut pick0 = vec![0u64; n];
    let mut pick1 = vec![0u64; n];
    let mut parent_source: Vec<Option<usize>> = vec![None; n];
    let mut parent_target: Vec<Option<usize>> = vec![None; m];
    let mut child_sources: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut child_targets: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut a_cost = vec![0.0; m];
    let mut h_cost = vec![0.0; m];
    let mut h_child = vec![usize::MAX; m];
    let mut visited_t = vec![false; n];
    let mut visited_s = vec![false; m];

    // roots: heaviest target first, then by the codes of its split edges
    let mut candidates: Vec<usize> = (0..n).filter(|&j| !split_of_target[j].is_empty()).collect();
    let signature = |j: usize| -> Vec<DisplacementCode> {
        let mut v: Vec<DisplacementCode> = split_of_target[j].iter().filter_map(|&i| code_of(i, j)).collect();
        v.sort_unstable();
        v
    };
    candidates.sort_by(|&a, &b| {
        tgt.mass(b)
            .total_cmp(&tgt.mass(a))
            .then_with(|| signature(a).cmp(&signature(b)))
            .then(a.cmp(&b))
    });

    for &root in &candidates {
        if visited_t[root] {
            continue;
        }
        // breadth-first orientation of the component
        let mut order: Vec<usize> = Vec::new();
        let mut queue = VecDeque::from([root]);
        visited_t[root] = true;
        while let Some(t) = queue.pop_front() {
            order.push(t);
            let mut kids: Vec<usize> = split_of_target[t]
                .iter()
                .copied()
                .filter(|&s| Some(s) != parent_source[t] && !visited_s[s])
                .collect();
            kids.sort_by(|&a, &b| {
                src.mass(b)
                    .total_cmp(&src.mass(a))
                    .then_with(|| code_of(a, t).cmp(&code_of(b, t)))
            });
            for &s in &kids {
                visited_s[s] = true;
                parent_target[s] = Some(t);
                let mut below: Vec<usize> = edges[s]
                    .iter()
                    .map(|e| e.target)
                    .filter(|&u| u != t && !visited_t[u])
                    .collect();
                below.sort_by_key(|&a| code_of(s, a));
                for &u in &below {
                    visited_t[u] = true;
                    parent_source[u] = Some(s);
                    queue.push_back(u);
                }
                child_targets[s] = below;
            }
            child_sources[t] = kids;
        }

        for &t in order.iter().rev() {
            for &s in &child_sources[t] {
                let a: f64 = child_targets[s].iter().map(|&u| g0[u]).sum();
                a_cost[s] = a;
                let mut best = (f64::INFINITY, 0.0, usize::MAX);
                for &u in &child_targets[s] {
                    let c = a - g0[u] + g1[u];
                    let w = plan_mass(s, u);
                    if c < best.0 - tol || (c <= best.0 + tol && w > best.1) {
                        best = (c, w, u);
                    }
                }
                h_cost[s] = best.0;
                h_child[s] = best.2;
            }
            let kids = &child_sources[t];
            let need = tgt.mass(t) - base[t];
            let incoming = parent_source[t].map_or(0.0, |s| src.mass(s));
            for b in 0..2 {
                let demand = need - if b == 1 { incoming } else { 0.0 };
                let (cost, mask) = if kids.len() <= MAX_ENUMERATED {
                    let mut best = (f64::INFINITY, 0u64);
                    for mask in 0..(1u64 << kids.len()) {
                        let mut got = 0.0;
                        let mut c = 0.0;
                        for (k, &s) in kids.iter().enumerate() {
                            if mask >> k & 1 == 1 {
                                got += src.mass(s);
                                c += a_cost[s];
                            } else {
                                c += h_cost[s];
                            }
                        }
                        c += (demand - got).abs();
                        if c < best.0 - tol {
                            best = (c, mask);
                        }
                    }
                    best
                } else {
                    // keep every child whose largest plan share is here
                    let mut mask = 0u64;
                    let mut got = 0.0;
                    let mut c = 0.0;
                    for (k, &s) in kids.iter().enumerate() {
                        let here = plan_mass(s, t);
                        if edges[s].iter().all(|e| e.mass <= here) && k < 64 {
                            mask |= 1 << k;
                            got += src.mass(s);
                            c += a_cost[s];
                        } else {
                            c += h_cost[s];
                        }
                    }
                    (c + (demand - got).abs(), mask)
                };
                if b == 0 {
                    g0[t] = cost;
                    pick0[t] = mask;
                } else {
                    g1[t] = cost;
                    pick1[t] = mask;
                }
            }
        }

        // top-down reconstruction
        let mut stack = vec![(root, false)];
        while let Some((t, with_parent)) = stack.pop() {
            let mask = if with_parent { pick1[t] } else { pick0[t] };
            for (k, &s) in child_sources[t].iter().enumerate() {
                if k < 64 && mask >> k & 1 == 1 {
                    assigned[s] = Some(t);
                    stack.extend(child_targets[s].iter().map(|&u| (u, false)));
                } else {
                    let chosen = h_child[s];
                    assigned[s] = Some(chosen);
                    stack.extend(child_targets[s].iter().map(|&u| (u, u == chosen)));
                }
            }
        }
    }

    let mut stats = SplitStats::default();
    let mut targets = Vec::with_capacity(m);
    for i in 0..m {
        let j = assigned[i].expect("every source is assigned");
        if edges[i].len() > 1 {
            stats.sources += 1;
            let sent: f64 = edges[i].iter().map(|e| e.mass).sum();
            stats.mass += sent - plan_mass(i, j);
        }
        targets.push(j);
    }
    Ok((targets, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocation::BitInterleave;
    use crate::domain::PeriodicDomain;
    use crate::measure::DiscreteMeasure;
    use crate::solver::PlanEntry;

    fn line() -> PeriodicDomain {
        PeriodicDomain::new(1, 10.0, 10).unwrap()
    }

    fn measure(atoms: &[(f64, f64)]) -> DiscreteMeasure {
        DiscreteMeasure::new(line(), atoms.iter().map(|&(x, w)| (vec![x], w))).unwrap()
    }

    #[test]
    fn path_rounding_beats_dominant_choice() {
        // targets of mass 1 and 2; sources 0.6, 1.2, 1.2
        let src = measure(&[(0.0, 0.6), (1.0, 1.2), (2.0, 1.2)]);
        let tgt = measure(&[(0.5, 1.0), (1.5, 2.0)]);
        let plan = TransportPlan::new(
            src,
            tgt,
            vec![
                PlanEntry {
                    source: 0,
                    target: 0,
                    mass: 0.6,
                },
                PlanEntry {
                    source: 1,
                    target: 0,
                    mass: 0.4,
                },
                PlanEntry {
                    source: 1,
                    target: 1,
                    mass: 0.8,
                },
                PlanEntry {
                    source: 2,
                    target: 1,
                    mass: 1.2,
                },
            ],
        );
        let (targets, stats) = round_plan(&plan, &BitInterleave).unwrap();
        // sending source 1 left gives |1 - 1.8| + |2 - 1.2| = 1.6,
        // right gives |1 - 0.6| + |2 - 2.4| = 0.8
        assert_eq!(targets, vec![0, 1, 1]);
        assert_eq!(stats.sources, 1);
        assert!((stats.mass - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unused_sources_go_to_the_nearest_target() {
        let src = measure(&[(0.0, 1.0), (6.0, 1.0)]);
        let tgt = measure(&[(1.0, 1.0), (5.0, 0.0001)]);
        let plan = TransportPlan::new(
            src,
            tgt,
            vec![
                PlanEntry {
                    source: 0,
                    target: 0,
                    mass: 1.0,
                },
                PlanEntry {
                    source: 0,
                    target: 1,
                    mass: 0.0001,
                },
            ],
        );
        let (targets, _) = round_plan(&plan, &BitInterleave).unwrap();
        assert_eq!(targets[1], 1);
    }
}
