//! Estimation-quality and fairness metrics.
//!
//! Group-difference metrics are always group 1 minus group 0.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::{DecisionThreshold, GroupLabel, ProbVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("distributions do not share a domain")]
    DomainMismatch,
    #[error("domain has {0} values; the coupling oracle accepts at most {MAX_ORACLE_DOMAIN}")]
    DomainTooLarge(usize),
    #[error("columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no rows to evaluate")]
    Empty,
    #[error("group {0} has no rows")]
    GroupAbsent(GroupLabel),
    #[error("group {0} has no rows with a positive true decision")]
    NoPositives(GroupLabel),
}

pub const MAX_ORACLE_DOMAIN: usize = 50;

/// Earth mover's distance on the integer line, `Σ_i |F_μ(xᵢ) − F_ν(xᵢ)|·(xᵢ₊₁ − xᵢ)`.
pub fn wasserstein_1d(mu: &ProbVector, nu: &ProbVector) -> Result<f64, MetricError> {
    if mu.domain() != nu.domain() {
        return Err(MetricError::DomainMismatch);
    }
    let xs = mu.domain().values();
    let (mut cdf_mu, mut cdf_nu, mut total) = (0.0, 0.0, 0.0);
    for i in 0..xs.len() - 1 {
        cdf_mu += mu.mass()[i];
        cdf_nu += nu.mass()[i];
        total += (cdf_mu - cdf_nu).abs() * (xs[i + 1] - xs[i]) as f64;
    }
    Ok(total)
}

/// Wasserstein distance between distributions over different domains, each
/// embedded into the union domain with zero mass on missing values.
pub fn wasserstein_union(mu: &ProbVector, nu: &ProbVector) -> Result<f64, MetricError> {
    let union = mu.domain().union(nu.domain());
    let a = mu.embed(&union).map_err(|_| MetricError::DomainMismatch)?;
    let b = nu.embed(&union).map_err(|_| MetricError::DomainMismatch)?;
    wasserstein_1d(&a, &b)
}

/// Optimal-coupling value `min_α Σ α(x,y)|x−y|` over couplings with marginals
/// `μ` and `ν`, solved as a min-cost flow by successive shortest paths.
///
/// Independent of the CDF route in [`wasserstein_1d`]; meant as its oracle.
pub fn wasserstein_lp_oracle(mu: &ProbVector, nu: &ProbVector) -> Result<f64, MetricError> {
    if mu.domain() != nu.domain() {
        return Err(MetricError::DomainMismatch);
    }
    let n = mu.domain().len();
    if n > MAX_ORACLE_DOMAIN {
        return Err(MetricError::DomainTooLarge(n));
    }
    let xs = mu.domain().values();
    let mut net = FlowNetwork::new(2 * n + 2);
    let (source, sink) = (0, 2 * n + 1);
    for i in 0..n {
        net.add_edge(source, 1 + i, mu.mass()[i], 0.0);
        net.add_edge(1 + n + i, sink, nu.mass()[i], 0.0);
        for j in 0..n {
            net.add_edge(1 + i, 1 + n + j, f64::INFINITY, (xs[i] - xs[j]).abs() as f64);
        }
    }
    Ok(net.min_cost_flow(source, sink))
}

struct Edge {
    to: usize,
    cap: f64,
    cost: f64,
}

struct FlowNetwork {
    edges: Vec<Edge>,
    adj: Vec<Vec<usize>>,
}

const FLOW_EPS: f64 = 1e-15;

impl FlowNetwork {
    fn new(nodes: usize) -> Self {
        Self { edges: Vec::new(), adj: vec![Vec::new(); nodes] }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64, cost: f64) {
        self.adj[from].push(self.edges.len());
        self.edges.push(Edge { to, cap, cost });
        self.adj[to].push(self.edges.len());
        self.edges.push(Edge { to: from, cap: 0.0, cost: -cost });
    }

    /// Pushes as much flow as possible from `s` to `t`; returns its total cost.
    fn min_cost_flow(&mut self, s: usize, t: usize) -> f64 {
        let nodes = self.adj.len();
        let mut total = 0.0;
        loop {
            // Bellman-Ford: the residual graph has negative reverse edges
            let mut dist = vec![f64::INFINITY; nodes];
            let mut via = vec![usize::MAX; nodes];
            dist[s] = 0.0;
            for _ in 0..nodes {
                let mut changed = false;
                for u in 0..nodes {
                    if dist[u].is_infinite() {
                        continue;
                    }
                    for &id in &self.adj[u] {
                        let e = &self.edges[id];
                        if e.cap > FLOW_EPS && dist[u] + e.cost < dist[e.to] - 1e-12 {
                            dist[e.to] = dist[u] + e.cost;
                            via[e.to] = id;
                            changed = true;
                        }
                    }
                }
                if !changed {
                    break;
                }
            }
            if dist[t].is_infinite() {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let id = via[v];
                push = push.min(self.edges[id].cap);
                v = self.edges[id ^ 1].to;
            }
            let mut v = t;
            while v != s {
                let id = via[v];
                self.edges[id].cap -= push;
                self.edges[id ^ 1].cap += push;
                v = self.edges[id ^ 1].to;
            }
            total += push * dist[t];
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<(), MetricError> {
    if a != b {
        return Err(MetricError::LengthMismatch(a, b));
    }
    if a == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Fraction of exact matches.
pub fn accuracy<T: PartialEq>(pred: &[T], truth: &[T]) -> Result<f64, MetricError> {
    check_lengths(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean absolute difference.
pub fn distortion(e_hat: &[i64], e: &[i64]) -> Result<f64, MetricError> {
    check_lengths(e_hat.len(), e.len())?;
    let total: f64 = e_hat.iter().zip(e).map(|(a, b)| (a - b).abs() as f64).sum();
    Ok(total / e.len() as f64)
}

fn positive_rate(decisions: &[u8], groups: &[GroupLabel], s: GroupLabel, mask: impl Fn(usize) -> bool) -> Option<f64> {
    let (mut n, mut pos) = (0usize, 0usize);
    for (i, (&d, &g)) in decisions.iter().zip(groups).enumerate() {
        if g == s && mask(i) {
            n += 1;
            pos += usize::from(d == 1);
        }
    }
    (n > 0).then(|| pos as f64 / n as f64)
}

/// Statistical parity difference `P[Ŷ=1|S=1] − P[Ŷ=1|S=0]`.
pub fn spd(decisions: &[u8], groups: &[GroupLabel]) -> Result<f64, MetricError> {
    check_lengths(decisions.len(), groups.len())?;
    let rate = |s| positive_rate(decisions, groups, s, |_| true).ok_or(MetricError::GroupAbsent(s));
    Ok(rate(GroupLabel(1))? - rate(GroupLabel(0))?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cspd {
    /// Per observed `e`; `None` where a group has no rows at that `e`.
    pub per_e: BTreeMap<i64, Option<f64>>,
    /// `Σ_e w(e)·|per_e(e)|` over defined strata, `w` the renormalized empirical `P[E=e]`.
    pub mean_abs: f64,
    pub mean_signed: f64,
    /// Fraction of rows lying in defined strata.
    pub coverage: f64,
}

/// Conditional statistical parity difference, stratified by `e`.
pub fn cspd(decisions: &[u8], groups: &[GroupLabel], e: &[i64]) -> Result<Cspd, MetricError> {
    check_lengths(decisions.len(), groups.len())?;
    check_lengths(decisions.len(), e.len())?;
    // e → [(rows, positives); 2]
    let mut strata: BTreeMap<i64, [(usize, usize); 2]> = BTreeMap::new();
    for ((&d, &g), &v) in decisions.iter().zip(groups).zip(e) {
        if g.0 > 1 {
            continue;
        }
        let cell = &mut strata.entry(v).or_default()[g.0];
        cell.0 += 1;
        cell.1 += usize::from(d == 1);
    }
    let mut per_e = BTreeMap::new();
    let (mut weight, mut abs_sum, mut signed_sum) = (0usize, 0.0, 0.0);
    for (&v, cells) in &strata {
        let [(n0, p0), (n1, p1)] = *cells;
        if n0 == 0 || n1 == 0 {
            per_e.insert(v, None);
            continue;
        }
        let diff = p1 as f64 / n1 as f64 - p0 as f64 / n0 as f64;
        per_e.insert(v, Some(diff));
        let w = n0 + n1;
        weight += w;
        abs_sum += w as f64 * diff.abs();
        signed_sum += w as f64 * diff;
    }
    let (mean_abs, mean_signed) = if weight == 0 {
        (0.0, 0.0)
    } else {
        (abs_sum / weight as f64, signed_sum / weight as f64)
    };
    Ok(Cspd { per_e, mean_abs, mean_signed, coverage: weight as f64 / decisions.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eod {
    pub tpr0: f64,
    pub tpr1: f64,
    /// `tpr1 − tpr0`.
    pub difference: f64,
}

/// Equal opportunity difference `P[Ŷ=1|Y=1,S=1] − P[Ŷ=1|Y=1,S=0]`.
pub fn eod(decisions: &[u8], truth: &[u8], groups: &[GroupLabel]) -> Result<Eod, MetricError> {
    check_lengths(decisions.len(), groups.len())?;
    check_lengths(decisions.len(), truth.len())?;
    let tpr = |s| positive_rate(decisions, groups, s, |i| truth[i] == 1).ok_or(MetricError::NoPositives(s));
    let tpr0 = tpr(GroupLabel(0))?;
    let tpr1 = tpr(GroupLabel(1))?;
    Ok(Eod { tpr0, tpr1, difference: tpr1 - tpr0 })
}

/// The biased baseline `Y_Z`: threshold the observed proxy directly.
pub fn baseline_yz(z: &[i64], thr: &DecisionThreshold) -> Vec<u8> {
    z.iter().map(|&v| thr.decide(v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Domain;

    fn pv(values: Vec<i64>, mass: Vec<f64>) -> ProbVector {
        ProbVector::new(Domain::new(values).unwrap(), mass).unwrap()
    }

    fn g(v: &[usize]) -> Vec<GroupLabel> {
        v.iter().map(|&x| GroupLabel(x)).collect()
    }

    #[test]
    fn wasserstein_examples() {
        let a = pv(vec![0, 1], vec![0.5, 0.5]);
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        let b = pv(vec![0, 1], vec![0.0, 1.0]);
        assert!((wasserstein_1d(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!((wasserstein_lp_oracle(&a, &b).unwrap() - 0.5).abs() < 1e-12);

        let dom = Domain::range(0, 9).unwrap();
        let p0 = ProbVector::point_mass(dom.clone(), 0);
        let p7 = ProbVector::point_mass(dom, 7);
        assert_eq!(wasserstein_1d(&p0, &p7).unwrap(), 7.0);
        assert!((wasserstein_lp_oracle(&p0, &p7).unwrap() - 7.0).abs() < 1e-12);

        let x = pv(vec![0, 10], vec![0.3, 0.7]);
        let y = pv(vec![0, 10], vec![0.7, 0.3]);
        assert!((wasserstein_1d(&x, &y).unwrap() - 4.0).abs() < 1e-12);
        assert!((wasserstein_lp_oracle(&x, &y).unwrap() - 4.0).abs() < 1e-12);

        let u = pv(vec![0, 1], vec![1.0, 0.0]);
        assert_eq!(wasserstein_lp_oracle(&u, &u).unwrap(), 0.0);
    }

    #[test]
    fn wasserstein_errors() {
        let a = pv(vec![0, 1], vec![0.5, 0.5]);
        let b = pv(vec![0, 2], vec![0.5, 0.5]);
        assert_eq!(wasserstein_1d(&a, &b), Err(MetricError::DomainMismatch));
        assert!((wasserstein_union(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        let big = ProbVector::uniform(Domain::range(0, 60).unwrap());
        assert_eq!(wasserstein_lp_oracle(&big, &big), Err(MetricError::DomainTooLarge(61)));
    }

    #[test]
    fn accuracy_and_distortion() {
        assert_eq!(accuracy(&[1u8, 0, 1], &[1, 0, 1]).unwrap(), 1.0);
        assert!((accuracy(&[1u8, 0, 1], &[1, 1, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0u8, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy::<u8>(&[], &[]), Err(MetricError::Empty));
        assert_eq!(accuracy(&[1u8], &[1, 0]), Err(MetricError::LengthMismatch(1, 2)));

        assert_eq!(distortion(&[4, 5], &[4, 5]).unwrap(), 0.0);
        assert_eq!(distortion(&[10, 20], &[12, 16]).unwrap(), 3.0);
        assert_eq!(distortion(&[0], &[99]).unwrap(), 99.0);
        assert!(distortion(&[0], &[]).is_err());
    }

    #[test]
    fn spd_examples() {
        let groups = g(&[1, 1, 1, 1, 0, 0]);
        assert!((spd(&[1, 1, 1, 0, 1, 0], &groups).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(spd(&[1, 0, 1, 0], &g(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(spd(&[1, 1, 0, 0], &g(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(spd(&[1, 1], &g(&[1, 1])), Err(MetricError::GroupAbsent(GroupLabel(0))));
    }

    #[test]
    fn cspd_examples() {
        // decisions as a function of e alone
        let e = [10, 10, 50, 50, 90, 90];
        let d: Vec<u8> = e.iter().map(|&v| u8::from(v > 40)).collect();
        let r = cspd(&d, &g(&[0, 1, 0, 1, 0, 1]), &e).unwrap();
        assert!(r.per_e.values().all(|v| *v == Some(0.0)));
        assert_eq!((r.mean_abs, r.mean_signed), (0.0, 0.0));

        // e=7 only in group 1
        let r = cspd(&[1, 0, 1], &g(&[0, 1, 1]), &[3, 3, 7]).unwrap();
        assert_eq!(r.per_e[&7], None);
        assert_eq!(r.per_e[&3], Some(-1.0));
        assert_eq!(r.mean_abs, 1.0);
        assert!((r.coverage - 2.0 / 3.0).abs() < 1e-15);

        // strata with +0.5 and −0.5 and equal weight
        let groups = g(&[0, 0, 1, 1, 0, 0, 1, 1]);
        let e = [1, 1, 1, 1, 2, 2, 2, 2];
        let d = [0, 0, 1, 0, 1, 0, 0, 0];
        let r = cspd(&d, &groups, &e).unwrap();
        assert_eq!(r.per_e[&1], Some(0.5));
        assert_eq!(r.per_e[&2], Some(-0.5));
        assert_eq!(r.mean_signed, 0.0);
        assert_eq!(r.mean_abs, 0.5);
    }

    #[test]
    fn eod_examples() {
        let y = [1u8, 1, 0, 1, 1, 0];
        let groups = g(&[0, 0, 0, 1, 1, 1]);
        assert_eq!(eod(&y, &y, &groups).unwrap().difference, 0.0);

        let r = eod(&[0, 0, 0, 1, 1, 1], &y, &groups).unwrap();
        assert_eq!((r.tpr0, r.tpr1, r.difference), (0.0, 1.0, 1.0));

        // group 1: 3 of 5 positives found; group 0: 1 of 2
        let groups = g(&[1, 1, 1, 1, 1, 0, 0]);
        let truth = [1u8, 1, 1, 1, 1, 1, 1];
        let pred = [1u8, 1, 1, 0, 0, 1, 0];
        let r = eod(&pred, &truth, &groups).unwrap();
        assert!((r.difference - 0.1).abs() < 1e-15);

        assert_eq!(
            eod(&[1, 1], &[1, 0], &g(&[1, 0])),
            Err(MetricError::NoPositives(GroupLabel(0)))
        );
    }

    #[test]
    fn baseline() {
        let strict = DecisionThreshold::new(80, true);
        assert_eq!(baseline_yz(&[90, 80, 10], &strict), vec![1, 0, 0]);
        assert_eq!(baseline_yz(&[90], &DecisionThreshold::new(80, false)), vec![1]);
        assert_eq!(baseline_yz(&[42; 4], &strict), vec![0; 4]);
    }
}
