//! Brute-force references for small categorical circuits.
//!
//! Everything here enumerates complete assignments `x` and induced trees
//! `z` (one child per reached sum node). Sum nodes off the selected path
//! carry no choice. Circuits that exceed the guards are refused.

use crate::circuit::{Circuit, InputDist, Node, NodeId, VarKind};
use crate::data::Value;
use crate::error::{Error, Result};
use crate::params::Params;

/// Largest number of complete assignments the oracle will enumerate.
pub const MAX_ASSIGNMENTS: usize = 1 << 16;
/// Largest number of latent states visited in a single enumeration.
pub const MAX_LATENT_STATES: usize = 1 << 20;

/// Child choice per node; `None` for non-sum nodes and sum nodes off the path.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LatentState {
    pub choice: Vec<Option<usize>>,
}

impl LatentState {
    /// Selected sum edges, in node order.
    pub fn edges<'a>(&'a self, circuit: &'a Circuit) -> impl Iterator<Item = usize> + 'a {
        self.choice.iter().enumerate().filter_map(move |(n, k)| k.map(|k| circuit.edges(NodeId(n)).start + k))
    }
}

fn check_enumerable(circuit: &Circuit) -> Result<usize> {
    let report = circuit.validate();
    if !report.ok() {
        return Err(Error::Config(format!("oracle needs a valid circuit: {report}")));
    }
    let mut count: usize = 1;
    for (i, v) in circuit.vars().iter().enumerate() {
        match v {
            VarKind::Categorical(k) => {
                count = count.saturating_mul(*k as usize);
            }
            VarKind::Continuous => {
                return Err(Error::Config(format!("oracle cannot enumerate continuous variable {i}")));
            }
        }
    }
    if count > MAX_ASSIGNMENTS {
        return Err(Error::TooLarge(format!("{count} assignments exceed {MAX_ASSIGNMENTS}")));
    }
    Ok(count)
}

/// Every complete assignment, last variable varying fastest.
pub fn assignments(circuit: &Circuit) -> Result<Vec<Vec<Value>>> {
    let count = check_enumerable(circuit)?;
    let cards: Vec<u32> = circuit
        .vars()
        .iter()
        .map(|v| match v {
            VarKind::Categorical(k) => *k,
            VarKind::Continuous => unreachable!("rejected above"),
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut cur = vec![0u32; cards.len()];
    loop {
        out.push(cur.iter().map(|&k| Value::Cat(k)).collect());
        let mut i = cards.len();
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            cur[i] += 1;
            if cur[i] < cards[i] {
                break;
            }
            cur[i] = 0;
        }
    }
}

fn indicator(dist: &InputDist, v: &Value) -> bool {
    match (dist, v) {
        (InputDist::Indicator { category }, Value::Cat(k)) => category == k,
        _ => false,
    }
}

struct Enumerator<'a, F> {
    circuit: &'a Circuit,
    phi: &'a [f64],
    x: &'a [Value],
    state: LatentState,
    pending: Vec<usize>,
    visited: usize,
    visit: F,
}

impl<F: FnMut(&LatentState, f64)> Enumerator<'_, F> {
    /// Expands the pending frontier; `log_w` is the log-weight of the partial tree.
    fn run(&mut self, log_w: f64) -> Result<()> {
        let Some(n) = self.pending.pop() else {
            self.visited += 1;
            if self.visited > MAX_LATENT_STATES {
                return Err(Error::TooLarge(format!("more than {MAX_LATENT_STATES} latent states")));
            }
            (self.visit)(&self.state, log_w);
            return Ok(());
        };
        let result = match self.circuit.node(NodeId(n)) {
            Node::Input { var, dist } => {
                if indicator(dist, &self.x[*var]) {
                    self.run(log_w)
                } else {
                    Ok(())
                }
            }
            Node::Product { children } => {
                let mark = self.pending.len();
                self.pending.extend(children.iter().rev().map(|c| c.0));
                let r = self.run(log_w);
                self.pending.truncate(mark);
                r
            }
            Node::Sum { children } => {
                let edges = self.circuit.edges(NodeId(n));
                let mut r = Ok(());
                for (k, (c, e)) in children.iter().zip(edges).enumerate() {
                    let w = self.phi[e];
                    if w == f64::NEG_INFINITY {
                        continue;
                    }
                    self.state.choice[n] = Some(k);
                    self.pending.push(c.0);
                    r = self.run(log_w + w);
                    self.pending.pop();
                    if r.is_err() {
                        break;
                    }
                }
                self.state.choice[n] = None;
                r
            }
        };
        self.pending.push(n);
        result
    }
}

/// Calls `visit(z, log p~(x, z))` for every induced tree with positive weight at `x`.
pub fn for_each_latent(
    circuit: &Circuit,
    params: &Params<f64>,
    x: &[Value],
    visit: impl FnMut(&LatentState, f64),
) -> Result<()> {
    check_enumerable(circuit)?;
    params.check_len(circuit)?;
    crate::inference::check_sample(circuit, x)?;
    let mut en = Enumerator {
        circuit,
        phi: params.phi(),
        x,
        state: LatentState { choice: vec![None; circuit.num_nodes()] },
        pending: vec![circuit.root().0],
        visited: 0,
        visit,
    };
    en.run(0.0)
}

/// `p~(x, z)`: product of the selected edge weights and the reached leaves.
pub fn brute_joint(circuit: &Circuit, params: &Params<f64>, x: &[Value], z: &LatentState) -> Result<f64> {
    check_enumerable(circuit)?;
    params.check_len(circuit)?;
    crate::inference::check_sample(circuit, x)?;
    if z.choice.len() != circuit.num_nodes() {
        return Err(Error::Config("latent state does not match the circuit".into()));
    }
    let mut stack = vec![circuit.root()];
    let mut p = 1.0;
    while let Some(n) = stack.pop() {
        match circuit.node(n) {
            Node::Input { var, dist } => {
                if !indicator(dist, &x[*var]) {
                    return Ok(0.0);
                }
            }
            Node::Product { children } => stack.extend(children.iter().copied()),
            Node::Sum { children } => {
                let k = z.choice[n.0]
                    .filter(|k| *k < children.len())
                    .ok_or_else(|| Error::Config(format!("latent state has no valid choice for reached sum node {n}")))?;
                p *= params.theta(circuit.edges(n).start + k);
                stack.push(children[k]);
            }
        }
    }
    Ok(p)
}

/// Per-node support membership of `(x, z)`. Sum nodes with a choice follow
/// it; sum nodes without one take the union over children.
pub fn support_membership(circuit: &Circuit, x: &[Value], z: &LatentState) -> Vec<bool> {
    let mut member = vec![false; circuit.num_nodes()];
    for (i, node) in circuit.nodes().iter().enumerate() {
        member[i] = match node {
            Node::Input { var, dist } => x.get(*var).is_some_and(|v| indicator(dist, v)),
            Node::Product { children } => children.iter().all(|c| member[c.0]),
            Node::Sum { children } => match z.choice.get(i).copied().flatten() {
                Some(k) => children.get(k).is_some_and(|c| member[c.0]),
                None => children.iter().any(|c| member[c.0]),
            },
        };
    }
    member
}

/// `p~(x) = sum_z p~(x, z)`.
pub fn brute_marginal(circuit: &Circuit, params: &Params<f64>, x: &[Value]) -> Result<f64> {
    let mut total = 0.0;
    for_each_latent(circuit, params, x, |_, lw| total += lw.exp())?;
    Ok(total)
}

/// `Z = sum_{x, z} p~(x, z)`.
pub fn brute_partition(circuit: &Circuit, params: &Params<f64>) -> Result<f64> {
    let mut total = 0.0;
    for x in assignments(circuit)? {
        total += brute_marginal(circuit, params, &x)?;
    }
    Ok(total)
}

/// `p(z | x)` over induced trees with positive posterior mass.
pub fn brute_posterior(circuit: &Circuit, params: &Params<f64>, x: &[Value]) -> Result<Vec<(LatentState, f64)>> {
    let mut states = Vec::new();
    for_each_latent(circuit, params, x, |z, lw| states.push((z.clone(), lw.exp())))?;
    let total: f64 = states.iter().map(|(_, p)| p).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroLikelihood { index: 0 });
    }
    states.iter_mut().for_each(|(_, p)| *p /= total);
    Ok(states)
}

fn path_log_weight(circuit: &Circuit, phi: &[f64], z: &LatentState) -> f64 {
    z.edges(circuit).map(|e| phi[e]).sum()
}

/// `Q(phi') = mean_x sum_z p_phi(z | x) log p_phi'(x, z)`, with `p_phi' = p~_phi' / Z(phi')`.
pub fn brute_q(circuit: &Circuit, params: &Params<f64>, other: &Params<f64>, data: &[&[Value]]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    other.check_len(circuit)?;
    let log_z = brute_partition(circuit, other)?.ln();
    let mut total = 0.0;
    for (i, x) in data.iter().enumerate() {
        let post = brute_posterior(circuit, params, x).map_err(|e| match e {
            Error::ZeroLikelihood { .. } => Error::ZeroLikelihood { index: i },
            e => e,
        })?;
        // leaves are indicators, so log p~'(x, z) is the path sum of phi'
        total += post.iter().map(|(z, p)| p * path_log_weight(circuit, other.phi(), z)).sum::<f64>();
    }
    Ok(total / data.len() as f64 - log_z)
}

/// Posterior expected edge counts, averaged over `data`.
pub fn expected_counts(circuit: &Circuit, params: &Params<f64>, data: &[&[Value]]) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut counts = vec![0.0; circuit.num_edges()];
    for (i, x) in data.iter().enumerate() {
        let post = brute_posterior(circuit, params, x).map_err(|e| match e {
            Error::ZeroLikelihood { .. } => Error::ZeroLikelihood { index: i },
            e => e,
        })?;
        for (z, p) in &post {
            for e in z.edges(circuit) {
                counts[e] += p;
            }
        }
    }
    counts.iter_mut().for_each(|c| *c /= data.len() as f64);
    Ok(counts)
}

/// Prior expected edge counts under `p~ / Z`.
pub fn prior_counts(circuit: &Circuit, params: &Params<f64>) -> Result<Vec<f64>> {
    let mut counts = vec![0.0; circuit.num_edges()];
    let mut z_total = 0.0;
    for x in assignments(circuit)? {
        for_each_latent(circuit, params, &x, |z, lw| {
            let w = lw.exp();
            z_total += w;
            for e in z.edges(circuit) {
                counts[e] += w;
            }
        })?;
    }
    counts.iter_mut().for_each(|c| *c /= z_total);
    Ok(counts)
}

/// Maximizer of `brute_q` over normalized `phi'`: per sum node, the
/// posterior expected counts rescaled to sum to one. Nodes with zero
/// expected count keep `params`.
pub fn brute_q_maximizer(circuit: &Circuit, params: &Params<f64>, data: &[&[Value]]) -> Result<Params<f64>> {
    let counts = expected_counts(circuit, params, data)?;
    let mut phi = params.phi().to_vec();
    for n in circuit.sum_nodes() {
        let edges = circuit.edges(n);
        let total: f64 = counts[edges.clone()].iter().sum();
        if total > 0.0 {
            for e in edges {
                phi[e] = (counts[e] / total).ln();
            }
        }
    }
    Params::from_log(circuit, phi)
}

/// Gradient of `mean_x log(p~(x) / Z)` w.r.t. `phi`, as the difference of
/// posterior and prior expected sufficient statistics (edge counts).
pub fn brute_gradient(circuit: &Circuit, params: &Params<f64>, data: &[&[Value]]) -> Result<Vec<f64>> {
    let post = expected_counts(circuit, params, data)?;
    let prior = prior_counts(circuit, params)?;
    Ok(post.iter().zip(&prior).map(|(a, b)| a - b).collect())
}

/// `sum_{x, z} p(x, z) log(p(x, z) / q(x, z))` with `p = p~ / Z` and `q = q~ / Z'`.
pub fn brute_joint_kl(circuit: &Circuit, params: &Params<f64>, other: &Params<f64>) -> Result<f64> {
    other.check_len(circuit)?;
    let log_z = brute_partition(circuit, params)?.ln();
    let log_z2 = brute_partition(circuit, other)?.ln();
    let mut kl = 0.0;
    for x in assignments(circuit)? {
        for_each_latent(circuit, params, &x, |z, lw| {
            let lq = path_log_weight(circuit, other.phi(), z) - log_z2;
            let lp = lw - log_z;
            kl += lp.exp() * (lp - lq);
        })?;
    }
    Ok(kl)
}

/// `sum_x p(x) log(p(x) / q(x))` over the observed variables only.
pub fn brute_marginal_kl(circuit: &Circuit, params: &Params<f64>, other: &Params<f64>) -> Result<f64> {
    let xs = assignments(circuit)?;
    let p: Vec<f64> = xs.iter().map(|x| brute_marginal(circuit, params, x)).collect::<Result<_>>()?;
    let q: Vec<f64> = xs.iter().map(|x| brute_marginal(circuit, other, x)).collect::<Result<_>>()?;
    let (zp, zq): (f64, f64) = (p.iter().sum(), q.iter().sum());
    Ok(p.iter()
        .zip(&q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| (a / zp) * ((a / zp) / (b / zq)).ln())
        .sum())
}

/// `[Q(phi') - Q(phi)] - [<grad LL(phi), phi' - phi> - KL(phi, phi')]`, all by enumeration.
pub fn prop1_residual(circuit: &Circuit, params: &Params<f64>, other: &Params<f64>, data: &[&[Value]]) -> Result<f64> {
    params.require_normalized()?;
    let q_diff = brute_q(circuit, params, other, data)? - brute_q(circuit, params, params, data)?;
    let grad = brute_gradient(circuit, params, data)?;
    let linear: f64 = grad
        .iter()
        .zip(other.phi().iter().zip(params.phi()))
        .map(|(g, (a, b))| {
            let d = a - b;
            // equal -inf entries contribute nothing
            if d.is_nan() { 0.0 } else { g * d }
        })
        .sum();
    let kl = brute_joint_kl(circuit, params, other)?;
    Ok(q_diff - (linear - kl))
}
