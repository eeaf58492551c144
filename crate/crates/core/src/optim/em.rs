//! EM parameter updates driven by circuit flows.

use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::flows::{Flows, TopDownProbs};
use crate::params::Params;
use crate::scalar::Scalar;

/// Applies `update(edges, theta_old, out)` to every sum node whose flows are
/// not all zero; other nodes keep their parameters. Returns the new
/// parameters and the number of frozen nodes.
fn per_node<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    flows: &Flows<T>,
    mut update: impl FnMut(std::ops::Range<usize>, &mut [T]) -> bool,
) -> Result<(Params<T>, usize)> {
    params.check_len(circuit)?;
    if flows.edge.len() != circuit.num_edges() {
        return Err(Error::ParamLength { expected: circuit.num_edges(), got: flows.edge.len() });
    }
    let mut phi = params.phi().to_vec();
    let mut frozen = 0;
    let mut theta = Vec::new();
    for n in circuit.sum_nodes() {
        let edges = circuit.edges(n);
        if flows.edge[edges.clone()].iter().all(|f| *f == T::zero()) {
            frozen += 1;
            continue;
        }
        theta.clear();
        theta.resize(edges.len(), T::zero());
        if !update(edges.clone(), &mut theta) {
            frozen += 1;
            continue;
        }
        for (p, t) in phi[edges].iter_mut().zip(&theta) {
            *p = t.ln();
        }
    }
    if frozen > 0 {
        log::warn!("{frozen} sum node(s) received no flow and kept their parameters");
    }
    Ok((Params::from_log(circuit, phi)?, frozen))
}

/// Divides `num` by its sum in place; `false` if the sum is zero or not finite.
fn normalize_in_place<T: Scalar>(num: &mut [T]) -> bool {
    let z = num.iter().copied().fold(T::zero(), |a, b| a + b);
    if !(z > T::zero()) || !z.is_finite() {
        return false;
    }
    num.iter_mut().for_each(|v| *v = *v / z);
    true
}

/// `theta'_{n,c} ∝ F(n,c) + pseudocount / |ch(n)|`.
pub fn full_batch_em_step<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    flows: &Flows<T>,
    pseudocount: T,
) -> Result<Params<T>> {
    params.require_normalized()?;
    if !(pseudocount >= T::zero()) {
        return Err(Error::Config(format!("pseudocount must be nonnegative, got {pseudocount}")));
    }
    let (p, _) = per_node(circuit, params, flows, |edges, out| {
        let share = pseudocount / T::lit(edges.len() as f64);
        for (o, e) in out.iter_mut().zip(edges) {
            *o = flows.edge[e] + share;
        }
        normalize_in_place(out)
    })?;
    Ok(p)
}

fn check_alpha<T: Scalar>(alpha: T) -> Result<()> {
    if alpha > T::zero() && alpha <= T::one() {
        Ok(())
    } else {
        Err(Error::Config(format!("step size must lie in (0, 1], got {alpha}")))
    }
}

/// Fixed-rate mixture: `theta' = (1 - alpha) theta + alpha F / sum_c F`.
pub fn minibatch_em_step_baseline<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    flows: &Flows<T>,
    alpha: T,
) -> Result<Params<T>> {
    params.require_normalized()?;
    check_alpha(alpha)?;
    let keep = T::one() - alpha;
    let (p, _) = per_node(circuit, params, flows, |edges, out| {
        let z = flows.edge[edges.clone()].iter().copied().fold(T::zero(), |a, b| a + b);
        for (o, e) in out.iter_mut().zip(edges) {
            *o = keep * params.theta(e) + alpha * flows.edge[e] / z;
        }
        // already sums to one up to rounding; renormalize to pin the invariant
        normalize_in_place(out)
    })?;
    Ok(p)
}

/// KL-weighted update: `theta' ∝ (1 - alpha) TD(n) theta + alpha F`.
///
/// Nodes with small top-down probability relative to their flow move
/// further, so the effective step for node `n` is `alpha * F(n) / TD(n)`.
pub fn minibatch_em_step_proposed<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    flows: &Flows<T>,
    td: &TopDownProbs<T>,
    alpha: T,
) -> Result<Params<T>> {
    params.require_normalized()?;
    check_alpha(alpha)?;
    if td.edge.len() != circuit.num_edges() || td.node.len() != circuit.num_nodes() {
        return Err(Error::Config("top-down probabilities do not match the circuit".into()));
    }
    let keep = T::one() - alpha;
    let (p, _) = per_node(circuit, params, flows, |edges, out| {
        let n = circuit.edge_parent(edges.start);
        let reach = keep * td.node[n.0];
        for (o, e) in out.iter_mut().zip(edges) {
            *o = reach * params.theta(e) + alpha * flows.edge[e];
        }
        normalize_in_place(out)
    })?;
    Ok(p)
}

/// Exponential moving average of flow tables with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentumFlows<T> {
    pub edge: Vec<T>,
    pub node: Vec<T>,
    /// Updates performed so far.
    pub steps: u64,
}

impl<T: Scalar> MomentumFlows<T> {
    pub fn new(circuit: &Circuit) -> Self {
        MomentumFlows { edge: vec![T::zero(); circuit.num_edges()], node: vec![T::zero(); circuit.num_nodes()], steps: 0 }
    }
}

/// `m <- eta m + (1 - eta) F`; returns `m / (1 - eta^(T+1))` and increments `T`.
pub fn momentum_update<T: Scalar>(momentum: &mut MomentumFlows<T>, flows: &Flows<T>, eta: T) -> Result<Flows<T>> {
    if !(eta >= T::zero() && eta < T::one()) {
        return Err(Error::Config(format!("momentum factor must lie in [0, 1), got {eta}")));
    }
    if momentum.edge.len() != flows.edge.len() || momentum.node.len() != flows.node.len() {
        return Err(Error::Config("momentum buffer does not match the flow table".into()));
    }
    let fresh = T::one() - eta;
    for (m, f) in momentum.edge.iter_mut().zip(&flows.edge) {
        *m = eta * *m + fresh * *f;
    }
    for (m, f) in momentum.node.iter_mut().zip(&flows.node) {
        *m = eta * *m + fresh * *f;
    }
    let exponent = i32::try_from(momentum.steps + 1).unwrap_or(i32::MAX);
    let correction = T::one() - eta.powi(exponent);
    momentum.steps += 1;
    Ok(Flows {
        edge: momentum.edge.iter().map(|m| *m / correction).collect(),
        node: momentum.node.iter().map(|m| *m / correction).collect(),
        batch_size: flows.batch_size,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Value;
    use crate::flows::{backward_flows, td_probs, Reduction};
    use crate::structure::fixtures::{self, C2_A1};

    fn flows_of<T: Scalar>(c: &Circuit, p: &Params<T>, rows: &[&[u32]]) -> Flows<T> {
        let rows: Vec<Vec<Value>> = rows.iter().map(|r| r.iter().map(|&k| Value::Cat(k)).collect()).collect();
        let refs: Vec<&[Value]> = rows.iter().map(|r| r.as_slice()).collect();
        backward_flows(c, p, &refs, Reduction::Sequential).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn full_batch_examples() {
        let (c1, p) = fixtures::c1::<f64>();
        let f = flows_of(&c1, &p, &[&[0], &[0], &[1]]);
        let q = full_batch_em_step(&c1, &p, &f, 0.0).unwrap();
        assert!(close(&q.thetas(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15));
        assert!(q.is_normalized());
        let q = full_batch_em_step(&c1, &p, &f, 1.0).unwrap();
        assert!(close(&q.thetas(), &[7.0 / 12.0, 5.0 / 12.0], 1e-15));
        let f = flows_of(&c1, &p, &[&[0], &[1]]);
        let q = full_batch_em_step(&c1, &p, &f, 0.0).unwrap();
        assert!(close(&q.thetas(), &[0.5, 0.5], 1e-15));
        assert!(full_batch_em_step(&c1, &p, &f, -1.0).is_err());
    }

    #[test]
    fn zero_flow_nodes_are_frozen() {
        let (c2, p) = fixtures::c2::<f64>();
        let mut f = flows_of(&c2, &p, &[&[0, 0]]);
        let a1 = c2.edges(C2_A1);
        f.edge[a1.clone()].iter_mut().for_each(|v| *v = 0.0);
        let q = full_batch_em_step(&c2, &p, &f, 0.0).unwrap();
        assert_eq!(&q.phi()[a1.clone()], &p.phi()[a1.clone()]);
        let q = minibatch_em_step_baseline(&c2, &p, &f, 0.4).unwrap();
        assert_eq!(&q.phi()[a1.clone()], &p.phi()[a1.clone()]);
        let td = td_probs(&c2, &p);
        let q = minibatch_em_step_proposed(&c2, &p, &f, &td, 0.4).unwrap();
        assert_eq!(&q.phi()[a1.clone()], &p.phi()[a1]);
        assert!(q.phi().iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn baseline_examples() {
        let (c1, p) = fixtures::c1::<f64>();
        let f = flows_of(&c1, &p, &[&[0]]);
        let q = minibatch_em_step_baseline(&c1, &p, &f, 0.4).unwrap();
        assert!(close(&q.thetas(), &[0.7, 0.3], 1e-15));
        let q = minibatch_em_step_baseline(&c1, &p, &f, 1e-12).unwrap();
        assert!(close(&q.thetas(), &[0.5, 0.5], 1e-11));
        assert!(minibatch_em_step_baseline(&c1, &p, &f, 0.0).is_err());
        assert!(minibatch_em_step_baseline(&c1, &p, &f, 1.5).is_err());

        let (c2, p) = fixtures::c2::<f64>();
        let f = flows_of(&c2, &p, &[&[0, 0]]);
        let q = minibatch_em_step_baseline(&c2, &p, &f, 0.4).unwrap();
        let a1 = c2.edges(C2_A1);
        assert!(close(&q.thetas()[a1], &[0.88, 0.12], 1e-15));
    }

    #[test]
    fn proposed_examples() {
        let (c1, p) = fixtures::c1::<f64>();
        let f = flows_of(&c1, &p, &[&[0]]);
        let td = td_probs(&c1, &p);
        let q = minibatch_em_step_proposed(&c1, &p, &f, &td, 0.4).unwrap();
        assert!(close(&q.thetas(), &[0.7, 0.3], 1e-15));

        let (c2, p) = fixtures::c2::<f64>();
        let f = flows_of(&c2, &p, &[&[0, 0]]);
        let td = td_probs(&c2, &p);
        let q = minibatch_em_step_proposed(&c2, &p, &f, &td, 0.4).unwrap();
        let a1 = c2.edges(C2_A1);
        let flow = 0.28 / 0.31;
        let num = [0.6 * 0.5 * 0.8 + 0.4 * flow, 0.6 * 0.5 * 0.2];
        let z = num[0] + num[1];
        let got = &q.thetas()[a1];
        assert!(close(got, &[num[0] / z, num[1] / z], 1e-15));
        assert!((got[0] - 0.9093).abs() < 1e-4);
    }

    #[test]
    fn proposed_at_alpha_one_is_full_batch() {
        let (c2, p) = fixtures::c2::<f64>();
        let f = flows_of(&c2, &p, &[&[0, 0], &[1, 0], &[1, 1]]);
        let td = td_probs(&c2, &p);
        let a = minibatch_em_step_proposed(&c2, &p, &f, &td, 1.0).unwrap();
        let b = full_batch_em_step(&c2, &p, &f, 0.0).unwrap();
        assert!(close(a.phi(), b.phi(), 1e-12));
    }

    #[test]
    fn em_steps_require_normalized_params() {
        let (c1, _) = fixtures::c1::<f64>();
        let p = Params::from_weights(&c1, &[1.0, 3.0]).unwrap();
        let f = Flows { edge: vec![1.0, 0.0], node: vec![0.0; 3], batch_size: 1 };
        assert!(matches!(full_batch_em_step(&c1, &p, &f, 0.0), Err(Error::NotNormalized)));
    }

    #[test]
    fn momentum_examples() {
        let (c2, p) = fixtures::c2::<f64>();
        let f = flows_of(&c2, &p, &[&[0, 1]]);
        let mut m = MomentumFlows::new(&c2);
        let out = momentum_update(&mut m, &f, 0.9).unwrap();
        assert!(close(&out.edge, &f.edge, 1e-15));
        assert_eq!(m.steps, 1);
        let out = momentum_update(&mut m, &f, 0.9).unwrap();
        assert!(close(&out.edge, &f.edge, 1e-15));

        let g = flows_of(&c2, &p, &[&[1, 1]]);
        let mut m = MomentumFlows::new(&c2);
        for flows in [&f, &g, &f] {
            let out = momentum_update(&mut m, flows, 0.0).unwrap();
            assert_eq!(out.edge, flows.edge);
        }
        assert!(momentum_update(&mut m, &f, 1.0).is_err());
    }
}
