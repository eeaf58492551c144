//! Backward pass: circuit flows, top-down probabilities and the
//! log-likelihood gradient.
//!
//! For one sample `x`, the flow of node `n` is `d log p~(x) / d log p~_n(x)`
//! and the flow of sum edge `(n, c)` is `d log p~(x) / d phi_{n,c}`. Both are
//! propagated in log space from the root and exponentiated only when they are
//! accumulated into a [`Flows`] table.

use rayon::prelude::*;

use crate::circuit::{Circuit, InputDist, Node, NodeId};
use crate::data::Value;
use crate::error::{Error, Result};
use crate::inference::{check_sample, forward, input_log_value, Evidence};
use crate::params::Params;
use crate::scalar::{log_add_exp, Scalar};

/// Top-down probabilities of nodes and sum edges.
#[derive(Clone, Debug, PartialEq)]
pub struct TopDownProbs<T> {
    pub node: Vec<T>,
    pub edge: Vec<T>,
}

/// Batch-averaged edge and node flows.
#[derive(Clone, Debug, PartialEq)]
pub struct Flows<T> {
    pub edge: Vec<T>,
    pub node: Vec<T>,
    pub batch_size: usize,
}

impl<T: Scalar> Flows<T> {
    pub fn zeros(circuit: &Circuit) -> Self {
        Flows { edge: vec![T::zero(); circuit.num_edges()], node: vec![T::zero(); circuit.num_nodes()], batch_size: 0 }
    }

    /// Element-wise sum of unnormalized accumulators.
    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.edge.iter_mut().zip(other.edge) {
            *a = *a + b;
        }
        for (a, b) in self.node.iter_mut().zip(other.node) {
            *a = *a + b;
        }
        self.batch_size += other.batch_size;
        self
    }

    fn scale(mut self, k: T) -> Self {
        self.edge.iter_mut().for_each(|v| *v = *v * k);
        self.node.iter_mut().for_each(|v| *v = *v * k);
        self
    }

    /// Sum of edge flows leaving a sum node.
    pub fn node_total(&self, circuit: &Circuit, n: NodeId) -> T {
        self.edge[circuit.edges(n)].iter().copied().fold(T::zero(), |a, b| a + b)
    }
}

/// How per-sample flows are combined across a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    /// Samples in batch order, one accumulator. Bit-reproducible.
    Sequential,
    /// Worker-private accumulators merged element-wise.
    #[default]
    Parallel,
}

/// Data-independent top-down pass.
pub fn td_probs<T: Scalar>(circuit: &Circuit, params: &Params<T>) -> TopDownProbs<T> {
    let mut node = vec![T::zero(); circuit.num_nodes()];
    let mut edge = vec![T::zero(); circuit.num_edges()];
    node[circuit.root().0] = T::one();
    for (i, n) in circuit.nodes().iter().enumerate().rev() {
        let td = node[i];
        match n {
            Node::Input { .. } => {}
            Node::Product { children } => {
                for c in children {
                    node[c.0] = node[c.0] + td;
                }
            }
            Node::Sum { children } => {
                for (c, e) in children.iter().zip(circuit.edges(NodeId(i))) {
                    let t = params.theta(e) * td;
                    edge[e] = t;
                    node[c.0] = node[c.0] + t;
                }
            }
        }
    }
    TopDownProbs { node, edge }
}

struct Workspace<T> {
    values: Vec<T>,
    log_flow: Vec<T>,
}

impl<T: Scalar> Workspace<T> {
    fn new(circuit: &Circuit) -> Self {
        Workspace { values: vec![T::zero(); circuit.num_nodes()], log_flow: vec![T::zero(); circuit.num_nodes()] }
    }
}

/// Forward then backward on one sample. Calls `on_edge(e, log_flow)` for
/// every sum edge reached; node log-flows are left in `ws.log_flow`.
/// Returns `false` when the root value is zero.
fn sample_pass<T: Scalar>(
    circuit: &Circuit,
    phi: &[T],
    leaf: impl FnMut(usize, &InputDist) -> T,
    ws: &mut Workspace<T>,
    mut on_edge: impl FnMut(usize, T),
) -> bool {
    forward(circuit, phi, leaf, &mut ws.values);
    let root = circuit.root().0;
    if ws.values[root] == T::neg_infinity() {
        return false;
    }
    let ninf = T::neg_infinity();
    ws.log_flow.iter_mut().for_each(|f| *f = ninf);
    ws.log_flow[root] = T::zero();
    for (i, node) in circuit.nodes().iter().enumerate().rev() {
        let f = ws.log_flow[i];
        if f == ninf {
            continue;
        }
        match node {
            Node::Input { .. } => {}
            Node::Product { children } => {
                for c in children {
                    ws.log_flow[c.0] = log_add_exp(ws.log_flow[c.0], f);
                }
            }
            Node::Sum { children } => {
                // a node with nonzero flow has a nonzero value
                let base = f - ws.values[i];
                for (c, e) in children.iter().zip(circuit.edges(NodeId(i))) {
                    let le = base + phi[e] + ws.values[c.0];
                    if le == ninf {
                        continue;
                    }
                    on_edge(e, le);
                    ws.log_flow[c.0] = log_add_exp(ws.log_flow[c.0], le);
                }
            }
        }
    }
    true
}

fn accumulate_row<T: Scalar>(
    circuit: &Circuit,
    phi: &[T],
    row: &[Value],
    index: usize,
    ws: &mut Workspace<T>,
    acc: &mut Flows<T>,
) -> Result<()> {
    check_sample(circuit, row)?;
    let edge = &mut acc.edge;
    let ok = sample_pass(circuit, phi, |var, dist| input_log_value(dist, &row[var]), ws, |e, lf| {
        edge[e] = edge[e] + lf.exp();
    });
    if !ok {
        return Err(Error::ZeroLikelihood { index });
    }
    for (a, lf) in acc.node.iter_mut().zip(&ws.log_flow) {
        *a = *a + lf.exp();
    }
    acc.batch_size += 1;
    Ok(())
}

/// Flows averaged over a batch: `edge[e] = (1/|D|) sum_x d log p~(x) / d phi_e`.
pub fn backward_flows<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    rows: &[&[Value]],
    reduction: Reduction,
) -> Result<Flows<T>> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    params.check_len(circuit)?;
    let phi = params.phi();
    let total = match reduction {
        Reduction::Sequential => {
            let mut ws = Workspace::new(circuit);
            let mut acc = Flows::zeros(circuit);
            for (i, row) in rows.iter().enumerate() {
                accumulate_row(circuit, phi, row, i, &mut ws, &mut acc)?;
            }
            acc
        }
        Reduction::Parallel => rows
            .par_iter()
            .enumerate()
            .try_fold(
                || (Workspace::new(circuit), Flows::zeros(circuit)),
                |(mut ws, mut acc), (i, row)| {
                    accumulate_row(circuit, phi, row, i, &mut ws, &mut acc)?;
                    Ok::<_, Error>((ws, acc))
                },
            )
            .map(|r| r.map(|(_, acc)| acc))
            .try_reduce(|| Flows::zeros(circuit), |a, b| Ok(a.merge(b)))?,
    };
    let n = total.batch_size;
    Ok(total.scale(T::one() / T::lit(n as f64)))
}

/// Flows of a single sample under partial evidence.
pub fn evidence_flows<T: Scalar>(circuit: &Circuit, params: &Params<T>, evidence: &[Evidence]) -> Result<Flows<T>> {
    params.check_len(circuit)?;
    if evidence.len() != circuit.num_vars() {
        return Err(Error::SampleLength { expected: circuit.num_vars(), got: evidence.len() });
    }
    let mut ws = Workspace::new(circuit);
    let mut acc = Flows::zeros(circuit);
    let edge = &mut acc.edge;
    let leaf = |var: usize, dist: &InputDist| match &evidence[var] {
        Evidence::Observed(v) => input_log_value(dist, v),
        Evidence::Marginalized => T::zero(),
    };
    if !sample_pass(circuit, params.phi(), leaf, &mut ws, |e, lf| edge[e] = lf.exp()) {
        return Err(Error::ZeroLikelihood { index: 0 });
    }
    acc.node = ws.log_flow.iter().map(|f| f.exp()).collect();
    acc.batch_size = 1;
    Ok(acc)
}

/// `F^(n, c) = theta_{n,c} p~_c(x) / p~_n(x)` per sum edge; `None` where the parent's value is zero.
pub fn normalized_child_flows<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    sample: &[Value],
) -> Result<Vec<Option<T>>> {
    let values = crate::inference::log_eval(circuit, params, sample)?;
    let mut out = vec![None; circuit.num_edges()];
    for n in circuit.sum_nodes() {
        let vn = values[n.0];
        if vn == T::neg_infinity() {
            continue;
        }
        for (c, e) in circuit.node(n).children().iter().zip(circuit.edges(n)) {
            out[e] = Some((params.phi()[e] + values[c.0] - vn).exp());
        }
    }
    Ok(out)
}

/// `rel(n) = F(n) / TD(n)` for one sample (or partial evidence); `None` where `TD(n) = 0`.
pub fn relative_importance<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    evidence: &[Evidence],
) -> Result<Vec<Option<T>>> {
    let flows = evidence_flows(circuit, params, evidence)?;
    let td = td_probs(circuit, params);
    Ok(flows
        .node
        .iter()
        .zip(&td.node)
        .map(|(f, t)| if *t > T::zero() { Some(*f / *t) } else { None })
        .collect())
}

/// Gradient of the mean normalized log-likelihood w.r.t. `phi`: flows minus edge TD-probs.
pub fn loglik_gradient<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    rows: &[&[Value]],
    reduction: Reduction,
) -> Result<Vec<T>> {
    params.require_normalized()?;
    let flows = backward_flows(circuit, params, rows, reduction)?;
    let td = td_probs(circuit, params);
    Ok(gradient_from(&flows, &td))
}

pub fn gradient_from<T: Scalar>(flows: &Flows<T>, td: &TopDownProbs<T>) -> Vec<T> {
    flows.edge.iter().zip(&td.edge).map(|(f, t)| *f - *t).collect()
}

impl Evidence {
    pub fn observed(sample: &[Value]) -> Vec<Evidence> {
        sample.iter().map(|v| Evidence::Observed(*v)).collect()
    }

    pub fn all_marginalized(num_vars: usize) -> Vec<Evidence> {
        vec![Evidence::Marginalized; num_vars]
    }
}
