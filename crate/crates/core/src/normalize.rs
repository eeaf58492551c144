//! Global renormalization and the joint KL divergence between two
//! parameterizations of one circuit.

use crate::circuit::{Circuit, Node, NodeId};
use crate::data::Value;
use crate::error::{Error, Result};
use crate::flows::{backward_flows, evidence_flows, td_probs, Reduction};
use crate::inference::Evidence;
use crate::inference::log_partition_functions;
use crate::params::Params;
use crate::scalar::Scalar;

/// Rewrites `phi` so every node's distribution integrates to one:
/// `phi'_{n,c} = phi_{n,c} + log Z_c - log Z_n`.
///
/// Parameters that already carry the normalized flag are returned unchanged.
pub fn renormalize<T: Scalar>(circuit: &Circuit, params: &Params<T>) -> Result<Params<T>> {
    params.check_len(circuit)?;
    if params.is_normalized() {
        return Ok(params.clone());
    }
    let log_z = log_partition_functions(circuit, params);
    for n in circuit.sum_nodes() {
        let z = log_z[n.0];
        if !z.is_finite() {
            return Err(Error::DegeneratePartition { node: n, value: z.as_f64().exp() });
        }
    }
    let mut phi = params.phi().to_vec();
    for n in circuit.sum_nodes() {
        for (c, e) in circuit.node(n).children().iter().zip(circuit.edges(n)) {
            phi[e] = phi[e] + log_z[c.0] - log_z[n.0];
        }
    }
    Params::from_log(circuit, phi)
}

/// KL divergence over observed and latent variables, `KL(p_phi(X, Z) || p_phi'(X, Z))`.
///
/// Inputs contribute 0, products add their children, and a sum node adds
/// `sum_c theta_{n,c} * ((phi_{n,c} - phi'_{n,c}) + KL_c)`.
pub fn kl_joint<T: Scalar>(circuit: &Circuit, params: &Params<T>, other: &Params<T>) -> Result<T> {
    params.check_len(circuit)?;
    other.check_len(circuit)?;
    params.require_normalized()?;
    other.require_normalized()?;
    let phi = params.phi();
    let psi = other.phi();
    let mut kl = vec![T::zero(); circuit.num_nodes()];
    for (i, node) in circuit.nodes().iter().enumerate() {
        kl[i] = match node {
            Node::Input { .. } => T::zero(),
            Node::Product { children } => children.iter().fold(T::zero(), |a, c| a + kl[c.0]),
            Node::Sum { children } => {
                let mut acc = T::zero();
                for (c, e) in children.iter().zip(circuit.edges(NodeId(i))) {
                    let theta = phi[e].exp();
                    // zero-weight edges are never selected
                    if theta > T::zero() {
                        acc = acc + theta * ((phi[e] - psi[e]) + kl[c.0]);
                    }
                }
                acc
            }
        };
    }
    Ok(kl[circuit.root().0])
}

/// Both sides of `KL(phi, phi1) - KL(phi, phi2) = -<TD(phi), phi1 - phi2>`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFormCheck<T> {
    pub kl_difference: T,
    pub linear_difference: T,
}

impl<T: Scalar> LinearFormCheck<T> {
    pub fn residual(&self) -> T {
        (self.kl_difference - self.linear_difference).abs()
    }
}

pub fn kl_linear_form_check<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    first: &Params<T>,
    second: &Params<T>,
) -> Result<LinearFormCheck<T>> {
    let kl_difference = kl_joint(circuit, params, first)? - kl_joint(circuit, params, second)?;
    let td = td_probs(circuit, params);
    let mut dot = T::zero();
    for (e, t) in td.edge.iter().enumerate() {
        if *t > T::zero() {
            dot = dot + *t * (first.phi()[e] - second.phi()[e]);
        }
    }
    Ok(LinearFormCheck { kl_difference, linear_difference: -dot })
}

/// Per-edge gradient of the mean normalized log-likelihood for arbitrary
/// (possibly unnormalized) parameters: data flows minus the flows of the
/// fully marginalized query, which are `d log Z / d phi`.
///
/// For normalized parameters the second term equals the TD-probs.
pub fn normalized_gradient<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    rows: &[&[Value]],
    reduction: Reduction,
) -> Result<Vec<T>> {
    let flows = backward_flows(circuit, params, rows, reduction)?;
    let z_flows = evidence_flows(circuit, params, &Evidence::all_marginalized(circuit.num_vars()))?;
    Ok(flows.edge.iter().zip(&z_flows.edge).map(|(f, z)| *f - *z).collect())
}

/// Largest per-edge difference between flows, and between normalized
/// log-likelihood gradients, before and after renormalization.
pub fn gradient_invariance_check<T: Scalar>(circuit: &Circuit, params: &Params<T>, rows: &[&[Value]]) -> Result<T> {
    let renormed = renormalize(circuit, params)?;
    let before = backward_flows(circuit, params, rows, Reduction::Sequential)?;
    let after = backward_flows(circuit, &renormed, rows, Reduction::Sequential)?;
    let g_before = normalized_gradient(circuit, params, rows, Reduction::Sequential)?;
    let g_after = normalized_gradient(circuit, &renormed, rows, Reduction::Sequential)?;
    let mut worst = T::zero();
    for (a, b) in before.edge.iter().zip(&after.edge).chain(g_before.iter().zip(&g_after)) {
        worst = worst.max((*a - *b).abs());
    }
    Ok(worst)
}
