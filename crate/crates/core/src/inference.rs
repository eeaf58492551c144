//! Log-space feedforward evaluation, partition functions and marginals.

use rayon::prelude::*;

use crate::circuit::{Circuit, InputDist, Node, VarKind};
use crate::data::Value;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

/// Per-node log-values for one sample, indexed by node id.
pub type NodeValues<T> = Vec<T>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evidence {
    Observed(Value),
    Marginalized,
}

pub fn check_sample(circuit: &Circuit, sample: &[Value]) -> Result<()> {
    if sample.len() != circuit.num_vars() {
        return Err(Error::SampleLength { expected: circuit.num_vars(), got: sample.len() });
    }
    for (var, (v, kind)) in sample.iter().zip(circuit.vars()).enumerate() {
        check_value(var, v, kind)?;
    }
    Ok(())
}

fn check_value(var: usize, v: &Value, kind: &VarKind) -> Result<()> {
    let reason = match (kind, v) {
        (VarKind::Categorical(card), Value::Cat(k)) if k < card => return Ok(()),
        (VarKind::Categorical(card), Value::Cat(k)) => format!("category {k} out of range ({card} categories)"),
        (VarKind::Continuous, Value::Real(x)) if !x.is_nan() => return Ok(()),
        (VarKind::Continuous, Value::Real(_)) => "NaN value".to_string(),
        (VarKind::Categorical(_), Value::Real(_)) => "real value for a categorical variable".to_string(),
        (VarKind::Continuous, Value::Cat(_)) => "category for a continuous variable".to_string(),
    };
    Err(Error::SampleValue { var, reason })
}

/// Log-density of an input distribution at a value.
#[inline]
pub fn input_log_value<T: Scalar>(dist: &InputDist, v: &Value) -> T {
    match (dist, v) {
        (InputDist::Indicator { category }, Value::Cat(k)) => {
            if k == category {
                T::zero()
            } else {
                T::neg_infinity()
            }
        }
        (InputDist::FixedGaussian { mean, std }, Value::Real(x)) => {
            let z = (x - mean) / std;
            T::lit(-0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln())
        }
        _ => T::neg_infinity(),
    }
}

/// Shared forward pass; `leaf` supplies each input node's log-value.
pub(crate) fn forward<T: Scalar>(
    circuit: &Circuit,
    phi: &[T],
    mut leaf: impl FnMut(usize, &InputDist) -> T,
    out: &mut [T],
) {
    debug_assert_eq!(out.len(), circuit.num_nodes());
    for (i, node) in circuit.nodes().iter().enumerate() {
        out[i] = match node {
            Node::Input { var, dist } => leaf(*var, dist),
            Node::Product { children } => {
                let mut acc = T::zero();
                for c in children {
                    acc = acc + out[c.0];
                }
                // -inf + +inf cannot occur: log-values are never +inf for finite params
                acc
            }
            Node::Sum { children } => {
                let edges = circuit.edges(crate::NodeId(i));
                let mut max = T::neg_infinity();
                for (c, e) in children.iter().zip(edges.clone()) {
                    let v = phi[e] + out[c.0];
                    if v > max {
                        max = v;
                    }
                }
                if max == T::neg_infinity() {
                    max
                } else {
                    let mut s = T::zero();
                    for (c, e) in children.iter().zip(edges) {
                        s = s + (phi[e] + out[c.0] - max).exp();
                    }
                    max + s.ln()
                }
            }
        };
    }
}

/// Evaluates every node on one sample; the root entry is `log p~(x)`.
pub fn log_eval<T: Scalar>(circuit: &Circuit, params: &Params<T>, sample: &[Value]) -> Result<NodeValues<T>> {
    params.check_len(circuit)?;
    check_sample(circuit, sample)?;
    let mut out = vec![T::zero(); circuit.num_nodes()];
    forward(circuit, params.phi(), |var, dist| input_log_value(dist, &sample[var]), &mut out);
    Ok(out)
}

/// Root log-value only.
pub fn log_likelihood<T: Scalar>(circuit: &Circuit, params: &Params<T>, sample: &[Value]) -> Result<T> {
    Ok(log_eval(circuit, params, sample)?[circuit.root().0])
}

/// Per-node `log Z_n`: inputs are 0, products add, sums log-sum-exp.
pub fn log_partition_functions<T: Scalar>(circuit: &Circuit, params: &Params<T>) -> NodeValues<T> {
    let mut out = vec![T::zero(); circuit.num_nodes()];
    forward(circuit, params.phi(), |_, _| T::zero(), &mut out);
    out
}

pub fn log_partition<T: Scalar>(circuit: &Circuit, params: &Params<T>) -> T {
    log_partition_functions(circuit, params)[circuit.root().0]
}

/// `log p~(evidence)`, with marginalized inputs contributing `log 1`.
pub fn log_marginal<T: Scalar>(circuit: &Circuit, params: &Params<T>, evidence: &[Evidence]) -> Result<T> {
    params.check_len(circuit)?;
    if evidence.len() != circuit.num_vars() {
        return Err(Error::SampleLength { expected: circuit.num_vars(), got: evidence.len() });
    }
    for (var, (e, kind)) in evidence.iter().zip(circuit.vars()).enumerate() {
        if let Evidence::Observed(v) = e {
            check_value(var, v, kind)?;
        }
    }
    let mut out = vec![T::zero(); circuit.num_nodes()];
    forward(
        circuit,
        params.phi(),
        |var, dist| match &evidence[var] {
            Evidence::Observed(v) => input_log_value(dist, v),
            Evidence::Marginalized => T::zero(),
        },
        &mut out,
    );
    Ok(out[circuit.root().0])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchLogLik<T> {
    pub values: Vec<T>,
    pub mean: T,
}

/// Root log-values for a batch. Samples are evaluated in parallel; the mean
/// is reduced sequentially so the result does not depend on scheduling.
pub fn batch_log_eval<T: Scalar>(circuit: &Circuit, params: &Params<T>, rows: &[&[Value]]) -> Result<BatchLogLik<T>> {
    if rows.is_empty() {
        return Err(Error::EmptyBatch);
    }
    params.check_len(circuit)?;
    let root = circuit.root().0;
    let values = rows
        .par_iter()
        .map_init(
            || vec![T::zero(); circuit.num_nodes()],
            |buf, row| {
                check_sample(circuit, row)?;
                forward(circuit, params.phi(), |var, dist| input_log_value(dist, &row[var]), buf);
                Ok(buf[root])
            },
        )
        .collect::<Result<Vec<T>>>()?;
    let mut total = T::zero();
    for v in &values {
        total = total + *v;
    }
    let mean = total / T::lit(values.len() as f64);
    Ok(BatchLogLik { values, mean })
}

/// Mean log-likelihood over a whole dataset.
pub fn dataset_log_likelihood<T: Scalar>(circuit: &Circuit, params: &Params<T>, data: &crate::Dataset) -> Result<T> {
    let rows: Vec<&[Value]> = data.rows().collect();
    Ok(batch_log_eval(circuit, params, &rows)?.mean)
}
