#![allow(dead_code)]

use circuit_em::structure::{build_random, RandomSpec};
use circuit_em::{Circuit, ParamVector, Params, Value, VarKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random binary circuit small enough for the enumeration oracle.
pub fn small_circuit(rng: &mut ChaCha8Rng, max_vars: usize) -> (Circuit, ParamVector) {
    let spec = RandomSpec::binary(rng.random_range(1..=max_vars), rng.random_range(1..=3), rng.random_range(1..=2), rng.random());
    build_random(&spec).expect("feasible spec")
}

pub fn random_rows(circuit: &Circuit, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Value>> {
    (0..n)
        .map(|_| {
            circuit
                .vars()
                .iter()
                .map(|v| match v {
                    VarKind::Categorical(k) => Value::Cat(rng.random_range(0..*k)),
                    VarKind::Continuous => Value::Real(rng.random_range(-3.0..3.0)),
                })
                .collect()
        })
        .collect()
}

pub fn refs(rows: &[Vec<Value>]) -> Vec<&[Value]> {
    rows.iter().map(|r| r.as_slice()).collect()
}

/// Arbitrary positive weights, generally not normalized.
pub fn unnormalized(circuit: &Circuit, rng: &mut ChaCha8Rng) -> ParamVector {
    let phi = (0..circuit.num_edges()).map(|_| rng.random_range(-2.0..2.0)).collect();
    Params::from_log(circuit, phi).expect("finite")
}

pub fn normalized(circuit: &Circuit, rng: &mut ChaCha8Rng) -> ParamVector {
    Params::dirichlet(circuit, 1.0, rng).expect("valid circuit")
}
