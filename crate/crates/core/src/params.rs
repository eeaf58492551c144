use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::circuit::{Circuit, EdgeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Log-parameters `phi`, one per sum edge, plus a normalization flag.
///
/// The flag is derived from the values, never asserted by the caller: it is
/// set iff every sum node satisfies `|sum_c exp(phi_{n,c}) - 1| <= T::NORM_TOL`.
/// A zero weight is stored as `-inf`; NaN and `+inf` are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    phi: Vec<T>,
    normalized: bool,
}

impl<T: Scalar> Params<T> {
    pub fn from_log(circuit: &Circuit, phi: Vec<T>) -> Result<Self> {
        if phi.len() != circuit.num_edges() {
            return Err(Error::ParamLength { expected: circuit.num_edges(), got: phi.len() });
        }
        if let Some(e) = phi.iter().position(|p| p.is_nan() || *p == T::infinity()) {
            return Err(Error::Config(format!("log-parameter of edge {e} is {}", phi[e])));
        }
        let normalized = locally_normalized(circuit, &phi);
        Ok(Params { phi, normalized })
    }

    /// Builds parameters from nonnegative linear weights.
    pub fn from_weights(circuit: &Circuit, theta: &[T]) -> Result<Self> {
        if let Some(e) = theta.iter().position(|t| !(*t >= T::zero())) {
            return Err(Error::Config(format!("weight of edge {e} is negative or NaN")));
        }
        Self::from_log(circuit, theta.iter().map(|t| t.ln()).collect())
    }

    /// Uniform weights `1/|ch(n)|` on every sum node.
    pub fn uniform(circuit: &Circuit) -> Self {
        let mut phi = vec![T::zero(); circuit.num_edges()];
        for n in circuit.sum_nodes() {
            let r = circuit.edges(n);
            let w = -T::lit(r.len() as f64).ln();
            phi[r].iter_mut().for_each(|p| *p = w);
        }
        let normalized = locally_normalized(circuit, &phi);
        Params { phi, normalized }
    }

    /// Draws every sum node's weights from a symmetric Dirichlet.
    pub fn dirichlet<R: Rng + ?Sized>(circuit: &Circuit, concentration: f64, rng: &mut R) -> Result<Self> {
        let gamma = Gamma::new(concentration, 1.0)
            .map_err(|e| Error::Config(format!("dirichlet concentration {concentration}: {e}")))?;
        let mut phi = vec![T::zero(); circuit.num_edges()];
        for n in circuit.sum_nodes() {
            let r = circuit.edges(n);
            let mut draws: Vec<f64> = r.clone().map(|_| gamma.sample(rng).max(f64::MIN_POSITIVE)).collect();
            let total: f64 = draws.iter().sum();
            draws.iter_mut().for_each(|d| *d /= total);
            for (p, d) in phi[r].iter_mut().zip(draws) {
                *p = T::lit(d.ln());
            }
        }
        let normalized = locally_normalized(circuit, &phi);
        Ok(Params { phi, normalized })
    }

    pub fn phi(&self) -> &[T] {
        &self.phi
    }

    pub fn into_phi(self) -> Vec<T> {
        self.phi
    }

    #[inline]
    pub fn theta(&self, e: EdgeId) -> T {
        self.phi[e].exp()
    }

    pub fn thetas(&self) -> Vec<T> {
        self.phi.iter().map(|p| p.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized)
        }
    }

    pub(crate) fn check_len(&self, circuit: &Circuit) -> Result<()> {
        if self.phi.len() != circuit.num_edges() {
            return Err(Error::ParamLength { expected: circuit.num_edges(), got: self.phi.len() });
        }
        Ok(())
    }
}

pub(crate) fn locally_normalized<T: Scalar>(circuit: &Circuit, phi: &[T]) -> bool {
    circuit.sum_nodes().all(|n| {
        let s: f64 = phi[circuit.edges(n)].iter().map(|p| p.as_f64().exp()).sum();
        (s - 1.0).abs() <= T::NORM_TOL
    })
}
