//! Circuit builders: hand-written fixtures, seeded random circuits over
//! variable partitions, and a Chow-Liu-tree circuit with latent blocks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, InputDist, Node, NodeId, VarKind};
use crate::data::{Dataset, Value};
use crate::error::{Error, Result};
use crate::params::Params;
use crate::scalar::Scalar;

/// Default Dirichlet concentration for parameter initialization.
pub const DEFAULT_CONCENTRATION: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub enum StructureSpec {
    Fixture { name: String },
    Random(RandomSpec),
    Clt { hidden_size: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomSpec {
    pub num_vars: usize,
    /// Number of recursive variable splits below the root region.
    pub depth: usize,
    /// Sum nodes per non-root region.
    pub sum_fanout: usize,
    pub cardinality: u32,
    pub seed: u64,
}

impl RandomSpec {
    pub fn binary(num_vars: usize, depth: usize, sum_fanout: usize, seed: u64) -> Self {
        RandomSpec { num_vars, depth, sum_fanout, cardinality: 2, seed }
    }
}

struct Builder {
    nodes: Vec<Node>,
}

impl Builder {
    fn push(&mut self, node: Node) -> NodeId {
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// One indicator input per (variable, category), laid out variable-major.
    fn indicators(&mut self, cards: &[u32]) -> Vec<Vec<NodeId>> {
        cards
            .iter()
            .enumerate()
            .map(|(var, &k)| {
                (0..k).map(|category| self.push(Node::Input { var, dist: InputDist::Indicator { category } })).collect()
            })
            .collect()
    }
}

/// Hand-checkable circuits shared by tests and documentation.
pub mod fixtures {
    use super::*;

    /// Sum node `A1` of [`c2`] (mixture over `X1` indicators, weights 0.8/0.2).
    pub const C2_A1: NodeId = NodeId(4);
    pub const C2_A2: NodeId = NodeId(5);
    pub const C2_B1: NodeId = NodeId(6);
    pub const C2_B2: NodeId = NodeId(7);
    pub const C2_P1: NodeId = NodeId(8);
    pub const C2_P2: NodeId = NodeId(9);

    fn ind(var: usize, category: u32) -> Node {
        Node::Input { var, dist: InputDist::Indicator { category } }
    }

    fn sum(children: &[usize]) -> Node {
        Node::Sum { children: children.iter().map(|&c| NodeId(c)).collect() }
    }

    /// One binary variable, root sum over its two indicators with weights 0.5/0.5.
    pub fn c1<T: Scalar>() -> (Circuit, Params<T>) {
        let c = Circuit::new(vec![VarKind::Categorical(2)], vec![ind(0, 0), ind(0, 1), sum(&[0, 1])]).unwrap();
        let p = Params::from_weights(&c, &[T::lit(0.5), T::lit(0.5)]).unwrap();
        (c, p)
    }

    /// Two binary variables, root mixture of two fully factorized products.
    pub fn c2<T: Scalar>() -> (Circuit, Params<T>) {
        let nodes = vec![
            ind(0, 0),
            ind(0, 1),
            ind(1, 0),
            ind(1, 1),
            sum(&[0, 1]),
            sum(&[0, 1]),
            sum(&[2, 3]),
            sum(&[2, 3]),
            Node::Product { children: vec![C2_A1, C2_B1] },
            Node::Product { children: vec![C2_A2, C2_B2] },
            sum(&[8, 9]),
        ];
        let c = Circuit::new(vec![VarKind::Categorical(2); 2], nodes).unwrap();
        let w = [0.8, 0.2, 0.2, 0.8, 0.7, 0.3, 0.3, 0.7, 0.5, 0.5].map(T::lit);
        let p = Params::from_weights(&c, &w).unwrap();
        (c, p)
    }

    /// One continuous variable, equal mixture of N(-1.5, 0.75^2) and N(1.5, 0.75^2).
    pub fn g1<T: Scalar>() -> (Circuit, Params<T>) {
        let g = |mean| Node::Input { var: 0, dist: InputDist::FixedGaussian { mean, std: 0.75 } };
        let c = Circuit::new(vec![VarKind::Continuous], vec![g(-1.5), g(1.5), sum(&[0, 1])]).unwrap();
        let p = Params::from_weights(&c, &[T::lit(0.5), T::lit(0.5)]).unwrap();
        (c, p)
    }

    pub fn by_name<T: Scalar>(name: &str) -> Result<(Circuit, Params<T>)> {
        match name.to_ascii_lowercase().as_str() {
            "c1" => Ok(c1()),
            "c2" => Ok(c2()),
            "g1" => Ok(g1()),
            other => Err(Error::Config(format!("unknown fixture `{other}` (expected c1, c2 or g1)"))),
        }
    }
}

/// Random smooth, decomposable circuit built over recursive variable splits.
///
/// Each region over a variable set holds `sum_fanout` sum nodes (the root
/// region holds one). A region is split into two random halves whose sum
/// nodes are paired by all-pairs products; regions that hit the depth limit
/// are fully factorized, and single-variable regions mix the indicators.
pub fn build_random<T: Scalar>(spec: &RandomSpec) -> Result<(Circuit, Params<T>)> {
    if spec.num_vars == 0 || spec.depth == 0 || spec.sum_fanout == 0 || spec.cardinality == 0 {
        return Err(Error::Config(format!("infeasible random structure {spec:?}")));
    }
    // rough node count: k^2 products per split region
    let est = (spec.num_vars as f64) * (spec.sum_fanout as f64).powi(2) * 2f64.powi(spec.depth.min(60) as i32);
    if est > 5e7 {
        return Err(Error::Config(format!("random structure {spec:?} is too large")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut b = Builder { nodes: Vec::new() };
    let inputs = b.indicators(&vec![spec.cardinality; spec.num_vars]);
    let vars: Vec<usize> = (0..spec.num_vars).collect();
    random_region(&mut b, &inputs, &vars, spec.depth, 1, spec.sum_fanout, &mut rng);
    let circuit = Circuit::new(vec![VarKind::Categorical(spec.cardinality); spec.num_vars], b.nodes)?;
    let params = Params::dirichlet(&circuit, DEFAULT_CONCENTRATION, &mut rng)?;
    Ok((circuit, params))
}

fn random_region(
    b: &mut Builder,
    inputs: &[Vec<NodeId>],
    vars: &[usize],
    depth: usize,
    count: usize,
    fanout: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<NodeId> {
    let children: Vec<NodeId> = if vars.len() == 1 {
        inputs[vars[0]].clone()
    } else if depth == 0 {
        let per_var: Vec<Vec<NodeId>> =
            vars.iter().map(|&v| random_region(b, inputs, &[v], 0, fanout, fanout, rng)).collect();
        (0..fanout)
            .map(|j| b.push(Node::Product { children: per_var.iter().map(|s| s[j]).collect() }))
            .collect()
    } else {
        let mut shuffled = vars.to_vec();
        shuffled.shuffle(rng);
        let cut = rng.random_range(1..shuffled.len());
        let (l, r) = shuffled.split_at(cut);
        let (mut l, mut r) = (l.to_vec(), r.to_vec());
        l.sort_unstable();
        r.sort_unstable();
        let left = random_region(b, inputs, &l, depth - 1, fanout, fanout, rng);
        let right = random_region(b, inputs, &r, depth - 1, fanout, fanout, rng);
        let mut prods = Vec::with_capacity(left.len() * right.len());
        for &a in &left {
            for &c in &right {
                prods.push(b.push(Node::Product { children: vec![a, c] }));
            }
        }
        prods
    };
    (0..count).map(|_| b.push(Node::Sum { children: children.clone() })).collect()
}

/// Mutual information (nats) of two categorical columns, with `smoothing`
/// added to every cell of the joint count table.
pub fn mutual_information(a: &[u32], b: &[u32], ka: u32, kb: u32, smoothing: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ka_u, kb_u) = (ka as usize, kb as usize);
    let mut codes: Vec<u64> = a.iter().zip(b).map(|(&x, &y)| x as u64 * kb as u64 + y as u64).collect();
    codes.sort_unstable();
    let mut na = vec![0f64; ka_u];
    let mut nb = vec![0f64; kb_u];
    for (&x, &y) in a.iter().zip(b) {
        na[x as usize] += 1.0;
        nb[y as usize] += 1.0;
    }
    let cells = ka as f64 * kb as f64;
    let total = a.len() as f64 + smoothing * cells;
    if total == 0.0 {
        return 0.0;
    }
    let ln_pa: Vec<f64> = na.iter().map(|n| ((n + smoothing * kb as f64) / total).ln()).collect();
    let ln_pb: Vec<f64> = nb.iter().map(|n| ((n + smoothing * ka as f64) / total).ln()).collect();

    let mut mi = 0.0;
    let p0 = smoothing / total;
    if smoothing > 0.0 {
        // every cell at the smoothed floor, corrected below for observed cells
        mi += p0 * (cells * p0.ln() - kb as f64 * ln_pa.iter().sum::<f64>() - ka as f64 * ln_pb.iter().sum::<f64>());
    }
    let mut i = 0;
    while i < codes.len() {
        let mut j = i;
        while j < codes.len() && codes[j] == codes[i] {
            j += 1;
        }
        let (x, y) = ((codes[i] / kb as u64) as usize, (codes[i] % kb as u64) as usize);
        let p = ((j - i) as f64 + smoothing) / total;
        let denom = ln_pa[x] + ln_pb[y];
        mi += p * (p.ln() - denom);
        if smoothing > 0.0 {
            mi -= p0 * (p0.ln() - denom);
        }
        i = j;
    }
    mi
}

/// Pairwise smoothed mutual information matrix (row-major, symmetric, zero diagonal).
pub fn pairwise_mutual_information(data: &Dataset, smoothing: f64) -> Result<Vec<f64>> {
    let cards = categorical_cards(data)?;
    let n = cards.len();
    let cols: Vec<Vec<u32>> = (0..n)
        .map(|k| {
            data.rows()
                .map(|r| match r[k] {
                    Value::Cat(v) => v,
                    Value::Real(_) => unreachable!("checked categorical"),
                })
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| mutual_information(&cols[i], &cols[j], cards[i], cards[j], smoothing))
        .collect();
    let mut m = vec![0.0; n * n];
    for (&(i, j), v) in pairs.iter().zip(values) {
        m[i * n + j] = v;
        m[j * n + i] = v;
    }
    Ok(m)
}

fn categorical_cards(data: &Dataset) -> Result<Vec<u32>> {
    data.vars()
        .iter()
        .map(|v| match v {
            VarKind::Categorical(k) => Ok(*k),
            VarKind::Continuous => Err(Error::Data("tree builder needs categorical columns".into())),
        })
        .collect()
}

/// Maximum spanning tree rooted at variable 0, as a parent array (`None` for the root).
///
/// Prim's algorithm. Weights within `1e-12` count as tied; ties go to the
/// smallest new variable, then to the largest variable already in the tree,
/// so an all-equal weight matrix yields the chain `0 - 1 - 2 - ...`.
pub fn max_spanning_tree(weights: &[f64], n: usize) -> Vec<Option<usize>> {
    const TIE: f64 = 1e-12;
    let mut parent = vec![None; n];
    let mut in_tree = vec![false; n];
    if n == 0 {
        return parent;
    }
    in_tree[0] = true;
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for v in (0..n).filter(|&v| !in_tree[v]) {
            for u in (0..n).filter(|&u| in_tree[u]) {
                let w = weights[u * n + v];
                let better = match best {
                    None => true,
                    Some((bw, bv, bu)) => w > bw + TIE || (w >= bw - TIE && (v < bv || (v == bv && u > bu))),
                };
                if better {
                    best = Some((w, v, u));
                }
            }
        }
        let (_, v, u) = best.expect("non-empty frontier");
        in_tree[v] = true;
        parent[v] = Some(u);
    }
    parent
}

/// Chow-Liu tree compiled into a circuit with `hidden_size` latent states per variable.
///
/// For tree variable `v` and latent state `i`, a leaf sum mixes `v`'s
/// indicators and a product joins it with one sum per tree child `u`, which
/// mixes the `hidden_size` products of `u`. The root sum mixes the products
/// of variable 0.
pub fn build_clt<T: Scalar>(data: &Dataset, hidden_size: usize, seed: u64) -> Result<(Circuit, Params<T>)> {
    if hidden_size == 0 {
        return Err(Error::Config("hidden_size must be at least 1".into()));
    }
    let cards = categorical_cards(data)?;
    if cards.len() < 2 {
        return Err(Error::Data("tree builder needs at least two variables".into()));
    }
    if data.is_empty() {
        return Err(Error::Data("tree builder needs at least one sample".into()));
    }
    let n = cards.len();
    let mi = pairwise_mutual_information(data, 1.0)?;
    let parent = max_spanning_tree(&mi, n);
    let mut kids = vec![Vec::new(); n];
    for (v, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            kids[*p].push(v);
        }
    }

    // iterative post-order from variable 0
    let mut order = Vec::with_capacity(n);
    let mut stack = vec![(0usize, false)];
    while let Some((v, done)) = stack.pop() {
        if done {
            order.push(v);
        } else {
            stack.push((v, true));
            for &u in kids[v].iter().rev() {
                stack.push((u, false));
            }
        }
    }

    let mut b = Builder { nodes: Vec::new() };
    let inputs = b.indicators(&cards);
    let mut prods: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for &v in &order {
        let child_sums: Vec<Vec<NodeId>> = kids[v]
            .iter()
            .map(|&u| (0..hidden_size).map(|_| b.push(Node::Sum { children: prods[u].clone() })).collect())
            .collect();
        let leaves: Vec<NodeId> =
            (0..hidden_size).map(|_| b.push(Node::Sum { children: inputs[v].clone() })).collect();
        prods[v] = (0..hidden_size)
            .map(|i| {
                let mut children = vec![leaves[i]];
                children.extend(child_sums.iter().map(|s| s[i]));
                b.push(Node::Product { children })
            })
            .collect();
    }
    b.push(Node::Sum { children: prods[0].clone() });

    let circuit = Circuit::new(cards.iter().map(|&k| VarKind::Categorical(k)).collect(), b.nodes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = Params::dirichlet(&circuit, DEFAULT_CONCENTRATION, &mut rng)?;
    Ok((circuit, params))
}

/// Samples from a mixture of independent categoricals; used to make synthetic data.
#[derive(Clone, Debug)]
pub struct CategoricalMixture {
    pub weights: Vec<f64>,
    /// `components[k][v]` is the category distribution of variable `v` in component `k`.
    pub components: Vec<Vec<Vec<f64>>>,
}

impl CategoricalMixture {
    /// Random mixture with Dirichlet-drawn weights and per-variable distributions.
    pub fn random(num_components: usize, num_vars: usize, cardinality: u32, concentration: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gamma = rand_distr::Gamma::new(concentration, 1.0).expect("positive concentration");
        let draw = |k: usize, rng: &mut ChaCha8Rng| {
            let mut v: Vec<f64> = (0..k).map(|_| rand_distr::Distribution::sample(&gamma, rng).max(1e-300)).collect();
            let s: f64 = v.iter().sum();
            v.iter_mut().for_each(|x| *x /= s);
            v
        };
        let weights = {
            let g1 = rand_distr::Gamma::new(2.0, 1.0).unwrap();
            let mut w: Vec<f64> = (0..num_components).map(|_| rand_distr::Distribution::sample(&g1, &mut rng)).collect();
            let s: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= s);
            w
        };
        let components = (0..num_components)
            .map(|_| (0..num_vars).map(|_| draw(cardinality as usize, &mut rng)).collect())
            .collect();
        CategoricalMixture { weights, components }
    }

    pub fn sample(&self, rows: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let num_vars = self.components[0].len();
        let card = self.components[0][0].len() as u32;
        let pick = |p: &[f64], rng: &mut ChaCha8Rng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, w) in p.iter().enumerate() {
                acc += w;
                if u < acc {
                    return k;
                }
            }
            p.len() - 1
        };
        let mut cells = Vec::with_capacity(rows * num_vars);
        for _ in 0..rows {
            let k = pick(&self.weights, &mut rng);
            for v in 0..num_vars {
                cells.push(Value::Cat(pick(&self.components[k][v], &mut rng) as u32));
            }
        }
        Dataset::from_cells(vec![VarKind::Categorical(card); num_vars], cells)
    }

    /// Exact log-probability of a sample.
    pub fn log_prob(&self, row: &[Value]) -> f64 {
        let terms: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, comp)| {
                w.ln()
                    + row
                        .iter()
                        .zip(comp)
                        .map(|(v, p)| match v {
                            Value::Cat(k) => p[*k as usize].ln(),
                            Value::Real(_) => f64::NEG_INFINITY,
                        })
                        .sum::<f64>()
            })
            .collect();
        crate::scalar::log_sum_exp(terms.iter().copied())
    }
}

/// Builds a circuit from a [`StructureSpec`]; `data` is required for `Clt`.
pub fn build<T: Scalar>(spec: &StructureSpec, data: Option<&Dataset>) -> Result<(Circuit, Params<T>)> {
    match spec {
        StructureSpec::Fixture { name } => fixtures::by_name(name),
        StructureSpec::Random(r) => build_random(r),
        StructureSpec::Clt { hidden_size, seed } => {
            let data = data.ok_or_else(|| Error::Config("tree builder needs a dataset".into()))?;
            build_clt(data, *hidden_size, *seed)
        }
    }
}
