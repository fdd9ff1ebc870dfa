use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bicop::{fit_bicop, Bicop, Family, MIN_PAIRS};
use super::tau::kendall_tau;
use crate::error::{Error, Result};
use crate::marginals::{MarginalKind, MarginalModel};
use crate::sample::{Bounds, SampleSet};

/// Conditioning sets are bitmasks, so dimensions are capped at 64.
pub const MAX_DIM: usize = 64;

/// One pair copula of the vine, linking the conditional distributions of
/// `a` and `b` given the variables in `cond`.
///
/// Conditional PIT values live in numbered slots: `in_a`/`in_b` hold
/// F(a | cond) and F(b | cond), `out_a`/`out_b` receive F(a | cond, b) and
/// F(b | cond, a). Slots `0..d` are the marginal PITs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineEdge {
    a: usize,
    b: usize,
    cond: Vec<usize>,
    copula: Bicop,
    in_a: usize,
    in_b: usize,
    out_a: usize,
    out_b: usize,
}

impl VineEdge {
    pub fn a(&self) -> usize {
        self.a
    }

    pub fn b(&self) -> usize {
        self.b
    }

    pub fn conditioning(&self) -> &[usize] {
        &self.cond
    }

    pub fn copula(&self) -> &Bicop {
        &self.copula
    }

    fn eval(&self, slots: &mut [f64]) -> f64 {
        let (u, v) = (slots[self.in_a], slots[self.in_b]);
        slots[self.out_a] = self.copula.hfunc(u, v);
        slots[self.out_b] = self.copula.hfunc2(u, v);
        self.copula.log_pdf(u, v)
    }
}

/// Variable drawn at one step of inverse-Rosenblatt sampling, with the edges
/// (one per tree, ascending) that condition it on the variables drawn before.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Step {
    var: usize,
    chain: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VineModel {
    d: usize,
    marginals: Vec<MarginalModel>,
    trees: Vec<Vec<VineEdge>>,
    steps: Vec<Step>,
    n_slots: usize,
}

fn mask_of(vars: &[usize]) -> u64 {
    vars.iter().fold(0, |m, &v| m | (1u64 << v))
}

fn vars_of(mask: u64) -> Vec<usize> {
    (0..64).filter(|&j| mask & (1u64 << j) != 0).collect()
}

struct Candidate {
    i: usize,
    j: usize,
    weight: f64,
}

/// Maximum spanning tree by Prim's algorithm. Ties in weight go to the
/// lexicographically smaller node pair.
fn prim(n_nodes: usize, cands: &[Candidate]) -> Result<Vec<usize>> {
    let mut in_tree = vec![false; n_nodes];
    in_tree[0] = true;
    let mut chosen = Vec::with_capacity(n_nodes - 1);
    for _ in 1..n_nodes {
        let mut best: Option<usize> = None;
        for (k, c) in cands.iter().enumerate() {
            if in_tree[c.i] == in_tree[c.j] {
                continue;
            }
            best = match best {
                None => Some(k),
                Some(b) => {
                    let cb = &cands[b];
                    if c.weight > cb.weight || (c.weight == cb.weight && (c.i, c.j) < (cb.i, cb.j)) {
                        Some(k)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let k = best.ok_or_else(|| Error::DegenerateInput("vine tree graph is disconnected".into()))?;
        in_tree[cands[k].i] = true;
        in_tree[cands[k].j] = true;
        chosen.push(k);
    }
    Ok(chosen)
}

/// Fits marginals of the given kind, then builds the vine tree by tree:
/// each tree is the maximum spanning tree of |Kendall tau| among pairs that
/// satisfy the proximity condition, and its pair copulas are chosen by AIC.
pub fn fit_vine(
    samples: &SampleSet,
    kind: MarginalKind,
    bounds: Option<&Bounds>,
    g_max: usize,
    seed: u64,
) -> Result<VineModel> {
    let (n, d) = (samples.len(), samples.dim());
    if n < MIN_PAIRS {
        return Err(Error::InsufficientSamples { needed: MIN_PAIRS, got: n });
    }
    if d < 2 {
        return Err(Error::InvalidInput("a vine needs at least two dimensions".into()));
    }
    if d > MAX_DIM {
        return Err(Error::InvalidInput(format!("at most {MAX_DIM} dimensions are supported")));
    }
    if let Some(b) = bounds {
        if b.dim() != d {
            return Err(Error::InvalidBounds(format!("bounds have dimension {}, samples {d}", b.dim())));
        }
    }
    let marginals: Vec<MarginalModel> = (0..d)
        .into_par_iter()
        .map(|j| {
            let (lo, hi) = bounds.map_or((f64::NEG_INFINITY, f64::INFINITY), |b| (b.lower()[j], b.upper()[j]));
            MarginalModel::fit(kind, &samples.column(j), lo, hi, g_max, seed.wrapping_add(j as u64))
        })
        .collect::<Result<_>>()?;

    let mut slots: Vec<Vec<f64>> =
        (0..d).map(|j| samples.column(j).iter().map(|&x| marginals[j].pit(x)).collect()).collect();
    let mut slot_of: HashMap<(usize, u64), usize> = (0..d).map(|j| ((j, 0u64), j)).collect();

    // Nodes of the current tree: constraint set and, above the first tree,
    // the two endpoints in the previous tree.
    let mut node_sets: Vec<u64> = (0..d).map(|j| 1u64 << j).collect();
    let mut node_ends: Vec<Option<(usize, usize)>> = vec![None; d];
    let mut trees: Vec<Vec<VineEdge>> = Vec::with_capacity(d - 1);

    for _level in 0..d - 1 {
        let m = node_sets.len();
        let mut pairs = Vec::new();
        for i in 0..m {
            for j in i + 1..m {
                let adjacent = match (node_ends[i], node_ends[j]) {
                    (Some((p, q)), Some((r, s))) => p == r || p == s || q == r || q == s,
                    _ => true,
                };
                if adjacent {
                    pairs.push((i, j));
                }
            }
        }
        let resolved: Vec<(usize, usize, u64, usize, usize)> = pairs
            .iter()
            .map(|&(i, j)| {
                let cond = node_sets[i] & node_sets[j];
                let (ci, cj) = (node_sets[i] & !cond, node_sets[j] & !cond);
                if ci.count_ones() != 1 || cj.count_ones() != 1 {
                    return Err(Error::DegenerateInput("vine proximity condition violated".into()));
                }
                let (a, b) = (ci.trailing_zeros() as usize, cj.trailing_zeros() as usize);
                Ok((a, b, cond, slot_of[&(a, cond)], slot_of[&(b, cond)]))
            })
            .collect::<Result<_>>()?;
        let cands: Vec<Candidate> = pairs
            .par_iter()
            .zip(&resolved)
            .map(|(&(i, j), r)| Ok(Candidate { i, j, weight: kendall_tau(&slots[r.3], &slots[r.4])?.abs() }))
            .collect::<Result<_>>()?;
        let chosen = prim(m, &cands)?;
        let copulas: Vec<Bicop> = chosen
            .par_iter()
            .map(|&k| fit_bicop(&slots[resolved[k].3], &slots[resolved[k].4]))
            .collect::<Result<_>>()?;

        let mut edges = Vec::with_capacity(chosen.len());
        let mut sets = Vec::with_capacity(chosen.len());
        let mut ends = Vec::with_capacity(chosen.len());
        for (&k, copula) in chosen.iter().zip(copulas) {
            let (a, b, cond, in_a, in_b) = resolved[k];
            let (out_a, out_b) = (slots.len(), slots.len() + 1);
            let (ua, ub) = (&slots[in_a], &slots[in_b]);
            let ha: Vec<f64> = ua.iter().zip(ub).map(|(&u, &v)| copula.hfunc(u, v)).collect();
            let hb: Vec<f64> = ua.iter().zip(ub).map(|(&u, &v)| copula.hfunc2(u, v)).collect();
            slots.push(ha);
            slots.push(hb);
            slot_of.insert((a, cond | (1 << b)), out_a);
            slot_of.insert((b, cond | (1 << a)), out_b);
            sets.push(cond | (1 << a) | (1 << b));
            ends.push(Some((cands[k].i, cands[k].j)));
            edges.push(VineEdge { a, b, cond: vars_of(cond), copula, in_a, in_b, out_a, out_b });
        }
        trees.push(edges);
        node_sets = sets;
        node_ends = ends;
    }

    let steps = sampling_steps(d, &trees)?;
    let n_slots = d + 2 * trees.iter().map(Vec::len).sum::<usize>();
    Ok(VineModel { d, marginals, trees, steps, n_slots })
}

/// Peels the vine from the top: a conditioned variable of the single top
/// edge appears in exactly one edge of every tree, and removing those edges
/// leaves a vine on the remaining variables. Sampling runs in reverse.
fn sampling_steps(d: usize, trees: &[Vec<VineEdge>]) -> Result<Vec<Step>> {
    let mut alive: Vec<Vec<bool>> = trees.iter().map(|t| vec![true; t.len()]).collect();
    let mut remaining: Vec<usize> = (0..d).collect();
    let mut steps = Vec::with_capacity(d);
    while remaining.len() > 1 {
        let top = remaining.len() - 2;
        let live: Vec<usize> = (0..trees[top].len()).filter(|&k| alive[top][k]).collect();
        if live.len() != 1 {
            return Err(Error::DegenerateInput("vine structure is not regular".into()));
        }
        let var = trees[top][live[0]].a;
        let mut chain = Vec::with_capacity(top + 1);
        for level in 0..=top {
            let hits: Vec<usize> = (0..trees[level].len())
                .filter(|&k| alive[level][k] && (trees[level][k].a == var || trees[level][k].b == var))
                .collect();
            if hits.len() != 1 {
                return Err(Error::DegenerateInput("vine structure is not regular".into()));
            }
            alive[level][hits[0]] = false;
            chain.push((level, hits[0]));
        }
        remaining.retain(|&v| v != var);
        steps.push(Step { var, chain });
    }
    steps.push(Step { var: remaining[0], chain: Vec::new() });
    steps.reverse();
    Ok(steps)
}

impl VineModel {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn marginals(&self) -> &[MarginalModel] {
        &self.marginals
    }

    /// Edges per tree; tree `l` (from 0) has `d - 1 - l` edges.
    pub fn trees(&self) -> &[Vec<VineEdge>] {
        &self.trees
    }

    pub fn is_independent(&self) -> bool {
        self.trees.iter().flatten().all(|e| e.copula.family() == Family::Independence)
    }

    /// Log density; `-inf` wherever a marginal density vanishes.
    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        if x.len() != self.d {
            return f64::NAN;
        }
        let mut slots = vec![0.0; self.n_slots];
        let mut lp = 0.0;
        for (j, m) in self.marginals.iter().enumerate() {
            let f = m.pdf(x[j]);
            if !(f > 0.0) {
                return f64::NEG_INFINITY;
            }
            lp += f.ln();
            slots[j] = m.pit(x[j]);
        }
        for e in self.trees.iter().flatten() {
            lp += e.eval(&mut slots);
        }
        lp
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        self.log_pdf(x).exp()
    }

    /// Inverse-Rosenblatt sampling: independent uniforms are pushed through
    /// the inverse h-functions along each variable's chain of edges, then
    /// through the marginal quantile functions.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut slots = vec![0.0; self.n_slots];
        for _ in 0..n {
            for step in &self.steps {
                let mut w: f64 = rng.random();
                for &(level, k) in step.chain.iter().rev() {
                    let e = &self.trees[level][k];
                    if e.a == step.var {
                        slots[e.out_a] = w;
                        w = e.copula.hinv(w, slots[e.in_b]);
                    } else {
                        slots[e.out_b] = w;
                        w = e.copula.hinv2(w, slots[e.in_a]);
                    }
                }
                slots[step.var] = w;
                for &(level, k) in &step.chain {
                    let e = &self.trees[level][k];
                    let (u, v) = (slots[e.in_a], slots[e.in_b]);
                    if e.a == step.var {
                        slots[e.out_b] = e.copula.hfunc2(u, v);
                    } else {
                        slots[e.out_a] = e.copula.hfunc(u, v);
                    }
                }
            }
            let row = (0..self.d).map(|j| self.marginals[j].quantile(slots[j])).collect::<Result<Vec<f64>>>()?;
            out.push(row);
        }
        Ok(out)
    }

    pub fn to_payload(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn from_payload(v: &serde_json::Value) -> Result<Self> {
        let m: Self = serde_json::from_value(v.clone())?;
        let bad = |msg: &str| Err(Error::Format(format!("vine: {msg}")));
        if m.d < 2 || m.d > MAX_DIM || m.marginals.len() != m.d || m.trees.len() != m.d - 1 {
            return bad("dimension mismatch");
        }
        for (l, t) in m.trees.iter().enumerate() {
            if t.len() != m.d - 1 - l {
                return bad("wrong number of edges in a tree");
            }
            for e in t {
                let slots = [e.in_a, e.in_b, e.out_a, e.out_b];
                if slots.iter().any(|&s| s >= m.n_slots) || e.a >= m.d || e.b >= m.d || e.cond.iter().any(|&c| c >= m.d) {
                    return bad("edge index out of range");
                }
            }
        }
        if m.steps.len() != m.d || m.steps.iter().flat_map(|s| &s.chain).any(|&(l, k)| l >= m.trees.len() || k >= m.trees[l].len()) {
            return bad("sampling order out of range");
        }
        let vars: Vec<usize> = m.steps.iter().map(|s| s.var).collect();
        if vars.iter().any(|&v| v >= m.d) || mask_of(&vars).count_ones() as usize != m.d {
            return bad("sampling order is not a permutation");
        }
        Ok(m)
    }
}
