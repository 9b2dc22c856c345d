//! Earth mover's consistency between two attribution distributions.
//!
//! The score is the optimum of
//!
//! ```text
//! max  sum_ij f_ij * sim_ij
//! s.t. sum_j f_ij <= supply_i,  sum_i f_ij <= demand_j,  f_ij >= 0
//! ```
//!
//! solved exactly with a transportation simplex. The `<=` rows and columns
//! are balanced by one sink row and one sink column with zero similarity:
//! the sink column absorbs unshipped supply, the sink row feeds unmet demand,
//! and the sink-sink cell carries whatever is left. Entering and leaving
//! variables follow Bland's rule, so degenerate instances (padding slots
//! carry zero mass) cannot cycle.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use ndarray::Array2;

use crate::alignment::SimilarityMatrix;
use crate::attribution::{AttributionVector, NORMALIZATION_TOL};
use crate::error::{Error, Result};

/// Absolute tolerance for feasibility and optimality certificates.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Smallest reduced profit that makes a cell an entering candidate.
const ENTER_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportInstance {
    supply: Vec<f64>,
    demand: Vec<f64>,
    sim: Array2<f64>,
}

impl TransportInstance {
    /// Validates a square instance: non-negative marginals summing to 1 and
    /// similarities in [-1, 1].
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, sim: Array2<f64>) -> Result<Self> {
        let l = supply.len();
        if l == 0 {
            return Err(Error::InvalidArgument("empty transport instance".into()));
        }
        if demand.len() != l || sim.dim() != (l, l) {
            return Err(Error::Shape(format!(
                "supply {l}, demand {}, sim {:?}: instance must be square",
                demand.len(),
                sim.dim()
            )));
        }
        check_marginal(&supply, "supply")?;
        check_marginal(&demand, "demand")?;
        if let Some(s) = sim
            .iter()
            .find(|s| !s.is_finite() || s.abs() > 1.0 + CERTIFICATE_TOL)
        {
            return Err(Error::InvalidArgument(format!(
                "similarity {s} outside [-1, 1]"
            )));
        }
        Ok(TransportInstance { supply, demand, sim })
    }

    pub fn len(&self) -> usize {
        self.supply.len()
    }

    pub fn is_empty(&self) -> bool {
        self.supply.is_empty()
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn sim(&self) -> &Array2<f64> {
        &self.sim
    }
}

fn check_marginal(weights: &[f64], what: &str) -> Result<()> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidArgument(format!("{what} has negative or non-finite weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::InvalidArgument(format!(
            "{what} is not normalized (sums to {total})"
        )));
    }
    Ok(())
}

/// Pads both marginals and the similarity matrix to `l = max(n, m)` with
/// zero-mass, zero-similarity slots.
pub fn build_instance(source: &[f64], target: &[f64], sim: &Array2<f64>) -> Result<TransportInstance> {
    let (n, m) = (source.len(), target.len());
    if sim.dim() != (n, m) {
        return Err(Error::Shape(format!(
            "similarity matrix is {:?} for sentences of length {n} and {m}",
            sim.dim()
        )));
    }
    let l = n.max(m);
    let pad = |w: &[f64]| {
        let mut v = w.to_vec();
        v.resize(l, 0.0);
        v
    };
    let mut padded = Array2::zeros((l, l));
    padded.slice_mut(ndarray::s![..n, ..m]).assign(sim);
    TransportInstance::new(pad(source), pad(target), padded)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanStatus {
    Optimal,
}

impl fmt::Display for PlanStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("optimal")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub flow: Array2<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: PlanStatus,
}

/// Balanced tableau over `(l + 1) x (l + 1)` cells; index `l` is the sink.
/// Cell arrays are row-major with stride `n`.
struct Tableau<'a> {
    inst: &'a TransportInstance,
    n: usize,
    profit: Vec<f64>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    basis: Vec<(usize, usize)>,
    /// Basis tree adjacency. Nodes `0..n` are rows, `n..2n` columns; each
    /// entry is `(neighbour, basis slot)`. Kept in step with `basis`.
    adj: Vec<Vec<(usize, usize)>>,
    u: Vec<f64>,
    v: Vec<f64>,
    seen: Vec<bool>,
    parent: Vec<(usize, usize)>,
    queue: VecDeque<usize>,
}

impl<'a> Tableau<'a> {
    /// Starts from the empty shipment: every real row ships to the sink column,
    /// the sink row feeds every real column.
    fn slack_start(inst: &'a TransportInstance) -> Self {
        let l = inst.len();
        let n = l + 1;
        let mut profit = vec![0.0; n * n];
        for i in 0..l {
            for j in 0..l {
                profit[i * n + j] = inst.sim[[i, j]];
            }
        }
        let mut t = Tableau {
            inst,
            n,
            profit,
            flow: vec![0.0; n * n],
            basic: vec![false; n * n],
            basis: Vec::with_capacity(2 * n - 1),
            adj: vec![Vec::new(); 2 * n],
            u: vec![0.0; n],
            v: vec![0.0; n],
            seen: vec![false; 2 * n],
            parent: vec![(usize::MAX, usize::MAX); 2 * n],
            queue: VecDeque::with_capacity(2 * n),
        };
        for i in 0..l {
            t.add_basic((i, l), inst.supply[i]);
        }
        for j in 0..l {
            t.add_basic((l, j), inst.demand[j]);
        }
        t.add_basic((l, l), 0.0);
        t
    }

    fn add_basic(&mut self, (i, j): (usize, usize), flow: f64) {
        let slot = self.basis.len();
        self.basis.push((i, j));
        self.flow[i * self.n + j] = flow;
        self.basic[i * self.n + j] = true;
        self.adj[i].push((self.n + j, slot));
        self.adj[self.n + j].push((i, slot));
    }

    fn profit(&self, i: usize, j: usize) -> f64 {
        self.profit[i * self.n + j]
    }

    /// Dual potentials with `u[sink] = 0` and `u_i + v_j = profit` on basic cells.
    fn potentials(&mut self) -> Result<()> {
        let n = self.n;
        self.seen.fill(false);
        self.queue.clear();
        self.queue.push_back(n - 1);
        self.seen[n - 1] = true;
        self.u[n - 1] = 0.0;
        let mut reached = 1;
        while let Some(node) = self.queue.pop_front() {
            for &(next, _) in &self.adj[node] {
                if self.seen[next] {
                    continue;
                }
                self.seen[next] = true;
                reached += 1;
                if node < n {
                    let j = next - n;
                    self.v[j] = self.profit[node * n + j] - self.u[node];
                } else {
                    let j = node - n;
                    self.u[next] = self.profit[next * n + j] - self.v[j];
                }
                self.queue.push_back(next);
            }
        }
        if reached != 2 * n {
            return Err(Error::Invariant("basis is not a spanning tree".into()));
        }
        Ok(())
    }

    /// Bland: the lowest-index non-basic cell with positive reduced profit.
    fn entering(&self) -> Option<(usize, usize)> {
        let n = self.n;
        for i in 0..n {
            let ui = self.u[i];
            let profit = &self.profit[i * n..(i + 1) * n];
            let basic = &self.basic[i * n..(i + 1) * n];
            for j in 0..n {
                if profit[j] - ui - self.v[j] > ENTER_TOL && !basic[j] {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Basis slots on the tree path from row `i` to column `j`, starting at row `i`.
    fn path(&mut self, i: usize, j: usize) -> Result<Vec<usize>> {
        let n = self.n;
        self.seen.fill(false);
        self.queue.clear();
        self.queue.push_back(i);
        self.seen[i] = true;
        let goal = n + j;
        while let Some(node) = self.queue.pop_front() {
            if node == goal {
                break;
            }
            for &(next, slot) in &self.adj[node] {
                if !self.seen[next] {
                    self.seen[next] = true;
                    self.parent[next] = (node, slot);
                    self.queue.push_back(next);
                }
            }
        }
        if !self.seen[goal] {
            return Err(Error::Invariant("entering cell not connected in basis tree".into()));
        }
        let mut slots = Vec::new();
        let mut node = goal;
        while node != i {
            let (prev, slot) = self.parent[node];
            slots.push(slot);
            node = prev;
        }
        slots.reverse();
        Ok(slots)
    }

    fn pivot(&mut self, enter: (usize, usize)) -> Result<()> {
        let n = self.n;
        let cell = |(r, c): (usize, usize)| r * n + c;
        let path = self.path(enter.0, enter.1)?;
        // Walking from the entering row, path cells alternate -, +, -, ...
        let mut theta = f64::INFINITY;
        for &slot in path.iter().step_by(2) {
            theta = theta.min(self.flow[cell(self.basis[slot])]);
        }
        let leaving_slot = path
            .iter()
            .step_by(2)
            .copied()
            .filter(|&slot| self.flow[cell(self.basis[slot])] == theta)
            .min_by_key(|&slot| cell(self.basis[slot]))
            .ok_or_else(|| Error::Invariant("pivot cycle has no leaving candidate".into()))?;

        for (k, &slot) in path.iter().enumerate() {
            let f = &mut self.flow[cell(self.basis[slot])];
            if k % 2 == 0 {
                *f = (*f - theta).max(0.0);
            } else {
                *f += theta;
            }
        }
        let leaving = self.basis[leaving_slot];
        self.flow[cell(leaving)] = 0.0;
        self.basic[cell(leaving)] = false;
        self.adj[leaving.0].retain(|&(_, s)| s != leaving_slot);
        self.adj[n + leaving.1].retain(|&(_, s)| s != leaving_slot);

        self.flow[cell(enter)] = theta;
        self.basic[cell(enter)] = true;
        self.basis[leaving_slot] = enter;
        self.adj[enter.0].push((n + enter.1, leaving_slot));
        self.adj[n + enter.1].push((enter.0, leaving_slot));
        Ok(())
    }

    /// Checks primal feasibility, dual feasibility and a zero duality gap for
    /// the original inequality-form problem.
    fn certify(&self, flow: &Array2<f64>, objective: f64) -> Result<()> {
        let l = self.n - 1;
        let tol = CERTIFICATE_TOL;
        if let Some(f) = flow.iter().find(|&&f| f < -tol) {
            return Err(Error::Invariant(format!("negative flow {f}")));
        }
        for i in 0..l {
            let row: f64 = flow.row(i).sum();
            if row > self.inst.supply[i] + tol {
                return Err(Error::Invariant(format!("row {i} ships {row} > supply")));
            }
            let col: f64 = flow.column(i).sum();
            if col > self.inst.demand[i] + tol {
                return Err(Error::Invariant(format!("column {i} receives {col} > demand")));
            }
        }
        for i in 0..self.n {
            for j in 0..self.n {
                let reduced = self.profit(i, j) - self.u[i] - self.v[j];
                if reduced > tol {
                    return Err(Error::Invariant(format!(
                        "cell ({i}, {j}) has reduced profit {reduced} at termination"
                    )));
                }
            }
        }
        // Duals of the <= constraints: row_i = u_i + v_sink, col_j = v_j + u_sink.
        let mut dual = 0.0;
        for i in 0..l {
            let row_dual = self.u[i] + self.v[l];
            let col_dual = self.v[i] + self.u[l];
            if row_dual < -tol || col_dual < -tol {
                return Err(Error::Invariant("negative dual for a <= constraint".into()));
            }
            dual += self.inst.supply[i] * row_dual + self.inst.demand[i] * col_dual;
        }
        if (dual - objective).abs() > tol {
            return Err(Error::Invariant(format!(
                "duality gap {} (primal {objective}, dual {dual})",
                dual - objective
            )));
        }
        Ok(())
    }
}

/// Solves the consistency LP to a certified optimal basic solution.
pub fn solve(instance: &TransportInstance) -> Result<TransportPlan> {
    let l = instance.len();
    let cap = l * l * 100;
    let mut t = Tableau::slack_start(instance);
    let mut iterations = 0;
    loop {
        t.potentials()?;
        let Some(enter) = t.entering() else { break };
        if iterations == cap {
            return Err(Error::Invariant(format!(
                "transportation simplex exceeded {cap} pivots"
            )));
        }
        t.pivot(enter)?;
        iterations += 1;
    }
    let flow = Array2::from_shape_fn((l, l), |(i, j)| t.flow[i * t.n + j]);
    let objective = (&flow * &instance.sim).sum();
    t.certify(&flow, objective)?;
    Ok(TransportPlan {
        flow,
        objective,
        iterations,
        status: PlanStatus::Optimal,
    })
}

/// Consistency score between two attribution records over their similarity matrix.
pub fn consistency(
    source: &AttributionVector,
    target: &AttributionVector,
    sim: &SimilarityMatrix,
) -> Result<f64> {
    let instance = build_instance(&source.normalized, &target.normalized, &sim.values)?;
    Ok(solve(&instance)?.objective)
}

/// Writes a plain-text dump of an instance and its plan:
///
/// ```text
/// transport-dump v1
/// l <l>
/// supply <l floats>
/// demand <l floats>
/// sim
/// <l lines of l floats>
/// flow
/// <l lines of l floats>
/// objective <float>
/// iterations <int>
/// status optimal
/// ```
pub fn write_dump<W: Write>(mut w: W, instance: &TransportInstance, plan: &TransportPlan) -> std::io::Result<()> {
    fn line<W: Write>(w: &mut W, xs: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
        let text: Vec<String> = xs.into_iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{}", text.join(" "))
    }
    writeln!(w, "transport-dump v1")?;
    writeln!(w, "l {}", instance.len())?;
    write!(w, "supply ")?;
    line(&mut w, instance.supply.iter().copied())?;
    write!(w, "demand ")?;
    line(&mut w, instance.demand.iter().copied())?;
    writeln!(w, "sim")?;
    for row in instance.sim.rows() {
        line(&mut w, row.iter().copied())?;
    }
    writeln!(w, "flow")?;
    for row in plan.flow.rows() {
        line(&mut w, row.iter().copied())?;
    }
    writeln!(w, "objective {:e}", plan.objective)?;
    writeln!(w, "iterations {}", plan.iterations)?;
    writeln!(w, "status {}", plan.status)
}
