use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{QncError, Result};
use crate::message::orthonormalize;
use crate::network::NetworkGraph;
use crate::seed::{self, Rng};

/// Sparse row of a propagation matrix: `(incoming edge, beta)` pairs.
pub type SparseRow = Vec<(usize, f64)>;

/// Network-coding coefficients for slots `2..=t_final`.
///
/// `A(t)` has at most one nonzero per row (column `tail(e)`), so it is stored
/// as one `alpha` per edge. `F(t)` keeps, per outgoing edge, the betas on the
/// incoming edges of its tail node.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSchedule {
    t_final: usize,
    edge_count: usize,
    node_count: usize,
    tails: Vec<usize>,
    gateway_edges: Vec<usize>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<SparseRow>>,
}

impl CoefficientSchedule {
    pub fn t_final(&self) -> usize {
        self.t_final
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn tail(&self, e: usize) -> usize {
        self.tails[e]
    }

    /// Edges selected by `B`, i.e. `In(gateway)` in ascending id order.
    pub fn gateway_edges(&self) -> &[usize] {
        &self.gateway_edges
    }

    fn slot(&self, t: usize) -> usize {
        assert!(
            (2..=self.t_final).contains(&t),
            "slot {t} outside 2..={}",
            self.t_final
        );
        t - 2
    }

    /// `alpha_{e, tail(e)}(t)`.
    pub fn alpha(&self, t: usize, e: usize) -> f64 {
        self.alpha[self.slot(t)][e]
    }

    /// Nonzero betas of row `e` of `F(t)`.
    pub fn beta_row(&self, t: usize, e: usize) -> &[(usize, f64)] {
        &self.beta[self.slot(t)][e]
    }

    pub fn a_matrix(&self, t: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.edge_count, self.node_count);
        for e in 0..self.edge_count {
            a[(e, self.tails[e])] = self.alpha(t, e);
        }
        a
    }

    pub fn f_matrix(&self, t: usize) -> DMatrix<f64> {
        let mut f = DMatrix::zeros(self.edge_count, self.edge_count);
        for e in 0..self.edge_count {
            for &(ep, b) in self.beta_row(t, e) {
                f[(e, ep)] = b;
            }
        }
        f
    }

    /// Gateway selector `B`, `|In(v0)| x |E|`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.gateway_edges.len(), self.edge_count);
        for (i, &e) in self.gateway_edges.iter().enumerate() {
            b[(i, e)] = 1.0;
        }
        b
    }

    /// Applies `F(t)` to a dense vector indexed by edge.
    pub fn apply_f(&self, t: usize, y: &[f64], out: &mut [f64]) {
        for (e, row) in self.beta[self.slot(t)].iter().enumerate() {
            out[e] = row.iter().map(|&(ep, b)| b * y[ep]).sum();
        }
    }

    /// Schedule restricted to slots `2..=t`.
    pub fn truncated(&self, t: usize) -> Self {
        let keep = self.slot(t) + 1;
        Self {
            t_final: t,
            alpha: self.alpha[..keep].to_vec(),
            beta: self.beta[..keep].to_vec(),
            ..self.clone()
        }
    }
}

/// Random matrix with orthonormal rows when `rows <= cols`, orthonormal
/// columns otherwise, from an orthonormalized Gaussian block.
pub fn local_orthonormal_block(rows: usize, cols: usize, rng: &mut Rng) -> DMatrix<f64> {
    if rows == 0 || cols == 0 {
        return DMatrix::zeros(rows, cols);
    }
    if rows <= cols {
        let g = DMatrix::from_fn(cols, rows, |_, _| rng.sample::<f64, _>(StandardNormal));
        orthonormalize(g).transpose()
    } else {
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        orthonormalize(g)
    }
}

/// Gaussian `alpha` at slot 2 (zero afterwards), per-node orthonormal beta
/// blocks at every slot, then every row of `[F(t) | A(t)]` rescaled to unit
/// norm. Rows that are identically zero (a node with no incoming edges after
/// slot 2) stay zero.
pub fn generate_coefficients(g: &NetworkGraph, t_final: usize, seed: u64) -> Result<CoefficientSchedule> {
    if t_final < 2 {
        return Err(QncError::InvalidArgument(format!("final slot {t_final} must be >= 2")));
    }
    let m = g.edge_count();
    let mut rng = seed::rng(seed);
    let tails: Vec<usize> = g.edges().iter().map(|e| e.tail).collect();
    let alpha2: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();

    let mut alpha = Vec::with_capacity(t_final - 1);
    let mut beta = Vec::with_capacity(t_final - 1);
    for t in 2..=t_final {
        let mut rows: Vec<SparseRow> = vec![Vec::new(); m];
        for v in 0..g.n() {
            let outs = g.out_edges(v);
            let ins = g.in_edges(v);
            let block = local_orthonormal_block(outs.len(), ins.len(), &mut rng);
            for (r, &e) in outs.iter().enumerate() {
                rows[e] = ins.iter().enumerate().map(|(c, &ep)| (ep, block[(r, c)])).collect();
            }
        }
        let mut a = if t == 2 { alpha2.clone() } else { vec![0.0; m] };
        for e in 0..m {
            let norm = (rows[e].iter().map(|(_, b)| b * b).sum::<f64>() + a[e] * a[e]).sqrt();
            if norm > 0.0 {
                rows[e].iter_mut().for_each(|(_, b)| *b /= norm);
                a[e] /= norm;
            }
        }
        alpha.push(a);
        beta.push(rows);
    }
    Ok(CoefficientSchedule {
        t_final,
        edge_count: m,
        node_count: g.n(),
        tails,
        gateway_edges: g.in_edges(g.gateway()).to_vec(),
        alpha,
        beta,
    })
}

/// `Omega(t)`, the noiseless map from messages to edge contents:
/// `Omega(2) = A(2)`, `Omega(t) = F(t) Omega(t-1) + A(t)`.
pub fn transfer_coefficients(sched: &CoefficientSchedule, t: usize) -> DMatrix<f64> {
    transfer_all(sched, t).pop().expect("at least slot 2")
}

/// `[Omega(2), ..., Omega(t_last)]`.
pub fn transfer_all(sched: &CoefficientSchedule, t_last: usize) -> Vec<DMatrix<f64>> {
    assert!((2..=sched.t_final()).contains(&t_last));
    let (m, n) = (sched.edge_count(), sched.node_count());
    let mut out: Vec<DMatrix<f64>> = Vec::with_capacity(t_last - 1);
    for t in 2..=t_last {
        let mut omega = DMatrix::zeros(m, n);
        if let Some(prev) = out.last() {
            for e in 0..m {
                for &(ep, b) in sched.beta_row(t, e) {
                    for v in 0..n {
                        omega[(e, v)] += b * prev[(ep, v)];
                    }
                }
            }
        }
        for e in 0..m {
            omega[(e, sched.tail(e))] += sched.alpha(t, e);
        }
        out.push(omega);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{generate_random_network, Edge};

    fn small_graph() -> NetworkGraph {
        generate_random_network(12, 40, 1.0, 8).unwrap()
    }

    #[test]
    fn sparsity_pattern_follows_topology() {
        let g = small_graph();
        let s = generate_coefficients(&g, 5, 1).unwrap();
        for t in 2..=5 {
            let a = s.a_matrix(t);
            let f = s.f_matrix(t);
            for e in 0..g.edge_count() {
                for v in 0..g.n() {
                    if v != g.edges()[e].tail {
                        assert_eq!(a[(e, v)], 0.0);
                    }
                }
                for ep in 0..g.edge_count() {
                    if g.edges()[e].tail != g.edges()[ep].head {
                        assert_eq!(f[(e, ep)], 0.0);
                    }
                }
            }
            if t > 2 {
                assert_eq!(a.amax(), 0.0);
            }
        }
        let b = s.b_matrix();
        for i in 0..b.nrows() {
            assert_eq!(b.row(i).sum(), 1.0);
        }
        assert_eq!(b.nrows(), g.in_edges(g.gateway()).len());
    }

    #[test]
    fn rows_unit_norm() {
        let g = small_graph();
        let s = generate_coefficients(&g, 6, 2).unwrap();
        for t in 2..=6 {
            for e in 0..g.edge_count() {
                let n2: f64 = s.beta_row(t, e).iter().map(|(_, b)| b * b).sum::<f64>() + s.alpha(t, e).powi(2);
                let has_inputs = !g.in_edges(g.edges()[e].tail).is_empty();
                if t == 2 || has_inputs {
                    assert!((n2 - 1.0).abs() < 1e-12, "t={t} e={e} {n2}");
                } else {
                    assert_eq!(n2, 0.0);
                }
            }
        }
    }

    #[test]
    fn leaf_node_carries_only_alpha() {
        // Node 0 has no incoming edges.
        let edges = vec![
            Edge { tail: 0, head: 1, capacity: 1.0 },
            Edge { tail: 0, head: 2, capacity: 1.0 },
            Edge { tail: 1, head: 2, capacity: 1.0 },
        ];
        let g = NetworkGraph::new(3, edges, 2).unwrap();
        let s = generate_coefficients(&g, 3, 5).unwrap();
        for e in [0, 1] {
            assert!(s.beta_row(2, e).is_empty());
            assert!((s.alpha(2, e).abs() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn later_slot_rows_are_pure_beta() {
        let g = small_graph();
        let s = generate_coefficients(&g, 5, 3).unwrap();
        for e in 0..g.edge_count() {
            if g.in_edges(g.edges()[e].tail).is_empty() {
                continue;
            }
            let n2: f64 = s.beta_row(5, e).iter().map(|(_, b)| b * b).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
            assert_eq!(s.alpha(5, e), 0.0);
        }
    }

    #[test]
    fn local_block_gram_is_identity() {
        let mut rng = seed::rng(4);
        for (r, c) in [(3, 5), (5, 3), (4, 4), (1, 6), (6, 1)] {
            let b = local_orthonormal_block(r, c, &mut rng);
            let gram = if r <= c { &b * b.transpose() } else { b.transpose() * &b };
            let k = r.min(c);
            assert!((gram - DMatrix::identity(k, k)).amax() < 1e-10, "{r}x{c}");
        }
    }

    #[test]
    fn transfer_base_case_and_telescoping() {
        let g = small_graph();
        let s = generate_coefficients(&g, 5, 6).unwrap();
        assert_eq!(transfer_coefficients(&s, 2), s.a_matrix(2));
        let expect = s.f_matrix(5) * s.f_matrix(4) * s.f_matrix(3) * s.a_matrix(2);
        assert!((transfer_coefficients(&s, 5) - expect).amax() < 1e-12);
    }

    #[test]
    fn truncation_is_prefix() {
        let g = small_graph();
        let full = generate_coefficients(&g, 7, 9).unwrap();
        let short = generate_coefficients(&g, 4, 9).unwrap();
        assert_eq!(full.truncated(4), short);
    }

    #[test]
    fn rejects_short_horizon() {
        assert!(generate_coefficients(&small_graph(), 1, 0).is_err());
    }
}
