use std::rc::Rc;

use gnnbench_autodiff::{CsrMatrix, Matrix};

use crate::graph::{Graph, Subgraph};

/// Fixed message-passing structure of one graph.
///
/// Directed edges list both orientations of every undirected edge, ordered
/// by `(dst, src)`. `norm_degree` drives GCN normalization and may differ
/// from the local degree when the graph is a cut-out of a larger one.
pub struct Propagation {
    pub num_nodes: usize,
    pub src: Rc<Vec<usize>>,
    pub dst: Rc<Vec<usize>>,
    pub degree: Vec<usize>,
    pub norm_degree: Vec<usize>,
    /// `D̃^{-1/2}(A+I)D̃^{-1/2}`.
    pub gcn: Rc<CsrMatrix>,
    /// Row-normalized adjacency; isolated rows are empty.
    pub mean: Rc<CsrMatrix>,
    /// `A + I`.
    pub sum_self: Rc<CsrMatrix>,
    /// Directed edges followed by one self-loop per node.
    pub gat_src: Rc<Vec<usize>>,
    pub gat_dst: Rc<Vec<usize>>,
    /// Per directed edge `1/sqrt((d_src+1)(d_dst+1))`.
    pub gcn_edge_coef: Matrix,
    /// Per node `1/(d+1)`.
    pub gcn_self_coef: Matrix,
    /// Per directed edge, the local degree of its destination.
    pub dst_degree: Matrix,
}

impl Propagation {
    pub fn from_graph(g: &Graph) -> Self {
        Self::new(g.num_nodes(), g.edges(), None)
    }

    /// Structure of a cut-out subgraph, normalized with parent-graph degrees.
    pub fn from_subgraph(sub: &Subgraph) -> Self {
        Self::new(sub.len(), &sub.edges, Some(&sub.full_degree))
    }

    pub fn new(num_nodes: usize, edges: &[(usize, usize)], norm_degree: Option<&[usize]>) -> Self {
        let mut directed: Vec<(usize, usize)> = edges
            .iter()
            .flat_map(|&(u, v)| [(v, u), (u, v)])
            .collect();
        directed.sort_unstable();
        let dst: Vec<usize> = directed.iter().map(|e| e.0).collect();
        let src: Vec<usize> = directed.iter().map(|e| e.1).collect();
        let mut degree = vec![0usize; num_nodes];
        for &d in &dst {
            degree[d] += 1;
        }
        let norm_degree = norm_degree.map_or_else(|| degree.clone(), <[usize]>::to_vec);
        let inv_sqrt: Vec<f64> = norm_degree.iter().map(|&d| 1.0 / ((d + 1) as f64).sqrt()).collect();

        let edge_coef: Vec<f64> = src.iter().zip(&dst).map(|(&s, &d)| inv_sqrt[s] * inv_sqrt[d]).collect();
        let self_coef: Vec<f64> = inv_sqrt.iter().map(|v| v * v).collect();
        let mut gcn: Vec<(usize, usize, f64)> = (0..directed.len()).map(|e| (dst[e], src[e], edge_coef[e])).collect();
        gcn.extend((0..num_nodes).map(|u| (u, u, self_coef[u])));
        let mean: Vec<(usize, usize, f64)> = (0..directed.len())
            .map(|e| (dst[e], src[e], 1.0 / degree[dst[e]] as f64))
            .collect();
        let mut sum_self: Vec<(usize, usize, f64)> = directed.iter().map(|&(d, s)| (d, s, 1.0)).collect();
        sum_self.extend((0..num_nodes).map(|u| (u, u, 1.0)));

        let mut gat_src = src.clone();
        let mut gat_dst = dst.clone();
        gat_src.extend(0..num_nodes);
        gat_dst.extend(0..num_nodes);
        let dst_degree = Matrix::column(dst.iter().map(|&d| degree[d] as f64).collect());

        Self {
            num_nodes,
            gcn: Rc::new(CsrMatrix::from_triplets(num_nodes, num_nodes, &gcn)),
            mean: Rc::new(CsrMatrix::from_triplets(num_nodes, num_nodes, &mean)),
            sum_self: Rc::new(CsrMatrix::from_triplets(num_nodes, num_nodes, &sum_self)),
            gat_src: Rc::new(gat_src),
            gat_dst: Rc::new(gat_dst),
            gcn_edge_coef: Matrix::column(edge_coef),
            gcn_self_coef: Matrix::column(self_coef),
            dst_degree,
            src: Rc::new(src),
            dst: Rc::new(dst),
            degree,
            norm_degree,
        }
    }

    pub fn num_directed_edges(&self) -> usize {
        self.src.len()
    }
}
