//! Forward composition and exact backpropagation.
//!
//! ```text
//! H1 = relu(A X W1)        Z1 = A X W1
//! H2 = relu(A H1 W2)       Z2 = A H1 W2
//! g  = readout(H2)
//! h  = relu(g Wh + bh)
//! p  = sigmoid(h . wo + bo)
//! ```

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use super::adjacency::NormalizedAdjacency;
use super::model::{Gradients, ModelParams, Readout};
use crate::error::{Error, Result};
use crate::featurize::FeatureMatrix;

/// Probability clamp used by the loss.
pub const LOSS_EPS: f64 = 1e-7;

/// Node feature input: sparse counts for real graphs, dense reals for
/// gradient checks.
pub trait NodeFeatures: Sync {
    fn n_nodes(&self) -> usize;
    fn n_features(&self) -> usize;
    /// `self * w`
    fn mul_weights(&self, w: &Array2<f64>) -> Array2<f64>;
    /// `out += self^T * m`
    fn add_transpose_product(&self, m: &Array2<f64>, out: &mut Array2<f64>);
}

impl NodeFeatures for FeatureMatrix {
    fn n_nodes(&self) -> usize {
        self.n()
    }

    fn n_features(&self) -> usize {
        self.d
    }

    fn mul_weights(&self, w: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), w.ncols()));
        for (i, mut out_row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for &(j, c) in self.row(i) {
                out_row.scaled_add(c as f64, &w.row(j));
            }
        }
        out
    }

    fn add_transpose_product(&self, m: &Array2<f64>, out: &mut Array2<f64>) {
        for i in 0..self.n() {
            let src = m.row(i);
            for &(j, c) in self.row(i) {
                out.row_mut(j).scaled_add(c as f64, &src);
            }
        }
    }
}

impl NodeFeatures for Array2<f64> {
    fn n_nodes(&self) -> usize {
        self.nrows()
    }

    fn n_features(&self) -> usize {
        self.ncols()
    }

    fn mul_weights(&self, w: &Array2<f64>) -> Array2<f64> {
        self.dot(w)
    }

    fn add_transpose_product(&self, m: &Array2<f64>, out: &mut Array2<f64>) {
        general_mat_mul(1.0, &self.t(), m, 1.0, out);
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

fn relu_mask(dh: &mut Array2<f64>, z: &Array2<f64>) {
    ndarray::Zip::from(dh).and(z).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Intermediates of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub z1: Array2<f64>,
    pub h1: Array2<f64>,
    pub z2: Array2<f64>,
    pub h2: Array2<f64>,
    pub graph: Array1<f64>,
    /// Row chosen per column by max readout.
    pub argmax: Vec<usize>,
    pub z_hidden: Array1<f64>,
    pub hidden: Array1<f64>,
    pub logit: f64,
    pub p: f64,
}

fn check_dims<X: NodeFeatures + ?Sized>(
    m: &ModelParams,
    adj: &NormalizedAdjacency,
    x: &X,
) -> Result<()> {
    if x.n_features() != m.dims.d {
        return Err(Error::DimensionMismatch(format!(
            "features have {} columns, model expects {}",
            x.n_features(),
            m.dims.d
        )));
    }
    if adj.n() != x.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "adjacency has {} nodes, features have {} rows",
            adj.n(),
            x.n_nodes()
        )));
    }
    if x.n_nodes() == 0 {
        return Err(Error::DimensionMismatch("graph has no nodes".into()));
    }
    Ok(())
}

fn readout(h2: &Array2<f64>, kind: Readout) -> (Array1<f64>, Vec<usize>) {
    match kind {
        Readout::Avg => (h2.mean_axis(Axis(0)).expect("n >= 1"), Vec::new()),
        Readout::Sum => (h2.sum_axis(Axis(0)), Vec::new()),
        Readout::Max => {
            let mut argmax = vec![0; h2.ncols()];
            let mut g = h2.row(0).to_owned();
            for (i, row) in h2.axis_iter(Axis(0)).enumerate().skip(1) {
                for (j, &v) in row.iter().enumerate() {
                    if v > g[j] {
                        g[j] = v;
                        argmax[j] = i;
                    }
                }
            }
            (g, argmax)
        }
    }
}

/// Gradient w.r.t. `Z2` written as `u v^T` plus sparse corrections. Average
/// and sum readouts pass a rank-one gradient back to `H2` and max passes a
/// sparse one; the ReLU mask then only adds corrections at inactive units,
/// which are rare once the GCN weights are non-negative.
struct Dz2 {
    u: Array1<f64>,
    v: Array1<f64>,
    corrections: Vec<(usize, usize, f64)>,
}

impl Dz2 {
    fn new(dg: Array1<f64>, kind: Readout, argmax: &[usize], z2: &Array2<f64>) -> Self {
        let (n, h2) = z2.dim();
        match kind {
            Readout::Max => Dz2 {
                u: Array1::zeros(n),
                v: Array1::zeros(h2),
                corrections: argmax
                    .iter()
                    .enumerate()
                    .filter(|&(k, &i)| z2[[i, k]] > 0.0)
                    .map(|(k, &i)| (i, k, dg[k]))
                    .collect(),
            },
            Readout::Avg | Readout::Sum => {
                let scale = if kind == Readout::Avg {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let mut v = dg;
                let mut corrections = Vec::new();
                for (k, col) in z2.columns().into_iter().enumerate() {
                    let inactive = col.iter().filter(|&&z| z <= 0.0).count();
                    if inactive == n {
                        v[k] = 0.0;
                    } else if inactive > 0 {
                        let c = -(scale * v[k]);
                        corrections.extend(
                            col.iter()
                                .enumerate()
                                .filter(|(_, &z)| z <= 0.0)
                                .map(|(i, _)| (i, k, c)),
                        );
                    }
                }
                Dz2 {
                    u: Array1::from_elem(n, scale),
                    v,
                    corrections,
                }
            }
        }
    }

    /// Worth exploiting unless the mask removed a large share of the entries.
    fn is_compact(&self) -> bool {
        self.corrections.len() * 4 <= self.u.len() * self.v.len()
    }

    fn has_rank_one(&self) -> bool {
        self.u.iter().any(|&x| x != 0.0) && self.v.iter().any(|&x| x != 0.0)
    }

    fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.u.len(), self.v.len()));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            row.scaled_add(self.u[i], &self.v);
        }
        for &(i, k, c) in &self.corrections {
            out[[i, k]] += c;
        }
        out
    }
}

impl ModelParams {
    /// Malware probability of one graph, with the intermediates.
    pub fn forward<X: NodeFeatures + ?Sized>(
        &self,
        adj: &NormalizedAdjacency,
        x: &X,
    ) -> Result<ForwardCache> {
        check_dims(self, adj, x)?;
        let z1 = adj.apply(x.mul_weights(&self.w_gcn1).view());
        let h1 = relu(&z1);
        let z2 = adj.apply(h1.dot(&self.w_gcn2).view());
        let h2 = relu(&z2);
        let (graph, argmax) = readout(&h2, self.readout);
        let z_hidden = graph.dot(&self.w_hidden) + &self.b_hidden;
        let hidden = z_hidden.mapv(|v| v.max(0.0));
        let logit = hidden.dot(&self.w_out) + self.b_out;
        Ok(ForwardCache {
            z1,
            h1,
            z2,
            h2,
            graph,
            argmax,
            z_hidden,
            hidden,
            logit,
            p: sigmoid(logit),
        })
    }

    pub fn score<X: NodeFeatures + ?Sized>(&self, adj: &NormalizedAdjacency, x: &X) -> Result<f64> {
        Ok(self.forward(adj, x)?.p)
    }

    /// Backpropagates `d_logit` (derivative of the objective w.r.t. the
    /// pre-sigmoid output) through the network. Parameter gradients are
    /// accumulated into `grads` when given; returns the gradient w.r.t. the
    /// first layer's aggregated product `A X W1` for callers that need the
    /// input gradient.
    fn backward<X: NodeFeatures + ?Sized>(
        &self,
        adj: &NormalizedAdjacency,
        x: &X,
        cache: &ForwardCache,
        d_logit: f64,
        mut grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        if let Some(g) = grads.as_deref_mut() {
            g.w_out.scaled_add(d_logit, &cache.hidden);
            g.b_out += d_logit;
        }
        let mut dz_hidden = self.w_out.mapv(|w| w * d_logit);
        ndarray::Zip::from(&mut dz_hidden)
            .and(&cache.z_hidden)
            .for_each(|d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        if let Some(g) = grads.as_deref_mut() {
            let outer = cache
                .graph
                .view()
                .insert_axis(Axis(1))
                .dot(&dz_hidden.view().insert_axis(Axis(0)));
            g.w_hidden += &outer;
            g.b_hidden += &dz_hidden;
        }
        let dg = self.w_hidden.dot(&dz_hidden);
        let dz2 = Dz2::new(dg, self.readout, &cache.argmax, &cache.z2);
        let mut dz1 = if dz2.is_compact() {
            self.second_layer_compact(adj, cache, &dz2, grads.as_deref_mut())
        } else {
            self.second_layer_dense(adj, cache, &dz2.to_dense(), grads.as_deref_mut())
        };
        relu_mask(&mut dz1, &cache.z1);
        let d_xw1 = adj.apply(dz1.view());
        if let Some(g) = grads {
            x.add_transpose_product(&d_xw1, &mut g.w_gcn1);
        }
        d_xw1
    }

    /// Backpropagates a dense `dZ2` through the second GCN layer; returns
    /// the gradient w.r.t. `Z1` before its ReLU mask.
    fn second_layer_dense(
        &self,
        adj: &NormalizedAdjacency,
        cache: &ForwardCache,
        dz2: &Array2<f64>,
        grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        let d_hw2 = adj.apply(dz2.view());
        if let Some(g) = grads {
            general_mat_mul(1.0, &cache.h1.t(), &d_hw2, 1.0, &mut g.w_gcn2);
        }
        d_hw2.dot(&self.w_gcn2.t())
    }

    /// Same result as [`second_layer_dense`](Self::second_layer_dense)
    /// without forming `dZ2`: with `dZ2 = u v^T + C`,
    /// `dW2 += (H1^T A u) v^T + (A H1)^T C` and
    /// `dZ1 = (A u)(W2 v)^T + A (C W2^T)`.
    fn second_layer_compact(
        &self,
        adj: &NormalizedAdjacency,
        cache: &ForwardCache,
        dz2: &Dz2,
        grads: Option<&mut Gradients>,
    ) -> Array2<f64> {
        let (n, h1) = cache.h1.dim();
        let h2 = dz2.v.len();
        let rank_one = dz2.has_rank_one();
        let au = adj
            .apply(dz2.u.view().insert_axis(Axis(1)))
            .remove_axis(Axis(1));
        if let Some(g) = grads {
            if rank_one {
                let t = cache.h1.t().dot(&au);
                for (j, mut row) in g.w_gcn2.axis_iter_mut(Axis(0)).enumerate() {
                    row.scaled_add(t[j], &dz2.v);
                }
            }
            if !dz2.corrections.is_empty() {
                let b = adj.apply(cache.h1.view());
                let mut acc = Array2::zeros((h2, h1));
                for &(i, k, c) in &dz2.corrections {
                    acc.row_mut(k).scaled_add(c, &b.row(i));
                }
                g.w_gcn2 += &acc.t();
            }
        }
        let mut dz1 = Array2::zeros((n, h1));
        if rank_one {
            let wv = self.w_gcn2.dot(&dz2.v);
            for (i, mut row) in dz1.axis_iter_mut(Axis(0)).enumerate() {
                row.scaled_add(au[i], &wv);
            }
        }
        if !dz2.corrections.is_empty() {
            let mut e = Array2::zeros((n, h1));
            for &(i, k, c) in &dz2.corrections {
                e.row_mut(i).scaled_add(c, &self.w_gcn2.column(k));
            }
            dz1 += &adj.apply(e.view());
        }
        dz1
    }

    /// Exact `dp/dx` for every feature entry.
    pub fn input_gradient<X: NodeFeatures + ?Sized>(
        &self,
        adj: &NormalizedAdjacency,
        x: &X,
    ) -> Result<Array2<f64>> {
        let cache = self.forward(adj, x)?;
        let d_logit = cache.p * (1.0 - cache.p);
        let d_xw1 = self.backward(adj, x, &cache, d_logit, None);
        Ok(d_xw1.dot(&self.w_gcn1.t()))
    }

    /// Cross-entropy of one sample, adding its gradient scaled by `weight`
    /// into `grads`. Returns the unweighted loss and the probability.
    pub fn accumulate_sample<X: NodeFeatures + ?Sized>(
        &self,
        adj: &NormalizedAdjacency,
        x: &X,
        label: f64,
        weight: f64,
        grads: &mut Gradients,
    ) -> Result<(f64, f64)> {
        let cache = self.forward(adj, x)?;
        let p = cache.p;
        let clamped = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
        let loss = -(label * clamped.ln() + (1.0 - label) * (1.0 - clamped).ln());
        // the clamp is flat outside [eps, 1 - eps]
        let d_logit = if clamped == p {
            (p - label) * weight
        } else {
            0.0
        };
        if d_logit != 0.0 {
            self.backward(adj, x, &cache, d_logit, Some(grads));
        }
        Ok((loss, p))
    }
}

/// One training example: normalized adjacency, features and target in {0, 1}.
pub struct Sample<'a, X: NodeFeatures + ?Sized> {
    pub adj: &'a NormalizedAdjacency,
    pub x: &'a X,
    pub label: f64,
}

impl<X: NodeFeatures + ?Sized> Clone for Sample<'_, X> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<X: NodeFeatures + ?Sized> Copy for Sample<'_, X> {}

/// Samples per parallel work unit. Fixed so the summation order, and hence
/// the result, does not depend on the thread count.
const CHUNK: usize = 4;

/// Mean binary cross-entropy over the batch and its exact gradient.
pub fn loss_and_gradients<X: NodeFeatures + ?Sized>(
    m: &ModelParams,
    batch: &[Sample<'_, X>],
) -> Result<(f64, Gradients)> {
    let (loss, grads, _) = batch_pass(m, batch)?;
    Ok((loss, grads))
}

/// As [`loss_and_gradients`], also returning each sample's probability.
pub fn batch_pass<X: NodeFeatures + ?Sized>(
    m: &ModelParams,
    batch: &[Sample<'_, X>],
) -> Result<(f64, Gradients, Vec<f64>)> {
    if batch.is_empty() {
        return Ok((0.0, Gradients::zeros(m.dims), Vec::new()));
    }
    let weight = 1.0 / batch.len() as f64;
    let partials: Vec<Result<(f64, Gradients, Vec<f64>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros(m.dims);
            let mut loss = 0.0;
            let mut probs = Vec::with_capacity(chunk.len());
            for s in chunk {
                let (l, p) = m.accumulate_sample(s.adj, s.x, s.label, weight, &mut grads)?;
                loss += l;
                probs.push(p);
            }
            Ok((loss, grads, probs))
        })
        .collect();

    let mut total = Gradients::zeros(m.dims);
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch.len());
    for part in partials {
        let (l, g, p) = part?;
        loss += l;
        total.add_assign(&g);
        probs.extend(p);
    }
    Ok((loss * weight, total, probs))
}
