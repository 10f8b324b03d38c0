//! Bidirectional LSTM sequence encoder.
//!
//! Gate layout in the stacked weight matrices is `[input, forget, cell,
//! output]`, each block `hidden` rows tall:
//!
//! ```text
//! z_t = W_in x_t + W_rec h_{t-1} + b
//! i, f, o = sigmoid(z_i), sigmoid(z_f), sigmoid(z_o);  g = tanh(z_g)
//! c_t = f * c_{t-1} + i * g;  h_t = o * tanh(c_t)
//! ```
//!
//! A sequence is represented by the final hidden state of the forward pass
//! concatenated with the final hidden state of the backward pass. Only real
//! (unpadded) tokens are visited; an empty sequence encodes to zeros.

use super::tensor::{matvec_acc, matvec_t_acc, outer_acc, sigmoid, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H, E]`
    pub w_in: Tensor,
    /// `[4H, H]`
    pub w_rec: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

impl LstmParams {
    pub fn hidden(&self) -> usize {
        self.w_rec.shape()[1]
    }
}

/// Activations of one direction over one sequence.
#[derive(Debug, Clone, Default)]
pub(crate) struct DirectionCache {
    /// Token ids in visiting order.
    ids: Vec<u32>,
    /// Post-activation gates `[i, f, g, o]` per step, `4H` each.
    gates: Vec<f64>,
    /// Cell state per step.
    cells: Vec<f64>,
    /// `tanh(c_t)` per step.
    cell_tanh: Vec<f64>,
    /// Hidden state per step.
    hiddens: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SequenceCache {
    pub(crate) forward: DirectionCache,
    pub(crate) backward: DirectionCache,
}

fn run_direction(
    p: &LstmParams,
    embedding: &Tensor,
    ids: impl Iterator<Item = u32>,
    keep: bool,
) -> (Vec<f64>, DirectionCache) {
    let h = p.hidden();
    let mut cache = DirectionCache::default();
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for id in ids {
        z.copy_from_slice(p.bias.data());
        matvec_acc(p.w_in.data(), embedding.row(id as usize), &mut z);
        matvec_acc(p.w_rec.data(), &h_prev, &mut z);
        for j in 0..h {
            z[j] = sigmoid(z[j]);
            z[h + j] = sigmoid(z[h + j]);
            z[2 * h + j] = z[2 * h + j].tanh();
            z[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let c = z[h + j] * c_prev[j] + z[j] * z[2 * h + j];
            let ct = c.tanh();
            c_prev[j] = c;
            h_prev[j] = z[3 * h + j] * ct;
            if keep {
                cache.cell_tanh.push(ct);
            }
        }
        if keep {
            cache.ids.push(id);
            cache.gates.extend_from_slice(&z);
            cache.cells.extend_from_slice(&c_prev);
            cache.hiddens.extend_from_slice(&h_prev);
        }
    }
    (h_prev, cache)
}

/// Encode `ids` into a `2H` vector; returns the cache when `keep` is set.
pub(crate) fn encode(
    lstm: &[LstmParams; 2],
    embedding: &Tensor,
    ids: &[u32],
    keep: bool,
) -> (Vec<f64>, SequenceCache) {
    let (mut fwd, fc) = run_direction(&lstm[0], embedding, ids.iter().copied(), keep);
    let (bwd, bc) = run_direction(&lstm[1], embedding, ids.iter().rev().copied(), keep);
    fwd.extend_from_slice(&bwd);
    (
        fwd,
        SequenceCache {
            forward: fc,
            backward: bc,
        },
    )
}

/// Gradients for one direction's parameters plus the embedding rows it read.
pub(crate) struct DirectionGrads<'a> {
    pub(crate) params: &'a mut LstmParams,
    pub(crate) embedding: &'a mut Tensor,
}

fn backward_direction(
    p: &LstmParams,
    embedding: &Tensor,
    cache: &DirectionCache,
    dh_final: &[f64],
    g: DirectionGrads<'_>,
) {
    let h = p.hidden();
    let steps = cache.ids.len();
    if steps == 0 {
        return;
    }
    let emb_dim = embedding.shape()[1];
    let mut dh = dh_final.to_vec();
    let mut dc = vec![0.0; h];
    let mut dz = vec![0.0; 4 * h];
    let mut dx = vec![0.0; emb_dim];
    let zeros = vec![0.0; h];
    for t in (0..steps).rev() {
        let gates = &cache.gates[t * 4 * h..(t + 1) * 4 * h];
        let ct = &cache.cell_tanh[t * h..(t + 1) * h];
        let c_prev = if t > 0 { &cache.cells[(t - 1) * h..t * h] } else { &zeros[..] };
        let h_prev = if t > 0 { &cache.hiddens[(t - 1) * h..t * h] } else { &zeros[..] };
        for j in 0..h {
            let (i, f, gg, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
            let d_o = dh[j] * ct[j];
            let dcj = dc[j] + dh[j] * o * (1.0 - ct[j] * ct[j]);
            dz[j] = dcj * gg * i * (1.0 - i);
            dz[h + j] = dcj * c_prev[j] * f * (1.0 - f);
            dz[2 * h + j] = dcj * i * (1.0 - gg * gg);
            dz[3 * h + j] = d_o * o * (1.0 - o);
            dc[j] = dcj * f;
        }
        let id = cache.ids[t] as usize;
        outer_acc(g.params.w_in.data_mut(), &dz, embedding.row(id));
        outer_acc(g.params.w_rec.data_mut(), &dz, h_prev);
        for (b, d) in g.params.bias.data_mut().iter_mut().zip(&dz) {
            *b += d;
        }
        dx.fill(0.0);
        matvec_t_acc(p.w_in.data(), &dz, &mut dx);
        for (e, d) in g.embedding.row_mut(id).iter_mut().zip(&dx) {
            *e += d;
        }
        dh.fill(0.0);
        matvec_t_acc(p.w_rec.data(), &dz, &mut dh);
    }
}

/// Accumulate gradients given the gradient of the `2H` encoding.
pub(crate) fn backward(
    lstm: &[LstmParams; 2],
    embedding: &Tensor,
    cache: &SequenceCache,
    d_encoding: &[f64],
    grads_lstm: &mut [LstmParams; 2],
    grads_embedding: &mut Tensor,
) {
    let h = lstm[0].hidden();
    let [gf, gb] = grads_lstm;
    backward_direction(
        &lstm[0],
        embedding,
        &cache.forward,
        &d_encoding[..h],
        DirectionGrads {
            params: gf,
            embedding: grads_embedding,
        },
    );
    backward_direction(
        &lstm[1],
        embedding,
        &cache.backward,
        &d_encoding[h..],
        DirectionGrads {
            params: gb,
            embedding: grads_embedding,
        },
    );
}
