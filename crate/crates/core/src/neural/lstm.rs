//! Batched LSTM layer with truncation-free backpropagation through time.
//!
//! All activations live in row-major matrices with one row per
//! time-frequency point. A [`SeqLayout`] says which rows form sequence `b`
//! and in which order, so the same code runs along frequency (within a
//! frame) and along time (within a bin). Gate order is `i, f, g, o`.

use super::scalar::{gemm, sigmoid_slice, tanh_slice, Scalar, View};

/// Row index of step `l` of sequence `b` is `b * batch_stride + l * step_stride`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SeqLayout {
    pub batch: usize,
    pub steps: usize,
    pub batch_stride: usize,
    pub step_stride: usize,
}

impl SeqLayout {
    pub fn rows(&self) -> usize {
        self.batch * self.steps
    }

    #[inline]
    pub fn row(&self, b: usize, l: usize) -> usize {
        b * self.batch_stride + l * self.step_stride
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LstmShape {
    pub input: usize,
    pub hidden: usize,
}

impl LstmShape {
    pub fn gates(&self) -> usize {
        4 * self.hidden
    }

    /// `w_ih (4H x In)`, `w_hh (4H x H)`, `b (4H)`.
    pub fn param_count(&self) -> usize {
        let g = self.gates();
        g * self.input + g * self.hidden + g
    }

    pub fn split<'a, S>(&self, p: &'a [S]) -> (&'a [S], &'a [S], &'a [S]) {
        let g = self.gates();
        let (w_ih, rest) = p.split_at(g * self.input);
        let (w_hh, b) = rest.split_at(g * self.hidden);
        (w_ih, w_hh, b)
    }

    pub fn split_mut<'a, S>(&self, p: &'a mut [S]) -> (&'a mut [S], &'a mut [S], &'a mut [S]) {
        let g = self.gates();
        let (w_ih, rest) = p.split_at_mut(g * self.input);
        let (w_hh, b) = rest.split_at_mut(g * self.hidden);
        (w_ih, w_hh, b)
    }
}

/// Activated gates (`rows x 4H`), cell states and their tanh (`rows x H`).
#[derive(Clone, Debug, Default)]
pub(crate) struct LstmCache<S> {
    pub acts: Vec<S>,
    pub cells: Vec<S>,
    pub tanh_cells: Vec<S>,
}

/// Where a layer writes its hidden states: columns `col..col + H` of a
/// row-major matrix `width` wide.
#[derive(Clone, Copy, Debug)]
pub(crate) struct OutSlot {
    pub width: usize,
    pub col: usize,
}

fn step_index(s: usize, steps: usize, reverse: bool) -> usize {
    if reverse {
        steps - 1 - s
    } else {
        s
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<S: Scalar>(
    shape: LstmShape,
    params: &[S],
    layout: SeqLayout,
    reverse: bool,
    x: &[S],
    out: &mut [S],
    slot: OutSlot,
) -> LstmCache<S> {
    let (w_ih, w_hh, bias) = shape.split(params);
    let (h, g) = (shape.hidden, shape.gates());
    let rows = layout.rows();
    let mut acts = vec![S::zero(); rows * g];
    for row in acts.chunks_exact_mut(g) {
        row.copy_from_slice(bias);
    }
    gemm(
        rows,
        shape.input,
        g,
        S::one(),
        x,
        View::rows(0, shape.input),
        w_ih,
        View::transposed(0, shape.input),
        S::one(),
        &mut acts,
        View::rows(0, g),
    );
    let mut cells = vec![S::zero(); rows * h];
    let mut tanh_cells = vec![S::zero(); rows * h];
    let mut h_state = vec![S::zero(); layout.batch * h];
    let mut c_state = vec![S::zero(); layout.batch * h];
    for s in 0..layout.steps {
        let l = step_index(s, layout.steps, reverse);
        if s > 0 {
            let first = layout.row(0, l);
            gemm(
                layout.batch,
                h,
                g,
                S::one(),
                &h_state,
                View::rows(0, h),
                w_hh,
                View::transposed(0, h),
                S::one(),
                &mut acts,
                View {
                    off: first * g,
                    rs: layout.batch_stride * g,
                    cs: 1,
                },
            );
        }
        for b in 0..layout.batch {
            let row = layout.row(b, l);
            let a = &mut acts[row * g..(row + 1) * g];
            sigmoid_slice(&mut a[..2 * h]);
            tanh_slice(&mut a[2 * h..3 * h]);
            sigmoid_slice(&mut a[3 * h..]);
            let c_row = &mut cells[row * h..(row + 1) * h];
            let cs = &mut c_state[b * h..(b + 1) * h];
            for j in 0..h {
                cs[j] = a[h + j] * cs[j] + a[j] * a[2 * h + j];
                c_row[j] = cs[j];
            }
            let t_row = &mut tanh_cells[row * h..(row + 1) * h];
            t_row.copy_from_slice(c_row);
            tanh_slice(t_row);
            let hs = &mut h_state[b * h..(b + 1) * h];
            let o_row = &mut out[row * slot.width + slot.col..row * slot.width + slot.col + h];
            for j in 0..h {
                hs[j] = a[3 * h + j] * t_row[j];
                o_row[j] = hs[j];
            }
        }
    }
    LstmCache { acts, cells, tanh_cells }
}

/// Accumulates parameter gradients into `grads` and, if given, input
/// gradients into `dx`. `out` holds the hidden states written by
/// [`forward`]; `d_out` the loss gradient with respect to them.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<S: Scalar>(
    shape: LstmShape,
    params: &[S],
    layout: SeqLayout,
    reverse: bool,
    x: &[S],
    cache: &LstmCache<S>,
    out: &[S],
    d_out: &[S],
    slot: OutSlot,
    grads: &mut [S],
    dx: Option<&mut [S]>,
) {
    let (w_ih, w_hh, _) = shape.split(params);
    let (gw_ih, gw_hh, gb) = shape.split_mut(grads);
    let (h, g) = (shape.hidden, shape.gates());
    let rows = layout.rows();
    let one = S::one();
    let mut da = vec![S::zero(); rows * g];
    let mut dh_next = vec![S::zero(); layout.batch * h];
    let mut dc_next = vec![S::zero(); layout.batch * h];
    let mut h_prev = vec![S::zero(); rows * h];
    for s in (0..layout.steps).rev() {
        let l = step_index(s, layout.steps, reverse);
        let prev = (s > 0).then(|| step_index(s - 1, layout.steps, reverse));
        for b in 0..layout.batch {
            let row = layout.row(b, l);
            let a = &cache.acts[row * g..(row + 1) * g];
            let d = &mut da[row * g..(row + 1) * g];
            for j in 0..h {
                let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                let c_prev = match prev {
                    Some(lp) => cache.cells[layout.row(b, lp) * h + j],
                    None => S::zero(),
                };
                let dh = d_out[row * slot.width + slot.col + j] + dh_next[b * h + j];
                let tc = cache.tanh_cells[row * h + j];
                let d_o = dh * tc;
                let dc = dc_next[b * h + j] + dh * o * (one - tc * tc);
                dc_next[b * h + j] = dc * f;
                d[j] = dc * gg * i * (one - i);
                d[h + j] = dc * c_prev * f * (one - f);
                d[2 * h + j] = dc * i * (one - gg * gg);
                d[3 * h + j] = d_o * o * (one - o);
            }
        }
        if let Some(lp) = prev {
            let step_view = View {
                off: layout.row(0, l) * g,
                rs: layout.batch_stride * g,
                cs: 1,
            };
            // dh_prev = dA W_hh
            gemm(
                layout.batch,
                g,
                h,
                one,
                &da,
                step_view,
                w_hh,
                View::rows(0, h),
                S::zero(),
                &mut dh_next,
                View::rows(0, h),
            );
            for b in 0..layout.batch {
                let (src, dst) = (layout.row(b, lp) * slot.width + slot.col, layout.row(b, l) * h);
                h_prev[dst..dst + h].copy_from_slice(&out[src..src + h]);
            }
        }
    }
    // dW_hh += dA^T h_prev over all steps; h_prev is zero on the first step
    gemm(
        g,
        rows,
        h,
        one,
        &da,
        View::transposed(0, g),
        &h_prev,
        View::rows(0, h),
        one,
        gw_hh,
        View::rows(0, h),
    );
    gemm(
        g,
        rows,
        shape.input,
        one,
        &da,
        View::transposed(0, g),
        x,
        View::rows(0, shape.input),
        one,
        gw_ih,
        View::rows(0, shape.input),
    );
    for row in da.chunks_exact(g) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc = *acc + *v;
        }
    }
    if let Some(dx) = dx {
        gemm(
            rows,
            g,
            shape.input,
            one,
            &da,
            View::rows(0, g),
            w_ih,
            View::rows(0, shape.input),
            one,
            dx,
            View::rows(0, shape.input),
        );
    }
}
