//! Bidirectional GRU layer with backpropagation through time.
//!
//! Gate rows are stacked `[update; reset; candidate]`:
//!
//! ```text
//! z = σ(Wz x + Uz h' + bz)
//! r = σ(Wr x + Ur h' + br)
//! n = tanh(Wn x + Un (r ∘ h') + bn)
//! h = (1 - z) ∘ h' + z ∘ n
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Parameters of one recurrence direction.
#[derive(Debug, Clone, PartialEq)]
pub struct GruDirection {
    /// 3H × I input weights.
    pub w: Array2<f64>,
    /// 3H × H recurrent weights.
    pub u: Array2<f64>,
    /// 3H biases.
    pub b: Array1<f64>,
}

impl GruDirection {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        GruDirection {
            w: Array2::zeros((3 * hidden_dim, input_dim)),
            u: Array2::zeros((3 * hidden_dim, hidden_dim)),
            b: Array1::zeros(3 * hidden_dim),
        }
    }

    fn random<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let a = (1.0 / hidden_dim as f64).sqrt();
        let mut d = GruDirection::zeros(input_dim, hidden_dim);
        d.w.mapv_inplace(|_| rng.random_range(-a..=a));
        d.u.mapv_inplace(|_| rng.random_range(-a..=a));
        d
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn update_weights(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let h = self.hidden_dim();
        (self.w.slice(s![0..h, ..]), self.u.slice(s![0..h, ..]))
    }

    pub fn reset_weights(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let h = self.hidden_dim();
        (self.w.slice(s![h..2 * h, ..]), self.u.slice(s![h..2 * h, ..]))
    }

    pub fn candidate_weights(&self) -> (ArrayView2<'_, f64>, ArrayView2<'_, f64>) {
        let h = self.hidden_dim();
        (self.w.slice(s![2 * h.., ..]), self.u.slice(s![2 * h.., ..]))
    }
}

/// Activations of one direction, indexed in processing order.
#[derive(Debug, Clone)]
pub struct DirectionTrace {
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    h_prev: Array2<f64>,
    rh: Array2<f64>,
    h: Array2<f64>,
}

impl DirectionTrace {
    pub fn hidden(&self) -> &Array2<f64> {
        &self.h
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn forward_direction(p: &GruDirection, x: ArrayView2<'_, f64>) -> DirectionTrace {
    let t_len = x.nrows();
    let hd = p.hidden_dim();
    let mut pre = x.dot(&p.w.t());
    if !pre.is_standard_layout() {
        pre = pre.as_standard_layout().into_owned();
    }
    pre += &p.b;
    let u_zr = p.u.slice(s![0..2 * hd, ..]);
    let u_n = p.u.slice(s![2 * hd.., ..]);

    let mut tr = DirectionTrace {
        z: Array2::zeros((t_len, hd)),
        r: Array2::zeros((t_len, hd)),
        n: Array2::zeros((t_len, hd)),
        h_prev: Array2::zeros((t_len, hd)),
        rh: Array2::zeros((t_len, hd)),
        h: Array2::zeros((t_len, hd)),
    };
    let mut h = Array1::<f64>::zeros(hd);
    let mut rh = Array1::<f64>::zeros(hd);
    for t in 0..t_len {
        let a_zr = u_zr.dot(&h);
        let pre_t = pre.row(t);
        let (pre_t, h_s) = (pre_t.as_slice().expect("row-major"), h.as_slice().expect("contiguous"));
        {
            let z = tr.z.row_mut(t).into_slice().expect("row-major");
            for i in 0..hd {
                z[i] = sigmoid(pre_t[i] + a_zr[i]);
            }
        }
        {
            let r = tr.r.row_mut(t).into_slice().expect("row-major");
            let rh_s = rh.as_slice_mut().expect("contiguous");
            for i in 0..hd {
                r[i] = sigmoid(pre_t[hd + i] + a_zr[hd + i]);
                rh_s[i] = r[i] * h_s[i];
            }
        }
        let a_n = u_n.dot(&rh);
        tr.h_prev.row_mut(t).assign(&h);
        tr.rh.row_mut(t).assign(&rh);
        let z = tr.z.row(t);
        let n = tr.n.row_mut(t).into_slice().expect("row-major");
        let hs = h.as_slice_mut().expect("contiguous");
        for i in 0..hd {
            n[i] = (pre_t[2 * hd + i] + a_n[i]).tanh();
            hs[i] = (1.0 - z[i]) * hs[i] + z[i] * n[i];
        }
        tr.h.row_mut(t).assign(&h);
    }
    tr
}

/// Accumulates parameter gradients into `grad` and returns dL/dx when asked.
fn backward_direction(
    p: &GruDirection,
    x: ArrayView2<'_, f64>,
    tr: &DirectionTrace,
    dh_out: ArrayView2<'_, f64>,
    grad: &mut GruDirection,
    want_dx: bool,
) -> Option<Array2<f64>> {
    let t_len = x.nrows();
    let hd = p.hidden_dim();
    let u_t = p.u.t().as_standard_layout().into_owned();
    let u_t_zr = u_t.slice(s![.., 0..2 * hd]);
    let u_t_n = u_t.slice(s![.., 2 * hd..]);

    let mut da = Array2::<f64>::zeros((t_len, 3 * hd));
    let mut carry = Array1::<f64>::zeros(hd);
    let mut dh = vec![0.0; hd];
    let mut da_n = Array1::<f64>::zeros(hd);
    let mut da_zr = Array1::<f64>::zeros(2 * hd);
    for t in (0..t_len).rev() {
        let z = tr.z.row(t);
        let r = tr.r.row(t);
        let n = tr.n.row(t);
        let hp = tr.h_prev.row(t);
        let dh_t = dh_out.row(t);
        for i in 0..hd {
            dh[i] = dh_t[i] + carry[i];
        }
        let mut dhp = Array1::<f64>::zeros(hd);
        for i in 0..hd {
            let dn = dh[i] * z[i];
            da_n[i] = dn * (1.0 - n[i] * n[i]);
            da_zr[i] = dh[i] * (n[i] - hp[i]) * z[i] * (1.0 - z[i]);
            dhp[i] = dh[i] * (1.0 - z[i]);
        }
        let drh = u_t_n.dot(&da_n);
        for i in 0..hd {
            let dr = drh[i] * hp[i];
            dhp[i] += drh[i] * r[i];
            da_zr[hd + i] = dr * r[i] * (1.0 - r[i]);
        }
        dhp += &u_t_zr.dot(&da_zr);
        let mut row = da.row_mut(t);
        row.slice_mut(s![0..2 * hd]).assign(&da_zr);
        row.slice_mut(s![2 * hd..]).assign(&da_n);
        carry = dhp;
    }

    grad.w += &da.t().dot(&x);
    grad.b += &da.sum_axis(Axis(0));
    {
        let mut g_zr = grad.u.slice_mut(s![0..2 * hd, ..]);
        g_zr += &da.slice(s![.., 0..2 * hd]).t().dot(&tr.h_prev);
    }
    {
        let mut g_n = grad.u.slice_mut(s![2 * hd.., ..]);
        g_n += &da.slice(s![.., 2 * hd..]).t().dot(&tr.rh);
    }
    want_dx.then(|| da.dot(&p.w))
}

/// A bidirectional GRU layer. Output per frame is `[forward h ; backward h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiGru {
    pub forward: GruDirection,
    pub backward: GruDirection,
}

#[derive(Debug, Clone)]
pub struct BiGruTrace {
    input: Array2<f64>,
    fwd: DirectionTrace,
    /// Backward direction, stored in reversed time.
    bwd: DirectionTrace,
    output: Array2<f64>,
}

impl BiGruTrace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    pub fn forward_hidden(&self) -> &Array2<f64> {
        self.fwd.hidden()
    }

    /// Backward-direction hidden states in natural time order.
    pub fn backward_hidden(&self) -> Array2<f64> {
        reverse_rows(self.bwd.hidden().view())
    }
}

pub(crate) fn reverse_rows(m: ArrayView2<'_, f64>) -> Array2<f64> {
    m.slice(s![..;-1, ..]).as_standard_layout().into_owned()
}

impl BiGru {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        BiGru {
            forward: GruDirection::zeros(input_dim, hidden_dim),
            backward: GruDirection::zeros(input_dim, hidden_dim),
        }
    }

    pub fn random<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        BiGru {
            forward: GruDirection::random(input_dim, hidden_dim, rng),
            backward: GruDirection::random(input_dim, hidden_dim, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.forward.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn forward(&self, x: Array2<f64>) -> BiGruTrace {
        let fwd = forward_direction(&self.forward, x.view());
        let x_rev = reverse_rows(x.view());
        let bwd = forward_direction(&self.backward, x_rev.view());
        let hd = self.hidden_dim();
        let mut output = Array2::zeros((x.nrows(), 2 * hd));
        output.slice_mut(s![.., 0..hd]).assign(fwd.hidden());
        output
            .slice_mut(s![.., hd..])
            .assign(&bwd.hidden().slice(s![..;-1, ..]));
        BiGruTrace {
            input: x,
            fwd,
            bwd,
            output,
        }
    }

    /// Backpropagates `d_output` (T × 2H), accumulating into `grad`.
    pub fn backward(
        &self,
        trace: &BiGruTrace,
        d_output: ArrayView2<'_, f64>,
        grad: &mut BiGru,
        want_dx: bool,
    ) -> Option<Array2<f64>> {
        let hd = self.hidden_dim();
        let dx_f = backward_direction(
            &self.forward,
            trace.input.view(),
            &trace.fwd,
            d_output.slice(s![.., 0..hd]),
            &mut grad.forward,
            want_dx,
        );
        let x_rev = reverse_rows(trace.input.view());
        let d_rev = reverse_rows(d_output.slice(s![.., hd..]));
        let dx_b = backward_direction(
            &self.backward,
            x_rev.view(),
            &trace.bwd,
            d_rev.view(),
            &mut grad.backward,
            want_dx,
        );
        match (dx_f, dx_b) {
            (Some(f), Some(b)) => Some(f + b.slice(s![..;-1, ..])),
            _ => None,
        }
    }
}
