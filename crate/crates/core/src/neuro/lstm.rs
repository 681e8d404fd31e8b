use super::{
    matvec_add, matvec_t_add, outer_add, shape_error, Init, NeuroError, ParamId, ParamStore,
};

/// Standard LSTM cell with input, forget and output gates. The weight
/// matrix is `[4h × (in + h)]` with gate blocks in the order i, f, g, o.
#[derive(Debug, Clone, Copy)]
pub struct Lstm {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Lstm {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, NeuroError> {
        let w = store.add(
            &format!("{name}.w"),
            &[4 * hidden, input + hidden],
            Init::Uniform {
                fan_in: input + hidden,
            },
        )?;
        let b = store.add(&format!("{name}.b"), &[4 * hidden], Init::Zeros)?;
        store.value_mut(b).data_mut()[hidden..2 * hidden].fill(1.0);
        Ok(Lstm {
            w,
            b,
            input,
            hidden,
        })
    }
}

struct Node {
    parent: Option<usize>,
    /// `[x; h_prev]`
    xh: Vec<f64>,
    /// Activated gates i, f, g, o.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// LSTM states over a forest of sequences. Every node extends its parent's
/// state by one input, so sequences sharing a prefix share its computation.
/// Children always have larger ids than their parents.
pub struct Forest {
    lstm: Lstm,
    nodes: Vec<Node>,
    zero: Vec<f64>,
}

impl Forest {
    pub fn new(lstm: Lstm) -> Self {
        Forest {
            lstm,
            nodes: Vec::new(),
            zero: vec![0.0; lstm.hidden],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn h(&self, node: Option<usize>) -> &[f64] {
        match node {
            Some(n) => &self.nodes[n].h,
            None => &self.zero,
        }
    }

    fn c(&self, node: Option<usize>) -> &[f64] {
        match node {
            Some(n) => &self.nodes[n].c,
            None => &self.zero,
        }
    }

    pub fn push(
        &mut self,
        store: &ParamStore,
        parent: Option<usize>,
        x: &[f64],
    ) -> Result<usize, NeuroError> {
        let (n_in, h) = (self.lstm.input, self.lstm.hidden);
        if x.len() != n_in {
            return Err(shape_error("lstm input", &[n_in], &[x.len()]));
        }
        let mut xh = Vec::with_capacity(n_in + h);
        xh.extend_from_slice(x);
        xh.extend_from_slice(self.h(parent));
        let mut z = store.value(self.lstm.b).data().to_vec();
        matvec_add(store.value(self.lstm.w).data(), n_in + h, &xh, &mut z);
        let c_prev = self.c(parent);
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut out = vec![0.0; h];
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            z[k] = i;
            z[h + k] = f;
            z[2 * h + k] = g;
            z[3 * h + k] = o;
            c[k] = f * c_prev[k] + i * g;
            tanh_c[k] = c[k].tanh();
            out[k] = o * tanh_c[k];
        }
        self.nodes.push(Node {
            parent,
            xh,
            gates: z,
            c,
            tanh_c,
            h: out,
        });
        Ok(self.nodes.len() - 1)
    }

    /// Backpropagate `dh[n]` (gradient on each node's hidden output; empty
    /// vectors mean zero) through the forest. Accumulates parameter
    /// gradients and returns the gradient on each node's input.
    pub fn backward(&self, store: &mut ParamStore, mut dh: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
        let (n_in, h) = (self.lstm.input, self.lstm.hidden);
        let n = self.nodes.len();
        dh.resize(n, Vec::new());
        let mut dc: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut dx = vec![Vec::new(); n];
        let mut dz = vec![0.0; 4 * h];
        let mut dct = vec![0.0; h];
        let mut dxh = vec![0.0; n_in + h];
        for id in (0..n).rev() {
            let node = &self.nodes[id];
            let dh_n = std::mem::take(&mut dh[id]);
            let dc_n = std::mem::take(&mut dc[id]);
            if dh_n.is_empty() && dc_n.is_empty() {
                dx[id] = vec![0.0; n_in];
                continue;
            }
            let c_prev = self.c(node.parent);
            for k in 0..h {
                let dhk = dh_n.get(k).copied().unwrap_or(0.0);
                let (i, f, g, o) = (
                    node.gates[k],
                    node.gates[h + k],
                    node.gates[2 * h + k],
                    node.gates[3 * h + k],
                );
                let t = node.tanh_c[k];
                dct[k] = dc_n.get(k).copied().unwrap_or(0.0) + dhk * o * (1.0 - t * t);
                dz[k] = dct[k] * g * i * (1.0 - i);
                dz[h + k] = dct[k] * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dct[k] * i * (1.0 - g * g);
                dz[3 * h + k] = dhk * t * o * (1.0 - o);
            }
            dxh.fill(0.0);
            {
                let (w, gw) = store.value_and_grad(self.lstm.w);
                matvec_t_add(w.data(), n_in + h, &dz, &mut dxh);
                outer_add(gw.data_mut(), n_in + h, &dz, &node.xh);
            }
            for (g, d) in store.grad_mut(self.lstm.b).data_mut().iter_mut().zip(&dz) {
                *g += d;
            }
            if let Some(p) = node.parent {
                let acc_c = &mut dc[p];
                if acc_c.is_empty() {
                    acc_c.resize(h, 0.0);
                }
                for k in 0..h {
                    acc_c[k] += dct[k] * node.gates[h + k];
                }
                let acc_h = &mut dh[p];
                if acc_h.is_empty() {
                    acc_h.resize(h, 0.0);
                }
                for k in 0..h {
                    acc_h[k] += dxh[n_in + k];
                }
            }
            dx[id] = dxh[..n_in].to_vec();
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
    Bi,
}

/// Recurrent encoder over one sequence of input vectors.
#[derive(Debug, Clone, Copy)]
pub struct SequenceEncoder {
    pub direction: Direction,
    pub fw: Option<Lstm>,
    pub bw: Option<Lstm>,
    pub input: usize,
    pub hidden: usize,
}

pub struct SeqTape {
    fw: Option<Forest>,
    bw: Option<Forest>,
    len: usize,
    /// Per-position outputs; `2h` wide in bi mode.
    pub outputs: Vec<Vec<f64>>,
    /// Final hidden state of each direction, concatenated. Zero for empty input.
    pub last: Vec<f64>,
}

impl SequenceEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        direction: Direction,
    ) -> Result<Self, NeuroError> {
        let fw = match direction {
            Direction::Forward | Direction::Bi => {
                Some(Lstm::new(store, &format!("{name}.fw"), input, hidden)?)
            }
            Direction::Backward => None,
        };
        let bw = match direction {
            Direction::Backward | Direction::Bi => {
                Some(Lstm::new(store, &format!("{name}.bw"), input, hidden)?)
            }
            Direction::Forward => None,
        };
        Ok(SequenceEncoder {
            direction,
            fw,
            bw,
            input,
            hidden,
        })
    }

    pub fn output_dim(&self) -> usize {
        match self.direction {
            Direction::Bi => 2 * self.hidden,
            _ => self.hidden,
        }
    }

    pub fn encode(&self, store: &ParamStore, inputs: &[Vec<f64>]) -> Result<SeqTape, NeuroError> {
        let len = inputs.len();
        let mut outputs = vec![Vec::with_capacity(self.output_dim()); len];
        let mut last = Vec::with_capacity(self.output_dim());
        let fw = match self.fw {
            Some(l) => {
                let mut f = Forest::new(l);
                let mut prev = None;
                for (t, x) in inputs.iter().enumerate() {
                    prev = Some(f.push(store, prev, x)?);
                    outputs[t].extend_from_slice(f.h(prev));
                }
                last.extend_from_slice(f.h(prev));
                Some(f)
            }
            None => None,
        };
        let bw = match self.bw {
            Some(l) => {
                let mut f = Forest::new(l);
                let mut prev = None;
                for t in (0..len).rev() {
                    prev = Some(f.push(store, prev, &inputs[t])?);
                    outputs[t].extend_from_slice(f.h(prev));
                }
                last.extend_from_slice(f.h(prev));
                Some(f)
            }
            None => None,
        };
        Ok(SeqTape {
            fw,
            bw,
            len,
            outputs,
            last,
        })
    }

    /// Gradients on `outputs` (may be empty for "none") and on `last`;
    /// returns gradients on the inputs.
    pub fn backward(
        &self,
        store: &mut ParamStore,
        tape: &SeqTape,
        d_outputs: &[Vec<f64>],
        d_last: &[f64],
    ) -> Vec<Vec<f64>> {
        let h = self.hidden;
        let len = tape.len;
        let mut dx = vec![vec![0.0; self.input]; len];
        if len == 0 {
            return dx;
        }
        let mut offset = 0;
        if let Some(f) = &tape.fw {
            // forward node t is position t
            let mut dh: Vec<Vec<f64>> = (0..len)
                .map(|t| {
                    d_outputs
                        .get(t)
                        .filter(|d| !d.is_empty())
                        .map(|d| d[offset..offset + h].to_vec())
                        .unwrap_or_default()
                })
                .collect();
            add_into(&mut dh[len - 1], slice_or_empty(d_last, offset, h));
            for (t, g) in f.backward(store, dh).into_iter().enumerate() {
                add_vec(&mut dx[t], &g);
            }
            offset += h;
        }
        if let Some(f) = &tape.bw {
            // backward node k is position len-1-k
            let mut dh: Vec<Vec<f64>> = (0..len)
                .map(|k| {
                    let t = len - 1 - k;
                    d_outputs
                        .get(t)
                        .filter(|d| !d.is_empty())
                        .map(|d| d[offset..offset + h].to_vec())
                        .unwrap_or_default()
                })
                .collect();
            add_into(&mut dh[len - 1], slice_or_empty(d_last, offset, h));
            for (k, g) in f.backward(store, dh).into_iter().enumerate() {
                add_vec(&mut dx[len - 1 - k], &g);
            }
        }
        dx
    }
}

fn slice_or_empty(v: &[f64], offset: usize, h: usize) -> &[f64] {
    if v.is_empty() {
        &[]
    } else {
        &v[offset..offset + h]
    }
}

fn add_into(acc: &mut Vec<f64>, g: &[f64]) {
    if g.is_empty() {
        return;
    }
    if acc.is_empty() {
        acc.resize(g.len(), 0.0);
    }
    add_vec(acc, g);
}

fn add_vec(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}
