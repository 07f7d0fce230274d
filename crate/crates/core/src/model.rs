//! Single-layer LSTM classifier with a linear two-logit head over the final
//! hidden state.
//!
//! Gate equations (no peepholes), with gate blocks stacked in the order
//! input, forget, candidate, output:
//!
//! ```text
//! z_t = W_x x_t + W_h h_{t-1} + b
//! i = σ(z_i)   f = σ(z_f)   g = tanh(z_g)   o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! logits = U h_T + c
//! ```
//!
//! Batches of different lengths are processed together: examples are ordered
//! by decreasing length so the examples still running at step `t` form a row
//! prefix. Finished examples keep their state frozen and the head reads each
//! example's hidden state at its own final step, so padding never enters the
//! recurrence or the gradients.

use std::collections::BTreeMap;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::dataset::{Class, Payload, SequenceExample};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const NUM_CLASSES: usize = 2;
pub const FORGET_BIAS_INIT: f64 = 1.0;

/// Token embedding table. Row 0 is the shared unknown-token vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub table: Array2<f64>,
    pub trainable: bool,
}

/// Dense parameter tensors, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamId {
    InputWeights,
    RecurrentWeights,
    GateBias,
    HeadWeights,
    HeadBias,
}

impl ParamId {
    pub const ALL: [ParamId; 5] = [
        ParamId::InputWeights,
        ParamId::RecurrentWeights,
        ParamId::GateBias,
        ParamId::HeadWeights,
        ParamId::HeadBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::InputWeights => "w_x",
            ParamId::RecurrentWeights => "w_h",
            ParamId::GateBias => "bias",
            ParamId::HeadWeights => "head_w",
            ParamId::HeadBias => "head_b",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(self, ParamId::GateBias | ParamId::HeadBias)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    /// `4H × I`
    pub w_x: Array2<f64>,
    /// `4H × H`
    pub w_h: Array2<f64>,
    /// `4H`
    pub bias: Array1<f64>,
    /// `2 × H`
    pub head_w: Array2<f64>,
    /// `2`
    pub head_b: Array1<f64>,
    pub embedding: Option<Embedding>,
}

/// Training-mode switch for a forward pass. Input dropout is inverted: kept
/// components are scaled by `1 / (1 - rate)`.
pub enum Pass<'a> {
    Eval,
    Train { dropout_rate: f64, rng: &'a mut SeededRng },
}

impl Pass<'_> {
    fn dropout_rate(&self) -> f64 {
        match self {
            Pass::Eval => 0.0,
            Pass::Train { dropout_rate, .. } => *dropout_rate,
        }
    }
}

/// Per-step record of a single-sequence forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Inputs as seen by the cell (after embedding lookup and dropout).
    pub inputs: Vec<Array1<f64>>,
    pub input_gate: Vec<Array1<f64>>,
    pub forget_gate: Vec<Array1<f64>>,
    pub candidate: Vec<Array1<f64>>,
    pub output_gate: Vec<Array1<f64>>,
    pub cell: Vec<Array1<f64>>,
    pub hidden: Vec<Array1<f64>>,
    pub logits: [f64; NUM_CLASSES],
}

impl ForwardTrace {
    pub fn len(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.is_empty()
    }

    pub fn last_hidden(&self) -> &Array1<f64> {
        self.hidden.last().expect("trace is never empty")
    }
}

/// Gradient of the mean loss, shape-matched to [`LstmModel`]. Embedding
/// gradients are kept per touched row.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub bias: Array1<f64>,
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub embedding: BTreeMap<u32, Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &LstmModel) -> Self {
        Self {
            w_x: Array2::zeros(model.w_x.raw_dim()),
            w_h: Array2::zeros(model.w_h.raw_dim()),
            bias: Array1::zeros(model.bias.raw_dim()),
            head_w: Array2::zeros(model.head_w.raw_dim()),
            head_b: Array1::zeros(model.head_b.raw_dim()),
            embedding: BTreeMap::new(),
        }
    }

    pub fn dense(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::InputWeights => self.w_x.as_slice(),
            ParamId::RecurrentWeights => self.w_h.as_slice(),
            ParamId::GateBias => self.bias.as_slice(),
            ParamId::HeadWeights => self.head_w.as_slice(),
            ParamId::HeadBias => self.head_b.as_slice(),
        }
        .expect("standard layout")
    }

    pub fn dense_shape(&self, id: ParamId) -> Vec<usize> {
        match id {
            ParamId::InputWeights => self.w_x.shape().to_vec(),
            ParamId::RecurrentWeights => self.w_h.shape().to_vec(),
            ParamId::GateBias => self.bias.shape().to_vec(),
            ParamId::HeadWeights => self.head_w.shape().to_vec(),
            ParamId::HeadBias => self.head_b.shape().to_vec(),
        }
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        self.w_x.scaled_add(scale, &other.w_x);
        self.w_h.scaled_add(scale, &other.w_h);
        self.bias.scaled_add(scale, &other.bias);
        self.head_w.scaled_add(scale, &other.head_w);
        self.head_b.scaled_add(scale, &other.head_b);
        for (row, g) in &other.embedding {
            self.embedding
                .entry(*row)
                .or_insert_with(|| Array1::zeros(g.len()))
                .scaled_add(scale, g);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.w_x *= s;
        self.w_h *= s;
        self.bias *= s;
        self.head_w *= s;
        self.head_b *= s;
        for g in self.embedding.values_mut() {
            *g *= s;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax cross-entropy of two logits and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: [f64; NUM_CLASSES], label: Class) -> (f64, [f64; NUM_CLASSES]) {
    let m = logits[0].max(logits[1]);
    let (e0, e1) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    let z = e0 + e1;
    let p = [e0 / z, e1 / z];
    let loss = m + z.ln() - logits[label.index()];
    let mut d = p;
    d[label.index()] -= 1.0;
    (loss, d)
}

/// Index of the larger logit; ties go to the negative class.
pub fn predict(logits: [f64; NUM_CLASSES]) -> Class {
    if logits[1] > logits[0] {
        Class::Positive
    } else {
        Class::Negative
    }
}

struct StepCache {
    /// `n_t × I`, post-dropout inputs.
    x: Array2<f64>,
    /// `n_t × 4H`, activated gates.
    gates: Array2<f64>,
    /// `n_t × H`
    cell: Array2<f64>,
    /// `n_t × H`, `tanh(cell)`.
    cell_tanh: Array2<f64>,
    /// `n_t × H`
    hidden: Array2<f64>,
}

struct BatchForward {
    /// Sorted position -> caller index.
    order: Vec<usize>,
    /// Lengths in sorted order.
    lens: Vec<usize>,
    steps: Vec<StepCache>,
    /// Dropout scale masks per caller index, `len × I`.
    masks: Option<Vec<Array2<f64>>>,
    /// `B × H` in sorted order.
    final_hidden: Array2<f64>,
    /// `B × 2` in sorted order.
    logits: Array2<f64>,
}

impl LstmModel {
    /// All-zero parameters.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let g = 4 * hidden_dim;
        Self {
            w_x: Array2::zeros((g, input_dim)),
            w_h: Array2::zeros((g, hidden_dim)),
            bias: Array1::zeros(g),
            head_w: Array2::zeros((NUM_CLASSES, hidden_dim)),
            head_b: Array1::zeros(NUM_CLASSES),
            embedding: None,
        }
    }

    /// Uniform `[-1/√H, 1/√H]` initialization with forget-gate bias 1.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let mut draw = |shape: (usize, usize)| {
            Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
        };
        let g = 4 * hidden_dim;
        let w_x = draw((g, input_dim));
        let w_h = draw((g, hidden_dim));
        let mut bias = draw((g, 1)).into_shape_with_order(g).expect("column");
        bias.slice_mut(s![hidden_dim..2 * hidden_dim]).fill(FORGET_BIAS_INIT);
        let head_w = draw((NUM_CLASSES, hidden_dim));
        let head_b = draw((NUM_CLASSES, 1)).into_shape_with_order(NUM_CLASSES).expect("column");
        Self {
            w_x,
            w_h,
            bias,
            head_w,
            head_b,
            embedding: None,
        }
    }

    /// Attach a trainable embedding table of `vocab_size` rows drawn like the
    /// other weights.
    pub fn with_trainable_embedding(mut self, vocab_size: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (self.hidden_dim() as f64).sqrt();
        let table = Array2::from_shape_simple_fn((vocab_size, self.input_dim()), || {
            rng.random_range(-bound..=bound)
        });
        self.embedding = Some(Embedding {
            table,
            trainable: true,
        });
        self
    }

    pub fn with_embedding(mut self, table: Array2<f64>, trainable: bool) -> Self {
        assert_eq!(table.ncols(), self.input_dim(), "embedding width must equal input_dim");
        self.embedding = Some(Embedding { table, trainable });
        self
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn param(&self, id: ParamId) -> &[f64] {
        match id {
            ParamId::InputWeights => self.w_x.as_slice(),
            ParamId::RecurrentWeights => self.w_h.as_slice(),
            ParamId::GateBias => self.bias.as_slice(),
            ParamId::HeadWeights => self.head_w.as_slice(),
            ParamId::HeadBias => self.head_b.as_slice(),
        }
        .expect("standard layout")
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut [f64] {
        match id {
            ParamId::InputWeights => self.w_x.as_slice_mut(),
            ParamId::RecurrentWeights => self.w_h.as_slice_mut(),
            ParamId::GateBias => self.bias.as_slice_mut(),
            ParamId::HeadWeights => self.head_w.as_slice_mut(),
            ParamId::HeadBias => self.head_b.as_slice_mut(),
        }
        .expect("standard layout")
    }

    pub fn param_shape(&self, id: ParamId) -> Vec<usize> {
        match id {
            ParamId::InputWeights => self.w_x.shape().to_vec(),
            ParamId::RecurrentWeights => self.w_h.shape().to_vec(),
            ParamId::GateBias => self.bias.shape().to_vec(),
            ParamId::HeadWeights => self.head_w.shape().to_vec(),
            ParamId::HeadBias => self.head_b.shape().to_vec(),
        }
    }

    /// Number of trainable scalars (frozen embeddings excluded).
    pub fn num_parameters(&self) -> usize {
        let dense: usize = ParamId::ALL.iter().map(|&id| self.param(id).len()).sum();
        dense
            + self
                .embedding
                .as_ref()
                .filter(|e| e.trainable)
                .map_or(0, |e| e.table.len())
    }

    /// SHA-256 over every tensor's shape and little-endian values, embedding
    /// table included.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(b"seqlen-audit/model-v1");
        let mut put = |shape: &[usize], values: &[f64]| {
            h.update((shape.len() as u64).to_le_bytes());
            for &d in shape {
                h.update((d as u64).to_le_bytes());
            }
            for v in values {
                h.update(v.to_le_bytes());
            }
        };
        for id in ParamId::ALL {
            put(&self.param_shape(id), self.param(id));
        }
        if let Some(e) = &self.embedding {
            let table = e.table.as_standard_layout();
            put(e.table.shape(), table.as_slice().expect("standard layout"));
            put(&[1], &[e.trainable as u8 as f64]);
        }
        crate::dataset::hex_digest(h)
    }

    /// Shape consistency and finiteness of every tensor.
    pub fn validate(&self) -> Result<()> {
        let (i, h) = (self.input_dim(), self.hidden_dim());
        let expect = [
            (ParamId::InputWeights, vec![4 * h, i]),
            (ParamId::RecurrentWeights, vec![4 * h, h]),
            (ParamId::GateBias, vec![4 * h]),
            (ParamId::HeadWeights, vec![NUM_CLASSES, h]),
            (ParamId::HeadBias, vec![NUM_CLASSES]),
        ];
        for (id, shape) in expect {
            let found = self.param_shape(id);
            if found != shape {
                return Err(Error::ShapeMismatch {
                    tensor: id.name().into(),
                    expected: shape,
                    found,
                });
            }
            if !self.param(id).iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig(format!("tensor `{}` is not finite", id.name())));
            }
        }
        if let Some(e) = &self.embedding {
            if e.table.ncols() != i {
                return Err(Error::ShapeMismatch {
                    tensor: "embedding".into(),
                    expected: vec![e.table.nrows(), i],
                    found: e.table.shape().to_vec(),
                });
            }
            if !e.table.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidConfig("tensor `embedding` is not finite".into()));
            }
        }
        Ok(())
    }

    fn check_payload(&self, payload: &Payload) -> Result<usize> {
        match payload {
            Payload::Vectors(v) => {
                if v.nrows() == 0 {
                    return Err(Error::EmptyInput);
                }
                if v.ncols() != self.input_dim() {
                    return Err(Error::DimensionMismatch {
                        step: 0,
                        expected: self.input_dim(),
                        found: v.ncols(),
                    });
                }
                Ok(v.nrows())
            }
            Payload::Tokens(t) => {
                if t.is_empty() {
                    return Err(Error::EmptyInput);
                }
                let Some(emb) = &self.embedding else {
                    return Err(Error::PayloadKind("token sequence given to a model without embeddings"));
                };
                let vocab = emb.table.nrows();
                if let Some(&id) = t.iter().find(|&&id| id as usize >= vocab) {
                    return Err(Error::TokenOutOfRange { id, vocab });
                }
                Ok(t.len())
            }
        }
    }

    fn input_row<'p>(&'p self, payload: &'p Payload, t: usize) -> ArrayView1<'p, f64> {
        match payload {
            Payload::Vectors(v) => v.row(t),
            Payload::Tokens(ids) => self
                .embedding
                .as_ref()
                .expect("checked")
                .table
                .row(ids[t] as usize),
        }
    }

    fn run_batch(&self, payloads: &[&Payload], mut pass: Pass<'_>, keep_cache: bool) -> Result<BatchForward> {
        if payloads.is_empty() {
            return Err(Error::EmptyInput);
        }
        let lens: Vec<usize> = payloads
            .iter()
            .map(|p| self.check_payload(p))
            .collect::<Result<_>>()?;
        let (in_dim, hid) = (self.input_dim(), self.hidden_dim());

        let rate = pass.dropout_rate();
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        // Masks are drawn per example in caller order so they do not depend on
        // the sorted layout.
        let masks = match &mut pass {
            Pass::Train { dropout_rate, rng } if *dropout_rate > 0.0 => {
                let keep = 1.0 - *dropout_rate;
                let scale = 1.0 / keep;
                Some(
                    lens.iter()
                        .map(|&len| {
                            Array2::from_shape_simple_fn((len, in_dim), || {
                                if rng.uniform() < keep {
                                    scale
                                } else {
                                    0.0
                                }
                            })
                        })
                        .collect::<Vec<_>>(),
                )
            }
            _ => None,
        };

        let mut order: Vec<usize> = (0..payloads.len()).collect();
        order.sort_by(|&a, &b| lens[b].cmp(&lens[a]).then(a.cmp(&b)));
        let sorted_lens: Vec<usize> = order.iter().map(|&k| lens[k]).collect();
        let batch = order.len();
        let max_len = sorted_lens[0];

        let w_x_t = self.w_x.t();
        let w_h_t = self.w_h.t();
        let mut final_hidden = Array2::<f64>::zeros((batch, hid));
        let mut steps: Vec<StepCache> = Vec::with_capacity(if keep_cache { max_len } else { 0 });
        let mut prev_cell = Array2::<f64>::zeros((batch, hid));
        let mut prev_hidden = Array2::<f64>::zeros((batch, hid));
        let mut active = batch;

        for t in 0..max_len {
            while active > 0 && sorted_lens[active - 1] <= t {
                active -= 1;
            }
            let mut x = Array2::<f64>::zeros((active, in_dim));
            for (k, mut row) in x.outer_iter_mut().enumerate() {
                let src = order[k];
                row.assign(&self.input_row(payloads[src], t));
                if let Some(m) = &masks {
                    row *= &m[src].row(t);
                }
            }

            let mut gates = Array2::<f64>::zeros((active, 4 * hid));
            gates.assign(&self.bias.broadcast((active, 4 * hid)).expect("broadcast"));
            general_mat_mul(1.0, &x, &w_x_t, 1.0, &mut gates);
            if t > 0 {
                general_mat_mul(1.0, &prev_hidden.slice(s![..active, ..]), &w_h_t, 1.0, &mut gates);
            }

            let mut cell = Array2::<f64>::zeros((active, hid));
            let mut cell_tanh = Array2::<f64>::zeros((active, hid));
            let mut hidden = Array2::<f64>::zeros((active, hid));
            for k in 0..active {
                let gz = gates.row_mut(k).into_slice().expect("contiguous");
                let (gi, rest) = gz.split_at_mut(hid);
                let (gf, rest) = rest.split_at_mut(hid);
                let (gg, go) = rest.split_at_mut(hid);
                let cp = prev_cell.row(k);
                let mut c_row = cell.row_mut(k);
                let mut ct_row = cell_tanh.row_mut(k);
                let mut h_row = hidden.row_mut(k);
                for j in 0..hid {
                    let i = sigmoid(gi[j]);
                    let f = sigmoid(gf[j]);
                    let g = gg[j].tanh();
                    let o = sigmoid(go[j]);
                    gi[j] = i;
                    gf[j] = f;
                    gg[j] = g;
                    go[j] = o;
                    let c = f * cp[j] + i * g;
                    let ct = c.tanh();
                    c_row[j] = c;
                    ct_row[j] = ct;
                    h_row[j] = o * ct;
                }
            }

            for k in 0..active {
                if sorted_lens[k] == t + 1 {
                    final_hidden.row_mut(k).assign(&hidden.row(k));
                }
            }
            prev_cell.slice_mut(s![..active, ..]).assign(&cell);
            prev_hidden.slice_mut(s![..active, ..]).assign(&hidden);
            if keep_cache {
                steps.push(StepCache {
                    x,
                    gates,
                    cell,
                    cell_tanh,
                    hidden,
                });
            }
        }

        let mut logits = final_hidden.dot(&self.head_w.t());
        logits += &self.head_b;

        Ok(BatchForward {
            order,
            lens: sorted_lens,
            steps,
            masks,
            final_hidden,
            logits,
        })
    }

    /// Forward pass over one sequence, recording every step.
    pub fn forward(&self, payload: &Payload, pass: Pass<'_>) -> Result<ForwardTrace> {
        let fw = self.run_batch(&[payload], pass, true)?;
        let h = self.hidden_dim();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(fw.steps.len()),
            input_gate: Vec::with_capacity(fw.steps.len()),
            forget_gate: Vec::with_capacity(fw.steps.len()),
            candidate: Vec::with_capacity(fw.steps.len()),
            output_gate: Vec::with_capacity(fw.steps.len()),
            cell: Vec::with_capacity(fw.steps.len()),
            hidden: Vec::with_capacity(fw.steps.len()),
            logits: [fw.logits[[0, 0]], fw.logits[[0, 1]]],
        };
        for step in &fw.steps {
            let g = step.gates.row(0);
            trace.inputs.push(step.x.row(0).to_owned());
            trace.input_gate.push(g.slice(s![..h]).to_owned());
            trace.forget_gate.push(g.slice(s![h..2 * h]).to_owned());
            trace.candidate.push(g.slice(s![2 * h..3 * h]).to_owned());
            trace.output_gate.push(g.slice(s![3 * h..]).to_owned());
            trace.cell.push(step.cell.row(0).to_owned());
            trace.hidden.push(step.hidden.row(0).to_owned());
        }
        Ok(trace)
    }

    /// Evaluation-mode logits for a batch, one row per payload in input order.
    pub fn logits_batch(&self, payloads: &[&Payload]) -> Result<Array2<f64>> {
        let fw = self.run_batch(payloads, Pass::Eval, false)?;
        Ok(unsort_rows(&fw.logits, &fw.order))
    }

    /// Final hidden states for a batch, one row per payload in input order.
    pub fn embeddings_batch(&self, payloads: &[&Payload]) -> Result<Array2<f64>> {
        let fw = self.run_batch(payloads, Pass::Eval, false)?;
        Ok(unsort_rows(&fw.final_hidden, &fw.order))
    }

    /// The hidden state the classifier reads (`h_T`), evaluation mode.
    pub fn document_embedding(&self, payload: &Payload) -> Result<Array1<f64>> {
        Ok(self.embeddings_batch(&[payload])?.row(0).to_owned())
    }

    /// Cross-entropy loss and its exact gradient for one example.
    pub fn loss_and_gradients(&self, payload: &Payload, label: Class, pass: Pass<'_>) -> Result<(f64, Gradients)> {
        self.batch_loss_and_gradients(&[(payload, label)], pass)
    }

    /// Mean cross-entropy over the batch and its gradient (BPTT through every
    /// real step of every example).
    pub fn batch_loss_and_gradients(&self, batch: &[(&Payload, Class)], pass: Pass<'_>) -> Result<(f64, Gradients)> {
        let payloads: Vec<&Payload> = batch.iter().map(|(p, _)| *p).collect();
        let fw = self.run_batch(&payloads, pass, true)?;
        let n = batch.len();
        let inv_n = 1.0 / n as f64;
        let hid = self.hidden_dim();
        let mut grads = Gradients::zeros_like(self);

        // Head.
        let mut loss = 0.0;
        let mut d_logits = Array2::<f64>::zeros((n, NUM_CLASSES));
        for k in 0..n {
            let label = batch[fw.order[k]].1;
            let (l, d) = cross_entropy([fw.logits[[k, 0]], fw.logits[[k, 1]]], label);
            loss += l;
            d_logits[[k, 0]] = d[0] * inv_n;
            d_logits[[k, 1]] = d[1] * inv_n;
        }
        loss *= inv_n;
        general_mat_mul(1.0, &d_logits.t(), &fw.final_hidden, 0.0, &mut grads.head_w);
        grads.head_b = d_logits.sum_axis(Axis(0));
        let d_final = d_logits.dot(&self.head_w);

        let token_path = payloads.iter().any(|p| matches!(p, Payload::Tokens(_)))
            && self.embedding.as_ref().is_some_and(|e| e.trainable);

        // Recurrence, newest step first. Rows of `dh`/`dc` past the active
        // prefix belong to examples whose final step is still ahead.
        let mut dh = Array2::<f64>::zeros((n, hid));
        let mut dc = Array2::<f64>::zeros((n, hid));
        for t in (0..fw.steps.len()).rev() {
            let step = &fw.steps[t];
            let active = step.hidden.nrows();
            for k in 0..active {
                if fw.lens[k] == t + 1 {
                    dh.row_mut(k).assign(&d_final.row(k));
                }
            }

            let mut dz = Array2::<f64>::zeros((active, 4 * hid));
            let prev_cell = (t > 0).then(|| fw.steps[t - 1].cell.slice(s![..active, ..]));
            for k in 0..active {
                let gate = step.gates.row(k);
                let gate = gate.as_slice().expect("contiguous");
                let (gi, rest) = gate.split_at(hid);
                let (gf, rest) = rest.split_at(hid);
                let (gg, go) = rest.split_at(hid);
                let ct = step.cell_tanh.row(k);
                let mut dz_row = dz.row_mut(k);
                let dz_row = dz_row.as_slice_mut().expect("contiguous");
                let mut dh_row = dh.row_mut(k);
                let mut dc_row = dc.row_mut(k);
                for j in 0..hid {
                    let dhj = dh_row[j];
                    let d_o = dhj * ct[j];
                    let dcj = dc_row[j] + dhj * go[j] * (1.0 - ct[j] * ct[j]);
                    let cp = prev_cell.as_ref().map_or(0.0, |c| c[[k, j]]);
                    dz_row[j] = dcj * gg[j] * gi[j] * (1.0 - gi[j]);
                    dz_row[hid + j] = dcj * cp * gf[j] * (1.0 - gf[j]);
                    dz_row[2 * hid + j] = dcj * gi[j] * (1.0 - gg[j] * gg[j]);
                    dz_row[3 * hid + j] = d_o * go[j] * (1.0 - go[j]);
                    dc_row[j] = dcj * gf[j];
                    dh_row[j] = 0.0;
                }
            }

            general_mat_mul(1.0, &dz.t(), &step.x, 1.0, &mut grads.w_x);
            grads.bias += &dz.sum_axis(Axis(0));
            if t > 0 {
                let prev_h = fw.steps[t - 1].hidden.slice(s![..active, ..]);
                general_mat_mul(1.0, &dz.t(), &prev_h, 1.0, &mut grads.w_h);
                let mut dh_active = dh.slice_mut(s![..active, ..]);
                general_mat_mul(1.0, &dz, &self.w_h, 0.0, &mut dh_active);
            }

            if token_path {
                let dx = dz.dot(&self.w_x);
                for k in 0..active {
                    let src = fw.order[k];
                    if let Payload::Tokens(ids) = payloads[src] {
                        let mut row = dx.row(k).to_owned();
                        if let Some(m) = &fw.masks {
                            row *= &m[src].row(t);
                        }
                        grads
                            .embedding
                            .entry(ids[t])
                            .and_modify(|g| *g += &row)
                            .or_insert(row);
                    }
                }
            }
        }

        Ok((loss, grads))
    }

    /// Mean cross-entropy over labeled examples in evaluation mode.
    pub fn mean_loss(&self, examples: &[SequenceExample]) -> Result<f64> {
        let payloads: Vec<&Payload> = examples.iter().map(|e| &e.payload).collect();
        let logits = self.logits_batch(&payloads)?;
        let total: f64 = examples
            .iter()
            .enumerate()
            .map(|(k, e)| cross_entropy([logits[[k, 0]], logits[[k, 1]]], e.label).0)
            .sum();
        Ok(total / examples.len() as f64)
    }
}

fn unsort_rows(sorted: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros(sorted.raw_dim());
    for (k, &src) in order.iter().enumerate() {
        out.row_mut(src).assign(&sorted.row(k));
    }
    out
}
