//! Toy dual encoder and its in-batch softmax loss with analytic gradients.
//!
//! Question tower: mean of token embeddings plus the type-0 embedding,
//! `tanh` hidden layer, linear output, l2 normalization.
//! Answer tower: mean of answer-token embeddings plus the type-1 embedding,
//! concatenated with a `tanh` projection of the mean context embedding (also
//! type 1), then its own `tanh` hidden layer, linear output and
//! normalization. The token table is shared by both towers.
//!
//! All parameters live in one flat vector; [`Segment`] names the slices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DenseError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_tok: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    /// Multiplier on the dot product inside the softmax.
    pub scale: f64,
    /// Half-width of the uniform init for embeddings and inner layers.
    pub init_scale: f64,
    /// Half-width of the uniform init for the two output layers.
    pub output_init_scale: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_tok: 64,
            d_hidden: 256,
            d_out: 64,
            scale: 1.0,
            init_scale: 2.0,
            output_init_scale: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), DenseError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("d_tok", self.d_tok),
            ("d_hidden", self.d_hidden),
            ("d_out", self.d_out),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(DenseError::InvalidConfig(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("scale", self.scale),
            ("init_scale", self.init_scale),
            ("output_init_scale", self.output_init_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(DenseError::InvalidConfig(format!("{name} = {v} must be finite and >= 0")));
            }
        }
        if self.scale == 0.0 {
            return Err(DenseError::InvalidConfig("scale must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    TokenEmbedding,
    TypeEmbedding,
    QuestionW1,
    QuestionB1,
    QuestionW2,
    QuestionB2,
    ContextW,
    ContextB,
    AnswerW1,
    AnswerB1,
    AnswerW2,
    AnswerB2,
}

impl Segment {
    pub const ALL: [Segment; 12] = [
        Segment::TokenEmbedding,
        Segment::TypeEmbedding,
        Segment::QuestionW1,
        Segment::QuestionB1,
        Segment::QuestionW2,
        Segment::QuestionB2,
        Segment::ContextW,
        Segment::ContextB,
        Segment::AnswerW1,
        Segment::AnswerB1,
        Segment::AnswerW2,
        Segment::AnswerB2,
    ];

    /// `(rows, cols)`; biases are column vectors.
    pub fn shape(self, c: &ModelConfig) -> (usize, usize) {
        match self {
            Segment::TokenEmbedding => (c.vocab_size, c.d_tok),
            Segment::TypeEmbedding => (2, c.d_tok),
            Segment::QuestionW1 => (c.d_hidden, c.d_tok),
            Segment::QuestionB1 | Segment::AnswerB1 => (c.d_hidden, 1),
            Segment::QuestionW2 | Segment::AnswerW2 => (c.d_out, c.d_hidden),
            Segment::QuestionB2 | Segment::AnswerB2 => (c.d_out, 1),
            Segment::ContextW => (c.d_tok, c.d_tok),
            Segment::ContextB => (c.d_tok, 1),
            Segment::AnswerW1 => (c.d_hidden, 2 * c.d_tok),
        }
    }

    fn init_half_width(self, c: &ModelConfig) -> f64 {
        match self {
            Segment::QuestionW2 | Segment::AnswerW2 => c.output_init_scale,
            Segment::QuestionB1
            | Segment::QuestionB2
            | Segment::ContextB
            | Segment::AnswerB1
            | Segment::AnswerB2 => 0.0,
            _ => c.init_scale,
        }
    }
}

/// Start offset of every segment in the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    offsets: [usize; 12],
    len: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut offsets = [0; 12];
        let mut at = 0;
        for (i, s) in Segment::ALL.iter().enumerate() {
            offsets[i] = at;
            let (r, k) = s.shape(c);
            at += r * k;
        }
        Self { offsets, len: at }
    }

    fn at(&self, s: Segment) -> usize {
        self.offsets[s as usize]
    }
}

/// `W x + b` for row-major `W` of shape `rows × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// `out += Wᵀ y`.
fn add_transposed(w: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &yr) in y.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += wv * yr;
        }
    }
}

/// `G += y xᵀ`.
fn add_outer(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, &yr) in y.iter().enumerate() {
        for (gv, &xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *gv += yr * xv;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy)]
struct Head {
    w1: Segment,
    b1: Segment,
    w2: Segment,
    b2: Segment,
}

const QUESTION_HEAD: Head = Head {
    w1: Segment::QuestionW1,
    b1: Segment::QuestionB1,
    w2: Segment::QuestionW2,
    b2: Segment::QuestionB2,
};

const ANSWER_HEAD: Head = Head {
    w1: Segment::AnswerW1,
    b1: Segment::AnswerB1,
    w2: Segment::AnswerW2,
    b2: Segment::AnswerB2,
};

#[derive(Debug, Clone)]
struct HeadCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
    unit: Vec<f64>,
}

#[derive(Debug, Clone)]
struct QuestionCache {
    ids: Vec<u32>,
    head: HeadCache,
}

#[derive(Debug, Clone)]
struct AnswerCache {
    answer_ids: Vec<u32>,
    /// Present only when the context pathway was active.
    context: Option<ContextCache>,
    head: HeadCache,
}

#[derive(Debug, Clone)]
struct ContextCache {
    ids: Vec<u32>,
    pooled: Vec<f64>,
    activation: Vec<f64>,
}

/// Aligned question/answer/context token ids; row `i` is a positive pair and
/// every other answer in the batch is a negative for it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub questions: Vec<Vec<u32>>,
    pub answers: Vec<Vec<u32>>,
    pub contexts: Vec<Vec<u32>>,
    pub use_context: bool,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    fn check(&self) -> Result<usize, DenseError> {
        let b = self.questions.len();
        if self.answers.len() != b || self.contexts.len() != b {
            return Err(DenseError::InvalidConfig("batch columns differ in length".into()));
        }
        if b < 2 {
            return Err(DenseError::BatchTooSmall(b));
        }
        Ok(b)
    }
}

/// Row-wise softmax over the `b × b` score matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Row-major `b × b` probabilities `P(answer j | question i)`.
    pub probabilities: Vec<f64>,
}

impl LossOutput {
    /// `P(y_i | x_i)` for each row.
    pub fn positive_probabilities(&self) -> Vec<f64> {
        let b = (self.probabilities.len() as f64).sqrt() as usize;
        (0..b).map(|i| self.probabilities[i * b + i]).collect()
    }
}

/// Mean negative log-probability of the diagonal, with max subtraction.
pub fn softmax_loss(scores: &[f64], b: usize) -> Result<LossOutput, DenseError> {
    if b < 2 {
        return Err(DenseError::BatchTooSmall(b));
    }
    assert_eq!(scores.len(), b * b, "score matrix must be b × b");
    let mut probabilities = vec![0.0; b * b];
    let mut total = 0.0;
    for i in 0..b {
        let row = &scores[i * b..(i + 1) * b];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&s| (s - m).exp()).sum();
        let lse = m + z.ln();
        for j in 0..b {
            probabilities[i * b + j] = (row[j] - lse).exp();
        }
        total -= row[i] - lse;
    }
    Ok(LossOutput {
        loss: total / b as f64,
        probabilities,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl EncoderModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, DenseError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(layout.len);
        for s in Segment::ALL {
            let (r, c) = s.shape(&config);
            let a = s.init_half_width(&config);
            for _ in 0..r * c {
                params.push(if a == 0.0 { 0.0 } else { rng.gen_range(-a..=a) });
            }
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self, DenseError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(DenseError::InvalidConfig(format!(
                "expected {} parameters, got {}",
                layout.len,
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(DenseError::InvalidConfig("non-finite parameter".into()));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn segment_range(&self, s: Segment) -> std::ops::Range<usize> {
        let (r, c) = s.shape(&self.config);
        let at = self.layout.at(s);
        at..at + r * c
    }

    pub fn segment(&self, s: Segment) -> &[f64] {
        &self.params[self.segment_range(s)]
    }

    pub fn segment_mut(&mut self, s: Segment) -> &mut [f64] {
        let r = self.segment_range(s);
        &mut self.params[r]
    }

    /// Mean embedding plus the type row, summed in id order so any
    /// permutation of `ids` gives the same bits.
    fn pooled(&self, ids: &[u32], type_row: usize) -> Result<Vec<f64>, DenseError> {
        let d = self.config.d_tok;
        let table = self.segment(Segment::TokenEmbedding);
        let mut sorted = ids.to_vec();
        sorted.sort_unstable();
        let mut out = vec![0.0; d];
        for &id in &sorted {
            if id as usize >= self.config.vocab_size {
                return Err(DenseError::InvalidTokenId(id));
            }
            let row = &table[id as usize * d..(id as usize + 1) * d];
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let n = ids.len() as f64;
        let ty = &self.segment(Segment::TypeEmbedding)[type_row * d..(type_row + 1) * d];
        for (o, t) in out.iter_mut().zip(ty) {
            *o = *o / n + t;
        }
        Ok(out)
    }

    fn head_forward(&self, head: Head, input: Vec<f64>) -> Result<HeadCache, DenseError> {
        let pre = affine(self.segment(head.w1), self.segment(head.b1), &input);
        let hidden: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
        let v = affine(self.segment(head.w2), self.segment(head.b2), &hidden);
        let norm = dot(&v, &v).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DenseError::NormalizationDegenerate);
        }
        let unit = v.iter().map(|x| x / norm).collect();
        Ok(HeadCache {
            input,
            hidden,
            norm,
            unit,
        })
    }

    fn question_forward(&self, ids: &[u32]) -> Result<QuestionCache, DenseError> {
        if ids.is_empty() {
            return Err(DenseError::EmptyInput);
        }
        let x = self.pooled(ids, 0)?;
        Ok(QuestionCache {
            ids: ids.to_vec(),
            head: self.head_forward(QUESTION_HEAD, x)?,
        })
    }

    fn answer_forward(
        &self,
        answer: &[u32],
        context: &[u32],
        use_context: bool,
    ) -> Result<AnswerCache, DenseError> {
        if answer.is_empty() {
            return Err(DenseError::EmptyInput);
        }
        let d = self.config.d_tok;
        let mut z = self.pooled(answer, 1)?;
        let context = if use_context && !context.is_empty() {
            let pooled = self.pooled(context, 1)?;
            let pre = affine(self.segment(Segment::ContextW), self.segment(Segment::ContextB), &pooled);
            let activation: Vec<f64> = pre.iter().map(|x| x.tanh()).collect();
            z.extend_from_slice(&activation);
            Some(ContextCache {
                ids: context.to_vec(),
                pooled,
                activation,
            })
        } else {
            z.extend(std::iter::repeat(0.0).take(d));
            None
        };
        Ok(AnswerCache {
            answer_ids: answer.to_vec(),
            context,
            head: self.head_forward(ANSWER_HEAD, z)?,
        })
    }

    pub fn encode_question(&self, ids: &[u32]) -> Result<Vec<f64>, DenseError> {
        Ok(self.question_forward(ids)?.head.unit)
    }

    pub fn encode_answer(&self, answer: &[u32], context: &[u32], use_context: bool) -> Result<Vec<f64>, DenseError> {
        Ok(self.answer_forward(answer, context, use_context)?.head.unit)
    }

    fn forward(&self, batch: &TrainingBatch) -> Result<(Vec<QuestionCache>, Vec<AnswerCache>, Vec<f64>), DenseError> {
        let b = batch.check()?;
        let qs = batch
            .questions
            .par_iter()
            .map(|q| self.question_forward(q))
            .collect::<Result<Vec<_>, _>>()?;
        let answers = batch
            .answers
            .par_iter()
            .zip(batch.contexts.par_iter())
            .map(|(a, c)| self.answer_forward(a, c, batch.use_context))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scores = vec![0.0; b * b];
        for i in 0..b {
            for j in 0..b {
                scores[i * b + j] = self.config.scale * dot(&qs[i].head.unit, &answers[j].head.unit);
            }
        }
        Ok((qs, answers, scores))
    }

    /// Score matrix `scale · q_i · a_j` for a batch.
    pub fn batch_scores(&self, batch: &TrainingBatch) -> Result<Vec<f64>, DenseError> {
        Ok(self.forward(batch)?.2)
    }

    pub fn batch_loss(&self, batch: &TrainingBatch) -> Result<LossOutput, DenseError> {
        let (_, _, scores) = self.forward(batch)?;
        softmax_loss(&scores, batch.len())
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn batch_gradients(&self, batch: &TrainingBatch) -> Result<(LossOutput, Vec<f64>), DenseError> {
        let (qs, answers, scores) = self.forward(batch)?;
        let b = qs.len();
        let out = softmax_loss(&scores, b)?;
        let d_out = self.config.d_out;
        let scale = self.config.scale;

        let mut dscore = out.probabilities.clone();
        for i in 0..b {
            dscore[i * b + i] -= 1.0;
        }
        for v in dscore.iter_mut() {
            *v /= b as f64;
        }

        let mut grad = vec![0.0; self.params.len()];
        for i in 0..b {
            let mut gq = vec![0.0; d_out];
            for j in 0..b {
                let w = scale * dscore[i * b + j];
                for (g, a) in gq.iter_mut().zip(&answers[j].head.unit) {
                    *g += w * a;
                }
            }
            self.question_backward(&qs[i], &gq, &mut grad);
        }
        for j in 0..b {
            let mut ga = vec![0.0; d_out];
            for i in 0..b {
                let w = scale * dscore[i * b + j];
                for (g, q) in ga.iter_mut().zip(&qs[i].head.unit) {
                    *g += w * q;
                }
            }
            self.answer_backward(&answers[j], &ga, &mut grad);
        }
        Ok((out, grad))
    }

    /// Backpropagates `d loss / d unit` through normalization and the two
    /// layers of `head`; returns `d loss / d input`.
    fn head_backward(&self, head: Head, cache: &HeadCache, g_unit: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let u = &cache.unit;
        let proj = dot(u, g_unit);
        let gv: Vec<f64> = g_unit
            .iter()
            .zip(u)
            .map(|(g, u)| (g - u * proj) / cache.norm)
            .collect();
        add_outer(&mut grad[self.segment_range(head.w2)], &gv, &cache.hidden);
        for (g, v) in grad[self.segment_range(head.b2)].iter_mut().zip(&gv) {
            *g += v;
        }
        let mut gh = vec![0.0; cache.hidden.len()];
        add_transposed(self.segment(head.w2), &gv, &mut gh);
        let gpre: Vec<f64> = gh
            .iter()
            .zip(&cache.hidden)
            .map(|(g, h)| g * (1.0 - h * h))
            .collect();
        add_outer(&mut grad[self.segment_range(head.w1)], &gpre, &cache.input);
        for (g, v) in grad[self.segment_range(head.b1)].iter_mut().zip(&gpre) {
            *g += v;
        }
        let mut gin = vec![0.0; cache.input.len()];
        add_transposed(self.segment(head.w1), &gpre, &mut gin);
        gin
    }

    fn pooled_backward(&self, ids: &[u32], type_row: usize, g: &[f64], grad: &mut [f64]) {
        let d = self.config.d_tok;
        let ty = self.layout.at(Segment::TypeEmbedding) + type_row * d;
        for (k, v) in g.iter().enumerate() {
            grad[ty + k] += v;
        }
        let table = self.layout.at(Segment::TokenEmbedding);
        let n = ids.len() as f64;
        for &id in ids {
            let row = table + id as usize * d;
            for (k, v) in g.iter().enumerate() {
                grad[row + k] += v / n;
            }
        }
    }

    fn question_backward(&self, cache: &QuestionCache, g_unit: &[f64], grad: &mut [f64]) {
        let gx = self.head_backward(QUESTION_HEAD, &cache.head, g_unit, grad);
        self.pooled_backward(&cache.ids, 0, &gx, grad);
    }

    fn answer_backward(&self, cache: &AnswerCache, g_unit: &[f64], grad: &mut [f64]) {
        let d = self.config.d_tok;
        let gz = self.head_backward(ANSWER_HEAD, &cache.head, g_unit, grad);
        self.pooled_backward(&cache.answer_ids, 1, &gz[..d], grad);
        if let Some(ctx) = &cache.context {
            let gpre: Vec<f64> = gz[d..]
                .iter()
                .zip(&ctx.activation)
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            add_outer(&mut grad[self.segment_range(Segment::ContextW)], &gpre, &ctx.pooled);
            for (g, v) in grad[self.segment_range(Segment::ContextB)].iter_mut().zip(&gpre) {
                *g += v;
            }
            let mut gc = vec![0.0; d];
            add_transposed(self.segment(Segment::ContextW), &gpre, &mut gc);
            self.pooled_backward(&ctx.ids, 1, &gc, grad);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(seed: u64) -> EncoderModel {
        let config = ModelConfig {
            vocab_size: 12,
            d_tok: 4,
            d_hidden: 5,
            d_out: 3,
            scale: 1.0,
            init_scale: 0.5,
            output_init_scale: 0.5,
        };
        EncoderModel::new(config, seed).unwrap()
    }

    fn batch(use_context: bool) -> TrainingBatch {
        TrainingBatch {
            questions: vec![vec![0, 1], vec![2, 3, 3], vec![4]],
            answers: vec![vec![5, 6], vec![7], vec![8, 9, 1]],
            contexts: vec![vec![5, 6, 10], vec![], vec![11, 8]],
            use_context,
        }
    }

    fn norm(v: &[f64]) -> f64 {
        dot(v, v).sqrt()
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let m = tiny(1);
        assert!((norm(&m.encode_question(&[1, 2, 3]).unwrap()) - 1.0).abs() < 1e-12);
        assert!((norm(&m.encode_answer(&[1], &[2, 3], true).unwrap()) - 1.0).abs() < 1e-12);
        assert!((norm(&m.encode_answer(&[1, 2], &[1, 2], true).unwrap()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pooling_is_order_invariant() {
        let m = tiny(2);
        assert_eq!(
            m.encode_question(&[1, 2, 3]).unwrap(),
            m.encode_question(&[3, 1, 2]).unwrap()
        );
    }

    #[test]
    fn context_off_ignores_context() {
        let m = tiny(3);
        let a = m.encode_answer(&[1, 2], &[3, 4], false).unwrap();
        let b = m.encode_answer(&[1, 2], &[9, 10, 11], false).unwrap();
        assert_eq!(a, b);
        let c = m.encode_answer(&[1, 2], &[3, 4], true).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn input_errors() {
        let m = tiny(4);
        assert!(matches!(m.encode_question(&[]), Err(DenseError::EmptyInput)));
        assert!(matches!(m.encode_answer(&[], &[1], true), Err(DenseError::EmptyInput)));
        assert!(matches!(m.encode_question(&[99]), Err(DenseError::InvalidTokenId(99))));
        let mut b = batch(true);
        b.questions.truncate(1);
        b.answers.truncate(1);
        b.contexts.truncate(1);
        assert!(matches!(m.batch_loss(&b), Err(DenseError::BatchTooSmall(1))));
    }

    #[test]
    fn zero_output_layer_is_degenerate() {
        let mut m = tiny(5);
        m.segment_mut(Segment::QuestionW2).fill(0.0);
        assert!(matches!(m.encode_question(&[1]), Err(DenseError::NormalizationDegenerate)));
        m.segment_mut(Segment::QuestionB2).copy_from_slice(&[0.0, 3.0, 4.0]);
        assert_eq!(m.encode_question(&[1]).unwrap(), vec![0.0, 0.6, 0.8]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let m = tiny(6);
        let out = m.batch_loss(&batch(true)).unwrap();
        for row in out.probabilities.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn shift_invariance() {
        let s = [0.3, -0.2, 0.9, 0.1, 0.5, -0.7, 0.0, 0.2, 0.4];
        let shifted: Vec<f64> = s.iter().map(|x| x + 5.0).collect();
        let a = softmax_loss(&s, 3).unwrap();
        let b = softmax_loss(&shifted, 3).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        for (x, y) in a.probabilities.iter().zip(&b.probabilities) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_example_gives_finite_gradients() {
        let m = tiny(7);
        let mut b = batch(true);
        b.questions[1] = b.questions[0].clone();
        b.answers[1] = b.answers[0].clone();
        b.contexts[1] = b.contexts[0].clone();
        let (_, g) = m.batch_gradients(&b).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn unused_rows_get_no_gradient() {
        let m = tiny(8);
        let mut b = batch(false);
        b.contexts[0] = vec![10, 11];
        let (_, g) = m.batch_gradients(&b).unwrap();
        let table = m.segment_range(Segment::TokenEmbedding);
        let d = m.config().d_tok;
        for id in [10usize, 11] {
            assert!(g[table.start + id * d..table.start + (id + 1) * d].iter().all(|&v| v == 0.0));
        }
        assert!(g[m.segment_range(Segment::ContextW)].iter().all(|&v| v == 0.0));
    }
}
