//! Small deterministic masked-LM used as the reference backend.
//!
//! Architecture: token embedding table (dim 32 by default), mean-pooled
//! context over the non-masked positions, linear projection to vocabulary
//! logits, softmax. All arithmetic is 64-bit so analytic gradients can be
//! checked against finite differences; all stochasticity (dropout, MLM mask
//! choice) flows from a seed set per phase.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::vocab::{SubwordVocab, MASK_TOKEN};
use crate::backend::{ClassExample, ModelBackend, StepReport, TokenId, TrainConfig};
use crate::error::{Error, Result};

const SNAPSHOT_VERSION: u32 = 1;
const INIT_STD: f64 = 0.1;
const MLM_MASK_RATE: f64 = 0.15;

#[derive(Debug, Clone)]
struct GradAccum {
    emb: Array2<f64>,
    proj: Array2<f64>,
    bias: Array1<f64>,
    micros: usize,
}

impl GradAccum {
    fn zeros(vocab: usize, dim: usize) -> Self {
        GradAccum {
            emb: Array2::zeros((vocab, dim)),
            proj: Array2::zeros((vocab, dim)),
            bias: Array1::zeros(vocab),
            micros: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    vocab: SubwordVocab,
    dim: usize,
    init_seed: u64,
    emb: Array2<f64>,
    proj: Array2<f64>,
    bias: Array1<f64>,
    rng: ChaCha20Rng,
    pending: GradAccum,
    updates: u64,
    micro_steps: u64,
}

/// Persistable model state. Round-trips bit-exactly through JSON because
/// floats are emitted in shortest-round-trip form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceSnapshot {
    pub version: u32,
    pub seed: u64,
    pub dim: usize,
    vocab: SubwordVocab,
    emb: Vec<f64>,
    proj: Vec<f64>,
    bias: Vec<f64>,
}

impl ReferenceBackend {
    pub fn new(vocab: SubwordVocab, dim: usize, init_seed: u64) -> Self {
        let v = vocab.len();
        let mut rng = ChaCha20Rng::seed_from_u64(init_seed);
        let mut sample = |n: usize| -> Vec<f64> {
            // Box-Muller keeps the dependency surface small and the stream
            // stable across rand releases.
            (0..n)
                .map(|_| {
                    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                    let u2: f64 = rng.gen_range(0.0..1.0);
                    INIT_STD * (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect()
        };
        let emb = Array2::from_shape_vec((v, dim), sample(v * dim)).unwrap();
        let proj = Array2::from_shape_vec((v, dim), sample(v * dim)).unwrap();
        let bias = Array1::zeros(v);
        ReferenceBackend {
            vocab,
            dim,
            init_seed,
            emb,
            proj,
            bias,
            rng: ChaCha20Rng::seed_from_u64(init_seed),
            pending: GradAccum::zeros(v, dim),
            updates: 0,
            micro_steps: 0,
        }
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    fn forward(
        &self,
        tokens: &[TokenId],
        masked: &[usize],
        drop_mask: Option<&Array1<f64>>,
    ) -> ForwardPass {
        let ctx: Vec<TokenId> = tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !masked.contains(i))
            .map(|(_, &t)| t)
            .collect();
        let mut h = Array1::zeros(self.dim);
        if !ctx.is_empty() {
            for &t in &ctx {
                h += &self.emb.row(t);
            }
            h /= ctx.len() as f64;
        }
        if let Some(mask) = drop_mask {
            h *= mask;
        }
        let logits = self.proj.dot(&h) + &self.bias;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp = logits.mapv(|z| (z - max).exp());
        let probs = &exp / exp.sum();
        ForwardPass { ctx, h, probs }
    }

    /// Backpropagate a logit-space gradient into the accumulator.
    fn backward(
        &mut self,
        fwd: &ForwardPass,
        g_logits: &Array1<f64>,
        drop_mask: Option<&Array1<f64>>,
        weight: f64,
    ) {
        let g = g_logits * weight;
        self.pending.bias += &g;
        for (j, &gj) in g.iter().enumerate() {
            if gj != 0.0 {
                let mut row = self.pending.proj.row_mut(j);
                row += &(&fwd.h * gj);
            }
        }
        if !fwd.ctx.is_empty() {
            let mut dh = self.proj.t().dot(&g);
            if let Some(mask) = drop_mask {
                dh *= mask;
            }
            dh /= fwd.ctx.len() as f64;
            for &t in &fwd.ctx {
                let mut row = self.pending.emb.row_mut(t);
                row += &dh;
            }
        }
    }

    fn dropout_mask(&mut self, dropout: f64) -> Option<Array1<f64>> {
        if dropout <= 0.0 {
            return None;
        }
        let keep = 1.0 - dropout;
        let mask = Array1::from_iter((0..self.dim).map(|_| {
            if self.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        }));
        Some(mask)
    }

    /// Classification loss of a batch without touching any state. Pure; no
    /// dropout. Used for evaluation-style probes and gradient checking.
    pub fn classification_loss(&self, batch: &[ClassExample]) -> Result<f64> {
        let mut total = 0.0;
        for ex in batch {
            let (loss, _, _, _) = self.class_forward(ex, None)?;
            total += loss;
        }
        Ok(total / batch.len() as f64)
    }

    /// Loss plus the analytic gradient as one flat vector ordered
    /// [embedding rows, projection rows, bias]. Pure; no dropout.
    pub fn classification_gradients(&self, batch: &[ClassExample]) -> Result<(f64, Vec<f64>)> {
        let v = self.vocab.len();
        let mut d_emb: Array2<f64> = Array2::zeros((v, self.dim));
        let mut d_proj: Array2<f64> = Array2::zeros((v, self.dim));
        let mut d_bias: Array1<f64> = Array1::zeros(v);
        let mut total = 0.0;
        let w = 1.0 / batch.len() as f64;
        for ex in batch {
            let (loss, fwd, g_logits, _) = self.class_forward(ex, None)?;
            total += loss * w;
            let g = &g_logits * w;
            d_bias += &g;
            for (j, &gj) in g.iter().enumerate() {
                if gj != 0.0 {
                    let mut row = d_proj.row_mut(j);
                    row += &(&fwd.h * gj);
                }
            }
            if !fwd.ctx.is_empty() {
                let dh = self.proj.t().dot(&g) / fwd.ctx.len() as f64;
                for &t in &fwd.ctx {
                    let mut row = d_emb.row_mut(t);
                    row += &dh;
                }
            }
        }
        let mut flat = Vec::with_capacity(2 * v * self.dim + v);
        flat.extend(d_emb.iter());
        flat.extend(d_proj.iter());
        flat.extend(d_bias.iter());
        Ok((total, flat))
    }

    pub fn param_count(&self) -> usize {
        2 * self.vocab.len() * self.dim + self.vocab.len()
    }

    pub fn param(&self, index: usize) -> f64 {
        let n = self.vocab.len() * self.dim;
        if index < n {
            self.emb.as_slice().unwrap()[index]
        } else if index < 2 * n {
            self.proj.as_slice().unwrap()[index - n]
        } else {
            self.bias[index - 2 * n]
        }
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let n = self.vocab.len() * self.dim;
        if index < n {
            self.emb.as_slice_mut().unwrap()[index] = value;
        } else if index < 2 * n {
            self.proj.as_slice_mut().unwrap()[index - n] = value;
        } else {
            self.bias[index - 2 * n] = value;
        }
    }

    /// Forward one classification example: returns (loss, forward pass,
    /// gradient wrt logits, normalized gold score).
    fn class_forward(
        &self,
        ex: &ClassExample,
        drop_mask: Option<&Array1<f64>>,
    ) -> Result<(f64, ForwardPass, Array1<f64>, f64)> {
        let tokens = self.vocab.encode_text(&ex.prompted);
        let masked: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.vocab.mask_id())
            .map(|(i, _)| i)
            .collect();
        if masked.len() != 1 {
            return Err(Error::BadMaskCount {
                found: masked.len(),
            });
        }
        let fwd = self.forward(&tokens, &masked, drop_mask);
        let p = &fwd.probs;

        // label scores: mean probability over each label's subword ids,
        // renormalized over the label set
        let scores: Vec<f64> = ex
            .label_subwords
            .iter()
            .map(|ids| ids.iter().map(|&i| p[i]).sum::<f64>() / ids.len() as f64)
            .collect();
        let total: f64 = scores.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateScores);
        }
        let q_gold = scores[ex.gold] / total;
        let loss = -q_gold.ln();

        // dL/ds_y = -1[y = gold]/s_gold + 1/total
        // dL/dp_i accumulates over every label whose subword list contains i
        let mut g_p: Array1<f64> = Array1::zeros(p.len());
        for (y, ids) in ex.label_subwords.iter().enumerate() {
            let ds = (if y == ex.gold {
                -1.0 / scores[ex.gold]
            } else {
                0.0
            }) + 1.0 / total;
            let per_id = ds / ids.len() as f64;
            for &i in ids {
                g_p[i] += per_id;
            }
        }
        // softmax jacobian: dL/dz_j = p_j (g_j - sum_i g_i p_i)
        let dot = g_p.iter().zip(p.iter()).map(|(g, pi)| g * pi).sum::<f64>();
        let g_logits =
            Array1::from_iter(p.iter().zip(g_p.iter()).map(|(&pi, &gi)| pi * (gi - dot)));
        Ok((loss, fwd, g_logits, q_gold))
    }

    fn maybe_apply_update(&mut self, config: &TrainConfig) -> bool {
        if self.pending.micros < config.grad_accumulation {
            return false;
        }
        self.apply_pending(config);
        true
    }

    fn apply_pending(&mut self, config: &TrainConfig) {
        let micros = self.pending.micros.max(1) as f64;
        let update_number = self.updates + 1;
        let warmup = (update_number as f64 / config.warmup_steps as f64).min(1.0);
        let scale = config.learning_rate * warmup / micros;
        self.emb.scaled_add(-scale, &self.pending.emb);
        self.proj.scaled_add(-scale, &self.pending.proj);
        self.bias.scaled_add(-scale, &self.pending.bias);
        self.pending = GradAccum::zeros(self.vocab.len(), self.dim);
        self.updates = update_number;
    }
}

struct ForwardPass {
    ctx: Vec<TokenId>,
    h: Array1<f64>,
    probs: Array1<f64>,
}

impl ModelBackend for ReferenceBackend {
    type Snapshot = ReferenceSnapshot;

    fn backend_id(&self) -> String {
        format!(
            "reference-v{SNAPSHOT_VERSION}-d{}-s{}-{}",
            self.dim,
            self.init_seed,
            self.vocab.digest()
        )
    }

    fn mask_token(&self) -> &str {
        MASK_TOKEN
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn tokenize(&self, word: &str) -> Result<Vec<TokenId>> {
        self.vocab.encode_word_strict(word)
    }

    fn mask_distribution(&self, prompted: &str) -> Result<Vec<f64>> {
        let tokens = self.vocab.encode_text(prompted);
        let masked: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, &t)| t == self.vocab.mask_id())
            .map(|(i, _)| i)
            .collect();
        if masked.len() != 1 {
            return Err(Error::BadMaskCount {
                found: masked.len(),
            });
        }
        let fwd = self.forward(&tokens, &masked, None);
        Ok(fwd.probs.to_vec())
    }

    fn begin_phase(&mut self, seed: u64) {
        self.rng = ChaCha20Rng::seed_from_u64(seed);
        self.pending = GradAccum::zeros(self.vocab.len(), self.dim);
        self.updates = 0;
        self.micro_steps = 0;
    }

    fn train_step(&mut self, batch: &[ClassExample], config: &TrainConfig) -> Result<StepReport> {
        debug_assert!(!batch.is_empty());
        self.micro_steps += 1;
        let drop = self.dropout_mask(config.dropout);
        let w = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            let (l, fwd, g_logits, _) = self.class_forward(ex, drop.as_ref())?;
            loss += l * w;
            self.backward(&fwd, &g_logits, drop.as_ref(), w);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.micro_steps,
                dataset: String::new(),
            });
        }
        self.pending.micros += 1;
        let applied = self.maybe_apply_update(config);
        Ok(StepReport {
            loss,
            applied_update: applied,
        })
    }

    fn mlm_step(&mut self, text: &str, config: &TrainConfig) -> Result<StepReport> {
        let tokens = self.vocab.encode_text(text);
        if tokens.is_empty() {
            return Err(Error::EmptyPromptText);
        }
        self.micro_steps += 1;
        // ceil(15% of the subwords), at least one position
        let n_mask = ((tokens.len() as f64) * MLM_MASK_RATE).ceil().max(1.0) as usize;
        let mut positions: Vec<usize> = (0..tokens.len()).collect();
        positions.shuffle(&mut self.rng);
        let mut masked: Vec<usize> = positions.into_iter().take(n_mask).collect();
        masked.sort_unstable();

        let drop = self.dropout_mask(config.dropout);
        let fwd = self.forward(&tokens, &masked, drop.as_ref());
        let m = masked.len() as f64;
        let mut loss = 0.0;
        let mut g_logits = fwd.probs.clone();
        // average cross-entropy over the masked positions; each true token
        // subtracts 1/m from its logit gradient
        for &pos in &masked {
            let truth = tokens[pos];
            loss -= fwd.probs[truth].ln() / m;
            g_logits[truth] -= 1.0 / m;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.micro_steps,
                dataset: String::new(),
            });
        }
        self.backward(&fwd, &g_logits, drop.as_ref(), 1.0);
        self.pending.micros += 1;
        let applied = self.maybe_apply_update(config);
        Ok(StepReport {
            loss,
            applied_update: applied,
        })
    }

    fn flush_pending(&mut self, config: &TrainConfig) -> Result<bool> {
        if self.pending.micros == 0 {
            return Ok(false);
        }
        self.apply_pending(config);
        Ok(true)
    }

    fn effective_updates(&self) -> u64 {
        self.updates
    }

    fn snapshot(&self) -> ReferenceSnapshot {
        ReferenceSnapshot {
            version: SNAPSHOT_VERSION,
            seed: self.init_seed,
            dim: self.dim,
            vocab: self.vocab.clone(),
            emb: self.emb.iter().copied().collect(),
            proj: self.proj.iter().copied().collect(),
            bias: self.bias.to_vec(),
        }
    }

    fn restore(&mut self, snapshot: &ReferenceSnapshot) {
        assert_eq!(
            snapshot.version, SNAPSHOT_VERSION,
            "snapshot version mismatch"
        );
        let v = snapshot.vocab.len();
        self.vocab = snapshot.vocab.clone();
        self.dim = snapshot.dim;
        self.init_seed = snapshot.seed;
        self.emb = Array2::from_shape_vec((v, snapshot.dim), snapshot.emb.clone()).unwrap();
        self.proj = Array2::from_shape_vec((v, snapshot.dim), snapshot.proj.clone()).unwrap();
        self.bias = Array1::from_vec(snapshot.bias.clone());
        self.pending = GradAccum::zeros(v, snapshot.dim);
    }
}

impl ReferenceSnapshot {
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("snapshot serializes");
        let mut h = Sha256::new();
        h.update(&bytes);
        h.finalize()
            .iter()
            .take(16)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(data: &str) -> Result<Self> {
        serde_json::from_str(data).map_err(|e| Error::InvalidConfig {
            message: format!("bad snapshot: {e}"),
        })
    }
}
