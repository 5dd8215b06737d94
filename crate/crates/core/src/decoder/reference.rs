use crate::error::{Error, Result};
use crate::kernels::DEFAULT_RMSNORM_EPS;
use crate::oracle::{oracle_argmax, oracle_gate_up_silu, oracle_linear, oracle_rmsnorm, top2_gap};
use crate::tensor::HostTensor;

use super::ModelWeights;

fn add(a: &HostTensor, b: &HostTensor) -> HostTensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    HostTensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// CPU forward pass with the same operator sequence as the GPU pipeline.
/// Every op accumulates in `f64` and stores `f32`.
pub struct ReferenceDecoder<'w> {
    weights: &'w ModelWeights,
    k_cache: Vec<Vec<f32>>,
    v_cache: Vec<Vec<f32>>,
}

impl<'w> ReferenceDecoder<'w> {
    pub fn new(weights: &'w ModelWeights) -> Self {
        let cfg = &weights.config;
        let slots = cfg.kv_capacity * cfg.kv_dim;
        Self {
            weights,
            k_cache: vec![vec![0.0; slots]; cfg.layers],
            v_cache: vec![vec![0.0; slots]; cfg.layers],
        }
    }

    /// Logits `[1, vocab]` for `token` at position `pos`.
    pub fn forward(&mut self, token: u32, pos: usize) -> Result<HostTensor> {
        let w = self.weights;
        let cfg = &w.config;
        let (h, kv) = (cfg.hidden, cfg.kv_dim);
        if token as usize >= cfg.vocab {
            return Err(Error::InvalidConfig(format!(
                "token {token} outside vocab {}",
                cfg.vocab
            )));
        }
        let slot = pos % cfg.kv_capacity;
        let attn_len = (pos + 1).min(cfg.kv_capacity);
        let eps = DEFAULT_RMSNORM_EPS;

        let mut x = HostTensor::matrix(1, h, w.embedding.row(token as usize).to_vec())?;
        for (l, lw) in w.layers.iter().enumerate() {
            let n = oracle_rmsnorm(&x, &lw.attn_norm, eps)?;
            let q = oracle_linear(&n, &lw.wq)?;
            let k = oracle_linear(&n, &lw.wk)?;
            let v = oracle_linear(&n, &lw.wv)?;
            self.k_cache[l][slot * kv..(slot + 1) * kv].copy_from_slice(k.data());
            self.v_cache[l][slot * kv..(slot + 1) * kv].copy_from_slice(v.data());
            let attn: Vec<f32> = (0..h)
                .map(|i| {
                    let c = i % kv;
                    let qi = q.data()[i] as f64;
                    let acc: f64 = (0..attn_len)
                        .map(|p| {
                            let kk = self.k_cache[l][p * kv + c] as f64;
                            let vv = self.v_cache[l][p * kv + c] as f64;
                            vv / (1.0 + (-qi * kk).exp())
                        })
                        .sum();
                    (acc / attn_len.max(1) as f64) as f32
                })
                .collect();
            let o = oracle_linear(&HostTensor::matrix(1, h, attn)?, &lw.wo)?;
            let mid = add(&x, &o);
            let n2 = oracle_rmsnorm(&mid, &lw.mlp_norm, eps)?;
            let act = oracle_gate_up_silu(&n2, &lw.gate, &lw.up)?;
            let d = oracle_linear(&act, &lw.down)?;
            x = add(&mid, &d);
        }
        let nf = oracle_rmsnorm(&x, &w.final_norm, eps)?;
        oracle_linear(&nf, &w.embedding)
    }

    /// Greedy decode: the prompt is prefilled token by token, then
    /// `n_tokens` tokens are generated. Also returns the smallest top-2 logit
    /// gap seen at any generated position.
    pub fn generate(&mut self, prompt: &[u32], n_tokens: usize) -> Result<(Vec<u32>, f32)> {
        if prompt.is_empty() || n_tokens == 0 {
            return Err(Error::InvalidConfig("prompt and n_tokens must be non-empty".into()));
        }
        let mut logits = HostTensor::zeros(vec![1]);
        for (pos, t) in prompt.iter().enumerate() {
            logits = self.forward(*t, pos)?;
        }
        let mut tokens = Vec::with_capacity(n_tokens);
        let mut min_gap = f32::INFINITY;
        let mut pos = prompt.len();
        loop {
            min_gap = min_gap.min(top2_gap(logits.data()).unwrap_or(f32::INFINITY));
            let next = oracle_argmax(logits.data())? as u32;
            tokens.push(next);
            if tokens.len() == n_tokens {
                break;
            }
            logits = self.forward(next, pos)?;
            pos += 1;
        }
        Ok((tokens, min_gap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::{seeded_prompt, ModelConfig};

    #[test]
    fn deterministic_generation() {
        let w = ModelWeights::generate(&ModelConfig::tiny(42)).unwrap();
        let prompt = seeded_prompt(42, 256);
        let (a, gap_a) = ReferenceDecoder::new(&w).generate(&prompt, 8).unwrap();
        let (b, gap_b) = ReferenceDecoder::new(&w).generate(&prompt, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(gap_a, gap_b);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn zero_layer_model_scores_embedding_similarity() {
        let mut cfg = ModelConfig::tiny(3);
        cfg.layers = 0;
        let w = ModelWeights::generate(&cfg).unwrap();
        let logits = ReferenceDecoder::new(&w).forward(5, 0).unwrap();
        assert_eq!(logits.shape(), &[1, 256]);
        let nf = oracle_rmsnorm(
            &HostTensor::matrix(1, 64, w.embedding.row(5).to_vec()).unwrap(),
            &w.final_norm,
            DEFAULT_RMSNORM_EPS,
        )
        .unwrap();
        let expect: f64 = nf
            .data()
            .iter()
            .zip(w.embedding.row(9))
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum();
        assert!((logits.data()[9] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn rejects_out_of_vocab() {
        let w = ModelWeights::generate(&ModelConfig::tiny(1)).unwrap();
        assert!(ReferenceDecoder::new(&w).forward(256, 0).is_err());
    }
}
