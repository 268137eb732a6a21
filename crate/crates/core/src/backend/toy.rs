//! Prompt-bag linear model: `logit(v | ctx) = b[v] + Σ_{t ∈ ctx} M[t][v]`.
//!
//! The cache for a context is its running logit vector. Appending token `t`
//! adds row `M[t]`; opening a context sums rows in the same left-to-right
//! order, so incremental and from-scratch evaluation agree bit for bit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    fresh_id, BackendError, ContextHandle, LedgerCell, LogProbVector, LogitBackend, PassLedger,
    TokenId, Vocabulary,
};

/// On-disk form: `{"tokens": [...], "bias": [...], "influence": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModelSpec {
    pub tokens: Vec<String>,
    pub bias: Vec<f64>,
    /// Row = context token, column = next token.
    pub influence: Vec<Vec<f64>>,
}

impl ToyModelSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BackendError::Spec(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Spec(e.to_string()))
    }

    /// Random instance: bias and influence drawn uniformly from `[-scale, scale]`.
    pub fn random(tokens: Vec<String>, seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tokens.len();
        let bias = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        let influence = (0..n)
            .map(|_| (0..n).map(|_| rng.random_range(-scale..=scale)).collect())
            .collect();
        Self {
            tokens,
            bias,
            influence,
        }
    }
}

pub struct ToyModel {
    owner: u64,
    vocab: Vocabulary,
    bias: Vec<f64>,
    influence: Vec<f64>,
    ledger: LedgerCell,
}

struct ToyCache(Vec<f64>);

impl ToyModel {
    pub fn new(spec: ToyModelSpec) -> Result<Self, BackendError> {
        let vocab = Vocabulary::new(spec.tokens)?;
        let n = vocab.len();
        if spec.bias.len() != n {
            return Err(BackendError::Spec(format!(
                "bias has {} entries, vocabulary has {n}",
                spec.bias.len()
            )));
        }
        if spec.influence.len() != n || spec.influence.iter().any(|r| r.len() != n) {
            return Err(BackendError::Spec(format!("influence must be {n}x{n}")));
        }
        let influence: Vec<f64> = spec.influence.into_iter().flatten().collect();
        if spec.bias.iter().chain(&influence).any(|v| !v.is_finite()) {
            return Err(BackendError::Spec("non-finite entry".into()));
        }
        Ok(Self {
            owner: fresh_id(),
            vocab,
            bias: spec.bias,
            influence,
            ledger: LedgerCell::default(),
        })
    }

    pub fn spec(&self) -> ToyModelSpec {
        let n = self.vocab.len();
        ToyModelSpec {
            tokens: self.vocab.tokens().to_vec(),
            bias: self.bias.clone(),
            influence: self.influence.chunks(n).map(<[f64]>::to_vec).collect(),
        }
    }

    fn row(&self, t: TokenId) -> &[f64] {
        let n = self.vocab.len();
        &self.influence[t as usize * n..(t as usize + 1) * n]
    }

    fn accumulate(&self, acc: &mut [f64], t: TokenId) {
        for (a, m) in acc.iter_mut().zip(self.row(t)) {
            *a += m;
        }
    }

    /// Raw logits for a context, recomputed from scratch with no caching or
    /// accounting.
    pub fn logits(&self, token_ids: &[TokenId]) -> Result<Vec<f64>, BackendError> {
        self.vocab.check_ids(token_ids)?;
        let mut acc = self.bias.clone();
        for &t in token_ids {
            self.accumulate(&mut acc, t);
        }
        Ok(acc)
    }
}

impl LogitBackend for ToyModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn open_context(&self, token_ids: &[TokenId]) -> Result<ContextHandle, BackendError> {
        if token_ids.is_empty() {
            return Err(BackendError::EmptyContext);
        }
        let acc = self.logits(token_ids)?;
        let handle = ContextHandle::new(self.owner, token_ids.to_vec(), Box::new(ToyCache(acc)));
        self.ledger.record_open(handle.id());
        Ok(handle)
    }

    fn next_logprobs_batch(
        &self,
        handles: &[&ContextHandle],
    ) -> Result<Vec<LogProbVector>, BackendError> {
        let out = handles
            .iter()
            .map(|h| {
                h.cache::<ToyCache>(self.owner)
                    .map(|c| LogProbVector::from_logits(&c.0))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.ledger.record_forward(handles.iter().map(|h| &h.id));
        Ok(out)
    }

    fn append_token(
        &self,
        handles: &mut [&mut ContextHandle],
        token: TokenId,
    ) -> Result<(), BackendError> {
        self.vocab.check_ids(&[token])?;
        if let Some(h) = handles.iter().find(|h| h.owner() != self.owner) {
            return Err(BackendError::ForeignHandle(h.id()));
        }
        for h in handles.iter_mut() {
            h.advance::<ToyCache>(self.owner, token, |c| self.accumulate(&mut c.0, token))?;
        }
        Ok(())
    }

    fn ledger(&self) -> PassLedger {
        self.ledger.snapshot()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_token(influence_a: [f64; 2]) -> ToyModel {
        ToyModel::new(ToyModelSpec {
            tokens: vec!["A".into(), "B".into()],
            bias: vec![0.0, 0.0],
            influence: vec![influence_a.to_vec(), vec![0.0, 0.0]],
        })
        .unwrap()
    }

    #[test]
    fn hand_computed_softmax() {
        // log-softmax([1, -1]) = [1 - ln(e + 1/e), -1 - ln(e + 1/e)]
        let m = two_token([1.0, -1.0]);
        let h = m.open_context(&[0]).unwrap();
        let lp = m.next_logprobs_batch(&[&h]).unwrap();
        let lse = (1f64.exp() + (-1f64).exp()).ln();
        assert!((lp[0].values()[0] - (1.0 - lse)).abs() < 1e-12);
        assert!((lp[0].values()[0] - (-0.1269)).abs() < 1e-4);
        assert!((lp[0].values()[1] - (-2.1269)).abs() < 1e-4);
    }

    #[test]
    fn open_rejects_empty_and_unknown() {
        let m = two_token([0.0, 0.0]);
        assert!(matches!(m.open_context(&[]), Err(BackendError::EmptyContext)));
        assert!(matches!(
            m.open_context(&[0, 5]),
            Err(BackendError::UnknownToken { position: 1, .. })
        ));
    }

    #[test]
    fn open_records_token_ids() {
        let m = ToyModel::new(ToyModelSpec::random(
            (0..6).map(|i| format!("t{i}")).collect(),
            1,
            1.0,
        ))
        .unwrap();
        let h = m.open_context(&[3, 1, 4]).unwrap();
        assert_eq!(h.token_ids(), &[3, 1, 4]);
        assert_eq!(m.ledger().opening_passes, 1);
    }

    #[test]
    fn identical_opens_give_distinct_handles_and_equal_outputs() {
        let m = two_token([1.0, -1.0]);
        let a = m.open_context(&[0, 1]).unwrap();
        let b = m.open_context(&[0, 1]).unwrap();
        assert_ne!(a.id(), b.id());
        let out = m.next_logprobs_batch(&[&a, &b]).unwrap();
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn zero_influence_is_context_free() {
        let m = ToyModel::new(ToyModelSpec {
            tokens: vec!["A".into(), "B".into(), "C".into()],
            bias: vec![0.3, -0.2, 1.0],
            influence: vec![vec![0.0; 3]; 3],
        })
        .unwrap();
        let a = m.open_context(&[0]).unwrap();
        let b = m.open_context(&[2, 1, 1]).unwrap();
        let out = m.next_logprobs_batch(&[&a, &b]).unwrap();
        assert_eq!(out[0], out[1]);
        assert_eq!(out[0], LogProbVector::from_logits(&[0.3, -0.2, 1.0]));
    }

    #[test]
    fn batch_counts_one_pass_per_handle() {
        let m = two_token([0.0, 0.0]);
        let hs: Vec<_> = (0..4).map(|_| m.open_context(&[0]).unwrap()).collect();
        let refs: Vec<_> = hs.iter().collect();
        let before = m.ledger().forward_passes;
        m.next_logprobs_batch(&refs).unwrap();
        assert_eq!(m.ledger().forward_passes - before, 4);
    }

    #[test]
    fn appending_to_nothing_is_a_no_op() {
        let m = two_token([0.0, 0.0]);
        let before = m.ledger();
        m.append_token(&mut [], 1).unwrap();
        assert_eq!(m.ledger(), before);
    }

    #[test]
    fn append_preserves_order_on_all_handles() {
        let m = two_token([0.5, 0.0]);
        let mut a = m.open_context(&[0]).unwrap();
        let mut b = m.open_context(&[1, 1]).unwrap();
        m.append_token(&mut [&mut a, &mut b], 1).unwrap();
        m.append_token(&mut [&mut a, &mut b], 0).unwrap();
        assert!(a.token_ids().ends_with(&[1, 0]));
        assert!(b.token_ids().ends_with(&[1, 0]));
    }

    #[test]
    fn foreign_handles_are_rejected() {
        let m1 = two_token([0.0, 0.0]);
        let m2 = two_token([0.0, 0.0]);
        let mut h = m1.open_context(&[0]).unwrap();
        assert!(matches!(
            m2.next_logprobs_batch(&[&h]),
            Err(BackendError::ForeignHandle(_))
        ));
        assert!(m2.append_token(&mut [&mut h], 0).is_err());
    }

    #[test]
    fn spec_round_trips() {
        let spec = ToyModelSpec::random(vec!["x".into(), "y".into(), "z".into()], 9, 2.0);
        let m = ToyModel::new(spec.clone()).unwrap();
        assert_eq!(m.spec(), spec);
        let json = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ToyModelSpec>(&json).unwrap(), spec);
    }
}
