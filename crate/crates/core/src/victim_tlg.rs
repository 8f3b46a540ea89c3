//! Simulated TLG-style confidentiality protocol for a single transformer layer.
//!
//! Weights are locked with secret permutations `π_l`, `ρ_l`, `π_{l+1}` and the
//! FFN down-projection `W₃` is offloaded to an untrusted GPU. Activations are
//! hidden by an additive one-time pad `m` drawn from a *static* noise table:
//! every mask is a linear combination of the same `K` basis vectors, whose
//! effects `n_i W₃` are precomputed so the TEE can cancel `m W₃` cheaply.
//!
//! The attacker-facing surface is [`TlgSession`]: `encrypt`, `decrypt`,
//! `encrypt_next` and the locked weights. Secrets live in [`GroundTruth`],
//! which [`setup`] hands back separately and which attack code never sees.
//!
//! The `π_{l+1}` stage is modelled as a symmetric masked oracle
//! `encrypt_next(h) = (h + m̃) π_{l+1}` with its own static `K`-vector table.
//! The input-stage permutation `π_l` is treated as already known.

use std::collections::HashMap;

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ff::{seeded_rng, FieldModulus, SeededRng};
use crate::linalg::{FieldMatrix, FieldVector, LinalgError, SubspaceBasis};
use crate::permutation::{Permutation, PermutationError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TlgError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Permutation(#[from] PermutationError),
    #[error("unknown query id {0}")]
    UnknownQuery(u64),
    #[error("query id {0} was already decrypted")]
    ReplayedQuery(u64),
    #[error("block weights are not present in this session")]
    NoBlockWeights,
}

/// How mask coefficients are drawn for each query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingStrategy {
    /// All `K` coefficients uniform over `F_p`.
    AllK,
    /// `t` distinct basis indices, each with a uniform nonzero coefficient.
    SubsetT(usize),
}

impl SamplingStrategy {
    pub fn validate(self, k: usize) -> Result<(), String> {
        match self {
            SamplingStrategy::AllK => Ok(()),
            SamplingStrategy::SubsetT(t) if t >= 1 && t <= k => Ok(()),
            SamplingStrategy::SubsetT(t) => Err(format!("subset size {t} outside 1..={k}")),
        }
    }

    /// Coefficient vector of length `k`.
    pub fn sample<R: RngCore + ?Sized>(
        self,
        modulus: FieldModulus,
        k: usize,
        rng: &mut R,
    ) -> Vec<u64> {
        match self {
            SamplingStrategy::AllK => (0..k).map(|_| modulus.sample_raw(rng)).collect(),
            SamplingStrategy::SubsetT(t) => {
                let mut alpha = vec![0; k];
                for i in index::sample(rng, k, t) {
                    alpha[i] = modulus.sample_nonzero_raw(rng);
                }
                alpha
            }
        }
    }
}

/// Linear combination `Σ α_i v_i` over vectors of a common dimension.
pub fn combine(
    modulus: FieldModulus,
    dim: usize,
    alpha: &[u64],
    vectors: &[FieldVector],
) -> FieldVector {
    let mut out = FieldVector::zeros(modulus, dim);
    for (&a, v) in alpha.iter().zip(vectors) {
        out.add_scaled(a, v)
            .expect("table vectors share the output shape");
    }
    out
}

/// Draws `k` linearly independent uniform vectors, redrawing on the rare
/// singular draw.
pub fn independent_vectors<R: RngCore + ?Sized>(
    modulus: FieldModulus,
    k: usize,
    dim: usize,
    rng: &mut R,
) -> Vec<FieldVector> {
    assert!(
        k <= dim,
        "cannot draw {k} independent vectors in dimension {dim}"
    );
    loop {
        let vs: Vec<_> = (0..k)
            .map(|_| FieldVector::random(modulus, dim, rng))
            .collect();
        let span = SubspaceBasis::span(modulus, dim, &vs).expect("shapes agree");
        if span.rank() == k {
            return vs;
        }
    }
}

/// The precomputed noise table held inside the TEE.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseTable {
    pub basis_vectors: Vec<FieldVector>,
    /// `n_i · W` for the weight the masked activation is multiplied by.
    pub effects: Vec<FieldVector>,
    pub k: usize,
    pub sampling: SamplingStrategy,
}

impl NoiseTable {
    pub fn generate<R: RngCore + ?Sized>(
        modulus: FieldModulus,
        k: usize,
        weight: &FieldMatrix,
        sampling: SamplingStrategy,
        rng: &mut R,
    ) -> Result<Self, TlgError> {
        let basis_vectors = independent_vectors(modulus, k, weight.rows(), rng);
        let effects = basis_vectors
            .iter()
            .map(|n| weight.left_mul(n))
            .collect::<Result<Vec<_>, _>>()?;
        let table = Self {
            basis_vectors,
            effects,
            k,
            sampling,
        };
        table.verify(weight)?;
        Ok(table)
    }

    /// A table whose effect operator is the identity.
    pub fn generate_plain<R: RngCore + ?Sized>(
        modulus: FieldModulus,
        k: usize,
        dim: usize,
        sampling: SamplingStrategy,
        rng: &mut R,
    ) -> Self {
        let basis_vectors = independent_vectors(modulus, k, dim, rng);
        Self {
            effects: basis_vectors.clone(),
            basis_vectors,
            k,
            sampling,
        }
    }

    /// Recomputes every effect against `weight`.
    pub fn verify(&self, weight: &FieldMatrix) -> Result<(), TlgError> {
        for (n, e) in self.basis_vectors.iter().zip(&self.effects) {
            if &weight.left_mul(n)? != e {
                return Err(TlgError::InvalidConfig("noise effect mismatch".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.basis_vectors.first().map_or(0, FieldVector::dim)
    }
}

/// How the TEE produces masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    /// Masks are combinations of the static noise table.
    Precomputed,
    /// Every mask is zero. Test hook only.
    Disabled,
    /// A fresh uniform mask per query, with `m W₃` computed on the spot.
    OnTheFly,
}

/// Attention and gate projections of one layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockWeights {
    pub wq: FieldMatrix,
    pub wk: FieldMatrix,
    pub wv: FieldMatrix,
    pub wo: FieldMatrix,
    pub w1: FieldMatrix,
    pub w2: FieldMatrix,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerWeights {
    /// `d_ffn × d_model`.
    pub w3: FieldMatrix,
    /// Omitted at full scale, where only the offloaded FFN path matters.
    pub block: Option<BlockWeights>,
}

impl LayerWeights {
    pub fn random<R: RngCore + ?Sized>(
        modulus: FieldModulus,
        d_ffn: usize,
        d_model: usize,
        with_block: bool,
        rng: &mut R,
    ) -> Self {
        let w3 = FieldMatrix::random(modulus, d_ffn, d_model, rng);
        let block = with_block.then(|| BlockWeights {
            wq: FieldMatrix::random(modulus, d_model, d_model, rng),
            wk: FieldMatrix::random(modulus, d_model, d_model, rng),
            wv: FieldMatrix::random(modulus, d_model, d_model, rng),
            wo: FieldMatrix::random(modulus, d_model, d_model, rng),
            w1: FieldMatrix::random(modulus, d_model, d_ffn, rng),
            w2: FieldMatrix::random(modulus, d_model, d_ffn, rng),
        });
        Self { w3, block }
    }

    /// Plaintext forward of one token: `h = x + V W_o`, gate
    /// `a = (h W₁) ⊙ (h W₂)`, and `x_{l+1} = h + a W₃`.
    ///
    /// With a single token, softmax attention weights are all 1, so the
    /// attention context equals the value vector and `W_q`, `W_k` only enter
    /// through the score, which does not change the output.
    pub fn forward(&self, x: &FieldVector) -> Result<FieldVector, TlgError> {
        let block = self.block.as_ref().ok_or(TlgError::NoBlockWeights)?;
        let h = x.add(&block.wo.left_mul(&block.wv.left_mul(x)?)?)?;
        let a = gate(&block.w1.left_mul(&h)?, &block.w2.left_mul(&h)?);
        Ok(h.add(&self.w3.left_mul(&a)?)?)
    }
}

/// Elementwise product.
pub fn gate(u: &FieldVector, v: &FieldVector) -> FieldVector {
    let m = u.modulus();
    FieldVector::from_raw(
        m,
        u.raw()
            .iter()
            .zip(v.raw())
            .map(|(&a, &b)| m.mul(a, b))
            .collect(),
    )
}

/// Weights as stored on the untrusted side.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockedWeights {
    /// `ρᵀ W₃`.
    pub w3: FieldMatrix,
    /// `πᵀ W_q`, `πᵀ W_k`, `πᵀ W_v`, `W_o π`, `πᵀ W₁`, `πᵀ W₂`.
    pub block: Option<BlockWeights>,
}

impl LockedWeights {
    pub fn lock(
        weights: &LayerWeights,
        pi: &Permutation,
        rho: &Permutation,
    ) -> Result<Self, PermutationError> {
        let block = match &weights.block {
            None => None,
            Some(b) => Some(BlockWeights {
                wq: pi.lock_rows(&b.wq)?,
                wk: pi.lock_rows(&b.wk)?,
                wv: pi.lock_rows(&b.wv)?,
                wo: pi.permute_cols(&b.wo)?,
                w1: pi.lock_rows(&b.w1)?,
                w2: pi.lock_rows(&b.w2)?,
            }),
        };
        Ok(Self {
            w3: rho.lock_rows(&weights.w3)?,
            block,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlgLayerSecrets {
    pub pi: Permutation,
    pub rho: Permutation,
    pub pi_next: Permutation,
    pub weights: LayerWeights,
}

impl TlgLayerSecrets {
    pub fn random<R: RngCore + ?Sized>(
        modulus: FieldModulus,
        d_ffn: usize,
        d_model: usize,
        with_block: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            pi: Permutation::random(d_model, rng),
            rho: Permutation::random(d_ffn, rng),
            pi_next: Permutation::random(d_model, rng),
            weights: LayerWeights::random(modulus, d_ffn, d_model, with_block, rng),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TlgConfig {
    pub modulus: FieldModulus,
    pub d_ffn: usize,
    pub d_model: usize,
    pub k: usize,
    pub sampling: SamplingStrategy,
    pub mask_mode: MaskMode,
    /// Generate attention and gate weights too.
    pub with_block: bool,
}

impl TlgConfig {
    pub fn new(d_ffn: usize, d_model: usize, k: usize) -> Self {
        Self {
            modulus: FieldModulus::mersenne31(),
            d_ffn,
            d_model,
            k,
            sampling: SamplingStrategy::AllK,
            mask_mode: MaskMode::Precomputed,
            with_block: true,
        }
    }

    pub fn validate(&self) -> Result<(), TlgError> {
        let bad = |s: String| Err(TlgError::InvalidConfig(s));
        if self.d_ffn < 2 || self.d_model < 2 {
            return bad(format!(
                "dimensions {}x{} below 2",
                self.d_ffn, self.d_model
            ));
        }
        if self.k == 0 || self.k > self.d_model.min(self.d_ffn) {
            return bad(format!(
                "k = {} outside 1..={}",
                self.k,
                self.d_model.min(self.d_ffn)
            ));
        }
        self.sampling
            .validate(self.k)
            .map_err(TlgError::InvalidConfig)
    }
}

/// Everything the attacker must not see. Used by harness checks only.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub secrets: TlgLayerSecrets,
    pub noise: NoiseTable,
    pub next_noise: NoiseTable,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ground truth is plain data")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QueryId(pub u64);

#[derive(Clone, Debug)]
struct QueryRecord {
    alpha: Vec<u64>,
    /// Only set when masks do not come from the table.
    explicit_mask: Option<FieldVector>,
}

/// Calls made against a session, for query accounting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CallCounts {
    pub encrypt: u64,
    pub decrypt: u64,
    pub encrypt_next: u64,
}

/// One live TEE session. Fields are private; the attacker drives it only
/// through the public protocol methods.
pub struct TlgSession {
    config: TlgConfig,
    truth: GroundTruth,
    locked: LockedWeights,
    rng: SeededRng,
    ledger: HashMap<u64, QueryRecord>,
    next_id: u64,
    calls: CallCounts,
}

/// Draws secrets and tables and opens a session.
pub fn setup<R: RngCore + ?Sized>(
    config: TlgConfig,
    rng: &mut R,
) -> Result<(TlgSession, GroundTruth), TlgError> {
    config.validate()?;
    let secrets = TlgLayerSecrets::random(
        config.modulus,
        config.d_ffn,
        config.d_model,
        config.with_block,
        rng,
    );
    setup_with_secrets(config, secrets, rng)
}

/// Like [`setup`] but with caller-chosen permutations and weights.
pub fn setup_with_secrets<R: RngCore + ?Sized>(
    config: TlgConfig,
    secrets: TlgLayerSecrets,
    rng: &mut R,
) -> Result<(TlgSession, GroundTruth), TlgError> {
    config.validate()?;
    let m = config.modulus;
    if secrets.weights.w3.rows() != config.d_ffn || secrets.weights.w3.cols() != config.d_model {
        return Err(TlgError::InvalidConfig(
            "W3 shape does not match dims".into(),
        ));
    }
    if secrets.rho.len() != config.d_ffn
        || secrets.pi.len() != config.d_model
        || secrets.pi_next.len() != config.d_model
    {
        return Err(TlgError::InvalidConfig(
            "permutation size does not match dims".into(),
        ));
    }
    let noise = NoiseTable::generate(m, config.k, &secrets.weights.w3, config.sampling, rng)?;
    let next_noise = NoiseTable::generate_plain(m, config.k, config.d_model, config.sampling, rng);
    let locked = LockedWeights::lock(&secrets.weights, &secrets.pi, &secrets.rho)?;
    let truth = GroundTruth {
        secrets,
        noise,
        next_noise,
    };
    let session = TlgSession {
        config,
        truth: truth.clone(),
        locked,
        rng: seeded_rng(rng.next_u64()),
        ledger: HashMap::new(),
        next_id: 0,
        calls: CallCounts::default(),
    };
    Ok((session, truth))
}

/// Step run by the untrusted GPU: `x · W`.
pub fn gpu_linear(x: &FieldVector, w_locked: &FieldMatrix) -> Result<FieldVector, TlgError> {
    Ok(w_locked.left_mul(x)?)
}

impl TlgSession {
    pub fn config(&self) -> &TlgConfig {
        &self.config
    }

    pub fn modulus(&self) -> FieldModulus {
        self.config.modulus
    }

    pub fn d_ffn(&self) -> usize {
        self.config.d_ffn
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Locked weights as shipped to the GPU.
    pub fn locked_weights(&self) -> &LockedWeights {
        &self.locked
    }

    pub fn calls(&self) -> CallCounts {
        self.calls
    }

    fn draw_mask(
        &mut self,
        table_is_next: bool,
        dim: usize,
    ) -> (Vec<u64>, FieldVector, Option<FieldVector>) {
        let m = self.config.modulus;
        let table = if table_is_next {
            &self.truth.next_noise
        } else {
            &self.truth.noise
        };
        match self.config.mask_mode {
            MaskMode::Precomputed => {
                let alpha = table.sampling.sample(m, table.k, &mut self.rng);
                let mask = combine(m, dim, &alpha, &table.basis_vectors);
                (alpha, mask, None)
            }
            MaskMode::Disabled => (vec![0; table.k], FieldVector::zeros(m, dim), None),
            MaskMode::OnTheFly => {
                let mask = FieldVector::random(m, dim, &mut self.rng);
                (Vec::new(), mask.clone(), Some(mask))
            }
        }
    }

    /// Masks and permutes an FFN activation: returns `(a′ + m) ρ`.
    pub fn encrypt(&mut self, a_prime: &FieldVector) -> Result<(QueryId, FieldVector), TlgError> {
        let (alpha, mask, explicit_mask) = self.draw_mask(false, self.config.d_ffn);
        let masked = a_prime.add(&mask)?;
        let out = self.truth.secrets.rho.apply(&masked)?;
        let id = self.next_id;
        self.next_id += 1;
        self.calls.encrypt += 1;
        self.ledger.insert(
            id,
            QueryRecord {
                alpha,
                explicit_mask,
            },
        );
        Ok((QueryId(id), out))
    }

    /// Removes `m W₃` from a GPU result and re-locks it with `π_{l+1}`.
    pub fn decrypt(&mut self, b_dd: &FieldVector, id: QueryId) -> Result<FieldVector, TlgError> {
        let Some(record) = self.ledger.get(&id.0) else {
            return Err(if id.0 < self.next_id {
                TlgError::ReplayedQuery(id.0)
            } else {
                TlgError::UnknownQuery(id.0)
            });
        };
        let m = self.config.modulus;
        let effect = match &record.explicit_mask {
            Some(mask) => self.truth.secrets.weights.w3.left_mul(mask)?,
            None => combine(
                m,
                self.config.d_model,
                &record.alpha,
                &self.truth.noise.effects,
            ),
        };
        let b = b_dd.sub(&effect)?;
        self.ledger.remove(&id.0);
        self.calls.decrypt += 1;
        Ok(self.truth.secrets.pi_next.apply(&b)?)
    }

    /// Masked release of a hidden state for the next layer: `(h + m̃) π_{l+1}`.
    pub fn encrypt_next(&mut self, h: &FieldVector) -> Result<FieldVector, TlgError> {
        let (_, mask, _) = self.draw_mask(true, self.config.d_model);
        let masked = h.add(&mask)?;
        self.calls.encrypt_next += 1;
        Ok(self.truth.secrets.pi_next.apply(&masked)?)
    }

    /// Full locked layer on `x π_l`, returning `x_{l+1} π_{l+1}`.
    ///
    /// Projections use the locked weights; the gate and residual run inside
    /// the TEE; the `W₃` product goes through encrypt, GPU, decrypt.
    pub fn locked_forward(&mut self, x_locked: &FieldVector) -> Result<FieldVector, TlgError> {
        let block = self.locked.block.clone().ok_or(TlgError::NoBlockWeights)?;
        let v = block.wv.left_mul(x_locked)?;
        let h_locked = x_locked.add(&block.wo.left_mul(&v)?)?;
        let a = gate(
            &block.w1.left_mul(&h_locked)?,
            &block.w2.left_mul(&h_locked)?,
        );
        let (id, a_dd) = self.encrypt(&a)?;
        let b_dd = gpu_linear(&a_dd, &self.locked.w3)?;
        let b_next = self.decrypt(&b_dd, id)?;
        let s = &self.truth.secrets;
        let residual = s.pi.inverse().then(&s.pi_next).apply(&h_locked)?;
        Ok(residual.add(&b_next)?)
    }

    /// Number of masks issued but not yet consumed.
    pub fn outstanding(&self) -> usize {
        self.ledger.len()
    }
}
