//! Simulated Soter-style oblivious fingerprinting.
//!
//! At setup the TEE stores `K` cornerstone pairs `(m_i, F(m_i))`. Each batch
//! sent to the GPU hides a challenge `m′ = Σ α_i m_i` among `B` genuine
//! activations. The TEE checks only the challenge output against
//! `Σ α_i F(m_i)`; genuine outputs are never checked.

use rand::seq::SliceRandom;
use rand::RngCore;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ff::{seeded_rng, FieldModulus, SeededRng};
use crate::linalg::{FieldMatrix, FieldVector, LinalgError};
use crate::victim_tlg::{combine, independent_vectors, SamplingStrategy};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SoterError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("expected {expected} results, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("no batch is awaiting results")]
    NoPendingBatch,
}

/// Distribution of genuine activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ActivationSource {
    Uniform,
    /// Rounded `N(0, std²)` samples mapped into the field.
    GaussianQuantized {
        std: f64,
    },
}

impl ActivationSource {
    pub fn sample<R: RngCore + ?Sized>(
        self,
        modulus: FieldModulus,
        dim: usize,
        rng: &mut R,
    ) -> FieldVector {
        match self {
            ActivationSource::Uniform => FieldVector::random(modulus, dim, rng),
            ActivationSource::GaussianQuantized { std } => {
                let normal = Normal::new(0.0, std).expect("std is finite and positive");
                let vals: Vec<i64> = (0..dim)
                    .map(|_| normal.sample(rng).round() as i64)
                    .collect();
                FieldVector::from_i64(modulus, &vals)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoterConfig {
    pub modulus: FieldModulus,
    pub d: usize,
    pub d_out: usize,
    pub k: usize,
    pub sampling: SamplingStrategy,
    pub batch_size: usize,
    pub fingerprints_per_batch: usize,
    pub activations: ActivationSource,
}

impl SoterConfig {
    pub fn new(d: usize, k: usize, batch_size: usize) -> Self {
        Self {
            modulus: FieldModulus::mersenne31(),
            d,
            d_out: d,
            k,
            sampling: SamplingStrategy::AllK,
            batch_size,
            fingerprints_per_batch: 1,
            activations: ActivationSource::Uniform,
        }
    }

    pub fn validate(&self) -> Result<(), SoterError> {
        let bad = |s: String| Err(SoterError::InvalidConfig(s));
        if self.k == 0 || self.k > self.d {
            return bad(format!("k = {} outside 1..={}", self.k, self.d));
        }
        if self.d_out == 0 {
            return bad("d_out must be positive".into());
        }
        if self.fingerprints_per_batch == 0 {
            return bad("at least one fingerprint per batch".into());
        }
        if let ActivationSource::GaussianQuantized { std } = self.activations {
            if !(std.is_finite() && std > 0.0) {
                return bad(format!("activation std {std} must be positive"));
            }
        }
        self.sampling
            .validate(self.k)
            .map_err(SoterError::InvalidConfig)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cornerstone {
    pub m: FieldVector,
    pub f_of_m: FieldVector,
}

/// TEE-side state, immutable after setup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SoterTeeState {
    pub cornerstones: Vec<Cornerstone>,
    /// The offloaded linear operator `F`, `d × d_out`.
    pub operator_f: FieldMatrix,
    pub k: usize,
    pub sampling: SamplingStrategy,
    pub fingerprints_per_batch: usize,
}

pub fn soter_setup<R: RngCore + ?Sized>(
    config: &SoterConfig,
    rng: &mut R,
) -> Result<SoterTeeState, SoterError> {
    config.validate()?;
    let m = config.modulus;
    let operator_f = FieldMatrix::random(m, config.d, config.d_out, rng);
    let cornerstones = independent_vectors(m, config.k, config.d, rng)
        .into_iter()
        .map(|mi| {
            let f_of_m = operator_f.left_mul(&mi)?;
            Ok(Cornerstone { m: mi, f_of_m })
        })
        .collect::<Result<Vec<_>, SoterError>>()?;
    Ok(SoterTeeState {
        cornerstones,
        operator_f,
        k: config.k,
        sampling: config.sampling,
        fingerprints_per_batch: config.fingerprints_per_batch,
    })
}

impl SoterTeeState {
    pub fn modulus(&self) -> FieldModulus {
        self.operator_f.modulus()
    }

    pub fn d(&self) -> usize {
        self.operator_f.rows()
    }

    pub fn cornerstone_inputs(&self) -> Vec<FieldVector> {
        self.cornerstones.iter().map(|c| c.m.clone()).collect()
    }

    /// `Σ α_i F(m_i)`.
    pub fn expected_output(&self, alpha: &[u64]) -> FieldVector {
        let outs: Vec<_> = self.cornerstones.iter().map(|c| c.f_of_m.clone()).collect();
        combine(self.modulus(), self.operator_f.cols(), alpha, &outs)
    }
}

/// One challenge hidden in a batch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintSlot {
    pub index: usize,
    pub alpha: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FingerprintBatch {
    /// What the GPU sees, in shuffled order.
    pub vectors: Vec<FieldVector>,
    /// TEE-private.
    pub slots: Vec<FingerprintSlot>,
    pub genuine_payload: Vec<FieldVector>,
}

impl FingerprintBatch {
    /// Position of the first challenge.
    pub fn hidden_index(&self) -> usize {
        self.slots[0].index
    }

    pub fn is_fingerprint(&self, i: usize) -> bool {
        self.slots.iter().any(|s| s.index == i)
    }
}

pub fn make_batch<R: RngCore + ?Sized>(
    genuine: Vec<FieldVector>,
    state: &SoterTeeState,
    rng: &mut R,
) -> Result<FingerprintBatch, SoterError> {
    let m = state.modulus();
    let d = state.d();
    for g in &genuine {
        if g.dim() != d {
            return Err(LinalgError::DimensionMismatch {
                expected: d,
                got: g.dim(),
            }
            .into());
        }
    }
    let n_fp = state.fingerprints_per_batch;
    let total = genuine.len() + n_fp;
    let mut positions: Vec<usize> = (0..total).collect();
    positions.shuffle(rng);
    let inputs = state.cornerstone_inputs();
    let mut vectors = vec![FieldVector::zeros(m, d); total];
    let mut slots = Vec::with_capacity(n_fp);
    for &index in &positions[..n_fp] {
        let alpha = state.sampling.sample(m, state.k, rng);
        vectors[index] = combine(m, d, &alpha, &inputs);
        slots.push(FingerprintSlot { index, alpha });
    }
    for (&index, g) in positions[n_fp..].iter().zip(&genuine) {
        vectors[index] = g.clone();
    }
    Ok(FingerprintBatch {
        vectors,
        slots,
        genuine_payload: genuine,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Abort,
}

/// Checks every challenge output exactly. Genuine outputs are ignored.
pub fn verify(
    batch: &FingerprintBatch,
    gpu_results: &[FieldVector],
    state: &SoterTeeState,
) -> Result<Verdict, SoterError> {
    if gpu_results.len() != batch.vectors.len() {
        return Err(SoterError::LengthMismatch {
            expected: batch.vectors.len(),
            got: gpu_results.len(),
        });
    }
    let ok = batch
        .slots
        .iter()
        .all(|s| gpu_results[s.index] == state.expected_output(&s.alpha));
    Ok(if ok { Verdict::Pass } else { Verdict::Abort })
}

/// Honest GPU: applies `F` to every entry.
pub fn honest_results(vectors: &[FieldVector], operator: &FieldMatrix) -> Vec<FieldVector> {
    vectors
        .iter()
        .map(|v| {
            operator
                .left_mul(v)
                .expect("batch entries have operator dimension")
        })
        .collect()
}

/// Counters kept by a [`SoterSession`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SoterCounts {
    pub batches_observed: u64,
    /// Result sets written by the attacker via [`SoterSession::submit`].
    pub submissions: u64,
    pub passes: u64,
    pub aborts: u64,
}

/// A running victim as seen from the GPU. The TEE state is private.
pub struct SoterSession {
    config: SoterConfig,
    state: SoterTeeState,
    rng: SeededRng,
    pending: Option<FingerprintBatch>,
    counts: SoterCounts,
}

impl SoterSession {
    pub fn new<R: RngCore + ?Sized>(
        config: SoterConfig,
        rng: &mut R,
    ) -> Result<(Self, SoterTeeState), SoterError> {
        let state = soter_setup(&config, rng)?;
        let session = Self {
            config,
            state: state.clone(),
            rng: seeded_rng(rng.next_u64()),
            pending: None,
            counts: SoterCounts::default(),
        };
        Ok((session, state))
    }

    pub fn config(&self) -> &SoterConfig {
        &self.config
    }

    /// The GPU holds the operator it is asked to apply.
    pub fn operator(&self) -> &FieldMatrix {
        &self.state.operator_f
    }

    pub fn counts(&self) -> SoterCounts {
        self.counts
    }

    /// Next batch on the wire. A batch left unanswered is completed honestly
    /// by the GPU, which is what passive observation amounts to.
    pub fn observe_batch(&mut self) -> Vec<FieldVector> {
        self.observe_labeled().vectors
    }

    /// Like [`SoterSession::observe_batch`] but returns TEE-private labels.
    /// Harness use only.
    pub fn observe_labeled(&mut self) -> FingerprintBatch {
        let m = self.config.modulus;
        let genuine = (0..self.config.batch_size)
            .map(|_| {
                self.config
                    .activations
                    .sample(m, self.config.d, &mut self.rng)
            })
            .collect();
        let batch = make_batch(genuine, &self.state, &mut self.rng)
            .expect("generated activations have the right dimension");
        self.counts.batches_observed += 1;
        self.pending = Some(batch.clone());
        batch
    }

    /// Returns results for the pending batch and gets the TEE's verdict.
    pub fn submit(&mut self, results: &[FieldVector]) -> Result<Verdict, SoterError> {
        let batch = self.pending.take().ok_or(SoterError::NoPendingBatch)?;
        let verdict = verify(&batch, results, &self.state)?;
        self.counts.submissions += 1;
        match verdict {
            Verdict::Pass => self.counts.passes += 1,
            Verdict::Abort => self.counts.aborts += 1,
        }
        Ok(verdict)
    }
}
