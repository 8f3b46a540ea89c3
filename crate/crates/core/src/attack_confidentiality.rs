//! Subspace characterization attack on a static-noise-basis TLG victim.
//!
//! Stage 1 queries the masked oracle with zero vectors. Each answer is a
//! permuted mask `m ρ`, and all of them lie in one `K`-dimensional subspace,
//! so `K + δ` answers span it. Stage 2 queries each canonical vector `e_j`.
//! The answer `e_{ρ(j)} + m ρ` reduces modulo the learned subspace to the
//! residual of `e_{ρ(j)}` alone, which identifies `ρ(j)`.
//!
//! The same two stages against the `π_{l+1}` oracle recover `π_{l+1}`.

use std::collections::HashMap;
use std::fmt;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::Serialize;
use thiserror::Error;

use crate::ff::{seeded_rng, FieldModulus};
use crate::linalg::{FieldMatrix, FieldVector, LinalgError, SubspaceBasis};
use crate::permutation::{Permutation, PermutationError};
use crate::victim_tlg::{
    BlockWeights, GroundTruth, LayerWeights, LockedWeights, TlgError, TlgSession,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AttackError {
    #[error("rank did not stabilize: rank {rank} after {queries} queries")]
    Inconclusive { queries: usize, rank: usize },
    #[error("noise subspace has rank {rank}, expected {expected}")]
    RankMismatch { rank: usize, expected: usize },
    #[error("{} outputs matched no canonical residual", unmatched.len())]
    ProtocolMismatch { unmatched: Vec<usize> },
    #[error("permutation is ambiguous at indices {0:?}")]
    Ambiguous(Vec<usize>),
    #[error(transparent)]
    Victim(#[from] TlgError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Permutation(#[from] PermutationError),
}

/// A masked, permuting oracle `x ↦ (x + m) σ`.
pub trait MaskedOracle {
    fn input_dim(&self) -> usize;
    fn modulus(&self) -> FieldModulus;
    fn query(&mut self, x: &FieldVector) -> Result<FieldVector, AttackError>;
}

/// The `ρ` stage: TEE encrypt.
pub struct EncryptOracle<'a>(pub &'a mut TlgSession);

impl MaskedOracle for EncryptOracle<'_> {
    fn input_dim(&self) -> usize {
        self.0.d_ffn()
    }
    fn modulus(&self) -> FieldModulus {
        self.0.modulus()
    }
    fn query(&mut self, x: &FieldVector) -> Result<FieldVector, AttackError> {
        Ok(self.0.encrypt(x)?.1)
    }
}

/// The `π_{l+1}` stage.
pub struct NextStageOracle<'a>(pub &'a mut TlgSession);

impl MaskedOracle for NextStageOracle<'_> {
    fn input_dim(&self) -> usize {
        self.0.d_model()
    }
    fn modulus(&self) -> FieldModulus {
        self.0.modulus()
    }
    fn query(&mut self, x: &FieldVector) -> Result<FieldVector, AttackError> {
        Ok(self.0.encrypt_next(x)?)
    }
}

fn zero_query<O: MaskedOracle + ?Sized>(oracle: &mut O) -> Result<FieldVector, AttackError> {
    let z = FieldVector::zeros(oracle.modulus(), oracle.input_dim());
    oracle.query(&z)
}

/// Result of [`discover_k`].
#[derive(Clone, Debug)]
pub struct KDiscovery {
    pub k: usize,
    pub queries: usize,
    /// Rank after each query.
    pub trace: Vec<usize>,
    pub basis: SubspaceBasis,
}

/// Grows a span from zero-vector queries until its rank has not changed for
/// `window` consecutive queries.
///
/// Reaching the ambient dimension is reported as inconclusive: a full-rank
/// span is what fresh per-query noise looks like.
pub fn discover_k<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    window: usize,
    max_queries: usize,
) -> Result<KDiscovery, AttackError> {
    assert!(window >= 1, "stability window must be positive");
    let d = oracle.input_dim();
    let mut basis = SubspaceBasis::empty(oracle.modulus(), d);
    let mut trace = Vec::new();
    let mut stable = 0;
    while trace.len() < max_queries {
        let grew = basis.insert(&zero_query(oracle)?)?;
        trace.push(basis.rank());
        if basis.rank() == d {
            break;
        }
        stable = if grew { 0 } else { stable + 1 };
        if stable >= window {
            return Ok(KDiscovery {
                k: basis.rank(),
                queries: trace.len(),
                trace,
                basis,
            });
        }
    }
    Err(AttackError::Inconclusive {
        queries: trace.len(),
        rank: basis.rank(),
    })
}

/// Span of observed permuted-noise samples.
#[derive(Clone, Debug)]
pub struct NoiseSubspaceProfile {
    pub basis: SubspaceBasis,
    pub k_observed: usize,
    pub queries_used: usize,
    pub delta: usize,
}

/// Adds `count` zero-query samples to `basis`.
pub fn observe_noise<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    basis: &mut SubspaceBasis,
    count: usize,
) -> Result<(), AttackError> {
    for _ in 0..count {
        basis.insert(&zero_query(oracle)?)?;
    }
    Ok(())
}

/// Fixed budget of zero queries, with no rank check.
pub fn observe_noise_subspace<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    budget: usize,
) -> Result<NoiseSubspaceProfile, AttackError> {
    let mut basis = SubspaceBasis::empty(oracle.modulus(), oracle.input_dim());
    observe_noise(oracle, &mut basis, budget)?;
    Ok(NoiseSubspaceProfile {
        k_observed: basis.rank(),
        basis,
        queries_used: budget,
        delta: 0,
    })
}

/// `K + δ` zero queries; fails unless the span has rank exactly `k`.
pub fn learn_noise_subspace<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    k: usize,
    delta: usize,
) -> Result<NoiseSubspaceProfile, AttackError> {
    let mut profile = observe_noise_subspace(oracle, k + delta)?;
    profile.delta = delta;
    check_rank(&profile.basis, k)?;
    Ok(profile)
}

fn check_rank(basis: &SubspaceBasis, k: usize) -> Result<(), AttackError> {
    if basis.rank() == k {
        Ok(())
    } else {
        Err(AttackError::RankMismatch {
            rank: basis.rank(),
            expected: k,
        })
    }
}

/// Queries until the span reaches rank `k`, up to `max_queries`.
/// `delta` in the profile is the number of queries beyond `k`.
pub fn learn_noise_subspace_adaptive<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    k: usize,
    max_queries: usize,
) -> Result<NoiseSubspaceProfile, AttackError> {
    let mut basis = SubspaceBasis::empty(oracle.modulus(), oracle.input_dim());
    let mut used = 0;
    while basis.rank() < k && used < max_queries {
        basis.insert(&zero_query(oracle)?)?;
        used += 1;
    }
    check_rank(&basis, k)?;
    Ok(NoiseSubspaceProfile {
        k_observed: k,
        basis,
        queries_used: used,
        delta: used - k,
    })
}

/// `K + δ` queries, then single extra queries until rank `k` is reached or
/// `max_delta` is exhausted.
pub fn learn_noise_subspace_escalating<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    k: usize,
    delta: usize,
    max_delta: usize,
) -> Result<NoiseSubspaceProfile, AttackError> {
    let mut basis = SubspaceBasis::empty(oracle.modulus(), oracle.input_dim());
    observe_noise(oracle, &mut basis, k + delta)?;
    let mut used = k + delta;
    while basis.rank() < k && used < k + max_delta {
        observe_noise(oracle, &mut basis, 1)?;
        used += 1;
    }
    check_rank(&basis, k)?;
    Ok(NoiseSubspaceProfile {
        k_observed: k,
        basis,
        queries_used: used,
        delta: used - k,
    })
}

/// Residuals of all canonical vectors modulo a basis, stored implicitly.
///
/// `residual(e_j)` is `e_j` when `j` is not a pivot column and
/// `e_j - row_i` when `j` is the pivot of row `i`. Lookups go through two
/// random linear hashes and are confirmed by exact comparison, so memory is
/// `O(d)` beyond the basis itself.
pub struct ResidualTable<'a> {
    basis: &'a SubspaceBasis,
    pivot_row: Vec<Option<usize>>,
    hash_vectors: [Vec<u64>; 2],
    buckets: HashMap<(u64, u64), Vec<usize>>,
}

impl<'a> ResidualTable<'a> {
    pub fn new<R: RngCore + ?Sized>(basis: &'a SubspaceBasis, rng: &mut R) -> Self {
        let m = basis.modulus();
        let d = basis.ambient_dim();
        let mut pivot_row = vec![None; d];
        for (i, &p) in basis.pivots().iter().enumerate() {
            pivot_row[p] = Some(i);
        }
        let hash_vectors = [0, 1].map(|_| (0..d).map(|_| m.sample_raw(rng)).collect::<Vec<_>>());
        let row_hash: Vec<[u64; 2]> = basis
            .raw_rows()
            .iter()
            .map(|row| [0, 1].map(|h| dot(m, row, &hash_vectors[h])))
            .collect();
        let mut buckets: HashMap<(u64, u64), Vec<usize>> = HashMap::with_capacity(d);
        for (j, pr) in pivot_row.iter().enumerate() {
            let mut h = [hash_vectors[0][j], hash_vectors[1][j]];
            if let Some(i) = *pr {
                h = [m.sub(h[0], row_hash[i][0]), m.sub(h[1], row_hash[i][1])];
            }
            buckets.entry((h[0], h[1])).or_default().push(j);
        }
        Self {
            basis,
            pivot_row,
            hash_vectors,
            buckets,
        }
    }

    pub fn residual_of_unit(&self, j: usize) -> FieldVector {
        let m = self.basis.modulus();
        let d = self.basis.ambient_dim();
        let mut v = vec![0u64; d];
        if let Some(i) = self.pivot_row[j] {
            for (x, &r) in v.iter_mut().zip(&self.basis.raw_rows()[i]) {
                *x = m.neg(r);
            }
        }
        v[j] = m.add(v[j], 1);
        FieldVector::from_raw(m, v)
    }

    fn hash(&self, v: &[u64]) -> (u64, u64) {
        let m = self.basis.modulus();
        (
            dot(m, v, &self.hash_vectors[0]),
            dot(m, v, &self.hash_vectors[1]),
        )
    }

    /// Canonical indices whose residual equals `residual` exactly.
    pub fn lookup(&self, residual: &FieldVector) -> Vec<usize> {
        self.buckets
            .get(&self.hash(residual.raw()))
            .map(|cands| {
                cands
                    .iter()
                    .copied()
                    .filter(|&j| &self.residual_of_unit(j) == residual)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Groups of canonical indices with identical residuals.
    pub fn collisions(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for cands in self.buckets.values().filter(|c| c.len() > 1) {
            let mut seen = vec![false; cands.len()];
            for a in 0..cands.len() {
                if seen[a] {
                    continue;
                }
                let ra = self.residual_of_unit(cands[a]);
                let group: Vec<usize> = (a..cands.len())
                    .filter(|&b| b == a || self.residual_of_unit(cands[b]) == ra)
                    .collect();
                if group.len() > 1 {
                    for &b in &group {
                        seen[b] = true;
                    }
                    out.push(group.into_iter().map(|b| cands[b]).collect());
                }
            }
        }
        out
    }
}

fn dot(m: FieldModulus, a: &[u64], b: &[u64]) -> u64 {
    a.iter()
        .zip(b)
        .fold(0, |acc, (&x, &y)| m.add(acc, m.mul(x, y)))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum Confidence {
    Exact,
    Ambiguous(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecoveredPermutation {
    /// `mapping[j]` is the recovered image of `j`.
    pub mapping: Vec<usize>,
    pub confidence: Confidence,
    pub queries_used: usize,
}

impl RecoveredPermutation {
    pub fn permutation(&self) -> Result<Permutation, AttackError> {
        match &self.confidence {
            Confidence::Exact => Ok(Permutation::from_map(self.mapping.clone())?),
            Confidence::Ambiguous(idx) => Err(AttackError::Ambiguous(idx.clone())),
        }
    }
}

/// Queries every `e_j` once and matches its reduced answer against the
/// canonical residuals.
pub fn recover_permutation<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    profile: &NoiseSubspaceProfile,
) -> Result<RecoveredPermutation, AttackError> {
    let m = oracle.modulus();
    let d = oracle.input_dim();
    let basis = &profile.basis;
    let mut hash_rng = seeded_rng(d as u64 ^ 0x9e37_79b9);
    let table = ResidualTable::new(basis, &mut hash_rng);

    let mut mapping = vec![usize::MAX; d];
    let mut ambiguous = Vec::new();
    let mut unmatched = Vec::new();
    for (j, slot) in mapping.iter_mut().enumerate() {
        let y = oracle.query(&FieldVector::unit(m, d, j))?;
        let r = basis.residual(&y)?;
        match table.lookup(&r).as_slice() {
            [] => unmatched.push(j),
            [c] => *slot = *c,
            many => {
                *slot = many[0];
                ambiguous.push(j);
            }
        }
    }
    if !unmatched.is_empty() {
        return Err(AttackError::ProtocolMismatch { unmatched });
    }
    let mut hits = vec![0usize; d];
    for &c in &mapping {
        hits[c] += 1;
    }
    for (j, &c) in mapping.iter().enumerate() {
        if hits[c] > 1 && !ambiguous.contains(&j) {
            ambiguous.push(j);
        }
    }
    ambiguous.sort_unstable();
    let confidence = if ambiguous.is_empty() {
        Confidence::Exact
    } else {
        Confidence::Ambiguous(ambiguous)
    };
    Ok(RecoveredPermutation {
        mapping,
        confidence,
        queries_used: d,
    })
}

/// Undoes `W₃′ = ρᵀ W₃` given the recovered `ρ`.
pub fn recover_weights(
    rho_hat: &RecoveredPermutation,
    locked_w3: &FieldMatrix,
) -> Result<FieldMatrix, AttackError> {
    Ok(rho_hat.permutation()?.unlock_rows(locked_w3)?)
}

/// Rebuilds plaintext weights from locked ones. `π_l` is taken as known.
pub fn unlock_layer(
    locked: &LockedWeights,
    pi: &Permutation,
    rho: &Permutation,
) -> Result<LayerWeights, AttackError> {
    let block = match &locked.block {
        None => None,
        Some(b) => Some(BlockWeights {
            wq: pi.unlock_rows(&b.wq)?,
            wk: pi.unlock_rows(&b.wk)?,
            wv: pi.unlock_rows(&b.wv)?,
            wo: pi.inverse().permute_cols(&b.wo)?,
            w1: pi.unlock_rows(&b.w1)?,
            w2: pi.unlock_rows(&b.w2)?,
        }),
    };
    Ok(LayerWeights {
        w3: rho.unlock_rows(&locked.w3)?,
        block,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Target {
    Rho,
    PiNext,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Rho => "rho",
            Target::PiNext => "pi_next",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Stage {
    Discovery,
    Stage1,
    Stage2,
    Weights,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{target} {stage:?}: {error}")]
pub struct StageError {
    pub target: Target,
    pub stage: Stage,
    pub error: AttackError,
}

#[derive(Clone, Copy, Debug)]
pub struct AttackOptions {
    /// `None` runs K discovery first.
    pub k_known: Option<usize>,
    pub delta: usize,
    pub window: usize,
    pub max_queries: usize,
    /// Forces exactly this many stage-1 queries, with no rank check.
    pub stage1_budget: Option<usize>,
}

impl Default for AttackOptions {
    fn default() -> Self {
        Self {
            k_known: None,
            delta: 2,
            window: 20,
            max_queries: 4096,
            stage1_budget: None,
        }
    }
}

/// Per-target query counts and timings.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TargetReport {
    pub dim: usize,
    pub k_discovered: usize,
    pub delta_used: usize,
    /// Discovery queries beyond those credited to stage 1.
    pub discovery_queries: usize,
    pub stage1_queries: usize,
    pub stage2_queries: usize,
    pub discovery_time: Duration,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
}

impl TargetReport {
    pub fn attack_queries(&self) -> usize {
        self.stage1_queries + self.stage2_queries
    }

    pub fn attack_time(&self) -> Duration {
        self.stage1_time + self.stage2_time
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecoveredSecrets {
    pub rho: Permutation,
    pub w3: FieldMatrix,
    pub pi_next: Permutation,
}

impl RecoveredSecrets {
    /// Bit-exact comparison with the victim's secrets.
    pub fn matches(&self, truth: &GroundTruth) -> bool {
        self.rho == truth.secrets.rho
            && self.pi_next == truth.secrets.pi_next
            && self.w3 == truth.secrets.weights.w3
    }
}

#[derive(Clone, Debug)]
pub struct AttackReport {
    pub rho: TargetReport,
    pub pi_next: TargetReport,
    pub recovered: Option<RecoveredSecrets>,
    pub failure: Option<StageError>,
}

impl AttackReport {
    pub fn success(&self, truth: &GroundTruth) -> bool {
        self.recovered.as_ref().is_some_and(|r| r.matches(truth))
    }

    pub fn total_time(&self) -> Duration {
        [&self.rho, &self.pi_next]
            .iter()
            .map(|t| t.discovery_time + t.attack_time())
            .sum()
    }
}

/// Stage 1 and stage 2 against one oracle.
fn attack_target<O: MaskedOracle + ?Sized>(
    oracle: &mut O,
    target: Target,
    opts: &AttackOptions,
    report: &mut TargetReport,
) -> Result<RecoveredPermutation, StageError> {
    let tag = |stage| {
        move |error| StageError {
            target,
            stage,
            error,
        }
    };
    report.dim = oracle.input_dim();

    let t = Instant::now();
    let profile = if let Some(budget) = opts.stage1_budget {
        let p = observe_noise_subspace(oracle, budget).map_err(tag(Stage::Stage1))?;
        report.k_discovered = opts.k_known.unwrap_or(p.k_observed);
        report.stage1_queries = budget;
        report.delta_used = budget.saturating_sub(report.k_discovered);
        p
    } else if let Some(k) = opts.k_known {
        let p = learn_noise_subspace(oracle, k, opts.delta).map_err(tag(Stage::Stage1))?;
        report.k_discovered = k;
        report.stage1_queries = p.queries_used;
        report.delta_used = opts.delta;
        p
    } else {
        let found =
            discover_k(oracle, opts.window, opts.max_queries).map_err(tag(Stage::Discovery))?;
        report.discovery_time = t.elapsed();
        let t1 = Instant::now();
        let k = found.k;
        let mut basis = found.basis;
        // The first K + δ discovery samples double as the stage-1 samples.
        let credited = found.queries.min(k + opts.delta);
        let top_up = k + opts.delta - credited;
        observe_noise(oracle, &mut basis, top_up).map_err(tag(Stage::Stage1))?;
        check_rank(&basis, k).map_err(tag(Stage::Stage1))?;
        report.k_discovered = k;
        report.discovery_queries = found.queries - credited;
        report.stage1_queries = k + opts.delta;
        report.delta_used = opts.delta;
        report.stage1_time = t1.elapsed();
        NoiseSubspaceProfile {
            k_observed: k,
            basis,
            queries_used: k + opts.delta,
            delta: opts.delta,
        }
    };
    if report.stage1_time.is_zero() {
        report.stage1_time = t.elapsed();
    }

    let t2 = Instant::now();
    let recovered = recover_permutation(oracle, &profile);
    report.stage2_time = t2.elapsed();
    report.stage2_queries = report.dim;
    let recovered = recovered.map_err(tag(Stage::Stage2))?;
    if let Confidence::Ambiguous(idx) = &recovered.confidence {
        return Err(tag(Stage::Stage2)(AttackError::Ambiguous(idx.clone())));
    }
    Ok(recovered)
}

/// Recovers `ρ`, `W₃` and `π_{l+1}` from a live session.
pub fn full_layer_attack(session: &mut TlgSession, opts: &AttackOptions) -> AttackReport {
    let mut report = AttackReport {
        rho: TargetReport::default(),
        pi_next: TargetReport::default(),
        recovered: None,
        failure: None,
    };
    let rho = match attack_target(
        &mut EncryptOracle(session),
        Target::Rho,
        opts,
        &mut report.rho,
    ) {
        Ok(r) => r,
        Err(e) => {
            report.failure = Some(e);
            return report;
        }
    };
    let weights = recover_weights(&rho, &session.locked_weights().w3).map_err(|error| StageError {
        target: Target::Rho,
        stage: Stage::Weights,
        error,
    });
    let pi_next = attack_target(
        &mut NextStageOracle(session),
        Target::PiNext,
        opts,
        &mut report.pi_next,
    );
    match (weights, pi_next) {
        (Ok(w3), Ok(pn)) => {
            report.recovered = Some(RecoveredSecrets {
                rho: rho.permutation().expect("exact"),
                w3,
                pi_next: pn.permutation().expect("exact"),
            });
        }
        (Err(e), _) | (_, Err(e)) => report.failure = Some(e),
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ff::seeded_rng;
    use crate::victim_tlg::{
        setup, setup_with_secrets, MaskMode, SamplingStrategy, TlgConfig, TlgLayerSecrets,
    };

    fn victim(d_ffn: usize, d_model: usize, k: usize, seed: u64) -> (TlgSession, GroundTruth) {
        let mut c = TlgConfig::new(d_ffn, d_model, k);
        c.with_block = false;
        setup(c, &mut seeded_rng(seed)).unwrap()
    }

    #[test]
    fn discover_k_finds_k() {
        let (mut s, _) = victim(64, 16, 10, 1);
        let found = discover_k(&mut EncryptOracle(&mut s), 20, 1000).unwrap();
        assert_eq!(found.k, 10);
        assert_eq!(found.queries, 30);
        assert_eq!(found.trace[..10], (1..=10).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn discover_k_one() {
        let (mut s, _) = victim(16, 8, 1, 2);
        let found = discover_k(&mut EncryptOracle(&mut s), 5, 100).unwrap();
        assert_eq!((found.k, found.queries), (1, 6));
    }

    #[test]
    fn discover_k_subset_sampling() {
        let mut c = TlgConfig::new(64, 16, 10);
        c.sampling = SamplingStrategy::SubsetT(3);
        c.with_block = false;
        let (mut s, _) = setup(c, &mut seeded_rng(3)).unwrap();
        let found = discover_k(&mut EncryptOracle(&mut s), 20, 1000).unwrap();
        assert_eq!(found.k, 10);
        assert!(found.queries >= 30);
    }

    #[test]
    fn discover_k_inconclusive_on_fresh_noise() {
        let mut c = TlgConfig::new(32, 8, 4);
        c.mask_mode = MaskMode::OnTheFly;
        c.with_block = false;
        let (mut s, _) = setup(c, &mut seeded_rng(4)).unwrap();
        let err = discover_k(&mut EncryptOracle(&mut s), 20, 1000).unwrap_err();
        assert_eq!(
            err,
            AttackError::Inconclusive {
                queries: 32,
                rank: 32
            }
        );
        assert!(matches!(
            discover_k(&mut EncryptOracle(&mut s), 20, 10),
            Err(AttackError::Inconclusive { queries: 10, .. })
        ));
    }

    #[test]
    fn learn_subspace_rank() {
        let (mut s, _) = victim(64, 16, 8, 5);
        let p = learn_noise_subspace(&mut EncryptOracle(&mut s), 8, 2).unwrap();
        assert_eq!((p.k_observed, p.queries_used), (8, 10));
        let (mut s, _) = victim(64, 16, 8, 5);
        assert_eq!(
            learn_noise_subspace(&mut EncryptOracle(&mut s), 8, 0)
                .map(|p| p.k_observed)
                .unwrap_or(0),
            8
        );
    }

    #[test]
    fn recovers_tiny_permutation() {
        let (mut s, truth) = victim(4, 2, 1, 6);
        let p = learn_noise_subspace(&mut EncryptOracle(&mut s), 1, 2).unwrap();
        let r = recover_permutation(&mut EncryptOracle(&mut s), &p).unwrap();
        assert_eq!(r.permutation().unwrap(), truth.secrets.rho);
    }

    #[test]
    fn identity_without_noise() {
        let mut c = TlgConfig::new(8, 4, 2);
        c.mask_mode = MaskMode::Disabled;
        c.with_block = false;
        let mut rng = seeded_rng(7);
        let mut secrets = TlgLayerSecrets::random(c.modulus, 8, 4, false, &mut rng);
        secrets.rho = Permutation::identity(8);
        let (mut s, _) = setup_with_secrets(c, secrets, &mut rng).unwrap();
        let p = observe_noise_subspace(&mut EncryptOracle(&mut s), 2).unwrap();
        assert_eq!(p.k_observed, 0);
        let r = recover_permutation(&mut EncryptOracle(&mut s), &p).unwrap();
        assert_eq!(r.permutation().unwrap(), Permutation::identity(8));
        let w = recover_weights(&r, &s.locked_weights().w3).unwrap();
        assert_eq!(&w, &s.locked_weights().w3);
    }

    #[test]
    fn residual_is_independent_of_the_mask() {
        let (mut s, _) = victim(32, 8, 6, 8);
        let p = learn_noise_subspace(&mut EncryptOracle(&mut s), 6, 2).unwrap();
        let m = s.modulus();
        for j in 0..32 {
            let e = FieldVector::unit(m, 32, j);
            let (_, y1) = s.encrypt(&e).unwrap();
            let (_, y2) = s.encrypt(&e).unwrap();
            assert_ne!(y1, y2);
            assert_eq!(
                p.basis.residual(&y1).unwrap(),
                p.basis.residual(&y2).unwrap()
            );
        }
    }

    #[test]
    fn residual_table_agrees_with_direct_reduction() {
        let m = FieldModulus::mersenne31();
        let mut rng = seeded_rng(9);
        let vs: Vec<_> = (0..5)
            .map(|_| FieldVector::random(m, 20, &mut rng))
            .collect();
        let basis = SubspaceBasis::span(m, 20, &vs).unwrap();
        let table = ResidualTable::new(&basis, &mut rng);
        for j in 0..20 {
            let direct = basis.residual(&FieldVector::unit(m, 20, j)).unwrap();
            assert_eq!(table.residual_of_unit(j), direct);
            assert_eq!(table.lookup(&direct), vec![j]);
        }
        assert!(table.collisions().is_empty());
    }

    #[test]
    fn colliding_residuals_are_reported() {
        // Noise spanned by e0 - e1 makes e0 and e1 indistinguishable.
        let m = FieldModulus::new(7).unwrap();
        let basis = SubspaceBasis::span(m, 4, &[FieldVector::from_i64(m, &[1, -1, 0, 0])]).unwrap();
        let table = ResidualTable::new(&basis, &mut seeded_rng(1));
        let mut groups = table.collisions();
        groups.iter_mut().for_each(|g| g.sort_unstable());
        assert_eq!(groups, vec![vec![0, 1]]);

        struct Fixed(SubspaceBasis);
        impl MaskedOracle for Fixed {
            fn input_dim(&self) -> usize {
                4
            }
            fn modulus(&self) -> FieldModulus {
                self.0.modulus()
            }
            fn query(&mut self, x: &FieldVector) -> Result<FieldVector, AttackError> {
                Ok(x.clone())
            }
        }
        let profile = NoiseSubspaceProfile {
            basis: basis.clone(),
            k_observed: 1,
            queries_used: 0,
            delta: 0,
        };
        let r = recover_permutation(&mut Fixed(basis), &profile).unwrap();
        assert_eq!(r.confidence, Confidence::Ambiguous(vec![0, 1]));
        assert!(recover_weights(&r, &FieldMatrix::zeros(m, 4, 2)).is_err());
    }

    #[test]
    fn short_stage1_fails_with_mismatch() {
        let (mut s, _) = victim(64, 16, 8, 10);
        let p = observe_noise_subspace(&mut EncryptOracle(&mut s), 7).unwrap();
        let err = recover_permutation(&mut EncryptOracle(&mut s), &p).unwrap_err();
        assert!(matches!(err, AttackError::ProtocolMismatch { .. }));
    }

    #[test]
    fn full_attack_with_known_and_unknown_k() {
        for k_known in [Some(8), None] {
            let (mut s, truth) = setup(TlgConfig::new(64, 32, 8), &mut seeded_rng(11)).unwrap();
            let opts = AttackOptions {
                k_known,
                ..AttackOptions::default()
            };
            let report = full_layer_attack(&mut s, &opts);
            assert!(report.failure.is_none(), "{:?}", report.failure);
            assert!(report.success(&truth));
            for (t, d) in [(&report.rho, 64), (&report.pi_next, 32)] {
                assert_eq!(t.attack_queries(), d + 8 + 2);
                assert_eq!(t.k_discovered, 8);
            }
            if k_known.is_none() {
                assert_eq!(report.rho.discovery_queries, 20 - 2);
            }
            let rec = report.recovered.unwrap();
            let unlocked = unlock_layer(s.locked_weights(), &truth.secrets.pi, &rec.rho).unwrap();
            assert_eq!(unlocked, truth.secrets.weights);
            let mut rng = seeded_rng(12);
            for _ in 0..20 {
                let a = FieldVector::random(s.modulus(), 64, &mut rng);
                assert_eq!(
                    rec.w3.left_mul(&a).unwrap(),
                    truth.secrets.weights.w3.left_mul(&a).unwrap()
                );
            }
        }
    }

    #[test]
    fn full_attack_fails_on_fresh_noise() {
        let mut c = TlgConfig::new(32, 16, 4);
        c.mask_mode = MaskMode::OnTheFly;
        c.with_block = false;
        let (mut s, truth) = setup(c, &mut seeded_rng(13)).unwrap();
        for k_known in [None, Some(4)] {
            let report = full_layer_attack(
                &mut s,
                &AttackOptions {
                    k_known,
                    ..Default::default()
                },
            );
            assert!(!report.success(&truth));
            assert!(report.failure.is_some());
        }
    }
}
