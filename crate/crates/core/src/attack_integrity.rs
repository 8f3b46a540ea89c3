//! Passive recovery of a static fingerprint subspace and undetected tampering.
//!
//! Every challenge the TEE hides in a batch lies in the span `V_C` of its
//! `K` cornerstone inputs. Observing enough batches gives a span that
//! contains `V_C` plus the genuine activations of those batches. Genuine
//! activations are fresh per call, so spans of independently observed sets
//! share only `V_C`, and intersecting them recovers it. Entries inside `V_C`
//! are then answered honestly and everything else can be tampered with.

use serde::Serialize;
use thiserror::Error;

use crate::ff::FieldModulus;
use crate::linalg::{FieldVector, LinalgError, SubspaceBasis};
use crate::victim_soter::{SoterError, SoterSession, Verdict};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IntegrityError {
    #[error("each set would span the whole space (rank {rank} of {d}); no intersection can isolate the fingerprints")]
    Saturated { rank: usize, d: usize },
    #[error("observed spans share no common subspace")]
    NoSharedStructure,
    #[error("no rank changepoint after {batches} batches (rank {rank})")]
    Inconclusive { batches: usize, rank: usize },
    #[error("observation budget of {0} batches exhausted")]
    Exhausted(usize),
    #[error(transparent)]
    Soter(#[from] SoterError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Passive view of the traffic the GPU receives.
pub trait BatchSource {
    fn modulus(&self) -> FieldModulus;
    fn dim(&self) -> usize;
    /// Genuine activations per batch.
    fn batch_size(&self) -> usize;
    fn next_batch(&mut self) -> Result<Vec<FieldVector>, IntegrityError>;
}

impl BatchSource for SoterSession {
    fn modulus(&self) -> FieldModulus {
        self.config().modulus
    }
    fn dim(&self) -> usize {
        self.config().d
    }
    fn batch_size(&self) -> usize {
        self.config().batch_size
    }
    fn next_batch(&mut self) -> Result<Vec<FieldVector>, IntegrityError> {
        Ok(self.observe_batch())
    }
}

#[derive(Clone, Debug)]
pub struct ObservationSet {
    pub vectors: Vec<FieldVector>,
    pub batches_seen: usize,
    pub span: SubspaceBasis,
}

impl ObservationSet {
    pub fn new(modulus: FieldModulus, d: usize) -> Self {
        Self {
            vectors: Vec::new(),
            batches_seen: 0,
            span: SubspaceBasis::empty(modulus, d),
        }
    }

    pub fn push_batch(&mut self, batch: Vec<FieldVector>) -> Result<(), IntegrityError> {
        for v in &batch {
            self.span.insert(v)?;
        }
        self.vectors.extend(batch);
        self.batches_seen += 1;
        Ok(())
    }

    /// Rank not explained by genuine entries, assuming those are independent.
    pub fn fingerprint_rank(&self, batch_size: usize) -> usize {
        self.span
            .rank()
            .saturating_sub(batch_size * self.batches_seen)
    }
}

/// Observes `batches_per_set` batches for each of `n_sets` sets, round-robin,
/// so no two sets share an inference call.
pub fn collect_sets<S: BatchSource + ?Sized>(
    source: &mut S,
    n_sets: usize,
    batches_per_set: usize,
) -> Result<Vec<ObservationSet>, IntegrityError> {
    let mut sets: Vec<_> = (0..n_sets)
        .map(|_| ObservationSet::new(source.modulus(), source.dim()))
        .collect();
    for _ in 0..batches_per_set {
        for set in sets.iter_mut() {
            set.push_batch(source.next_batch()?)?;
        }
    }
    Ok(sets)
}

/// How many sets of `K + δ` batches to collect.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SetPlan {
    pub n_sets: usize,
    pub batches_per_set: usize,
    /// Generic rank of each set's span.
    pub set_rank: usize,
    /// Excess dimension of a plain two-set intersection beyond `K`.
    pub two_set_excess: usize,
}

impl SetPlan {
    pub fn saturation_warning(&self) -> bool {
        self.two_set_excess > 0
    }
}

/// Dimension forced into the intersection of `j` generic `r`-dimensional
/// subspaces sharing a `k`-dimensional core, beyond that core.
pub fn generic_excess(j: usize, r: usize, k: usize, d: usize) -> usize {
    (j * (r - k)).saturating_sub((j - 1) * (d - k))
}

/// Chooses the fewest sets (at least two) whose generic intersection is
/// exactly the `k`-dimensional fingerprint span.
pub fn plan_sets(
    d: usize,
    k: usize,
    delta: usize,
    batch_size: usize,
    fingerprints_per_batch: usize,
) -> Result<SetPlan, IntegrityError> {
    let n = k + delta;
    let r = d.min(k.min(n * fingerprints_per_batch) + n * batch_size);
    if r >= d {
        return Err(IntegrityError::Saturated { rank: r, d });
    }
    let n_sets = (2..)
        .find(|&j| generic_excess(j, r, k, d) == 0)
        .expect("excess decreases by d - r > 0 per extra set");
    Ok(SetPlan {
        n_sets,
        batches_per_set: n,
        set_rank: r,
        two_set_excess: generic_excess(2, r, k, d),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FingerprintFilter {
    pub v_c: SubspaceBasis,
    pub dim: usize,
}

/// The intersection only reached the dimension that Grassmann's identity
/// forces on any family of subspaces of these ranks, so it carries no
/// information about the fingerprints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SaturationWarning {
    pub set_ranks: Vec<usize>,
    pub forced_dim: usize,
    pub intersection_dim: usize,
}

/// Intersects the spans of all sets.
pub fn recover_fingerprint_subspace(
    sets: &[ObservationSet],
) -> Result<(FingerprintFilter, Option<SaturationWarning>), IntegrityError> {
    let first = sets.first().ok_or(IntegrityError::NoSharedStructure)?;
    let mut v_c = first.span.clone();
    for s in &sets[1..] {
        v_c = v_c.intersect(&s.span)?;
    }
    if v_c.rank() == 0 {
        return Err(IntegrityError::NoSharedStructure);
    }
    let d = first.span.ambient_dim();
    let set_ranks: Vec<usize> = sets.iter().map(|s| s.span.rank()).collect();
    let forced = set_ranks
        .iter()
        .sum::<usize>()
        .saturating_sub((sets.len() - 1) * d);
    let warning = (forced > 0 && v_c.rank() <= forced).then(|| SaturationWarning {
        set_ranks,
        forced_dim: forced,
        intersection_dim: v_c.rank(),
    });
    let dim = v_c.rank();
    Ok((FingerprintFilter { v_c, dim }, warning))
}

/// Collects sets batch by batch until each holds the full `k`-dimensional
/// fingerprint span, then adds sets until the generic intersection is
/// exactly `k`-dimensional.
pub fn collect_until_complete<S: BatchSource + ?Sized>(
    source: &mut S,
    k: usize,
    max_batches: usize,
) -> Result<Vec<ObservationSet>, IntegrityError> {
    let (m, d, b) = (source.modulus(), source.dim(), source.batch_size());
    let mut sets: Vec<ObservationSet> = (0..2).map(|_| ObservationSet::new(m, d)).collect();
    let mut used = 0;
    let fill = |set: &mut ObservationSet, used: &mut usize, src: &mut S| {
        while set.fingerprint_rank(b) < k {
            if *used >= max_batches || set.span.rank() == d {
                return Err(IntegrityError::Exhausted(*used));
            }
            set.push_batch(src.next_batch()?)?;
            *used += 1;
        }
        Ok(())
    };
    // Round-robin until both initial sets are complete.
    loop {
        let incomplete: Vec<usize> = (0..sets.len())
            .filter(|&i| sets[i].fingerprint_rank(b) < k)
            .collect();
        if incomplete.is_empty() {
            break;
        }
        for i in incomplete {
            if used >= max_batches || sets[i].span.rank() == d {
                return Err(IntegrityError::Exhausted(used));
            }
            sets[i].push_batch(source.next_batch()?)?;
            used += 1;
        }
    }
    loop {
        let excess: usize = sets.iter().map(|s| s.span.rank() - k).sum::<usize>();
        if excess <= (sets.len() - 1) * (d - k) {
            return Ok(sets);
        }
        let mut extra = ObservationSet::new(m, d);
        fill(&mut extra, &mut used, source)?;
        sets.push(extra);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Class {
    Fingerprint,
    Genuine,
}

pub fn classify(v: &FieldVector, filter: &FingerprintFilter) -> Result<Class, IntegrityError> {
    Ok(if filter.v_c.is_member(v)? {
        Class::Fingerprint
    } else {
        Class::Genuine
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HiddenKDiscovery {
    pub k: usize,
    /// Batches observed before the first slope drop.
    pub changepoint: usize,
    pub batches: usize,
    /// Cumulative span rank after each batch.
    pub trace: Vec<usize>,
}

/// Finds `K` from the slope change in cumulative span rank.
///
/// While challenges still add new directions each batch raises the rank by
/// `B + F`; afterwards only the `B` genuine entries do. Once the increment
/// has equalled `B` for `window` consecutive batches, `K̂ = r(n) − B·n`.
pub fn discover_k_hidden<S: BatchSource + ?Sized>(
    source: &mut S,
    window: usize,
    max_batches: usize,
) -> Result<HiddenKDiscovery, IntegrityError> {
    assert!(window >= 1, "stability window must be positive");
    let (d, b) = (source.dim(), source.batch_size());
    let mut span = SubspaceBasis::empty(source.modulus(), d);
    let mut trace = Vec::new();
    let mut run = 0;
    let mut changepoint = None;
    while trace.len() < max_batches {
        let before = span.rank();
        for v in source.next_batch()? {
            span.insert(&v)?;
        }
        let r = span.rank();
        trace.push(r);
        if r == d {
            break;
        }
        if r - before == b {
            if run == 0 {
                changepoint = Some(trace.len() - 1);
            }
            run += 1;
        } else {
            run = 0;
            changepoint = None;
        }
        if run >= window {
            let n = trace.len();
            return Ok(HiddenKDiscovery {
                k: r - b * n,
                changepoint: changepoint.expect("set when the run started"),
                batches: n,
                trace,
            });
        }
    }
    Err(IntegrityError::Inconclusive {
        batches: trace.len(),
        rank: span.rank(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BypassPolicy {
    /// Honest on entries classified as fingerprints, tampered elsewhere.
    Filtered,
    /// Tamper with every entry.
    TamperAll,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct BypassOutcome {
    pub batches_processed: usize,
    /// Fingerprint-classified entries in batches that passed.
    pub fingerprints_passed: usize,
    pub genuine_tampered: usize,
    pub detections: usize,
}

/// Answers `n_batches` live batches under `policy`.
pub fn run_bypass<T: FnMut(&FieldVector) -> FieldVector>(
    session: &mut SoterSession,
    filter: &FingerprintFilter,
    policy: BypassPolicy,
    mut tamper_fn: T,
    n_batches: usize,
) -> Result<BypassOutcome, IntegrityError> {
    let operator = session.operator().clone();
    let mut out = BypassOutcome::default();
    for _ in 0..n_batches {
        let batch = session.observe_batch();
        let mut fingerprints = 0;
        let mut results = Vec::with_capacity(batch.len());
        for v in &batch {
            let correct = operator.left_mul(v)?;
            let honest = match policy {
                BypassPolicy::TamperAll => false,
                BypassPolicy::Filtered => classify(v, filter)? == Class::Fingerprint,
            };
            if honest {
                fingerprints += 1;
                results.push(correct);
            } else {
                out.genuine_tampered += 1;
                results.push(tamper_fn(&correct));
            }
        }
        out.batches_processed += 1;
        match session.submit(&results)? {
            Verdict::Pass => out.fingerprints_passed += fingerprints,
            Verdict::Abort => out.detections += 1,
        }
    }
    Ok(out)
}

/// Adds 1 to the first coordinate.
pub fn additive_tamper(v: &FieldVector) -> FieldVector {
    let mut t = v.clone();
    let x = t.raw()[0];
    t.set(0, x + 1);
    t
}

#[derive(Clone, Debug, Serialize)]
pub struct IntegrityReport {
    pub k: usize,
    pub n_sets: usize,
    pub batches_observed: usize,
    pub filter_dim: usize,
    pub saturation: Option<SaturationWarning>,
}

/// Plans, collects and intersects with `K` known.
pub fn recover_with_plan(
    session: &mut SoterSession,
    k: usize,
    delta: usize,
) -> Result<(FingerprintFilter, IntegrityReport), IntegrityError> {
    let c = *session.config();
    let plan = plan_sets(c.d, k, delta, c.batch_size, c.fingerprints_per_batch)?;
    let sets = collect_sets(session, plan.n_sets, plan.batches_per_set)?;
    let (filter, saturation) = recover_fingerprint_subspace(&sets)?;
    let report = IntegrityReport {
        k,
        n_sets: plan.n_sets,
        batches_observed: plan.n_sets * plan.batches_per_set,
        filter_dim: filter.dim,
        saturation,
    };
    Ok((filter, report))
}
