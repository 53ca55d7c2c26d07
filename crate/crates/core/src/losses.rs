//! Response- and relation-based distillation losses.
//!
//! All losses reduce by batch mean (or tuple mean) rather than by sum, so the
//! loss weights keep their meaning across batch sizes. Quantities coming from
//! the peer network or from a frozen snapshot are passed as plain
//! [`Tensor`]s and enter the tape as constants: gradients only ever reach the
//! network being updated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{ForwardOutput, Prediction};
use crate::tape::{angle_parts, l2_distance, softmax_rows, Tape, Var, COINCIDENT_EPS};
use crate::tensor::Tensor;

pub use crate::tape::huber_value as huber;

/// Batches larger than this use a seeded subsample of
/// `CAP · (CAP-1) · (CAP-2)` triples instead of all of them.
pub const TRIPLE_CAP_BATCH: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    /// Cross-entropy weight.
    pub alpha: f64,
    /// Mutual distillation weight.
    pub beta: f64,
    /// Self-distillation weight.
    pub gamma: f64,
    /// Angle term weight inside the relation loss.
    pub beta1: f64,
    /// Mutual KL weight inside the mutual distillation loss.
    pub beta2: f64,
    /// Softening temperature for self-distillation.
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            beta: 0.4,
            gamma: 0.6,
            beta1: 2.0,
            beta2: 2.0,
            temperature: 3.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(
                    format!("weights.{name}"),
                    "must be a finite non-negative number",
                ));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::config("weights.temperature", "must be positive"));
        }
        if self.alpha == 0.0 && self.beta == 0.0 && self.gamma == 0.0 {
            return Err(Error::config(
                "weights",
                "at least one of alpha, beta, gamma must be positive",
            ));
        }
        Ok(())
    }
}

/// Which knowledge-transfer terms take part in the objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Terms {
    /// Response-based mutual learning (KL towards the peer).
    pub mutual_kl: bool,
    /// Relation-based mutual learning (distance and angle).
    pub relation: bool,
    /// Response-based self-learning (KL towards the frozen snapshot).
    pub self_distill: bool,
}

impl Terms {
    pub const ALL: Terms = Terms {
        mutual_kl: true,
        relation: true,
        self_distill: true,
    };
}

/// Index tuples over one batch: all ordered pairs and ordered triples of
/// distinct samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TupleSets {
    n: usize,
    pairs: Vec<(usize, usize)>,
    triples: Vec<[usize; 3]>,
}

impl TupleSets {
    /// Every ordered pair and triple for a batch of `n`.
    pub fn all(n: usize) -> Self {
        let pairs = ordered_pairs(n);
        let total = n * n.saturating_sub(1) * n.saturating_sub(2);
        let triples = (0..total).map(|i| decode_triple(n, i)).collect();
        Self { n, pairs, triples }
    }

    /// All tuples, except that batches above [`TRIPLE_CAP_BATCH`] get a
    /// uniform subsample of triples drawn without replacement from `seed`.
    pub fn for_batch(n: usize, seed: u64) -> Self {
        if n <= TRIPLE_CAP_BATCH {
            return Self::all(n);
        }
        let cap = TRIPLE_CAP_BATCH * (TRIPLE_CAP_BATCH - 1) * (TRIPLE_CAP_BATCH - 2);
        let total = n * (n - 1) * (n - 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample(&mut rng, total, cap).into_vec();
        picked.sort_unstable();
        Self {
            n,
            pairs: ordered_pairs(n),
            triples: picked.into_iter().map(|i| decode_triple(n, i)).collect(),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.n
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn triples(&self) -> &[[usize; 3]] {
        &self.triples
    }
}

fn ordered_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v)))
        .collect()
}

/// The `i`-th ordered triple of distinct indices in lexicographic order.
fn decode_triple(n: usize, i: usize) -> [usize; 3] {
    let per_u = (n - 1) * (n - 2);
    let u = i / per_u;
    let rem = i % per_u;
    let mut v = rem / (n - 2);
    if v >= u {
        v += 1;
    }
    let mut w = rem % (n - 2);
    let (lo, hi) = if u < v { (u, v) } else { (v, u) };
    if w >= lo {
        w += 1;
    }
    if w >= hi {
        w += 1;
    }
    [u, v, w]
}

/// Counters for batches where a relational term was partially or wholly
/// undefined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Diagnostics {
    /// Embedding sets whose mean pair distance fell below 1e-8.
    pub pi_collapses: u64,
    /// Triples dropped because they contained coincident embeddings.
    pub triples_skipped: u64,
    /// Batches where the angle term was undefined (fewer than 3 samples or
    /// no usable triple).
    pub angle_terms_skipped: u64,
}

impl Diagnostics {
    pub fn merge(&mut self, other: Diagnostics) {
        self.pi_collapses += other.pi_collapses;
        self.triples_skipped += other.triples_skipped;
        self.angle_terms_skipped += other.angle_terms_skipped;
    }
}

fn check_labels(logits: &Tensor, labels: &Tensor) -> Result<()> {
    if logits.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            left: logits.shape().to_vec(),
            right: labels.shape().to_vec(),
        });
    }
    let (_, m) = labels.dims2("cross_entropy")?;
    for (row, chunk) in labels.data().chunks(m).enumerate() {
        let ones = chunk.iter().filter(|&&v| v == 1.0).count();
        let zeros = chunk.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != m - 1 {
            return Err(Error::InvalidLabels { row });
        }
    }
    Ok(())
}

/// Batch-mean cross-entropy of `softmax(logits)` against one-hot `labels`.
pub fn cross_entropy(tape: &mut Tape, logits: Var, labels: &Tensor) -> Result<Var> {
    check_labels(tape.value(logits), labels)?;
    let rows = labels.shape()[0] as f64;
    let logp = tape.log_softmax(logits, 1.0)?;
    let y = tape.constant(labels.clone());
    let picked = tape.mul(logp, y)?;
    let total = tape.sum(picked)?;
    tape.mul_scalar(total, -1.0 / rows)
}

/// Batch-mean `KL(softmax(teacher/t) ‖ softmax(student/t))`.
fn softened_kl(tape: &mut Tape, student: Var, teacher: &Tensor, t: f64) -> Result<Var> {
    let sv = tape.value(student);
    if sv.shape() != teacher.shape() {
        return Err(Error::ShapeMismatch {
            op: "kl",
            left: sv.shape().to_vec(),
            right: teacher.shape().to_vec(),
        });
    }
    let rows = teacher.dims2("kl")?.0 as f64;
    let q = softmax_rows(teacher, t, false)?;
    let log_q = softmax_rows(teacher, t, true)?;
    let log_p = tape.log_softmax(student, t)?;
    let log_q = tape.constant(log_q);
    let q = tape.constant(q);
    let diff = tape.sub(log_q, log_p)?;
    let weighted = tape.mul(diff, q)?;
    let total = tape.sum(weighted)?;
    tape.div_scalar(total, rows)
}

/// Mutual response loss at unit temperature. The teacher's logits are
/// constants.
pub fn kl_mutual(tape: &mut Tape, student_logits: Var, teacher_logits: &Tensor) -> Result<Var> {
    softened_kl(tape, student_logits, teacher_logits, 1.0)
}

/// Self-distillation loss at temperature `t` against a frozen snapshot's
/// logits. No `t²` rescaling is applied.
pub fn self_distill_kl(
    tape: &mut Tape,
    student_logits: Var,
    snapshot_logits: &Tensor,
    t: f64,
) -> Result<Var> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::InvalidTemperature(t));
    }
    softened_kl(tape, student_logits, snapshot_logits, t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistancePotentials {
    /// One value per pair of the tuple set, in order.
    pub values: Vec<f64>,
    /// The batch's mean pair distance collapsed; `values` are all zero.
    pub degenerate: bool,
}

/// Pair distances divided by their mean over the tuple set.
pub fn distance_potentials(e: &Tensor, tuples: &TupleSets) -> Result<DistancePotentials> {
    let (n, _) = e.dims2("distance_potentials")?;
    if n < 2 {
        return Err(Error::TooFewRows {
            op: "distance_potentials",
            need: 2,
            got: n,
        });
    }
    let dists: Vec<f64> = tuples
        .pairs()
        .iter()
        .map(|&(u, v)| l2_distance(e.row(u), e.row(v)))
        .collect();
    let pi = dists.iter().fold(0.0, |a, d| a + d) / dists.len() as f64;
    if pi < COINCIDENT_EPS {
        return Ok(DistancePotentials {
            values: vec![0.0; dists.len()],
            degenerate: true,
        });
    }
    Ok(DistancePotentials {
        values: dists.iter().map(|d| d / pi).collect(),
        degenerate: false,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnglePotentials {
    /// Cosines for the usable triples.
    pub values: Vec<f64>,
    /// Positions (into the tuple set's triples) of the usable triples.
    pub kept: Vec<usize>,
}

/// Cosine of the angle at the middle sample of each triple. Triples whose
/// middle sample coincides with either end are skipped.
pub fn angle_potentials(e: &Tensor, tuples: &TupleSets) -> Result<AnglePotentials> {
    let (n, _) = e.dims2("angle_potentials")?;
    if n < 3 {
        return Err(Error::TooFewRows {
            op: "angle_potentials",
            need: 3,
            got: n,
        });
    }
    let mut values = Vec::new();
    let mut kept = Vec::new();
    for (i, &[u, v, w]) in tuples.triples().iter().enumerate() {
        if let Some(p) = angle_parts(e, u, v, w) {
            values.push(p.cos);
            kept.push(i);
        }
    }
    Ok(AnglePotentials { values, kept })
}

fn pair_indices(tuples: &TupleSets) -> Vec<usize> {
    let n = tuples.batch_size();
    tuples.pairs().iter().map(|&(u, v)| u * n + v).collect()
}

/// Mean Huber distance between the distance potentials of `e` (on the tape)
/// and of the peer's embeddings.
pub fn distance_distill_loss(
    tape: &mut Tape,
    e: Var,
    peer: &Tensor,
    tuples: &TupleSets,
    diag: &mut Diagnostics,
) -> Result<Var> {
    let peer_pot = distance_potentials(peer, tuples)?;
    if peer_pot.degenerate {
        diag.pi_collapses += 1;
    }
    let dist = tape.pairwise_l2(e)?;
    let picked = tape.gather(dist, pair_indices(tuples))?;
    let pi = tape.mean(picked)?;
    let own = if tape.value(pi).item()? < COINCIDENT_EPS {
        diag.pi_collapses += 1;
        tape.constant(Tensor::zeros(&[tuples.pairs().len()]))
    } else {
        tape.div(picked, pi)?
    };
    let peer_pot = tape.constant(Tensor::vector(peer_pot.values)?);
    let h = tape.huber(own, peer_pot)?;
    tape.mean(h)
}

/// Mean Huber distance between angle potentials, over triples usable in both
/// embedding sets. `None` when no triple is usable or the batch has fewer
/// than three samples.
pub fn angle_distill_loss(
    tape: &mut Tape,
    e: Var,
    peer: &Tensor,
    tuples: &TupleSets,
    diag: &mut Diagnostics,
) -> Result<Option<Var>> {
    if tuples.batch_size() < 3 {
        diag.angle_terms_skipped += 1;
        return Ok(None);
    }
    let own_val = tape.value(e).clone();
    let mut kept = Vec::new();
    let mut peer_cos = Vec::new();
    for &[u, v, w] in tuples.triples() {
        let own = angle_parts(&own_val, u, v, w);
        let other = angle_parts(peer, u, v, w);
        match (own, other) {
            (Some(_), Some(p)) => {
                kept.push([u, v, w]);
                peer_cos.push(p.cos);
            }
            _ => diag.triples_skipped += 1,
        }
    }
    if kept.is_empty() {
        diag.angle_terms_skipped += 1;
        return Ok(None);
    }
    let cos = tape.angle_cos(e, kept)?;
    let peer_cos = tape.constant(Tensor::vector(peer_cos)?);
    let h = tape.huber(cos, peer_cos)?;
    Ok(Some(tape.mean(h)?))
}

/// `L_DD + beta1 · L_AD` with its parts.
#[derive(Clone, Copy, Debug)]
pub struct RelationLoss {
    pub value: Var,
    pub distance: f64,
    pub angle: f64,
}

pub fn relation_distill_loss(
    tape: &mut Tape,
    e: Var,
    peer: &Tensor,
    tuples: &TupleSets,
    beta1: f64,
    diag: &mut Diagnostics,
) -> Result<RelationLoss> {
    // Potentials are width-agnostic; peers may have different embedding sizes.
    let rows = |s: &[usize]| s.first().copied();
    if tape.value(e).shape().len() != 2
        || peer.shape().len() != 2
        || rows(tape.value(e).shape()) != rows(peer.shape())
    {
        return Err(Error::ShapeMismatch {
            op: "relation_distill_loss",
            left: tape.value(e).shape().to_vec(),
            right: peer.shape().to_vec(),
        });
    }
    if tuples.batch_size() < 2 {
        // No pairs: both relational terms are undefined.
        diag.pi_collapses += 1;
        diag.angle_terms_skipped += 1;
        let zero = tape.constant(Tensor::scalar(0.0));
        return Ok(RelationLoss {
            value: zero,
            distance: 0.0,
            angle: 0.0,
        });
    }
    let dd = distance_distill_loss(tape, e, peer, tuples, diag)?;
    let distance = tape.value(dd).item()?;
    if beta1 == 0.0 {
        return Ok(RelationLoss {
            value: dd,
            distance,
            angle: 0.0,
        });
    }
    match angle_distill_loss(tape, e, peer, tuples, diag)? {
        Some(ad) => {
            let angle = tape.value(ad).item()?;
            let scaled = tape.mul_scalar(ad, beta1)?;
            let value = tape.add(dd, scaled)?;
            Ok(RelationLoss {
                value,
                distance,
                angle,
            })
        }
        None => Ok(RelationLoss {
            value: dd,
            distance,
            angle: 0.0,
        }),
    }
}

/// Value of the relation loss between two embedding sets.
pub fn relation_distill_value(
    a: &Tensor,
    b: &Tensor,
    tuples: &TupleSets,
    beta1: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let e = tape.constant(a.clone());
    let mut diag = Diagnostics::default();
    let rel = relation_distill_loss(&mut tape, e, b, tuples, beta1, &mut diag)?;
    tape.value(rel.value).item()
}

/// Unweighted loss components of one objective evaluation. Inactive terms
/// read zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub ce: f64,
    pub kl_mutual: f64,
    pub distance: f64,
    pub angle: f64,
    pub self_distill: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct MutualLoss {
    /// `None` when both the relation and the KL term are inactive.
    pub value: Option<Var>,
    pub kl: f64,
    pub distance: f64,
    pub angle: f64,
}

/// `L_RD + beta2 · KL(peer ‖ own)` for the network owning `own`.
pub fn mutual_distill_loss(
    tape: &mut Tape,
    own: &ForwardOutput,
    peer: &Prediction,
    tuples: &TupleSets,
    weights: &LossWeights,
    terms: Terms,
    diag: &mut Diagnostics,
) -> Result<MutualLoss> {
    let mut out = MutualLoss {
        value: None,
        kl: 0.0,
        distance: 0.0,
        angle: 0.0,
    };
    if terms.relation {
        let rel = relation_distill_loss(
            tape,
            own.embedding,
            &peer.embedding,
            tuples,
            weights.beta1,
            diag,
        )?;
        out.value = Some(rel.value);
        out.distance = rel.distance;
        out.angle = rel.angle;
    }
    if terms.mutual_kl && weights.beta2 != 0.0 {
        let kl = kl_mutual(tape, own.logits, &peer.logits)?;
        out.kl = tape.value(kl).item()?;
        let scaled = tape.mul_scalar(kl, weights.beta2)?;
        out.value = Some(match out.value {
            Some(rd) => tape.add(rd, scaled)?,
            None => scaled,
        });
    }
    Ok(out)
}

/// Result of [`total_loss`].
#[derive(Clone, Copy, Debug)]
pub struct KdLoss {
    pub value: Var,
    pub parts: LossParts,
}

/// `alpha · CE + beta · L_MD + gamma · L_SD` for one network.
///
/// Terms with zero weight (or switched off in `terms`) are not built at all,
/// so degenerate weight settings reproduce the reduced objectives exactly.
/// `peer` is required when `beta > 0`, `snapshot_logits` when `gamma > 0`.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    tape: &mut Tape,
    own: &ForwardOutput,
    peer: Option<&Prediction>,
    snapshot_logits: Option<&Tensor>,
    labels: &Tensor,
    tuples: &TupleSets,
    weights: &LossWeights,
    terms: Terms,
    diag: &mut Diagnostics,
) -> Result<KdLoss> {
    let mut parts = LossParts::default();
    let mut acc: Option<Var> = None;
    let mut push = |tape: &mut Tape, term: Var| -> Result<()> {
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
        Ok(())
    };

    let ce = cross_entropy(tape, own.logits, labels)?;
    parts.ce = tape.value(ce).item()?;
    if weights.alpha != 0.0 {
        let scaled = tape.mul_scalar(ce, weights.alpha)?;
        push(tape, scaled)?;
    }

    if weights.beta != 0.0 && (terms.relation || terms.mutual_kl) {
        let peer = peer.ok_or_else(|| Error::config("peer", "required when beta > 0"))?;
        let md = mutual_distill_loss(tape, own, peer, tuples, weights, terms, diag)?;
        parts.kl_mutual = md.kl;
        parts.distance = md.distance;
        parts.angle = md.angle;
        if let Some(v) = md.value {
            let scaled = tape.mul_scalar(v, weights.beta)?;
            push(tape, scaled)?;
        }
    }

    if weights.gamma != 0.0 && terms.self_distill {
        let snap =
            snapshot_logits.ok_or_else(|| Error::config("snapshot", "required when gamma > 0"))?;
        let sd = self_distill_kl(tape, own.logits, snap, weights.temperature)?;
        parts.self_distill = tape.value(sd).item()?;
        let scaled = tape.mul_scalar(sd, weights.gamma)?;
        push(tape, scaled)?;
    }

    let value = match acc {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    parts.total = tape.value(value).item()?;
    Ok(KdLoss { value, parts })
}
