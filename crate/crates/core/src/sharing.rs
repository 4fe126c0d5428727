//! Threshold sharing of game states, per-round event evaluation on shares,
//! and reconstruction.
//!
//! The referee splits an owner's state into `n` points of a random
//! polynomial of degree `k − 1`. Each holder applies the round's public
//! affine event `f(y) = a·y + b` to its point. Because `f` is affine, the
//! evaluated points lie on `a·P(x) + b`, whose constant term is `f(secret)`,
//! so the owner reconstructs the updated state without any holder seeing it.

use crate::field::{FieldElement, PrimeField};
use crate::ids::{HolderId, PlayerId, RoundIndex};
use rand::RngCore;
use std::collections::HashSet;
use thiserror::Error;

/// Smallest threshold the scheme accepts.
pub const MIN_THRESHOLD: usize = 3;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SharingError {
    #[error("threshold {k} out of range for {holders} holders (need {MIN_THRESHOLD} <= k <= holders)")]
    ThresholdOutOfRange { k: usize, holders: usize },
    #[error("holder {0} listed twice")]
    DuplicateHolder(HolderId),
    #[error("insufficient shares: have {have}, need {need}")]
    InsufficientShares { have: usize, need: usize },
    #[error("two points share the evaluation point x")]
    DuplicateX,
    #[error("points come from different rounds")]
    MixedRounds,
    #[error("event slope must be non-zero")]
    ZeroSlope,
}

/// One holder's point on the dealing polynomial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share {
    pub owner: PlayerId,
    pub holder: HolderId,
    pub round: RoundIndex,
    pub x: FieldElement,
    pub y: FieldElement,
}

/// A holder's point after the round event has been applied.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Output {
    pub holder: HolderId,
    pub round: RoundIndex,
    pub x: FieldElement,
    pub y: FieldElement,
}

impl Output {
    /// Canonical bytes covered by the holder's signature.
    pub fn signing_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 64);
        out.extend_from_slice(&self.holder.to_be_bytes());
        out.extend_from_slice(&self.round.to_be_bytes());
        out.extend_from_slice(&self.x.to_bytes());
        out.extend_from_slice(&self.y.to_bytes());
        out
    }
}

/// Public per-round affine map `y ↦ a·y + b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundEvent {
    a: FieldElement,
    b: FieldElement,
}

impl RoundEvent {
    pub fn new(a: FieldElement, b: FieldElement) -> Result<Self, SharingError> {
        if a.is_zero() {
            return Err(SharingError::ZeroSlope);
        }
        Ok(Self { a, b })
    }

    pub fn identity() -> Self {
        Self {
            a: FieldElement::one(),
            b: FieldElement::zero(),
        }
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        loop {
            let a = FieldElement::random(rng);
            if !a.is_zero() {
                return Self {
                    a,
                    b: FieldElement::random(rng),
                };
            }
        }
    }

    pub fn a(&self) -> &FieldElement {
        &self.a
    }

    pub fn b(&self) -> &FieldElement {
        &self.b
    }

    pub fn apply(&self, value: &FieldElement) -> FieldElement {
        self.a.mul(value).add(&self.b)
    }

    /// `self ∘ inner`, i.e. apply `inner` first.
    pub fn after(&self, inner: &RoundEvent) -> RoundEvent {
        RoundEvent {
            a: self.a.mul(&inner.a),
            b: self.a.mul(&inner.b).add(&self.b),
        }
    }
}

/// Anything carrying an evaluation point: shares and outputs.
pub trait SharePoint {
    fn holder(&self) -> HolderId;
    fn round(&self) -> RoundIndex;
    fn x(&self) -> &FieldElement;
    fn y(&self) -> &FieldElement;
}

impl SharePoint for Share {
    fn holder(&self) -> HolderId {
        self.holder
    }
    fn round(&self) -> RoundIndex {
        self.round
    }
    fn x(&self) -> &FieldElement {
        &self.x
    }
    fn y(&self) -> &FieldElement {
        &self.y
    }
}

impl SharePoint for Output {
    fn holder(&self) -> HolderId {
        self.holder
    }
    fn round(&self) -> RoundIndex {
        self.round
    }
    fn x(&self) -> &FieldElement {
        &self.x
    }
    fn y(&self) -> &FieldElement {
        &self.y
    }
}

/// Threshold the referee picks for a dealing.
///
/// With one peer the referee joins as third holder and `k = 3`. Otherwise
/// `k = max(3, holders − fault_tolerance)`, capped at the holder count.
pub fn threshold_policy(player_holders: usize, fault_tolerance: usize) -> usize {
    if player_holders <= 2 {
        MIN_THRESHOLD
    } else {
        player_holders
            .saturating_sub(fault_tolerance)
            .max(MIN_THRESHOLD)
            .min(player_holders)
    }
}

/// Random polynomial of degree `degree` with constant term `secret`.
pub fn random_polynomial<F: PrimeField>(secret: F, degree: usize, rng: &mut impl RngCore) -> Vec<F> {
    let mut coeffs = Vec::with_capacity(degree + 1);
    coeffs.push(secret);
    coeffs.extend((0..degree).map(|_| F::random(rng)));
    coeffs
}

/// Horner evaluation.
pub fn evaluate_polynomial<F: PrimeField>(coeffs: &[F], x: &F) -> F {
    coeffs
        .iter()
        .rev()
        .fold(F::zero(), |acc, c| acc.mul(x).add(c))
}

/// Lagrange interpolation of the unique polynomial through `points`,
/// evaluated at `at`.
pub fn interpolate_at<F: PrimeField>(points: &[(F, F)], at: &F) -> Result<F, SharingError> {
    for (i, (xi, _)) in points.iter().enumerate() {
        if points[..i].iter().any(|(xj, _)| xj == xi) {
            return Err(SharingError::DuplicateX);
        }
    }
    let mut acc = F::zero();
    for (i, (xi, yi)) in points.iter().enumerate() {
        let mut num = F::one();
        let mut den = F::one();
        for (j, (xj, _)) in points.iter().enumerate() {
            if i != j {
                num = num.mul(&at.sub(xj));
                den = den.mul(&xi.sub(xj));
            }
        }
        let basis = num.mul(&den.inverse().ok_or(SharingError::DuplicateX)?);
        acc = acc.add(&yi.mul(&basis));
    }
    Ok(acc)
}

/// Splits `secret` into one share per holder; holder `i` (0-based) gets `x = i + 1`.
pub fn split(
    secret: &FieldElement,
    owner: PlayerId,
    round: RoundIndex,
    holders: &[HolderId],
    k: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<Share>, SharingError> {
    if k < MIN_THRESHOLD || k > holders.len() {
        return Err(SharingError::ThresholdOutOfRange {
            k,
            holders: holders.len(),
        });
    }
    let mut seen = HashSet::new();
    for h in holders {
        if !seen.insert(*h) {
            return Err(SharingError::DuplicateHolder(*h));
        }
    }
    let poly = random_polynomial(secret.clone(), k - 1, rng);
    Ok(holders
        .iter()
        .enumerate()
        .map(|(i, holder)| {
            let x = FieldElement::from_u64(i as u64 + 1);
            Share {
                owner,
                holder: *holder,
                round,
                y: evaluate_polynomial(&poly, &x),
                x,
            }
        })
        .collect())
}

/// Interpolates the constant term from at least `k` points of one round.
pub fn reconstruct<P: SharePoint>(points: &[P], k: usize) -> Result<FieldElement, SharingError> {
    if points.len() < k {
        return Err(SharingError::InsufficientShares {
            have: points.len(),
            need: k,
        });
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.round() != first.round()) {
            return Err(SharingError::MixedRounds);
        }
    }
    let pts: Vec<_> = points.iter().map(|p| (p.x().clone(), p.y().clone())).collect();
    interpolate_at(&pts, &FieldElement::zero())
}

pub fn evaluate_event(share: &Share, event: &RoundEvent) -> Output {
    Output {
        holder: share.holder,
        round: share.round,
        x: share.x.clone(),
        y: event.apply(&share.y),
    }
}

/// Result of cross-checking redundant outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Consistency {
    /// Every point lies on one polynomial of degree `k − 1`.
    Consistent { value: FieldElement },
    /// The points disagree. `outliers` lists holders off the unique best
    /// polynomial; it is empty when no single polynomial can be singled out.
    Inconsistent {
        outliers: Vec<HolderId>,
        consensus: Option<FieldElement>,
    },
}

impl Consistency {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Consistency::Consistent { .. })
    }
}

/// Checks whether all k-subsets of `outputs` agree.
///
/// Every k-subset defines a candidate polynomial; the candidate passing
/// through the most points wins if it is unique. When `expected` is given,
/// only candidates whose constant term equals it are admissible, which is
/// what lets a verifier with ground truth attribute a single bad point among
/// `k + 1`.
pub fn verify_share_consistency<P: SharePoint>(
    outputs: &[P],
    k: usize,
    expected: Option<&FieldElement>,
) -> Result<Consistency, SharingError> {
    if outputs.len() < k {
        return Err(SharingError::InsufficientShares {
            have: outputs.len(),
            need: k,
        });
    }
    let pts: Vec<(FieldElement, FieldElement)> =
        outputs.iter().map(|p| (p.x().clone(), p.y().clone())).collect();
    let n = pts.len();

    // (support mask, constant term), deduplicated by support mask.
    let mut candidates: Vec<(Vec<bool>, FieldElement)> = Vec::new();
    for subset in k_subsets(n, k) {
        let basis: Vec<_> = subset.iter().map(|&i| pts[i].clone()).collect();
        let value = interpolate_at(&basis, &FieldElement::zero())?;
        if expected.is_some_and(|e| *e != value) {
            continue;
        }
        let mut on = vec![false; n];
        for (i, p) in pts.iter().enumerate() {
            on[i] = subset.contains(&i) || interpolate_at(&basis, &p.0)? == p.1;
        }
        if !candidates.iter().any(|(mask, _)| *mask == on) {
            candidates.push((on, value));
        }
    }

    let support = |mask: &Vec<bool>| mask.iter().filter(|&&b| b).count();
    let best = candidates.iter().map(|(m, _)| support(m)).max();
    let Some(best) = best else {
        return Ok(Consistency::Inconsistent {
            outliers: vec![],
            consensus: None,
        });
    };
    let winners: Vec<_> = candidates.iter().filter(|(m, _)| support(m) == best).collect();
    if winners.len() != 1 {
        return Ok(Consistency::Inconsistent {
            outliers: vec![],
            consensus: None,
        });
    }
    let (mask, value) = winners[0];
    if best == n {
        return Ok(Consistency::Consistent { value: value.clone() });
    }
    Ok(Consistency::Inconsistent {
        outliers: outputs
            .iter()
            .zip(mask)
            .filter(|(_, on)| !**on)
            .map(|(p, _)| p.holder())
            .collect(),
        consensus: Some(value.clone()),
    })
}

/// All k-element index subsets of `0..n` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            if n - i < k - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    if k <= n {
        rec(0, n, k, &mut cur, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;
    use crate::field::SmallField;

    fn holders(n: u32) -> Vec<HolderId> {
        (0..n).map(|i| PlayerId(PlayerId::FIRST_PLAYER + i)).collect()
    }

    fn secret(v: u128) -> FieldElement {
        FieldElement::from_u128(v)
    }

    #[test]
    fn three_of_three_reconstructs() {
        let mut rng = seeded_rng(1);
        let s = secret(0xDEAD_BEEF_0123_4567_89AB_CDEF_0011_2233);
        let shares = split(&s, PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        assert_eq!(shares.len(), 3);
        assert_eq!(reconstruct(&shares, 3).unwrap(), s);
    }

    #[test]
    fn every_three_of_four_subset_agrees() {
        let mut rng = seeded_rng(2);
        let s = secret(987_654_321);
        let shares = split(&s, PlayerId(2), 1, &holders(4), 3, &mut rng).unwrap();
        let subsets = k_subsets(4, 3);
        assert_eq!(subsets.len(), 4);
        for subset in subsets {
            let pick: Vec<_> = subset.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(reconstruct(&pick, 3).unwrap(), s);
        }
    }

    #[test]
    fn zero_secret() {
        let mut rng = seeded_rng(3);
        let shares = split(&FieldElement::zero(), PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        assert_eq!(reconstruct(&shares, 3).unwrap(), FieldElement::zero());
    }

    #[test]
    fn threshold_bounds_are_enforced() {
        let mut rng = seeded_rng(4);
        let s = secret(1);
        assert_eq!(
            split(&s, PlayerId(2), 1, &holders(3), 2, &mut rng),
            Err(SharingError::ThresholdOutOfRange { k: 2, holders: 3 })
        );
        assert_eq!(
            split(&s, PlayerId(2), 1, &holders(3), 4, &mut rng),
            Err(SharingError::ThresholdOutOfRange { k: 4, holders: 3 })
        );
        let dup = vec![PlayerId(2), PlayerId(3), PlayerId(2)];
        assert_eq!(
            split(&s, PlayerId(2), 1, &dup, 3, &mut rng),
            Err(SharingError::DuplicateHolder(PlayerId(2)))
        );
    }

    #[test]
    fn reconstruct_matches_direct_polynomial_evaluation() {
        // Oracle: build the polynomial by hand and read off its constant term.
        let mut rng = seeded_rng(5);
        for degree in 2..6 {
            let coeffs: Vec<FieldElement> = (0..=degree).map(|_| FieldElement::random(&mut rng)).collect();
            let points: Vec<Output> = (1..=degree as u64 + 1)
                .map(|x| {
                    let x = FieldElement::from_u64(x);
                    Output {
                        holder: PlayerId(x.to_u128().unwrap() as u32 + 1),
                        round: 0,
                        y: evaluate_polynomial(&coeffs, &x),
                        x,
                    }
                })
                .collect();
            assert_eq!(reconstruct(&points, degree + 1).unwrap(), coeffs[0]);
        }
    }

    #[test]
    fn too_few_points_is_an_error() {
        let mut rng = seeded_rng(6);
        let shares = split(&secret(5), PlayerId(2), 1, &holders(4), 3, &mut rng).unwrap();
        assert_eq!(
            reconstruct(&shares[..2], 3),
            Err(SharingError::InsufficientShares { have: 2, need: 3 })
        );
    }

    #[test]
    fn duplicate_x_is_an_error() {
        let mut rng = seeded_rng(7);
        let shares = split(&secret(5), PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        let pts = vec![shares[0].clone(), shares[0].clone(), shares[1].clone()];
        assert_eq!(reconstruct(&pts, 3), Err(SharingError::DuplicateX));
    }

    #[test]
    fn mixed_rounds_are_rejected() {
        let mut rng = seeded_rng(8);
        let mut shares = split(&secret(5), PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        shares[2].round = 2;
        assert_eq!(reconstruct(&shares, 3), Err(SharingError::MixedRounds));
    }

    #[test]
    fn corrupted_point_gives_wrong_value() {
        let mut rng = seeded_rng(9);
        let s = secret(77);
        let mut shares = split(&s, PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        shares[1].y = shares[1].y.add(&FieldElement::one());
        assert_ne!(reconstruct(&shares, 3).unwrap(), s);
    }

    #[test]
    fn identity_event_is_a_no_op() {
        let mut rng = seeded_rng(10);
        let shares = split(&secret(9), PlayerId(2), 1, &holders(3), 3, &mut rng).unwrap();
        let out = evaluate_event(&shares[0], &RoundEvent::identity());
        assert_eq!(out.y, shares[0].y);
        assert_eq!(out.x, shares[0].x);
    }

    #[test]
    fn events_commute_with_sharing() {
        let mut rng = seeded_rng(11);
        let s = FieldElement::random(&mut rng);
        let ev = RoundEvent::random(&mut rng);
        let shares = split(&s, PlayerId(2), 1, &holders(5), 3, &mut rng).unwrap();
        let outs: Vec<_> = shares.iter().map(|sh| evaluate_event(sh, &ev)).collect();
        let direct = ev.a().mul(&s).add(ev.b());
        assert_eq!(reconstruct(&outs, 3).unwrap(), direct);
    }

    #[test]
    fn successive_events_compose() {
        let mut rng = seeded_rng(12);
        let s = FieldElement::random(&mut rng);
        let f1 = RoundEvent::random(&mut rng);
        let f2 = RoundEvent::random(&mut rng);
        let shares = split(&s, PlayerId(2), 1, &holders(4), 3, &mut rng).unwrap();
        let twice: Vec<Share> = shares
            .iter()
            .map(|sh| {
                let y = f2.apply(&f1.apply(&sh.y));
                Share { y, ..sh.clone() }
            })
            .collect();
        let oracle = f2.apply(&f1.apply(&s));
        assert_eq!(reconstruct(&twice, 3).unwrap(), oracle);
        assert_eq!(f2.after(&f1).apply(&s), oracle);
    }

    #[test]
    fn zero_slope_is_rejected() {
        assert_eq!(
            RoundEvent::new(FieldElement::zero(), FieldElement::one()),
            Err(SharingError::ZeroSlope)
        );
    }

    fn forged_outputs(n: u32, k: usize, forge: usize, seed: u64) -> (Vec<Output>, FieldElement) {
        let mut rng = seeded_rng(seed);
        let s = FieldElement::random(&mut rng);
        let shares = split(&s, PlayerId(2), 1, &holders(n), k, &mut rng).unwrap();
        let mut outs: Vec<_> = shares.iter().map(|sh| evaluate_event(sh, &RoundEvent::identity())).collect();
        outs[forge].y = outs[forge].y.add(&FieldElement::one());
        (outs, s)
    }

    #[test]
    fn honest_outputs_are_consistent() {
        let mut rng = seeded_rng(13);
        let s = FieldElement::random(&mut rng);
        let shares = split(&s, PlayerId(2), 1, &holders(5), 3, &mut rng).unwrap();
        assert_eq!(
            verify_share_consistency(&shares, 3, None).unwrap(),
            Consistency::Consistent { value: s }
        );
    }

    #[test]
    fn forged_point_attributed_with_ground_truth() {
        // k + 1 points: only the subset avoiding the forgery hits the expected value.
        let (outs, s) = forged_outputs(4, 3, 2, 14);
        let verdict = verify_share_consistency(&outs, 3, Some(&s)).unwrap();
        assert_eq!(
            verdict,
            Consistency::Inconsistent {
                outliers: vec![outs[2].holder],
                consensus: Some(s)
            }
        );
    }

    #[test]
    fn forged_point_attributed_by_majority_with_two_spare_points() {
        let (outs, s) = forged_outputs(5, 3, 4, 15);
        let verdict = verify_share_consistency(&outs, 3, None).unwrap();
        assert_eq!(
            verdict,
            Consistency::Inconsistent {
                outliers: vec![outs[4].holder],
                consensus: Some(s)
            }
        );
    }

    #[test]
    fn one_spare_point_detects_but_cannot_attribute() {
        let (outs, _) = forged_outputs(4, 3, 1, 16);
        let verdict = verify_share_consistency(&outs, 3, None).unwrap();
        assert_eq!(
            verdict,
            Consistency::Inconsistent {
                outliers: vec![],
                consensus: None
            }
        );
    }

    #[test]
    fn exactly_k_with_forgery_is_unattributable() {
        let (outs, s) = forged_outputs(3, 3, 0, 17);
        let verdict = verify_share_consistency(&outs, 3, Some(&s)).unwrap();
        assert_eq!(
            verdict,
            Consistency::Inconsistent {
                outliers: vec![],
                consensus: None
            }
        );
    }

    #[test]
    fn threshold_policy_matches_paper_examples() {
        assert_eq!(threshold_policy(2, 1), 3);
        assert_eq!(threshold_policy(3, 1), 3);
        assert_eq!(threshold_policy(4, 1), 3);
        assert_eq!(threshold_policy(4, 0), 4);
        assert_eq!(threshold_policy(5, 1), 4);
        assert_eq!(threshold_policy(6, 10), 3);
    }

    #[test]
    fn k_subsets_counts() {
        assert_eq!(k_subsets(6, 3).len(), 20);
        assert_eq!(k_subsets(5, 4).len(), 5);
        assert_eq!(k_subsets(3, 4).len(), 0);
    }

    /// For k − 1 fixed shares over GF(65521), every candidate secret is
    /// explained by exactly one value of the k-th share: the map is a bijection.
    #[test]
    fn k_minus_one_shares_leave_every_secret_possible() {
        let k = 3usize;
        let mut rng = seeded_rng(18);
        let secret = SmallField::new(12_345);
        let poly = random_polynomial(secret, k - 1, &mut rng);
        let known: Vec<(SmallField, SmallField)> = (1..k as u64)
            .map(|x| {
                let x = SmallField::from_u64(x);
                (x, evaluate_polynomial(&poly, &x))
            })
            .collect();
        let third_x = SmallField::from_u64(k as u64);
        let mut hit = vec![false; SmallField::P as usize];
        for candidate in 0..SmallField::P {
            // The k-th share consistent with this candidate secret.
            let mut pts = known.clone();
            pts.push((SmallField::zero(), SmallField::new(candidate)));
            let y = interpolate_at(&pts, &third_x).unwrap();
            assert!(!hit[y.value() as usize], "two secrets map to one share");
            hit[y.value() as usize] = true;
        }
        assert!(hit.iter().all(|&h| h));
    }
}
