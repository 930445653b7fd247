//! Matching and loss tests: exact assignment oracles, loss identities, and
//! gradient checks of the tape-level loss against finite differences.

use locate_core::matching::{
    cb_focal_loss, hungarian, hungarian_loss, hungarian_loss_on_tape, match_cost, Assignment,
    ClassStats, CostMatrix, MatchWeights, PaddedEntry, PaddedGroundTruth,
};
use locate_core::{grad_check, Error, LabeledSpan, RawPredictionSet, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn span(class_id: usize, t_start: f64, t_end: f64) -> LabeledSpan {
    LabeledSpan {
        class_id,
        t_start,
        t_end,
    }
}

// ---------------------------------------------------------------- hungarian

/// Reference solver: walk all permutations in lexicographic order, keep the
/// first one attaining the strict minimum. O(n!) but exact, including the
/// tie-break.
fn brute_lex_min(cost: &CostMatrix) -> (Vec<usize>, f64) {
    fn rec(
        cost: &CostMatrix,
        row: usize,
        used: &mut [bool],
        cur: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let n = cost.size();
        if row == n {
            let total: f64 = cur.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();
            if best.as_ref().is_none_or(|(bt, _)| total < *bt) {
                *best = Some((total, cur.clone()));
            }
            return;
        }
        for j in 0..n {
            if used[j] {
                continue;
            }
            used[j] = true;
            cur.push(j);
            rec(cost, row + 1, used, cur, best);
            cur.pop();
            used[j] = false;
        }
    }
    let mut best = None;
    rec(
        cost,
        0,
        &mut vec![false; cost.size()],
        &mut Vec::new(),
        &mut best,
    );
    let (total, perm) = best.expect("n >= 1");
    (perm, total)
}

#[test]
fn hungarian_matches_brute_force_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for n in 1..=7 {
        for case in 0..1000 {
            let cost = CostMatrix::from_fn(n, |_, _| rng.random_range(0.0..10.0)).unwrap();
            let got = hungarian(&cost).unwrap();
            let (want_perm, want_total) = brute_lex_min(&cost);
            assert_eq!(
                got.as_slice(),
                want_perm.as_slice(),
                "n={n} case={case}: permutation mismatch"
            );
            assert_eq!(
                got.total_cost(&cost),
                want_total,
                "n={n} case={case}: total mismatch"
            );
        }
    }
}

#[test]
fn hungarian_breaks_integer_ties_lexicographically() {
    // Many optima by construction; the solver must agree with the
    // lexicographic reference even when costs tie exactly.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 2..=6 {
        for _ in 0..200 {
            let cost =
                CostMatrix::from_fn(n, |_, _| f64::from(rng.random_range(0..3u8))).unwrap();
            let got = hungarian(&cost).unwrap();
            let (want_perm, want_total) = brute_lex_min(&cost);
            assert_eq!(got.as_slice(), want_perm.as_slice());
            assert_eq!(got.total_cost(&cost), want_total);
        }
    }
}

// ------------------------------------------------------------- match costs

fn default_stats(labels: usize) -> ClassStats {
    ClassStats::new(vec![1; labels], 0.0, 0.0).unwrap()
}

#[test]
fn no_action_rows_cost_zero() {
    let stats = default_stats(3);
    let c = match_cost(
        &[3.0, -1.0, 0.5],
        [0.1, 0.9],
        &PaddedEntry::NoAction,
        &stats,
        MatchWeights::default(),
    )
    .unwrap();
    assert_eq!(c, 0.0);
}

#[test]
fn saturated_perfect_prediction_costs_nearly_nothing() {
    let stats = default_stats(3);
    let entry = PaddedEntry::Real {
        class: 0,
        span: [0.25, 0.75],
    };
    let c = match_cost(
        &[20.0, -20.0, -20.0],
        [0.25, 0.75],
        &entry,
        &stats,
        MatchWeights::default(),
    )
    .unwrap();
    assert!(c < 1e-6, "cost {c}");
}

#[test]
fn cost_monotone_in_span_error() {
    let stats = default_stats(3);
    let entry = PaddedEntry::Real {
        class: 1,
        span: [0.4, 0.6],
    };
    let logits = [0.2, 0.1, -0.3];
    let mut prev = -1.0;
    for shift in [0.0, 0.05, 0.1, 0.2, 0.3] {
        let c = match_cost(
            &logits,
            [0.4 + shift, 0.6 + shift],
            &entry,
            &stats,
            MatchWeights::default(),
        )
        .unwrap();
        assert!(c > prev, "shift {shift}: {c} not > {prev}");
        prev = c;
    }
}

// ------------------------------------------------------------ padded truth

#[test]
fn padding_normalizes_and_appends_sentinels() {
    let gts = [span(1, 2.0, 4.0), span(0, 5.0, 10.0)];
    let padded = PaddedGroundTruth::from_spans(&gts, 10.0, 5, 3).unwrap();
    assert_eq!(padded.len(), 5);
    assert_eq!(padded.num_real(), 2);
    assert_eq!(
        padded.entries()[0],
        PaddedEntry::Real {
            class: 1,
            span: [0.2, 0.4]
        }
    );
    assert_eq!(
        padded.entries()[1],
        PaddedEntry::Real {
            class: 0,
            span: [0.5, 1.0]
        }
    );
    for e in &padded.entries()[2..] {
        assert_eq!(*e, PaddedEntry::NoAction);
    }
}

#[test]
fn padding_rejects_bad_input() {
    let three = [span(0, 0.0, 1.0), span(0, 1.0, 2.0), span(0, 2.0, 3.0)];
    assert!(matches!(
        PaddedGroundTruth::from_spans(&three, 10.0, 2, 1),
        Err(Error::TooManySpans { gt: 3, queries: 2 })
    ));
    assert!(matches!(
        PaddedGroundTruth::from_spans(&[span(2, 0.0, 1.0)], 10.0, 4, 2),
        Err(Error::ClassOutOfRange { .. })
    ));
    // end past the stated duration
    assert!(PaddedGroundTruth::from_spans(&[span(0, 0.0, 11.0)], 10.0, 4, 2).is_err());
    assert!(PaddedGroundTruth::from_spans(&[span(0, 0.0, 1.0)], 0.0, 4, 2).is_err());
}

// --------------------------------------------------------- hungarian_loss

fn random_preds(rng: &mut ChaCha8Rng, n_a: usize, labels: usize) -> RawPredictionSet {
    let class_logits = (0..n_a)
        .map(|_| (0..labels).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let spans = (0..n_a)
        .map(|_| {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            [a.min(b), a.max(b)]
        })
        .collect();
    RawPredictionSet {
        class_logits,
        spans,
    }
}

#[test]
fn zero_ground_truth_trains_everything_toward_no_action() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let preds = random_preds(&mut rng, 4, 3);
    let stats = ClassStats::new(vec![5, 7, 20], 0.9, 2.0).unwrap();
    let (breakdown, assignment) =
        hungarian_loss(&preds, &[], 8.0, &stats, MatchWeights::default()).unwrap();
    assert_eq!(assignment.as_slice(), &[0, 1, 2, 3]);
    assert_eq!(breakdown.l_span, 0.0);
    assert_eq!(breakdown.l_iou, 0.0);
    assert_eq!(breakdown.l_l1, 0.0);
    let manual: f64 = (0..4)
        .map(|q| cb_focal_loss(&preds.class_logits[q], 2, &stats).unwrap())
        .sum();
    assert!((breakdown.l_total - manual).abs() < 1e-12);
    assert!((breakdown.l_total - breakdown.l_cb).abs() < 1e-15);
}

#[test]
fn near_perfect_prediction_wins_the_ground_truth() {
    let stats = default_stats(2);
    let gts = [span(0, 2.0, 4.0)];
    let preds = RawPredictionSet {
        class_logits: vec![vec![5.0, -5.0], vec![-1.0, 1.0]],
        spans: vec![[0.2, 0.4], [0.7, 0.9]],
    };
    let (_, a) = hungarian_loss(&preds, &gts, 10.0, &stats, MatchWeights::default()).unwrap();
    assert_eq!(a.as_slice(), &[0, 1]);

    // Swap the two predictions: the real row must follow the good one.
    let swapped = RawPredictionSet {
        class_logits: vec![preds.class_logits[1].clone(), preds.class_logits[0].clone()],
        spans: vec![preds.spans[1], preds.spans[0]],
    };
    let (_, a) = hungarian_loss(&swapped, &gts, 10.0, &stats, MatchWeights::default()).unwrap();
    assert_eq!(a.as_slice(), &[1, 0]);
}

#[test]
fn breakdown_identities_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let stats = ClassStats::new(vec![4, 9, 2, 30], 0.99, 2.0).unwrap();
    let weights = MatchWeights {
        lambda_iou: 1.5,
        lambda_l1: 3.0,
    };
    for _ in 0..50 {
        let preds = random_preds(&mut rng, 6, 4);
        let gts = [
            span(0, 1.0, 3.0),
            span(2, 2.5, 6.0),
            span(1, 6.5, 7.5),
        ];
        let (b, a) = hungarian_loss(&preds, &gts, 8.0, &stats, weights).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(b.pairs.len(), 6);
        assert!(b.l_total >= 0.0);
        assert!(
            (b.l_span - (weights.lambda_iou * b.l_iou + weights.lambda_l1 * b.l_l1)).abs()
                < 1e-12
        );
        assert!((b.l_total - (b.l_cb + b.l_span)).abs() < 1e-12);
        // aggregates must equal the per-pair sums
        let cb: f64 = b.pairs.iter().map(|p| p.l_cb).sum();
        let iou: f64 = b.pairs.iter().map(|p| p.l_iou).sum();
        let l1: f64 = b.pairs.iter().map(|p| p.l_l1).sum();
        assert!((cb - b.l_cb).abs() < 1e-12);
        assert!((iou - b.l_iou).abs() < 1e-12);
        assert!((l1 - b.l_l1).abs() < 1e-12);
    }
}

#[test]
fn loss_is_invariant_to_prediction_and_ground_truth_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let stats = ClassStats::new(vec![4, 9, 30], 0.9, 2.0).unwrap();
    let weights = MatchWeights::default();
    let preds = random_preds(&mut rng, 5, 3);
    let gts = [span(0, 1.0, 2.0), span(1, 3.0, 5.0), span(0, 5.5, 7.0)];
    let (base, _) = hungarian_loss(&preds, &gts, 8.0, &stats, weights).unwrap();

    for _ in 0..10 {
        // random permutation of queries
        let mut order: Vec<usize> = (0..5).collect();
        for i in (1..5).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled = RawPredictionSet {
            class_logits: order
                .iter()
                .map(|&q| preds.class_logits[q].clone())
                .collect(),
            spans: order.iter().map(|&q| preds.spans[q]).collect(),
        };
        let mut gt_order: Vec<usize> = (0..3).collect();
        for i in (1..3).rev() {
            gt_order.swap(i, rng.random_range(0..=i));
        }
        let gts_shuffled: Vec<LabeledSpan> = gt_order.iter().map(|&g| gts[g]).collect();
        let (b, _) = hungarian_loss(&shuffled, &gts_shuffled, 8.0, &stats, weights).unwrap();
        assert!(
            (b.l_total - base.l_total).abs() < 1e-12 * base.l_total.max(1.0),
            "{} vs {}",
            b.l_total,
            base.l_total
        );
    }
}

#[test]
fn sentinel_shortcut_agrees_with_full_matrix_solve() {
    // hungarian_loss only solves the real-row block and hands leftover
    // columns to sentinels in ascending order; that must equal a full
    // N_a×N_a solve with explicit zero sentinel rows.
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let stats = ClassStats::new(vec![2, 3, 11], 0.5, 1.0).unwrap();
    let weights = MatchWeights::default();
    for case in 0..40 {
        let n_a = 3 + (case % 5);
        let r = case % (n_a + 1).min(4);
        let preds = random_preds(&mut rng, n_a, 3);
        let gts: Vec<LabeledSpan> = (0..r)
            .map(|k| {
                let base = k as f64 * 2.5;
                span(k % 2, base + 0.2, base + rng.random_range(1.0..2.0))
            })
            .collect();
        let duration = 12.0;
        let (_, fast) = hungarian_loss(&preds, &gts, duration, &stats, weights).unwrap();

        let padded = PaddedGroundTruth::from_spans(&gts, duration, n_a, 2).unwrap();
        let full = CostMatrix::from_fn(n_a, |i, q| {
            match_cost(
                &preds.class_logits[q],
                preds.spans[q],
                &padded.entries()[i],
                &stats,
                weights,
            )
            .unwrap()
        })
        .unwrap();
        let slow = hungarian(&full).unwrap();
        assert_eq!(fast, slow, "case {case}: n_a={n_a} r={r}");
    }
}

#[test]
fn too_many_spans_is_an_error() {
    let stats = default_stats(2);
    let preds = RawPredictionSet {
        class_logits: vec![vec![0.0, 0.0]; 2],
        spans: vec![[0.1, 0.2]; 2],
    };
    let gts = [span(0, 0.0, 1.0), span(0, 1.0, 2.0), span(0, 2.0, 3.0)];
    let err = hungarian_loss(&preds, &gts, 4.0, &stats, MatchWeights::default()).unwrap_err();
    assert!(err.to_string().contains("raise the query count"), "{err}");
}

// ------------------------------------------------------- tape-level loss

struct TapeCase {
    logits: Tensor,  // [labels, n_a]
    lo: Tensor,      // [1, n_a]
    hi: Tensor,      // [1, n_a]
    padded: PaddedGroundTruth,
    assignment: Assignment,
    stats: ClassStats,
    weights: MatchWeights,
    value_total: f64,
}

/// A fixed configuration away from every kink: distinct endpoints, non-zero
/// overlaps, moderate logits.
fn tape_case() -> TapeCase {
    let preds = RawPredictionSet {
        class_logits: vec![
            vec![0.3, -0.4, 0.1],
            vec![-0.2, 0.5, -0.3],
            vec![0.05, -0.15, 0.4],
        ],
        spans: vec![[0.2, 0.5], [0.55, 0.8], [0.3, 0.4]],
    };
    let gts = [span(0, 0.25, 0.45), span(1, 0.6, 0.9)];
    let stats = ClassStats::new(vec![3, 2, 4], 0.9, 2.0).unwrap();
    let weights = MatchWeights::default();
    let (breakdown, assignment) =
        hungarian_loss(&preds, &gts, 1.0, &stats, weights).unwrap();
    let padded = PaddedGroundTruth::from_spans(&gts, 1.0, 3, 2).unwrap();

    let n_a = preds.num_queries();
    let labels = 3;
    let logits = Tensor::from_fn(&[labels, n_a], |i| {
        let (row, col) = (i / n_a, i % n_a);
        preds.class_logits[col][row]
    });
    let lo = Tensor::from_fn(&[1, n_a], |q| preds.spans[q][0]);
    let hi = Tensor::from_fn(&[1, n_a], |q| preds.spans[q][1]);
    TapeCase {
        logits,
        lo,
        hi,
        padded,
        assignment,
        stats,
        weights,
        value_total: breakdown.l_total,
    }
}

#[test]
fn tape_loss_value_matches_value_level_loss() {
    let case = tape_case();
    let mut tape = Tape::new();
    let logits = tape.leaf(case.logits.clone()).unwrap();
    let lo = tape.leaf(case.lo.clone()).unwrap();
    let hi = tape.leaf(case.hi.clone()).unwrap();
    let loss = hungarian_loss_on_tape(
        &mut tape,
        logits,
        lo,
        hi,
        &case.padded,
        &case.assignment,
        &case.stats,
        case.weights,
    )
    .unwrap();
    let got = tape.value(loss).item().unwrap();
    assert!(
        (got - case.value_total).abs() < 1e-12 * case.value_total.max(1.0),
        "{got} vs {}",
        case.value_total
    );
}

#[test]
fn tape_loss_gradients_pass_finite_differences() {
    let case = tape_case();
    let report = grad_check(
        &[case.logits.clone(), case.lo.clone(), case.hi.clone()],
        1e-5,
        |tape, vars| {
            hungarian_loss_on_tape(
                tape,
                vars[0],
                vars[1],
                vars[2],
                &case.padded,
                &case.assignment,
                &case.stats,
                case.weights,
            )
        },
    )
    .unwrap();
    assert!(
        report.max_rel_err < 1e-6,
        "max rel err {} at {:?}",
        report.max_rel_err,
        report.worst
    );
}

#[test]
fn tape_loss_handles_gamma_zero_at_saturation() {
    // γ = 0 with a saturated logit: the modulator shortcut must keep the
    // gradient finite where (1-p)^γ would hit 0^0.
    let stats = ClassStats::new(vec![1, 1], 0.0, 0.0).unwrap();
    let preds = RawPredictionSet {
        class_logits: vec![vec![40.0, -40.0], vec![-40.0, 40.0]],
        spans: vec![[0.2, 0.5], [0.6, 0.8]],
    };
    let gts = [span(0, 0.25, 0.45)];
    let (breakdown, assignment) =
        hungarian_loss(&preds, &gts, 1.0, &stats, MatchWeights::default()).unwrap();
    let padded = PaddedGroundTruth::from_spans(&gts, 1.0, 2, 1).unwrap();

    let mut tape = Tape::new();
    let logits = tape
        .leaf(Tensor::new(vec![2, 2], vec![40.0, -40.0, -40.0, 40.0]).unwrap())
        .unwrap();
    let lo = tape
        .leaf(Tensor::new(vec![1, 2], vec![0.2, 0.6]).unwrap())
        .unwrap();
    let hi = tape
        .leaf(Tensor::new(vec![1, 2], vec![0.5, 0.8]).unwrap())
        .unwrap();
    let loss = hungarian_loss_on_tape(
        &mut tape,
        logits,
        lo,
        hi,
        &padded,
        &assignment,
        &stats,
        MatchWeights::default(),
    )
    .unwrap();
    let v = tape.value(loss).item().unwrap();
    assert!((v - breakdown.l_total).abs() < 1e-12 * breakdown.l_total.max(1.0));
    tape.backward(loss).unwrap();
    assert!(tape.grad(logits).unwrap().is_finite());
    assert!(tape.grad(lo).unwrap().is_finite());
}
